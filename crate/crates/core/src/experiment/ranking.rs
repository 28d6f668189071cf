use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::CSV_HEADER;
use crate::error::{Error, Result};

/// One row of `runs.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub algo: String,
    pub benchmark: String,
    pub batch_index: usize,
    pub metric: String,
    pub value: f64,
}

pub fn parse_runs_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(Error::invalid(format!("unexpected runs.csv header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::invalid(format!("malformed runs.csv line {}: {l:?}", i + 2));
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(MetricRow {
                seed: f[0].parse().map_err(|_| bad())?,
                algo: f[1].to_string(),
                benchmark: f[2].to_string(),
                batch_index: f[3].parse().map_err(|_| bad())?,
                metric: f[4].to_string(),
                value: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<MetricRow>> {
    parse_runs_csv(&std::fs::read_to_string(path)?)
}

/// Whether smaller values of a metric are better.
pub fn lower_is_better(metric: &str) -> bool {
    matches!(metric, "rmse" | "nll")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rankings {
    /// Mean rank per algorithm and batch index (1 = best).
    pub mean_rank: BTreeMap<String, BTreeMap<usize, f64>>,
    pub cells_used: usize,
    /// (benchmark, seed, batch) cells skipped because an algorithm was missing.
    pub excluded: Vec<(String, u64, usize)>,
}

/// Fractional ranks of `values` (1 = best); ties share the mean rank.
pub fn fractional_ranks(values: &[f64], lower_better: bool) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = values[a].total_cmp(&values[b]);
        if lower_better {
            o
        } else {
            o.reverse()
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Ranks algorithms within every (benchmark, seed, batch) cell on `metric`
/// and averages the ranks per algorithm and batch across cells.
pub fn compute_rankings(rows: &[MetricRow], metric: &str) -> Rankings {
    let lower = lower_is_better(metric);
    let algos: BTreeSet<&str> = rows.iter().filter(|r| r.metric == metric).map(|r| r.algo.as_str()).collect();
    let mut cells: BTreeMap<(String, u64, usize), BTreeMap<&str, f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        cells.entry((r.benchmark.clone(), r.seed, r.batch_index)).or_default().insert(r.algo.as_str(), r.value);
    }
    let mut sums: BTreeMap<String, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut used = 0;
    for (key, vals) in cells {
        if vals.len() != algos.len() {
            log::warn!("skipping cell {key:?}: {} of {} algorithms present", vals.len(), algos.len());
            excluded.push(key);
            continue;
        }
        used += 1;
        let names: Vec<&str> = vals.keys().copied().collect();
        let v: Vec<f64> = vals.values().copied().collect();
        for (name, r) in names.iter().zip(fractional_ranks(&v, lower)) {
            let e = sums.entry(name.to_string()).or_default().entry(key.2).or_insert((0.0, 0));
            e.0 += r;
            e.1 += 1;
        }
    }
    let mean_rank = sums.into_iter().map(|(a, m)| (a, m.into_iter().map(|(b, (s, n))| (b, s / n as f64)).collect())).collect();
    Rankings { mean_rank, cells_used: used, excluded }
}
