use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bo::{incumbent, perturbed_batches, BoUtility};
use super::config::{Algo, ExperimentConfig, Mode};
use super::model::{evaluate_model, inferred_maximizer, FittedModel};
use crate::acquisition::{uniform_test_points, AcqContext, Acquisition, AcquisitionKind};
use crate::batch::BatchCandidate;
use crate::benchmarks::{by_name, Benchmark};
use crate::design::{design, DesignRequest, Sobol};
use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::hyper::{EnsembleSource, HyperEnsemble};
use crate::optimizer::{optimize_batch, optimize_from, raw_candidates, BatchObjective};

/// Version of the `run_<seed>.json` and `runs.csv` layouts.
pub const SCHEMA_VERSION: u32 = 1;

/// Seed for one named random stream of a run: SplitMix64 over the run seed,
/// an FNV-1a hash of the stream name and an index.
pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Wall-clock seconds per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    /// Hyperparameter fits feeding initialization batches.
    pub fit_initial: f64,
    /// Selection of initialization batches.
    pub acq_opt: f64,
    /// Hyperparameter fits feeding BO-stage batches.
    pub bo_fit: f64,
    /// BO utility optimization.
    pub bo_opt: f64,
    /// Final fit and metric evaluation.
    pub metrics: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub rmse: f64,
    pub nll: f64,
    pub inferred_value: Option<f64>,
    pub in_sample_best: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_index: usize,
    pub selected_by: String,
    pub design: Vec<Vec<f64>>,
    pub observations: Vec<f64>,
    /// Weight of the BALD term when HIPE chose the batch.
    pub beta: Option<f64>,
    pub objective_value: Option<f64>,
    /// Ensemble fitted after this batch, in standardized units.
    pub ensemble_source: EnsembleSource,
    pub ensemble_summary: Vec<ParamSummary>,
    pub metrics: BatchMetrics,
    pub inferred_point: Option<Vec<f64>>,
    pub clamped_variances: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub algo: String,
    pub benchmark: String,
    pub mode: Mode,
    pub status: RunStatus,
    pub error: Option<String>,
    pub config: ExperimentConfig,
    pub batches: Vec<BatchRecord>,
    pub timings: PhaseTimings,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize_ensemble(ens: &HyperEnsemble) -> Vec<ParamSummary> {
    let mut cols: Vec<(String, Vec<f64>)> =
        (0..ens.dim()).map(|d| (format!("lengthscale_{d}"), ens.samples.iter().map(|h| h.lengthscales[d]).collect())).collect();
    cols.push(("noise_var".into(), ens.samples.iter().map(|h| h.noise_var).collect()));
    cols.push(("mean_const".into(), ens.samples.iter().map(|h| h.mean_const).collect()));
    cols.push(("signal_var".into(), ens.samples.iter().map(|h| h.signal_var).collect()));
    cols.into_iter()
        .map(|(name, mut v)| {
            v.sort_by(|a, b| a.total_cmp(b));
            ParamSummary { name, q05: quantile(&v, 0.05), q50: quantile(&v, 0.5), q95: quantile(&v, 0.95) }
        })
        .collect()
}

struct Selection {
    batch: BatchCandidate,
    value: Option<f64>,
    beta: Option<f64>,
    by: String,
}

fn select_initial(cfg: &ExperimentConfig, algo: Algo, model: &FittedModel, dim: usize, seed: u64, b: usize) -> Result<Selection> {
    if let Some(method) = algo.design() {
        let center = cfg.include_center && b == 0;
        let batch = if method == crate::design::DesignMethod::Sobol {
            // one scrambled sequence per run, consumed batch by batch
            let mut s = Sobol::scrambled(dim, derive_seed(seed, "design", 0))?;
            let mut pts = s.take_matrix((b + 1) * cfg.q).rows(b * cfg.q, cfg.q).into_owned();
            if center {
                pts.row_mut(0).fill(0.5);
            }
            BatchCandidate::new(pts)?
        } else {
            let req = DesignRequest {
                q: cfg.q,
                dim,
                seed: derive_seed(seed, "design", b as u64),
                include_center: center,
                beta_shape: (cfg.lhs_beta_a, cfg.lhs_beta_b),
                lhs_beta_iters: cfg.lhs_beta_iters,
            };
            design(method, &req)?
        };
        return Ok(Selection { batch, value: None, beta: None, by: algo.name().into() });
    }
    let kind = algo.acquisition().expect("algo is an acquisition");
    let ctx = AcqContext::with_sizes(
        model.ensemble.clone(),
        model.data.clone(),
        cfg.q,
        cfg.acq_test_points,
        cfg.acq_base_draws,
        derive_seed(seed, "acq", b as u64),
        cfg.acq_options(),
    )?;
    let beta = if kind == AcquisitionKind::Hipe { Some(ctx.beta()?) } else { None };
    let acq = Acquisition { ctx: &ctx, kind };
    let r = optimize_batch(&acq, cfg.q, dim, &cfg.optimizer(derive_seed(seed, "opt", b as u64)), &[])?;
    Ok(Selection { batch: r.batch, value: Some(r.value), beta, by: algo.name().into() })
}

fn select_bo(cfg: &ExperimentConfig, model: &FittedModel, dim: usize, seed: u64, b: usize) -> Result<Selection> {
    let util = BoUtility::new(model, cfg.q, cfg.bo_mc_samples, cfg.bo_tau, derive_seed(seed, "bo_mc", b as u64))?;
    let opt = cfg.optimizer(derive_seed(seed, "bo_opt", b as u64));
    let mut raw = raw_candidates(cfg.q, dim, opt.raw_samples, opt.seed)?;
    if let Some(inc) = incumbent(model) {
        raw.extend(perturbed_batches(
            &inc,
            cfg.q,
            cfg.bo_incumbent_samples,
            cfg.bo_incumbent_sd,
            derive_seed(seed, "bo_raw", b as u64),
        )?);
    }
    let r = optimize_from(&util, raw, &opt, &[])?;
    Ok(Selection { batch: r.batch, value: Some(r.value), beta: None, by: "bo_utility".into() })
}

struct TestSet {
    x: DMatrix<f64>,
    truth: Vec<f64>,
}

fn test_set(bench: &Benchmark, n: usize, seed: u64) -> Result<TestSet> {
    let x = uniform_test_points(n, bench.total_dim, derive_seed(seed, &format!("test:{}", bench.name), 0));
    let truth = bench.true_values(&x)?;
    Ok(TestSet { x, truth })
}

fn run_seed_inner(cfg: &ExperimentConfig, seed: u64, rec: &mut RunRecord) -> Result<()> {
    let bench = by_name(&cfg.benchmark)?;
    let algo = cfg.algo()?;
    let dim = bench.total_dim;
    let prior = cfg.prior();
    let schedule = cfg.schedule();
    let test = test_set(&bench, cfg.eval_test_points, seed)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "noise", 0));

    let mut raw = Dataset::empty(dim);
    let mut truths: Vec<f64> = Vec::new();
    let t = Instant::now();
    let mut model = FittedModel::fit(&raw, &prior, &schedule, cfg.standardize, derive_seed(seed, "fit", 0))?;
    rec.timings.fit_initial += t.elapsed().as_secs_f64();

    for b in 0..cfg.batches {
        let bo_stage = cfg.mode == Mode::TwoShot && b >= 1;
        let t = Instant::now();
        let sel = if bo_stage { select_bo(cfg, &model, dim, seed, b)? } else { select_initial(cfg, algo, &model, dim, seed, b)? };
        let dt = t.elapsed().as_secs_f64();
        if bo_stage {
            rec.timings.bo_opt += dt;
        } else {
            rec.timings.acq_opt += dt;
        }
        log::info!("seed {seed} batch {b}: selected by {} in {dt:.2}s", sel.by);

        let obs = bench.evaluate_batch(sel.batch.points(), &mut noise_rng)?;
        truths.extend(bench.true_values(sel.batch.points())?);
        raw.extend(sel.batch.points(), &obs)?;

        let t = Instant::now();
        model = FittedModel::fit(&raw, &prior, &schedule, cfg.standardize, derive_seed(seed, "fit", b as u64 + 1))?;
        let dt = t.elapsed().as_secs_f64();
        let next_is_bo = cfg.mode == Mode::TwoShot;
        if b + 1 == cfg.batches {
            rec.timings.metrics += dt;
        } else if next_is_bo {
            rec.timings.bo_fit += dt;
        } else {
            rec.timings.fit_initial += dt;
        }

        let t = Instant::now();
        let mm = evaluate_model(&model, &test.x, &test.truth, cfg.nll_noisy)?;
        let inferred_point = if cfg.compute_inferred {
            Some(inferred_maximizer(&model, &cfg.optimizer(derive_seed(seed, "inferred", b as u64)))?)
        } else {
            None
        };
        let inferred_value = inferred_point.as_ref().map(|p| bench.true_value(p)).transpose()?;
        let in_sample_best = truths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        rec.timings.metrics += t.elapsed().as_secs_f64();

        rec.batches.push(BatchRecord {
            batch_index: b,
            selected_by: sel.by,
            design: sel.batch.to_rows(),
            observations: obs,
            beta: sel.beta,
            objective_value: sel.value,
            ensemble_source: model.ensemble.source,
            ensemble_summary: summarize_ensemble(&model.ensemble),
            metrics: BatchMetrics { rmse: mm.rmse, nll: mm.nll, inferred_value, in_sample_best },
            inferred_point,
            clamped_variances: mm.clamped_variances,
        });
    }
    Ok(())
}

/// Runs one seed. Errors (and panics) are captured in the record.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> RunRecord {
    let mut rec = RunRecord {
        schema_version: SCHEMA_VERSION,
        seed,
        algo: cfg.algo.clone(),
        benchmark: cfg.benchmark.clone(),
        mode: cfg.mode,
        status: RunStatus::Ok,
        error: None,
        config: cfg.clone(),
        batches: Vec::new(),
        timings: PhaseTimings::default(),
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| run_seed_inner(cfg, seed, &mut rec)));
    let err = match outcome {
        Ok(Ok(())) => None,
        Ok(Err(e)) => Some(e.to_string()),
        Err(p) => Some(
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()),
        ),
    };
    if let Some(e) = err {
        log::error!("seed {seed} failed: {e}");
        rec.status = RunStatus::Failed;
        rec.error = Some(e);
    }
    rec
}

/// Active-learning run: every batch chosen by the configured algorithm.
pub fn run_active_learning(cfg: &ExperimentConfig, seed: u64) -> RunRecord {
    let cfg = ExperimentConfig { mode: Mode::ActiveLearning, ..cfg.clone() };
    run_seed(&cfg, seed)
}

/// Two-shot BO run: the first batch from the algorithm, the rest from the BO utility.
pub fn run_two_shot(cfg: &ExperimentConfig, seed: u64) -> RunRecord {
    let cfg = ExperimentConfig { mode: Mode::TwoShot, ..cfg.clone() };
    run_seed(&cfg, seed)
}

pub const CSV_HEADER: &str = "seed,algo,benchmark,batch_index,metric,value";

/// `runs.csv` content for the given records, in record order.
pub fn csv_rows(records: &[RunRecord]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        for b in &r.batches {
            let m = &b.metrics;
            let mut push = |name: &str, v: f64| {
                let _ = writeln!(out, "{},{},{},{},{},{}", r.seed, r.algo, r.benchmark, b.batch_index, name, v);
            };
            push("rmse", m.rmse);
            push("nll", m.nll);
            if let Some(v) = m.inferred_value {
                push("inferred_value", v);
            }
            push("in_sample_best", m.in_sample_best);
        }
        if r.status == RunStatus::Failed {
            let _ = writeln!(out, "{},{},{},{},failure,1", r.seed, r.algo, r.benchmark, r.batches.len());
        }
    }
    out
}

/// Results of a multi-seed run.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
}

impl ExperimentOutcome {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.status == RunStatus::Failed).count()
    }
}

/// Runs every configured seed and writes `runs.csv` and `run_<seed>.json`
/// into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        records.push(run_seed(cfg, seed));
    }
    write_outputs(&cfg.out_dir, &records)?;
    Ok(ExperimentOutcome { records })
}

pub fn write_outputs(dir: &Path, records: &[RunRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for r in records {
        let path = dir.join(format!("run_{}.json", r.seed));
        fs::write(path, serde_json::to_string_pretty(r)?)?;
    }
    fs::write(dir.join("runs.csv"), csv_rows(records))?;
    Ok(())
}

/// Value of one acquisition at `batch` after fitting on `data`.
pub fn evaluate_acquisition(
    cfg: &ExperimentConfig,
    kind: AcquisitionKind,
    data: &Dataset,
    batch: &BatchCandidate,
) -> Result<f64> {
    if data.dim() != batch.dim() && !data.is_empty() {
        return Err(Error::invalid(format!("data has dimension {} but the batch {}", data.dim(), batch.dim())));
    }
    let dim = batch.dim();
    let data = if data.is_empty() { Dataset::empty(dim) } else { data.clone() };
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    let model = FittedModel::fit(&data, &cfg.prior(), &cfg.schedule(), cfg.standardize, derive_seed(seed, "fit", 0))?;
    let ctx = AcqContext::with_sizes(
        model.ensemble,
        model.data,
        batch.q(),
        cfg.acq_test_points,
        cfg.acq_base_draws,
        derive_seed(seed, "acq", 0),
        cfg.acq_options(),
    )?;
    Acquisition { ctx: &ctx, kind }.value(batch.points())
}
