mod common;

use common::{ensemble, hs};
use hipe::design::{sobol_design, DesignRequest};
use hipe::experiment::{
    compute_rankings, csv_rows, derive_seed, evaluate_model, fractional_ranks, incumbent, inferred_maximizer, parse_runs_csv,
    read_runs_csv, run_active_learning, run_experiment, run_seed, run_two_shot, BoUtility, ExperimentConfig, FittedModel,
    MetricRow, Mode, RunRecord, RunStatus, CSV_HEADER, SCHEMA_VERSION,
};
use hipe::gp::{posterior, Dataset, Standardizer};
use hipe::optimizer::OptimizerConfig;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small sizes so a whole run takes a second or two.
fn tiny(algo: &str) -> ExperimentConfig {
    ExperimentConfig {
        benchmark: "hartmann4_4d".into(),
        algo: algo.into(),
        q: 4,
        batches: 2,
        mcmc_burn_in: 16,
        mcmc_draws: 24,
        mcmc_thin: 8,
        acq_test_points: 32,
        acq_base_draws: 16,
        opt_restarts: 2,
        opt_raw_samples: 16,
        opt_max_iters: 20,
        bo_mc_samples: 16,
        bo_incumbent_samples: 16,
        eval_test_points: 128,
        ..Default::default()
    }
}

fn without_timings(mut r: RunRecord) -> RunRecord {
    r.timings = Default::default();
    r
}

#[test]
fn default_sizes() {
    let al = ExperimentConfig::default();
    assert_eq!((al.q, al.batches, al.mode), (16, 4, Mode::ActiveLearning));
    let ts = ExperimentConfig::two_shot();
    assert_eq!((ts.q, ts.batches, ts.mode), (24, 2, Mode::TwoShot));
    let fast = ExperimentConfig::default().fast();
    assert_eq!((fast.acq_test_points, fast.acq_base_draws), (256, 64));
    let ablation = ExperimentConfig { q: 8, batches: 5, ..ExperimentConfig::two_shot() };
    ablation.validate().unwrap();
}

#[test]
fn config_rejects_unknown_keys() {
    assert!(ExperimentConfig::from_json(r#"{"q": 8, "batchez": 3}"#).unwrap_err().is_config_error());
    let cfg = ExperimentConfig::from_json(r#"{"q": 8, "algo": "lhs-beta", "beta": 0.5}"#).unwrap();
    assert_eq!(cfg.q, 8);
    cfg.validate().unwrap();
    assert!(ExperimentConfig { algo: "ucb".into(), ..Default::default() }.validate().is_err());
}

#[test]
fn single_sobol_batch_is_the_design() {
    let cfg = ExperimentConfig { batches: 1, ..tiny("sobol") };
    let rec = run_active_learning(&cfg, 3);
    assert_eq!(rec.status, RunStatus::Ok);
    assert_eq!(rec.batches.len(), 1);
    let req = DesignRequest::new(cfg.q, 4, derive_seed(3, "design", 0)).with_center(true);
    assert_eq!(rec.batches[0].design, sobol_design(&req).unwrap().to_rows());
}

#[test]
fn runs_are_deterministic() {
    for algo in ["random", "hipe"] {
        let cfg = tiny(algo);
        let a = without_timings(run_seed(&cfg, 7));
        let b = without_timings(run_seed(&cfg, 7));
        assert_eq!(a.status, RunStatus::Ok, "{:?}", a.error);
        assert_eq!(a, b);
    }
}

#[test]
fn acquisition_batches_record_beta() {
    let rec = run_active_learning(&tiny("hipe"), 1);
    assert_eq!(rec.status, RunStatus::Ok, "{:?}", rec.error);
    for b in &rec.batches {
        assert!(b.beta.unwrap() >= 0.0);
        assert_eq!(b.design.len(), 4);
        assert!(b.design.iter().all(|r| r.len() == 4));
    }
    assert_eq!(rec.batches[0].ensemble_summary.len(), 4 + 3);
}

#[test]
fn two_shot_uses_the_bo_utility() {
    let rec = run_two_shot(&tiny("sobol"), 2);
    assert_eq!(rec.status, RunStatus::Ok, "{:?}", rec.error);
    assert_eq!(rec.batches[0].selected_by, "sobol");
    assert_eq!(rec.batches[1].selected_by, "bo_utility");
    assert!(rec.timings.bo_opt > 0.0 && rec.timings.bo_fit > 0.0);
    assert!(rec.batches.iter().all(|b| b.metrics.inferred_value.is_some()));
}

#[test]
fn timing_phases_are_always_present() {
    let rec = run_active_learning(&tiny("nipv"), 0);
    let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
    for k in ["fit_initial", "acq_opt", "bo_fit", "bo_opt"] {
        assert!(v["timings"][k].is_number(), "{k}");
    }
    assert_eq!(rec.timings.bo_opt, 0.0);
    assert!(rec.timings.acq_opt > 0.0);
}

#[test]
fn failing_seeds_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    // q * D beyond the quasi-random table makes the acquisition optimizer fail
    let bad = ExperimentConfig { q: 300, seeds: vec![0, 1], out_dir: dir.path().join("bad"), ..tiny("bald") };
    let out = run_experiment(&bad).unwrap();
    assert_eq!(out.failed(), 2);
    assert!(out.records.iter().all(|r| r.error.is_some() && r.batches.is_empty()));
    let rows = read_runs_csv(&dir.path().join("bad/runs.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.metric == "failure" && r.value == 1.0 && r.batch_index == 0));

    let good = ExperimentConfig { seeds: vec![0, 1], out_dir: dir.path().join("good"), ..tiny("lhs") };
    let out = run_experiment(&good).unwrap();
    assert_eq!(out.failed(), 0);
    assert_eq!(without_timings(out.records[1].clone()), without_timings(run_seed(&good, 1)));
}

#[test]
fn result_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { seeds: vec![4, 5], out_dir: dir.path().to_path_buf(), ..tiny("random") };
    let out = run_experiment(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    assert!(!text.contains('\r'));
    let rows = parse_runs_csv(&text).unwrap();
    // 2 seeds x 2 batches x 4 metrics
    assert_eq!(rows.len(), 16);
    assert_eq!(text, csv_rows(&out.records));
    for (seed, rec) in [4u64, 5].iter().zip(&out.records) {
        let json = std::fs::read_to_string(dir.path().join(format!("run_{seed}.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        let back: RunRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, rec);
    }
}

#[test]
fn csv_parser_rejects_bad_input() {
    assert!(parse_runs_csv("a,b\n").is_err());
    assert!(parse_runs_csv(&format!("{CSV_HEADER}\n0,x,y,zero,rmse,1\n")).is_err());
}

fn row(seed: u64, algo: &str, batch: usize, metric: &str, value: f64) -> MetricRow {
    MetricRow { seed, algo: algo.into(), benchmark: "b".into(), batch_index: batch, metric: metric.into(), value }
}

#[test]
fn rankings_match_hand_computation() {
    let mut rows = vec![
        row(0, "A", 0, "rmse", 0.3),
        row(0, "B", 0, "rmse", 0.1),
        row(0, "C", 0, "rmse", 0.2),
        row(1, "A", 0, "rmse", 0.5),
        row(1, "B", 0, "rmse", 0.5),
        row(1, "C", 0, "rmse", 0.4),
        row(0, "A", 1, "rmse", 0.1),
        row(0, "B", 1, "rmse", 0.2),
        row(0, "C", 1, "rmse", 0.3),
        row(1, "A", 1, "rmse", 0.2),
        row(1, "B", 1, "rmse", 0.2),
        row(1, "C", 1, "rmse", 0.2),
    ];
    // incomplete cell
    rows.push(row(2, "A", 0, "rmse", 0.9));
    rows.push(row(2, "B", 0, "rmse", 0.8));
    let r = compute_rankings(&rows, "rmse");
    assert_eq!(r.cells_used, 4);
    assert_eq!(r.excluded, vec![("b".to_string(), 2, 0)]);
    let expect = [("A", [2.75, 1.5]), ("B", [1.75, 2.0]), ("C", [1.5, 2.5])];
    for (algo, per_batch) in expect {
        for (b, want) in per_batch.iter().enumerate() {
            assert_eq!(r.mean_rank[algo][&b], *want, "{algo} batch {b}");
        }
    }
}

#[test]
fn ranking_direction_and_ties() {
    let rows = vec![row(0, "A", 0, "inferred_value", 2.0), row(0, "B", 0, "inferred_value", 1.0)];
    let r = compute_rankings(&rows, "inferred_value");
    assert_eq!((r.mean_rank["A"][&0], r.mean_rank["B"][&0]), (1.0, 2.0));
    assert_eq!(fractional_ranks(&[3.0, 3.0, 3.0, 3.0], true), vec![2.5; 4]);
}

#[test]
fn constant_model_rmse_is_target_sd() {
    let model = FittedModel::new(ensemble(vec![hs(&[0.3, 0.3], 0.01, 0.0)]), Dataset::empty(2), Standardizer::IDENTITY).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let test = DMatrix::from_fn(50, 2, |_, _| rng.random::<f64>());
    let mut truth: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 3.0).collect();
    let mean = truth.iter().sum::<f64>() / 50.0;
    truth.iter_mut().for_each(|t| *t -= mean);
    let sd = (truth.iter().map(|t| t * t).sum::<f64>() / 50.0).sqrt();
    let m = evaluate_model(&model, &test, &truth, false).unwrap();
    assert!((m.rmse - sd).abs() < 1e-9);
}

#[test]
fn nll_matches_direct_mixture_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for noisy in [false, true] {
        let x = DMatrix::from_fn(8, 2, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(8, |_, _| rng.random::<f64>() * 4.0 + 1.0);
        let raw = Dataset::new(x, y).unwrap();
        let st = Standardizer::fit(raw.outcomes());
        let data = st.standardize(&raw);
        let hypers = vec![hs(&[0.2, 0.5], 0.01, 0.1), hs(&[0.6, 0.3], 0.05, -0.2), hs(&[0.4, 0.4], 0.002, 0.0)];
        let model = FittedModel::new(ensemble(hypers.clone()), data.clone(), st).unwrap();
        let test = DMatrix::from_fn(10, 2, |_, _| rng.random::<f64>());
        let truth: Vec<f64> = (0..10).map(|_| rng.random::<f64>() * 4.0 + 1.0).collect();
        let got = evaluate_model(&model, &test, &truth, noisy).unwrap().nll;

        let mut nll = 0.0;
        for (t, y) in truth.iter().enumerate() {
            let mut dens = 0.0;
            for h in &hypers {
                let p = posterior(&data, h, &test.rows(t, 1).into_owned(), noisy).unwrap();
                let mu = st.inverse(p.mean[0]);
                let var = p.covariance[(0, 0)] * st.scale * st.scale;
                dens += (-(y - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            }
            nll -= (dens / hypers.len() as f64).ln();
        }
        nll /= truth.len() as f64;
        assert!((got - nll).abs() < 1e-10, "{got} vs {nll}");
    }
}

fn noiseless_model(x: DMatrix<f64>, f: impl Fn(&[f64]) -> f64, ls: &[f64]) -> FittedModel {
    let y = DVector::from_fn(x.nrows(), |i, _| f(&x.row(i).iter().copied().collect::<Vec<_>>()));
    let raw = Dataset::new(x, y).unwrap();
    let st = Standardizer::fit(raw.outcomes());
    FittedModel::new(ensemble(vec![hs(ls, 1e-10, 0.0)]), st.standardize(&raw), st).unwrap()
}

#[test]
fn interpolation_limit_and_rmse_decreases_with_data() {
    let f = |x: &[f64]| (5.0 * x[0]).sin() + x[0] * x[0];
    let grid = |n: usize| DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
    let dense = grid(60);
    let truth: Vec<f64> = (0..60).map(|i| f(&[dense[(i, 0)]])).collect();
    let model = noiseless_model(dense.clone(), f, &[0.3]);
    assert!(evaluate_model(&model, &dense, &truth, false).unwrap().rmse < 1e-3);

    let test = DMatrix::from_fn(200, 1, |i, _| (i as f64 + 0.5) / 200.0);
    let test_truth: Vec<f64> = (0..200).map(|i| f(&[test[(i, 0)]])).collect();
    let mut prev = f64::INFINITY;
    for n in [3, 5, 9, 17, 33] {
        let rmse = evaluate_model(&noiseless_model(grid(n), f, &[0.3]), &test, &test_truth, false).unwrap().rmse;
        assert!(rmse < prev, "n={n}: {rmse} >= {prev}");
        prev = rmse;
    }
}

#[test]
fn inferred_maximizer_examples() {
    let cfg = OptimizerConfig::default();
    let empty = FittedModel::new(ensemble(vec![hs(&[0.3; 3], 0.01, 0.0)]), Dataset::empty(3), Standardizer::IDENTITY).unwrap();
    assert_eq!(inferred_maximizer(&empty, &cfg).unwrap(), vec![0.5; 3]);

    let x = DMatrix::from_row_slice(1, 2, &[0.8, 0.15]);
    let one = FittedModel::new(
        ensemble(vec![hs(&[0.05, 0.05], 1e-4, 0.0)]),
        Dataset::new(x, DVector::from_element(1, 5.0)).unwrap(),
        Standardizer::IDENTITY,
    )
    .unwrap();
    let p = inferred_maximizer(&one, &cfg).unwrap();
    let d = ((p[0] - 0.8).powi(2) + (p[1] - 0.15).powi(2)).sqrt();
    assert!(d < 0.1, "{p:?}");

    let bump = |x: &[f64]| -(x[0] - 0.37).powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts = DMatrix::from_fn(20, 1, |_, _| rng.random::<f64>());
    let model = noiseless_model(pts, bump, &[0.4]);
    let p = inferred_maximizer(&model, &cfg).unwrap();
    assert!((p[0] - 0.37).abs() < 0.02, "{p:?}");
}

#[test]
fn bo_utility_sign_structure() {
    // observed values well below the prior mean of 2
    let x = DMatrix::from_row_slice(4, 1, &[0.05, 0.1, 0.15, 0.2]);
    let y = DVector::from_row_slice(&[-1.0, -0.5, -0.2, -0.8]);
    let model = FittedModel::new(
        ensemble(vec![hs(&[0.05], 1e-8, 2.0), hs(&[0.07], 1e-8, 2.0)]),
        Dataset::new(x, y).unwrap(),
        Standardizer::IDENTITY,
    )
    .unwrap();
    let inc = incumbent(&model).unwrap();
    assert!((inc[0] - 0.15).abs() < 1e-12);
    let util = BoUtility::new(&model, 1, 256, 1e-3, 0).unwrap();
    let at_inc = util.improvement(&DMatrix::from_element(1, 1, 0.15)).unwrap();
    let far = util.improvement(&DMatrix::from_element(1, 1, 0.8)).unwrap();
    assert!(at_inc < 1e-2, "{at_inc}");
    assert!(far > 1.0, "{far}");
    assert!(util.improvement(&DMatrix::from_element(1, 1, 0.9)).unwrap() > 0.0);
}

#[test]
fn derived_seeds_differ_by_stream_and_index() {
    let s = [derive_seed(0, "fit", 0), derive_seed(0, "fit", 1), derive_seed(0, "acq", 0), derive_seed(1, "fit", 0)];
    for i in 0..s.len() {
        for j in 0..i {
            assert_ne!(s[i], s[j]);
        }
    }
    assert_eq!(derive_seed(9, "noise", 2), derive_seed(9, "noise", 2));
}
