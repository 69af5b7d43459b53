use optscale::fitter::{fit_compute_form, fit_shared, FitConfig};
use optscale::law_models::{Axis, Law, LawParams, ModelKind, OptimizerFactors};
use optscale::run_store::{to_log_points, FitPoints, RunRecord, RunSet};
use optscale::validation::{loocv, Procedure};
use optscale::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const TRUTH: LawParams = LawParams {
    a: 1000.0,
    alpha: 0.4,
    b: 100.0,
    beta: 0.3,
    e: 2.0,
};
const SIZES: [u64; 5] = [50_000_000, 140_000_000, 250_000_000, 500_000_000, 1_500_000_000];
const RATIOS: [u64; 4] = [30, 50, 100, 200];

fn records(law: &Law, optimizer: &str, sigma: f64, seed: u64) -> Vec<RunRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut out = Vec::new();
    for n in SIZES {
        for r in RATIOS {
            let d = n * r;
            let c = 6.0 * n as f64 * d as f64;
            let second = if law.kind() == ModelKind::ComputeRho { c } else { d as f64 };
            let eps: f64 = noise.sample(&mut rng);
            out.push(RunRecord {
                optimizer: optimizer.into(),
                arch: "synthetic".into(),
                n_params: n,
                tokens: d,
                loss: law.eval(n as f64, second) * eps.exp(),
                compute: Some(c),
            });
        }
    }
    out
}

fn run_set(parts: Vec<Vec<RunRecord>>) -> RunSet {
    RunSet::from_records(parts.into_iter().flatten(), Some("FLOP".into()), "synthetic").unwrap()
}

fn chinchilla_points(sigma: f64, seed: u64) -> FitPoints {
    to_log_points(&run_set(vec![records(&Law::Chinchilla(TRUTH), "AdamW", sigma, seed)]))
}

fn compute_law(rho_c: f64) -> Law {
    Law::Rho {
        theta: TRUTH,
        factors: OptimizerFactors::new(1.0, rho_c, Axis::Compute).unwrap(),
    }
}

#[test]
fn compute_form_recovers_rho_c() {
    let runs = run_set(vec![
        records(&compute_law(1.0), "AdamW", 0.0, 0),
        records(&compute_law(1.44), "Muon", 0.0, 1),
    ]);
    let fit = fit_compute_form(&runs, "AdamW", &FitConfig::default()).unwrap();
    assert_eq!(fit.axis, Axis::Compute);
    let muon = &fit.per_optimizer["Muon"];
    assert!((muon.factors.rho_second - 1.44).abs() < 1e-3, "{:?}", muon.factors);
    assert!((muon.factors.rho_n - 1.0).abs() < 1e-3, "{:?}", muon.factors);
    let adamw = &fit.per_optimizer["AdamW"];
    assert_eq!((adamw.factors.rho_n, adamw.factors.rho_second), (1.0, 1.0));
}

#[test]
fn compute_form_requires_compute() {
    let mut recs = records(&compute_law(1.0), "AdamW", 0.0, 0);
    recs.extend(records(&compute_law(1.2), "Muon", 0.0, 1));
    recs[3].compute = None;
    let runs = RunSet::from_records(recs, Some("FLOP".into()), "synthetic").unwrap();
    let err = fit_compute_form(&runs, "AdamW", &FitConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Argument(_)), "{err:?}");
}

#[test]
fn data_axis_shared_fit_on_ingested_runs() {
    let rho = Law::Rho {
        theta: TRUTH,
        factors: OptimizerFactors::new(0.95, 2.0, Axis::Data).unwrap(),
    };
    let runs = run_set(vec![
        records(&Law::Chinchilla(TRUTH), "AdamW", 0.0, 0),
        records(&rho, "Muon", 0.0, 1),
    ]);
    let fit = fit_shared(&to_log_points(&runs), "AdamW", &FitConfig::default()).unwrap();
    let f = &fit.per_optimizer["Muon"].factors;
    assert!((f.rho_n - 0.95).abs() < 1e-3 && (f.rho_second - 2.0).abs() < 1e-3, "{f:?}");
}

#[test]
fn noiseless_loo_has_negligible_spread() {
    let r = loocv(&chinchilla_points(0.0, 0), &Procedure::Chinchilla, &FitConfig::default()).unwrap();
    for p in &r.parameters {
        assert!(p.std <= 1e-4 * p.mean.abs(), "{}: std {}", p.name, p.std);
    }
}

fn median_relative_std(sigma: f64) -> f64 {
    let mut meds = Vec::new();
    for seed in 0..3 {
        let r = loocv(&chinchilla_points(sigma, seed), &Procedure::Chinchilla, &FitConfig::default()).unwrap();
        let mut rel: Vec<f64> = r.parameters.iter().map(|p| p.std / p.mean.abs()).collect();
        rel.sort_by(f64::total_cmp);
        meds.push(rel[rel.len() / 2]);
    }
    meds.iter().sum::<f64>() / meds.len() as f64
}

#[test]
fn loo_spread_grows_with_noise() {
    let s: Vec<f64> = [0.001, 0.005, 0.02].iter().map(|&x| median_relative_std(x)).collect();
    assert!(s[0] < s[1] && s[1] < s[2], "{s:?}");
}

// Monte Carlo coverage of the LOO interval mean ± 3·std over 100 noisy
// replicates at sigma = 0.005.
#[test]
fn loo_interval_covers_truth() {
    let truth = TRUTH.as_array();
    let mut covered = 0;
    for seed in 0..100 {
        let r = loocv(&chinchilla_points(0.005, seed), &Procedure::Chinchilla, &FitConfig::default()).unwrap();
        if r.parameters.iter().zip(truth).all(|(p, t)| (t - p.mean).abs() <= 3.0 * p.std) {
            covered += 1;
        }
    }
    eprintln!("loo coverage: {covered}/100");
    assert!(covered >= 95, "truth inside mean ± 3·std in {covered}/100 replicates");
}
