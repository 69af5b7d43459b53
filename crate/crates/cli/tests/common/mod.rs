#![allow(dead_code)]

use optscale::law_models::{Axis, Law, LawParams, OptimizerFactors};
use optscale::run_store::{FitPoints, LogPoint, RunRecord, RunSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const TRUTH: LawParams = LawParams {
    a: 1000.0,
    alpha: 0.4,
    b: 100.0,
    beta: 0.3,
    e: 2.0,
};

pub const SIZES: [u64; 5] = [50_000_000, 140_000_000, 250_000_000, 500_000_000, 1_500_000_000];
pub const RATIOS: [u64; 4] = [30, 50, 100, 200];

pub fn rho_law(rho_n: f64, rho_d: f64) -> Law {
    Law::Rho {
        theta: TRUTH,
        factors: OptimizerFactors::new(rho_n, rho_d, Axis::Data).unwrap(),
    }
}

/// Runs on the size × ratio grid with multiplicative log-normal noise.
pub fn runs(law: &Law, optimizer: &str, sigma: f64, seed: u64) -> Vec<RunRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut out = Vec::new();
    for n in SIZES {
        for r in RATIOS {
            let d = n * r;
            let eps: f64 = noise.sample(&mut rng);
            out.push(RunRecord {
                optimizer: optimizer.into(),
                arch: "synthetic".into(),
                n_params: n,
                tokens: d,
                loss: law.eval(n as f64, d as f64) * eps.exp(),
                compute: Some(6.0 * n as f64 * d as f64),
            });
        }
    }
    out
}

pub fn points(law: &Law, optimizer: &str, sigma: f64, seed: u64) -> FitPoints {
    let rows: Vec<LogPoint> = runs(law, optimizer, sigma, seed)
        .iter()
        .map(|r| LogPoint {
            log_n: (r.n_params as f64).ln(),
            log_d: (r.tokens as f64).ln(),
            log_loss: r.loss.ln(),
        })
        .collect();
    let labels = vec![optimizer.to_string(); rows.len()];
    FitPoints::new(Axis::Data, rows, labels).unwrap()
}

pub fn merged(parts: &[FitPoints]) -> FitPoints {
    FitPoints::new(
        parts[0].axis(),
        parts.iter().flat_map(|p| p.rows().to_vec()).collect(),
        parts.iter().flat_map(|p| p.labels().to_vec()).collect(),
    )
    .unwrap()
}

pub fn run_set(parts: Vec<Vec<RunRecord>>) -> RunSet {
    RunSet::from_records(parts.into_iter().flatten(), Some("FLOP".into()), "synthetic").unwrap()
}
