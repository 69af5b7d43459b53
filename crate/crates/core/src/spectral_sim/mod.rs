//! Gradient descent on power-law quadratics.
//!
//! The operator is represented by its eigenvalues `λ_i = γL / i^α` and the
//! initial offset by `|δ_i| = Δ / i^{β/2}` (with `θ_0 = 0`). A width-`d`
//! model only moves the first `d` coordinates, so the excess loss splits
//! exactly into an optimization error on `1..=d` and an approximation error
//! from the frozen tail `i > d`. Unit step size is assumed: the spectral
//! constant `L` equals `gamma_l`.

mod special;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use special::{
    gamma, hurwitz_zeta, ln_gamma, ln_upper_incomplete_gamma, upper_incomplete_gamma,
    TailOptions,
};

use crate::run_store::{RunRecord, RunSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub alpha_spec: f64,
    pub beta_spec: f64,
    /// Largest eigenvalue `γL` of the preconditioned operator.
    pub gamma_l: f64,
    pub delta_scale: f64,
    /// Irreducible loss `L*`.
    pub l_star: f64,
}

impl SpectrumConfig {
    pub fn new(alpha_spec: f64, beta_spec: f64, gamma_l: f64, delta_scale: f64, l_star: f64) -> Result<Self> {
        let cfg = SpectrumConfig {
            alpha_spec,
            beta_spec,
            gamma_l,
            delta_scale,
            l_star,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.alpha_spec) && pos(self.beta_spec) && pos(self.delta_scale)) {
            return Err(Error::Argument(format!(
                "alpha, beta and delta must be positive and finite: {self:?}"
            )));
        }
        if self.alpha_spec + self.beta_spec <= 1.0 {
            return Err(Error::Argument(format!(
                "alpha + beta must exceed 1 for a finite initial loss, got {}",
                self.alpha_spec + self.beta_spec
            )));
        }
        if !(self.gamma_l > 0.0 && self.gamma_l <= 1.0) {
            return Err(Error::Argument(format!(
                "gamma_l must lie in (0, 1], got {}",
                self.gamma_l
            )));
        }
        if !(self.l_star.is_finite() && self.l_star >= 0.0) {
            return Err(Error::Argument(format!(
                "l_star must be nonnegative, got {}",
                self.l_star
            )));
        }
        Ok(())
    }

    /// `λ_i = γL / i^α`.
    pub fn eigenvalue(&self, i: u64) -> f64 {
        assert!(i >= 1, "eigenvalue index starts at 1");
        if i == 1 {
            return self.gamma_l;
        }
        self.gamma_l * (-self.alpha_spec * (i as f64).ln()).exp()
    }

    /// `|⟨δ, u_i⟩| = Δ / i^{β/2}`.
    pub fn signal(&self, i: u64) -> f64 {
        assert!(i >= 1, "signal index starts at 1");
        self.delta_scale * (-0.5 * self.beta_spec * (i as f64).ln()).exp()
    }

    /// `LΔ²/2`, the weight of `i^{-(α+β)}` in the excess loss.
    fn prefactor(&self) -> f64 {
        0.5 * self.gamma_l * self.delta_scale * self.delta_scale
    }

    fn exponent_sum(&self) -> f64 {
        self.alpha_spec + self.beta_spec
    }

    /// `ln(λ_i δ_i² / 2)`, the log weight of coordinate `i` at `k = 0`.
    fn ln_weight(&self, i: u64) -> f64 {
        self.prefactor().ln() - self.exponent_sum() * (i as f64).ln()
    }

    /// `ω = 1 + (β − 1)/α`.
    pub fn omega(&self) -> f64 {
        1.0 + (self.beta_spec - 1.0) / self.alpha_spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub approximation_error: f64,
    pub optimization_error: f64,
    pub total_excess: f64,
    pub d: u64,
    pub k: u64,
}

impl LossBreakdown {
    fn new(approximation_error: f64, optimization_error: f64, d: u64, k: u64) -> Self {
        LossBreakdown {
            approximation_error,
            optimization_error,
            total_excess: approximation_error + optimization_error,
            d,
            k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Power,
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticPrediction {
    pub omega: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub phase: Phase,
    /// `C₁ d^{-(α+β-1)}`.
    pub predicted_approx: f64,
    /// Incomplete-Gamma form of the optimization error.
    pub predicted_opt: f64,
    /// `ln predicted_opt`, accurate where `predicted_opt` underflows.
    pub ln_predicted_opt: f64,
}

fn check_width(d: u64) -> Result<()> {
    if d == 0 {
        return Err(Error::Argument("width d must be at least 1".into()));
    }
    Ok(())
}

/// Frozen-tail excess `Σ_{i>d} λ_i δ_i² / 2`.
pub fn approximation_error(cfg: &SpectrumConfig, d: u64, tail: &TailOptions) -> Result<f64> {
    cfg.validate()?;
    check_width(d)?;
    Ok(cfg.prefactor() * hurwitz_zeta(cfg.exponent_sum(), d + 1, tail)?)
}

/// `ln((1 − λ)^{2k})`, with `0^0 = 1`.
fn ln_contraction(lambda: f64, k: u64) -> f64 {
    if k == 0 {
        0.0
    } else {
        2.0 * k as f64 * (-lambda).ln_1p()
    }
}

/// Exact excess after `k` steps at width `d`, from the closed form
/// `(1 − λ_i)^{2k}` of every active coordinate.
pub fn closed_form_excess(cfg: &SpectrumConfig, d: u64, k: u64) -> Result<LossBreakdown> {
    closed_form_excess_with(cfg, d, k, &TailOptions::default())
}

pub fn closed_form_excess_with(cfg: &SpectrumConfig, d: u64, k: u64, tail: &TailOptions) -> Result<LossBreakdown> {
    let approx = approximation_error(cfg, d, tail)?;
    let opt: f64 = (1..=d)
        .map(|i| (cfg.ln_weight(i) + ln_contraction(cfg.eigenvalue(i), k)).exp())
        .sum();
    Ok(LossBreakdown::new(approx, opt, d, k))
}

/// Runs `k` gradient-descent steps on the first `d` coordinates and reads
/// the excess loss off the iterates.
pub fn simulate_gd(cfg: &SpectrumConfig, d: u64, k: u64) -> Result<LossBreakdown> {
    let approx = approximation_error(cfg, d, &TailOptions::default())?;
    let terms: Vec<f64> = (1..=d)
        .into_par_iter()
        .map(|i| {
            let lambda = cfg.eigenvalue(i);
            // Residual θ_k − θ*, starting from θ_0 − θ* = −δ_i.
            let mut r = -cfg.signal(i);
            for _ in 0..k {
                if r == 0.0 {
                    break;
                }
                r -= lambda * r;
            }
            0.5 * lambda * r * r
        })
        .collect();
    Ok(LossBreakdown::new(approx, terms.iter().sum(), d, k))
}

/// `ln` of the optimization error, by log-sum-exp over coordinates; stays
/// finite where the error itself underflows.
pub fn ln_optimization_error(cfg: &SpectrumConfig, d: u64, k: u64) -> Result<f64> {
    cfg.validate()?;
    check_width(d)?;
    let logs: Vec<f64> = (1..=d)
        .map(|i| cfg.ln_weight(i) + ln_contraction(cfg.eigenvalue(i), k))
        .collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(m);
    }
    Ok(m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln())
}

/// Two-phase asymptotics at `(d, k)`. Needs `k ≥ 1` and a positive
/// spectral dimension `ω`.
pub fn asymptotic_prediction(cfg: &SpectrumConfig, d: u64, k: u64) -> Result<AsymptoticPrediction> {
    cfg.validate()?;
    check_width(d)?;
    if k == 0 {
        return Err(Error::Argument("asymptotics need k ≥ 1".into()));
    }
    let (a, b, gl) = (cfg.alpha_spec, cfg.beta_spec, cfg.gamma_l);
    let omega = cfg.omega();
    if omega <= 0.0 {
        return Err(Error::Argument(format!(
            "spectral dimension omega = {omega} must be positive"
        )));
    }
    let l_delta2 = gl * cfg.delta_scale * cfg.delta_scale;
    let c1 = l_delta2 / (2.0 * (a + b - 1.0));
    let ln_opt_scale = l_delta2.ln() - (2.0 * a).ln() - omega * (2.0 * gl).ln();
    let c2 = (ln_opt_scale + ln_gamma(omega)).exp();
    let c3 = l_delta2 / (4.0 * a * gl);
    let (dk, kf) = (d as f64, k as f64);
    let lambda_d = cfg.eigenvalue(d);
    let phase = if kf * lambda_d <= 1.0 {
        Phase::Power
    } else {
        Phase::Saturated
    };
    let t = 2.0 * kf * lambda_d;
    let ln_predicted_opt = ln_opt_scale + ln_upper_incomplete_gamma(omega, t) - omega * kf.ln();
    Ok(AsymptoticPrediction {
        omega,
        c1,
        c2,
        c3,
        phase,
        predicted_approx: c1 * (-(a + b - 1.0) * dk.ln()).exp(),
        predicted_opt: ln_predicted_opt.exp(),
        ln_predicted_opt,
    })
}

/// `ln(C₃ d^{-(β−1)} k^{-1} e^{-2kλ_d})`, the saturated-phase law.
pub fn ln_saturation_prediction(cfg: &SpectrumConfig, d: u64, k: u64) -> Result<f64> {
    let pred = asymptotic_prediction(cfg, d, k)?;
    let (dk, kf) = (d as f64, k as f64);
    Ok(pred.c3.ln() - (cfg.beta_spec - 1.0) * dk.ln() - kf.ln() - 2.0 * kf * cfg.eigenvalue(d))
}

/// Options for [`generate_theory_runs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRunOptions {
    pub tokens_per_step: u64,
    /// Std of the multiplicative log-normal noise.
    pub noise_sigma: f64,
    pub seed: u64,
    pub optimizer: String,
    pub arch: String,
}

impl Default for TheoryRunOptions {
    fn default() -> Self {
        TheoryRunOptions {
            tokens_per_step: 1,
            noise_sigma: 0.0,
            seed: 0,
            optimizer: "GD".into(),
            arch: "spectral".into(),
        }
    }
}

/// One simulated run per `(d, k)` cell: `n_params = d`,
/// `tokens = k·tokens_per_step`, `loss = (L* + excess)·e^ε`.
///
/// Returns the run set and the exact breakdown of every cell.
pub fn generate_theory_runs(
    cfg: &SpectrumConfig,
    grid: &[(u64, u64)],
    opts: &TheoryRunOptions,
) -> Result<(RunSet, Vec<LossBreakdown>)> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::Argument("empty (d, k) grid".into()));
    }
    if opts.tokens_per_step == 0 {
        return Err(Error::Argument("tokens_per_step must be positive".into()));
    }
    if !(opts.noise_sigma.is_finite() && opts.noise_sigma >= 0.0) {
        return Err(Error::Argument(format!(
            "noise sigma must be nonnegative, got {}",
            opts.noise_sigma
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &(d, k) in grid {
        if d == 0 || k == 0 {
            return Err(Error::Argument(format!(
                "grid cell (d = {d}, k = {k}): both must be at least 1"
            )));
        }
        if !seen.insert((d, k)) {
            return Err(Error::Argument(format!("duplicate grid cell (d = {d}, k = {k})")));
        }
    }

    let breakdowns: Vec<LossBreakdown> = grid
        .par_iter()
        .map(|&(d, k)| closed_form_excess(cfg, d, k))
        .collect::<Result<_>>()?;

    let noise = Normal::new(0.0, opts.noise_sigma)
        .map_err(|e| Error::Argument(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut records = Vec::with_capacity(grid.len());
    for b in &breakdowns {
        let eps: f64 = noise.sample(&mut rng);
        let tokens = b.k.checked_mul(opts.tokens_per_step).ok_or_else(|| {
            Error::Argument(format!("tokens overflow at k = {}", b.k))
        })?;
        records.push(RunRecord {
            optimizer: opts.optimizer.clone(),
            arch: opts.arch.clone(),
            n_params: b.d,
            tokens,
            loss: (cfg.l_star + b.total_excess) * eps.exp(),
            compute: None,
        });
    }
    let provenance = format!(
        "spectral_sim alpha={} beta={} gamma_l={} delta={} l_star={} sigma={} seed={}",
        cfg.alpha_spec, cfg.beta_spec, cfg.gamma_l, cfg.delta_scale, cfg.l_star, opts.noise_sigma, opts.seed
    );
    let runs = RunSet::from_records(records, None, provenance)?;
    Ok((runs, breakdowns))
}

/// Data-efficiency factor implied by matching `B/(D ρ_D)^β` to
/// `C_D (C₂/D^ω)^{β/ω}`: `ρ_D = (B/C_D)^{1/β} C₂^{-1/ω}`.
pub fn bridge_rho_from_theory(b: f64, beta: f64, c_d: f64, c2: f64, omega: f64) -> Result<f64> {
    let inputs = [b, beta, c_d, c2, omega];
    if inputs.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Argument(format!(
            "bridge inputs must be positive, got {inputs:?}"
        )));
    }
    Ok(((b / c_d).ln() / beta - c2.ln() / omega).exp())
}
