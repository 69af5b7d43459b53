//! Log-space robust fitting of scaling laws.
//!
//! Two procedures sit on top of [`robust_least_squares`]:
//!
//! - [`fit_per_optimizer`]: an independent five-parameter Chinchilla fit for
//!   one optimizer's runs.
//! - [`fit_shared`] / [`fit_compute_form`]: fit `(A, α, B, β, E)` on the
//!   reference optimizer only, then hold them fixed and fit just the two
//!   rescaling factors of every other optimizer.
//!
//! Both run a deterministic multistart grid. Starts are solved in parallel
//! and reduced in start order, so results never depend on scheduling.

mod solver;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use solver::{huber, robust_least_squares, Solution, SolverOptions};

use crate::law_models::{
    analytic_gradient, log_residuals, Axis, Interval, Law, LawBounds, LawParams, ModelKind,
    OptimizerFactors,
};
use crate::run_store::{to_log_points_compute, FitPoints, RunSet};
use crate::{Error, Result};

/// Minimum points for a five-parameter fit.
pub const MIN_POINTS_FULL: usize = 6;
/// Minimum points for a two-factor fit against a fixed reference.
pub const MIN_POINTS_FACTORS: usize = 2;

/// Objectives closer than this (relative) count as a tie.
const TIE_RTOL: f64 = 1e-12;

/// Initialization grid. `e_fraction` values multiply the smallest observed
/// loss; `rho` values are used on both factor axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultistartGrid {
    pub a: Vec<f64>,
    pub alpha: Vec<f64>,
    pub b: Vec<f64>,
    pub beta: Vec<f64>,
    pub e_fraction: Vec<f64>,
    pub rho: Vec<f64>,
}

impl Default for MultistartGrid {
    fn default() -> Self {
        MultistartGrid {
            a: vec![10.0, 1e3, 1e5],
            alpha: vec![0.2, 0.4, 0.6, 0.9],
            b: vec![10.0, 1e3, 1e5],
            beta: vec![0.2, 0.4, 0.6, 0.9],
            e_fraction: vec![0.5, 0.9],
            rho: vec![1.0, 0.5, 2.0],
        }
    }
}

impl MultistartGrid {
    /// Chinchilla starts in free coordinates, clamped into `bounds`.
    fn chinchilla_starts(&self, bounds: &[Interval], min_loss: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for &a in &self.a {
            for &alpha in &self.alpha {
                for &b in &self.b {
                    for &beta in &self.beta {
                        for &ef in &self.e_fraction {
                            let x = [a.ln(), alpha, b.ln(), beta, ef * min_loss];
                            out.push(x.iter().zip(bounds).map(|(v, iv)| iv.clamp(*v)).collect());
                        }
                    }
                }
            }
        }
        out
    }

    fn rho_starts(&self, bounds: &[Interval]) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for &rn in &self.rho {
            for &rs in &self.rho {
                out.push(vec![bounds[0].clamp(rn.ln()), bounds[1].clamp(rs.ln())]);
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let lists = [&self.a, &self.alpha, &self.b, &self.beta, &self.e_fraction, &self.rho];
        if lists.iter().any(|l| l.is_empty() || l.iter().any(|v| !(v.is_finite() && *v > 0.0))) {
            return Err(Error::Argument(
                "multistart grid lists must be nonempty and positive".into(),
            ));
        }
        Ok(())
    }
}

/// Fitting controls. Deserializing fills absent fields with defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub huber_delta: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub multistart_grid: MultistartGrid,
    pub bounds: LawBounds,
    /// Recorded for provenance; the multistart grid itself is deterministic.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let s = SolverOptions::default();
        FitConfig {
            huber_delta: s.huber_delta,
            max_iterations: s.max_iterations,
            gradient_tolerance: s.gradient_tolerance,
            step_tolerance: s.step_tolerance,
            multistart_grid: MultistartGrid::default(),
            bounds: LawBounds::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            huber_delta: self.huber_delta,
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            step_tolerance: self.step_tolerance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.huber_delta > 0.0 && self.gradient_tolerance > 0.0 && self.step_tolerance > 0.0)
        {
            return Err(Error::Argument("tolerances and huber_delta must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Argument("max_iterations must be at least 1".into()));
        }
        self.multistart_grid.validate()?;
        self.bounds.validate()
    }
}

/// An independent Chinchilla fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: ModelKind,
    pub optimizer: Option<String>,
    pub theta: LawParams,
    /// Final Huber objective.
    pub objective: f64,
    /// Mean squared log residual.
    pub train_fit_error: f64,
    pub converged: bool,
    pub iterations: usize,
    pub start_index: usize,
    pub n_points: usize,
}

/// Rescaling factors of one optimizer relative to the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerFit {
    pub factors: OptimizerFactors,
    /// Mean squared log residual.
    pub fit_error: f64,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub start_index: usize,
    pub n_points: usize,
    /// Leave-one-out std of `ρ_N`, when computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_n_std: Option<f64>,
    /// Leave-one-out std of the second factor, when computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_second_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedFitResult {
    pub axis: Axis,
    pub reference_optimizer: String,
    pub theta_ref: LawParams,
    pub reference_fit: FitResult,
    pub per_optimizer: BTreeMap<String, OptimizerFit>,
}

impl SharedFitResult {
    /// The fitted law for `optimizer`, if present.
    pub fn law_for(&self, optimizer: &str) -> Option<Law> {
        self.per_optimizer.get(optimizer).map(|f| Law::Rho {
            theta: self.theta_ref,
            factors: f.factors,
        })
    }
}

fn mean_squared(r: &[f64]) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

/// Runs every start and keeps the lowest objective among converged ones
/// (any start if none converged), ties going to the lowest index.
fn multistart<F>(starts: &[Vec<f64>], solve: F) -> Result<(usize, Solution)>
where
    F: Fn(&[f64]) -> Result<Solution> + Sync,
{
    let solutions: Vec<Result<Solution>> = starts.par_iter().map(|s| solve(s)).collect();
    let mut solved = Vec::with_capacity(solutions.len());
    for s in solutions {
        solved.push(s?);
    }
    let any_converged = solved.iter().any(|s| s.converged);
    let mut best: Option<(usize, &Solution)> = None;
    for (i, s) in solved.iter().enumerate() {
        if any_converged && !s.converged {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => {
                let scale = b.objective.abs().max(s.objective.abs());
                s.objective < b.objective && b.objective - s.objective > TIE_RTOL * scale
            }
        };
        if better {
            best = Some((i, s));
        }
    }
    let (i, s) = best.ok_or_else(|| Error::Argument("empty multistart grid".into()))?;
    Ok((i, s.clone()))
}

fn jacobian_of(law: &Law, points: &FitPoints) -> DMatrix<f64> {
    // Residuals are ln L − ln L̂, so their Jacobian is −∇ ln L̂.
    let n = law.free_names().len();
    let mut jac = DMatrix::zeros(points.len(), n);
    for (i, p) in points.rows().iter().enumerate() {
        for (j, g) in analytic_gradient(law, p).into_iter().enumerate() {
            jac[(i, j)] = -g;
        }
    }
    jac
}

fn solve_law(template: &Law, points: &FitPoints, init: &[f64], bounds: &[Interval], config: &FitConfig) -> Result<Solution> {
    robust_least_squares(
        |x| log_residuals(&template.with_free_params(x), points),
        |x| jacobian_of(&template.with_free_params(x), points),
        init,
        bounds,
        &config.solver_options(),
    )
}

/// Independent Chinchilla fit of one optimizer's points.
pub fn fit_per_optimizer(points: &FitPoints, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if points.len() < MIN_POINTS_FULL {
        return Err(Error::Underdetermined {
            points: points.len(),
            required: MIN_POINTS_FULL,
            context: points.optimizers().first().cloned(),
        });
    }
    let optimizers = points.optimizers();
    if optimizers.len() > 1 {
        return Err(Error::Argument(format!(
            "expected points of a single optimizer, got {optimizers:?}"
        )));
    }
    let min_loss = points.min_loss().expect("nonempty");
    let bounds = config.bounds.chinchilla_free(min_loss);
    let starts = config.multistart_grid.chinchilla_starts(&bounds, min_loss);
    let template = Law::Chinchilla(LawParams {
        a: 1.0,
        alpha: 1.0,
        b: 1.0,
        beta: 1.0,
        e: 1.0,
    });
    let (start_index, sol) = multistart(&starts, |init| solve_law(&template, points, init, &bounds, config))?;
    let law = template.with_free_params(&sol.x);
    let Law::Chinchilla(theta) = law else {
        unreachable!()
    };
    Ok(FitResult {
        kind: ModelKind::Chinchilla,
        optimizer: optimizers.into_iter().next(),
        theta,
        objective: sol.objective,
        train_fit_error: mean_squared(&log_residuals(&law, points)),
        converged: sol.converged,
        iterations: sol.iterations,
        start_index,
        n_points: points.len(),
    })
}

/// Fits `(ρ_N, ρ_second)` of one optimizer with `theta` held fixed.
pub fn fit_factors(theta: &LawParams, points: &FitPoints, config: &FitConfig) -> Result<OptimizerFit> {
    config.validate()?;
    if points.len() < MIN_POINTS_FACTORS {
        return Err(Error::Underdetermined {
            points: points.len(),
            required: MIN_POINTS_FACTORS,
            context: points.optimizers().first().cloned(),
        });
    }
    let bounds = config.bounds.rho_free();
    let starts = config.multistart_grid.rho_starts(&bounds);
    let template = Law::Rho {
        theta: *theta,
        factors: OptimizerFactors::identity(points.axis()),
    };
    let (start_index, sol) = multistart(&starts, |init| solve_law(&template, points, init, &bounds, config))?;
    let law = template.with_free_params(&sol.x);
    let Law::Rho { factors, .. } = law else {
        unreachable!()
    };
    Ok(OptimizerFit {
        factors,
        fit_error: mean_squared(&log_residuals(&law, points)),
        objective: sol.objective,
        converged: sol.converged,
        iterations: sol.iterations,
        start_index,
        n_points: points.len(),
        rho_n_std: None,
        rho_second_std: None,
    })
}

/// Reference-anchored fit: full Chinchilla on `reference`, then two factors
/// per other optimizer with the reference parameters held fixed. The
/// rescaled axis follows `points.axis()`.
pub fn fit_shared(points: &FitPoints, reference: &str, config: &FitConfig) -> Result<SharedFitResult> {
    config.validate()?;
    let ref_points = points.for_optimizer(reference);
    if ref_points.is_empty() {
        return Err(Error::Argument(format!(
            "reference optimizer {reference:?} has no runs"
        )));
    }
    let others: Vec<String> = points
        .optimizers()
        .into_iter()
        .filter(|o| o != reference)
        .collect();
    for o in &others {
        let n = points.for_optimizer(o).len();
        if n < MIN_POINTS_FACTORS {
            return Err(Error::Underdetermined {
                points: n,
                required: MIN_POINTS_FACTORS,
                context: Some(o.clone()),
            });
        }
    }

    let reference_fit = fit_per_optimizer(&ref_points, config)?;
    let theta_ref = reference_fit.theta;

    let fits: Vec<Result<OptimizerFit>> = others
        .par_iter()
        .map(|o| fit_factors(&theta_ref, &points.for_optimizer(o), config))
        .collect();

    let mut per_optimizer = BTreeMap::new();
    per_optimizer.insert(
        reference.to_string(),
        OptimizerFit {
            factors: OptimizerFactors::identity(points.axis()),
            fit_error: reference_fit.train_fit_error,
            objective: reference_fit.objective,
            converged: reference_fit.converged,
            iterations: reference_fit.iterations,
            start_index: reference_fit.start_index,
            n_points: reference_fit.n_points,
            rho_n_std: None,
            rho_second_std: None,
        },
    );
    for (o, fit) in others.into_iter().zip(fits) {
        per_optimizer.insert(o, fit?);
    }
    Ok(SharedFitResult {
        axis: points.axis(),
        reference_optimizer: reference.to_string(),
        theta_ref,
        reference_fit,
        per_optimizer,
    })
}

/// Compute-axis variant of [`fit_shared`]: the reference parameters are
/// refitted on `(N, C)` points. Every record must carry compute.
pub fn fit_compute_form(runs: &RunSet, reference: &str, config: &FitConfig) -> Result<SharedFitResult> {
    let points = to_log_points_compute(runs)?;
    fit_shared(&points, reference, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run_store::LogPoint;

    const TRUTH: LawParams = LawParams {
        a: 1000.0,
        alpha: 0.4,
        b: 100.0,
        beta: 0.3,
        e: 2.0,
    };

    fn grid_points(law: &Law, label: &str) -> FitPoints {
        let mut rows = Vec::new();
        for n in [5e7, 1.4e8, 2.5e8, 5e8, 1.5e9] {
            for ratio in [30.0, 50.0, 100.0, 200.0] {
                let d = n * ratio;
                rows.push(LogPoint {
                    log_n: f64::ln(n),
                    log_d: f64::ln(d),
                    log_loss: law.eval(n, d).ln(),
                });
            }
        }
        let labels = vec![label.to_string(); rows.len()];
        FitPoints::new(Axis::Data, rows, labels).unwrap()
    }

    #[test]
    fn five_points_are_underdetermined() {
        let pts = grid_points(&Law::Chinchilla(TRUTH), "AdamW");
        let five = FitPoints::new(Axis::Data, pts.rows()[..5].to_vec(), vec!["AdamW".into(); 5]).unwrap();
        let err = fit_per_optimizer(&five, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Underdetermined { points: 5, required: 6, .. }));
    }

    #[test]
    fn mixed_optimizers_rejected() {
        let mut rows = grid_points(&Law::Chinchilla(TRUTH), "AdamW").rows().to_vec();
        rows.truncate(8);
        let mut labels = vec!["AdamW".to_string(); 8];
        labels[0] = "Muon".into();
        let pts = FitPoints::new(Axis::Data, rows, labels).unwrap();
        assert!(matches!(fit_per_optimizer(&pts, &FitConfig::default()), Err(Error::Argument(_))));
    }

    #[test]
    fn noiseless_recovery_and_fixed_point() {
        let pts = grid_points(&Law::Chinchilla(TRUTH), "AdamW");
        let config = FitConfig::default();
        let fit = fit_per_optimizer(&pts, &config).unwrap();
        assert!(fit.converged);
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        for (got, want) in fit.theta.as_array().iter().zip(TRUTH.as_array()) {
            assert!(rel(*got, want) <= 1e-3, "{:?}", fit.theta);
        }
        assert!((fit.theta.e - TRUTH.e).abs() <= 1e-4);

        // Bounds hold.
        let b = config.bounds;
        assert!(b.a.contains(fit.theta.a) && b.alpha.contains(fit.theta.alpha));
        assert!(b.b.contains(fit.theta.b) && b.beta.contains(fit.theta.beta));

        // Restarting from the solution stays put.
        let template = Law::Chinchilla(fit.theta);
        let x0 = template.free_params();
        let bounds = config.bounds.chinchilla_free(pts.min_loss().unwrap());
        let again = solve_law(&template, &pts, &x0, &bounds, &config).unwrap();
        for (a, b) in again.x.iter().zip(&x0) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        }
    }

    #[test]
    fn multistart_is_deterministic() {
        let pts = grid_points(&Law::Chinchilla(TRUTH), "AdamW");
        let a = fit_per_optimizer(&pts, &FitConfig::default()).unwrap();
        let b = fit_per_optimizer(&pts, &FitConfig::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn accepted_steps_never_increase_objective() {
        let pts = grid_points(&Law::Chinchilla(TRUTH), "AdamW");
        let config = FitConfig::default();
        let bounds = config.bounds.chinchilla_free(pts.min_loss().unwrap());
        let template = Law::Chinchilla(TRUTH);
        for start in config.multistart_grid.chinchilla_starts(&bounds, pts.min_loss().unwrap()).iter().step_by(7) {
            let s = solve_law(&template, &pts, start, &bounds, &config).unwrap();
            assert!(s.history.windows(2).all(|w| w[1] <= w[0]));
            for (v, iv) in s.x.iter().zip(&bounds) {
                assert!(iv.contains(*v));
            }
        }
    }

    fn merged(parts: &[FitPoints]) -> FitPoints {
        let rows = parts.iter().flat_map(|p| p.rows().to_vec()).collect();
        let labels = parts.iter().flat_map(|p| p.labels().to_vec()).collect();
        FitPoints::new(Axis::Data, rows, labels).unwrap()
    }

    #[test]
    fn shared_fit_recovers_doubled_data() {
        let reference = grid_points(&Law::Chinchilla(TRUTH), "AdamW");
        let fast = grid_points(
            &Law::Rho {
                theta: TRUTH,
                factors: OptimizerFactors::new(1.0, 2.0, Axis::Data).unwrap(),
            },
            "X",
        );
        let same = grid_points(&Law::Chinchilla(TRUTH), "Twin");
        let all = merged(&[reference, fast, same]);
        let res = fit_shared(&all, "AdamW", &FitConfig::default()).unwrap();

        let r = &res.per_optimizer["AdamW"].factors;
        assert_eq!((r.rho_n, r.rho_second), (1.0, 1.0));

        let x = &res.per_optimizer["X"].factors;
        assert!((1.98..=2.02).contains(&x.rho_second), "{x:?}");
        assert!((0.99..=1.01).contains(&x.rho_n), "{x:?}");

        let t = &res.per_optimizer["Twin"].factors;
        assert!((t.rho_n - 1.0).abs() <= 1e-3 && (t.rho_second - 1.0).abs() <= 1e-3, "{t:?}");
    }

    #[test]
    fn shared_fit_argument_errors() {
        let reference = grid_points(&Law::Chinchilla(TRUTH), "AdamW");
        let err = fit_shared(&reference, "SOAP", &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));

        let lonely = FitPoints::new(Axis::Data, reference.rows()[..1].to_vec(), vec!["Muon".into()]).unwrap();
        let err = fit_shared(&merged(&[reference, lonely]), "AdamW", &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Underdetermined { points: 1, .. }));
    }
}
