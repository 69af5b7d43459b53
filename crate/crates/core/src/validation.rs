//! Leave-one-out cross-validation, parameter-degeneracy diagnostics and the
//! held-out extrapolation benchmark.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fitter::{
    fit_factors, fit_per_optimizer, fit_shared, FitConfig, FitResult, SharedFitResult,
    MIN_POINTS_FACTORS, MIN_POINTS_FULL,
};
use crate::law_models::{Axis, Law};
use crate::run_store::{FitPoints, LogPoint};
use crate::{Error, Result};

/// Fitting procedure re-run inside every fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Procedure {
    /// Independent Chinchilla fit of a single optimizer's points.
    Chinchilla,
    /// Reference-anchored shared fit over all optimizers.
    Shared { reference: String },
}

/// A fitted procedure: reported parameter values plus a law per optimizer.
struct Fitted {
    values: Vec<f64>,
    laws: BTreeMap<String, Law>,
    train_fit_error: f64,
}

impl Procedure {
    fn parameter_names(&self, points: &FitPoints) -> Vec<String> {
        let mut names: Vec<String> = ["A", "alpha", "B", "beta", "E"].map(String::from).to_vec();
        if let Procedure::Shared { reference } = self {
            let key = points.axis().rho_key();
            for o in points.optimizers().into_iter().filter(|o| o != reference) {
                names.push(format!("rho_N[{o}]"));
                names.push(format!("{key}[{o}]"));
            }
        }
        names
    }

    fn fit(&self, points: &FitPoints, config: &FitConfig) -> Result<Fitted> {
        match self {
            Procedure::Chinchilla => {
                let fit = fit_per_optimizer(points, config)?;
                let label = fit.optimizer.clone().unwrap_or_default();
                Ok(Fitted {
                    values: fit.theta.as_array().to_vec(),
                    laws: BTreeMap::from([(label, Law::Chinchilla(fit.theta))]),
                    train_fit_error: fit.train_fit_error,
                })
            }
            Procedure::Shared { reference } => {
                let fit = fit_shared(points, reference, config)?;
                let mut values = fit.theta_ref.as_array().to_vec();
                for (o, f) in &fit.per_optimizer {
                    if o != reference {
                        values.push(f.factors.rho_n);
                        values.push(f.factors.rho_second);
                    }
                }
                let laws = fit
                    .per_optimizer
                    .keys()
                    .map(|o| (o.clone(), fit.law_for(o).expect("present")))
                    .collect();
                let n = points.len() as f64;
                let train_fit_error = fit
                    .per_optimizer
                    .values()
                    .map(|f| f.fit_error * f.n_points as f64)
                    .sum::<f64>()
                    / n;
                Ok(Fitted {
                    values,
                    laws,
                    train_fit_error,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    /// Value from the fit on all points.
    pub estimate: f64,
    /// Mean of the fold estimates.
    pub mean: f64,
    /// Population std of the fold estimates around their mean.
    pub std: f64,
    /// Fold estimates, fold `i` leaving out point `i`.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutPoint {
    pub optimizer: String,
    pub log_n: f64,
    pub log_x: f64,
    pub log_loss: f64,
    pub predicted_log_loss: f64,
    pub squared_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub procedure: Procedure,
    pub axis: Axis,
    pub n_points: usize,
    /// Smallest and largest `N` in the data.
    pub n_range: (f64, f64),
    /// Smallest and largest second covariate (`D` or `C`).
    pub x_range: (f64, f64),
    pub parameters: Vec<ParameterSummary>,
    pub held_out: Vec<HeldOutPoint>,
    /// Mean squared log residual of the fit on all points.
    pub train_fit_error: f64,
    /// Mean of the held-out squared errors.
    pub test_fit_error: f64,
}

impl LooReport {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Mean and population std, summed in index order.
pub fn mean_and_population_std(samples: &[f64]) -> (f64, f64) {
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|v| (mean - v) * (mean - v)).sum::<f64>() / m;
    (mean, var.sqrt())
}

fn name_fold(err: Error, fold: usize, p: &LogPoint, label: &str) -> Error {
    match err {
        Error::Underdetermined {
            points,
            required,
            context,
        } => Error::Underdetermined {
            points,
            required,
            context: Some(format!(
                "fold {fold} (held out {label} at N = {:.6e}, {:.6e})",
                p.log_n.exp(),
                p.log_d.exp()
            ) + &context.map(|c| format!(": {c}")).unwrap_or_default()),
        },
        other => other,
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Leave-one-out cross-validation: `m` refits, each excluding one point,
/// with the excluded point predicted by its fold's law.
///
/// A Chinchilla procedure needs `m ≥ 7` so every fold keeps six points.
pub fn loocv(points: &FitPoints, procedure: &Procedure, config: &FitConfig) -> Result<LooReport> {
    config.validate()?;
    let m = points.len();
    if *procedure == Procedure::Chinchilla && m < MIN_POINTS_FULL + 1 {
        return Err(Error::Underdetermined {
            points: m.saturating_sub(1),
            required: MIN_POINTS_FULL,
            context: Some(format!("every fold of a {m}-point leave-one-out")),
        });
    }
    let names = procedure.parameter_names(points);
    let full = procedure.fit(points, config)?;

    let folds: Vec<Result<(Vec<f64>, HeldOutPoint)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let p = points.rows()[i];
            let label = &points.labels()[i];
            let fitted = procedure
                .fit(&points.without(i), config)
                .map_err(|e| name_fold(e, i, &p, label))?;
            if fitted.values.len() != names.len() {
                return Err(Error::Underdetermined {
                    points: 0,
                    required: MIN_POINTS_FACTORS,
                    context: Some(format!("fold {i}: optimizer {label} has no remaining points")),
                });
            }
            let law = fitted.laws.get(label).ok_or_else(|| Error::Underdetermined {
                points: 0,
                required: MIN_POINTS_FACTORS,
                context: Some(format!("fold {i}: optimizer {label} has no remaining points")),
            })?;
            let predicted = law.ln_eval_log(p.log_n, p.log_d);
            let r = p.log_loss - predicted;
            Ok((
                fitted.values,
                HeldOutPoint {
                    optimizer: label.clone(),
                    log_n: p.log_n,
                    log_x: p.log_d,
                    log_loss: p.log_loss,
                    predicted_log_loss: predicted,
                    squared_error: r * r,
                },
            ))
        })
        .collect();

    let mut samples = vec![Vec::with_capacity(m); names.len()];
    let mut held_out = Vec::with_capacity(m);
    for fold in folds {
        let (values, h) = fold?;
        for (s, v) in samples.iter_mut().zip(values) {
            s.push(v);
        }
        held_out.push(h);
    }
    let parameters = names
        .into_iter()
        .zip(samples)
        .zip(&full.values)
        .map(|((name, samples), &estimate)| {
            let (mean, std) = mean_and_population_std(&samples);
            ParameterSummary {
                name,
                estimate,
                mean,
                std,
                samples,
            }
        })
        .collect();
    let test_fit_error = held_out.iter().map(|h| h.squared_error).sum::<f64>() / m as f64;
    Ok(LooReport {
        procedure: procedure.clone(),
        axis: points.axis(),
        n_points: m,
        n_range: range(points.rows().iter().map(|p| p.log_n.exp())),
        x_range: range(points.rows().iter().map(|p| p.log_d.exp())),
        parameters,
        held_out,
        train_fit_error: full.train_fit_error,
        test_fit_error,
    })
}

/// Leave-one-out stds of every non-reference optimizer's factors, with the
/// reference parameters held at `result.theta_ref`. Fills `rho_n_std` and
/// `rho_second_std` in place.
pub fn annotate_factor_stds(result: &mut SharedFitResult, points: &FitPoints, config: &FitConfig) -> Result<()> {
    let theta = result.theta_ref;
    let reference = result.reference_optimizer.clone();
    for (o, fit) in result.per_optimizer.iter_mut() {
        if *o == reference {
            continue;
        }
        let own = points.for_optimizer(o);
        let m = own.len();
        if m < MIN_POINTS_FACTORS + 1 {
            return Err(Error::Underdetermined {
                points: m.saturating_sub(1),
                required: MIN_POINTS_FACTORS,
                context: Some(format!("leave-one-out folds of optimizer {o}")),
            });
        }
        let folds: Vec<Result<(f64, f64)>> = (0..m)
            .into_par_iter()
            .map(|i| {
                fit_factors(&theta, &own.without(i), config)
                    .map(|f| (f.factors.rho_n, f.factors.rho_second))
            })
            .collect();
        let mut rn = Vec::with_capacity(m);
        let mut rs = Vec::with_capacity(m);
        for f in folds {
            let (a, b) = f?;
            rn.push(a);
            rs.push(b);
        }
        fit.rho_n_std = Some(mean_and_population_std(&rn).1);
        fit.rho_second_std = Some(mean_and_population_std(&rs).1);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub anchor_n: f64,
    pub anchor_x: f64,
    /// Pearson correlation of `(ln A_j, α_j)`; `None` when either varies not at all.
    pub corr_ln_a_alpha: Option<f64>,
    pub corr_ln_b_beta: Option<f64>,
    /// `A_j / N_c^{α_j}` per sample.
    pub a_at_anchor: Vec<f64>,
    /// `B_j / X_c^{β_j}` per sample.
    pub b_at_anchor: Vec<f64>,
    pub cv_a_at_anchor: Option<f64>,
    pub cv_b_at_anchor: Option<f64>,
    pub cv_a: Option<f64>,
    pub cv_b: Option<f64>,
}

/// Pearson correlation, computed on pairs sorted so that the result does not
/// depend on sample order. `None` when either variable is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Population std over |mean|, on sorted values. `None` for a zero mean.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (mean, std) = mean_and_population_std(&v);
    (mean != 0.0 && mean.is_finite()).then(|| std / mean.abs())
}

/// Degeneracy diagnostics of `(A, α)` and `(B, β)` across LOO samples.
/// Anchors default to the geometric midpoints `√(min·max)` of the observed
/// ranges.
pub fn correlation_diagnostics(report: &LooReport, anchors: Option<(f64, f64)>) -> Result<CorrelationReport> {
    let get = |name: &str| {
        report
            .parameter(name)
            .map(|p| p.samples.as_slice())
            .ok_or_else(|| Error::Argument(format!("report has no parameter {name}")))
    };
    let (a, alpha, b, beta) = (get("A")?, get("alpha")?, get("B")?, get("beta")?);
    if a.len() < 3 {
        return Err(Error::Argument(format!(
            "correlation diagnostics need at least 3 samples, got {}",
            a.len()
        )));
    }
    let (anchor_n, anchor_x) = anchors.unwrap_or((
        (report.n_range.0 * report.n_range.1).sqrt(),
        (report.x_range.0 * report.x_range.1).sqrt(),
    ));
    if !(anchor_n > 0.0 && anchor_x > 0.0 && anchor_n.is_finite() && anchor_x.is_finite()) {
        return Err(Error::Argument(format!(
            "anchors must be positive, got ({anchor_n}, {anchor_x})"
        )));
    }
    let ln = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    let at_anchor = |scale: &[f64], exp: &[f64], c: f64| {
        scale
            .iter()
            .zip(exp)
            .map(|(s, e)| (s.ln() - e * c.ln()).exp())
            .collect::<Vec<_>>()
    };
    let a_at_anchor = at_anchor(a, alpha, anchor_n);
    let b_at_anchor = at_anchor(b, beta, anchor_x);
    Ok(CorrelationReport {
        anchor_n,
        anchor_x,
        corr_ln_a_alpha: pearson(&ln(a), alpha),
        corr_ln_b_beta: pearson(&ln(b), beta),
        cv_a_at_anchor: coefficient_of_variation(&a_at_anchor),
        cv_b_at_anchor: coefficient_of_variation(&b_at_anchor),
        cv_a: coefficient_of_variation(a),
        cv_b: coefficient_of_variation(b),
        a_at_anchor,
        b_at_anchor,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerExtrapolation {
    pub n_train: usize,
    pub n_held_out: usize,
    pub naive_mse: f64,
    pub shared_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationReport {
    /// Runs with `N ≤ threshold_n` train, the rest are held out.
    pub threshold_n: f64,
    pub reference_optimizer: String,
    pub per_optimizer: BTreeMap<String, OptimizerExtrapolation>,
    /// Squared log-loss error pooled over all held-out runs.
    pub naive_mse: f64,
    pub shared_mse: f64,
    /// `naive_mse / shared_mse`; `None` when the shared error is zero.
    pub ratio: Option<f64>,
    pub naive_fits: BTreeMap<String, FitResult>,
    pub shared_fit: SharedFitResult,
}

fn subset(points: &FitPoints, keep: impl Fn(&LogPoint) -> bool) -> Result<FitPoints> {
    let (rows, labels): (Vec<_>, Vec<_>) = points
        .rows()
        .iter()
        .zip(points.labels())
        .filter(|(p, _)| keep(p))
        .map(|(p, l)| (*p, l.clone()))
        .unzip();
    FitPoints::new(points.axis(), rows, labels)
}

fn mse(law: &Law, points: &FitPoints) -> f64 {
    let r = crate::law_models::log_residuals(law, points);
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

/// Fits naive per-optimizer laws and the shared law on runs with
/// `N ≤ threshold_n`, then scores both on the larger runs.
pub fn extrapolation_eval(points: &FitPoints, threshold_n: f64, reference: &str, config: &FitConfig) -> Result<ExtrapolationReport> {
    if !(threshold_n > 0.0 && threshold_n.is_finite()) {
        return Err(Error::Argument(format!("threshold must be positive, got {threshold_n}")));
    }
    let ln_t = threshold_n.ln();
    let train = subset(points, |p| p.log_n <= ln_t)?;
    let test = subset(points, |p| p.log_n > ln_t)?;
    if test.is_empty() {
        return Err(Error::Argument(format!("no runs above N = {threshold_n} to hold out")));
    }
    let optimizers = points.optimizers();
    for o in &optimizers {
        if test.for_optimizer(o).is_empty() {
            return Err(Error::Argument(format!(
                "optimizer {o} has no runs above N = {threshold_n}"
            )));
        }
        let n = train.for_optimizer(o).len();
        if n < MIN_POINTS_FULL {
            return Err(Error::Underdetermined {
                points: n,
                required: MIN_POINTS_FULL,
                context: Some(format!("runs of {o} at or below N = {threshold_n}")),
            });
        }
    }

    let shared_fit = fit_shared(&train, reference, config)?;
    let naive: Vec<Result<FitResult>> = optimizers
        .par_iter()
        .map(|o| fit_per_optimizer(&train.for_optimizer(o), config))
        .collect();
    let mut naive_fits = BTreeMap::new();
    for (o, f) in optimizers.iter().zip(naive) {
        naive_fits.insert(o.clone(), f?);
    }

    let mut per_optimizer = BTreeMap::new();
    let (mut naive_sum, mut shared_sum, mut count) = (0.0, 0.0, 0usize);
    for o in &optimizers {
        let held = test.for_optimizer(o);
        let naive_mse = mse(&Law::Chinchilla(naive_fits[o].theta), &held);
        let shared_mse = mse(&shared_fit.law_for(o).expect("fitted"), &held);
        naive_sum += naive_mse * held.len() as f64;
        shared_sum += shared_mse * held.len() as f64;
        count += held.len();
        per_optimizer.insert(
            o.clone(),
            OptimizerExtrapolation {
                n_train: train.for_optimizer(o).len(),
                n_held_out: held.len(),
                naive_mse,
                shared_mse,
            },
        );
    }
    let naive_mse = naive_sum / count as f64;
    let shared_mse = shared_sum / count as f64;
    Ok(ExtrapolationReport {
        threshold_n,
        reference_optimizer: reference.to_string(),
        per_optimizer,
        naive_mse,
        shared_mse,
        ratio: (shared_mse > 0.0).then(|| naive_mse / shared_mse),
        naive_fits,
        shared_fit,
    })
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Io(e.into()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// LOO scatter pairs `(α_j, A_j)` and `(β_j, B_j)`, one row per fold.
pub fn loo_scatter_csv(report: &LooReport) -> Result<String> {
    let get = |name: &str| {
        report
            .parameter(name)
            .map(|p| p.samples.clone())
            .ok_or_else(|| Error::Argument(format!("report has no parameter {name}")))
    };
    let (a, alpha, b, beta) = (get("A")?, get("alpha")?, get("B")?, get("beta")?);
    csv_string(
        &["fold", "alpha", "A", "beta", "B"],
        (0..a.len()).map(|i| {
            vec![
                i.to_string(),
                alpha[i].to_string(),
                a[i].to_string(),
                beta[i].to_string(),
                b[i].to_string(),
            ]
        }),
    )
}

/// Iso-curves `A = c·N_c^α` and `B = c·X_c^β` through the mean anchored
/// scale, sampled at `points` evenly spaced exponents spanning the LOO range.
pub fn iso_curve_csv(report: &LooReport, corr: &CorrelationReport, points: usize) -> Result<String> {
    let points = points.max(2);
    let mut rows = Vec::new();
    for (curve, exp_name, anchored, anchor) in [
        ("A", "alpha", &corr.a_at_anchor, corr.anchor_n),
        ("B", "beta", &corr.b_at_anchor, corr.anchor_x),
    ] {
        let exps = &report
            .parameter(exp_name)
            .ok_or_else(|| Error::Argument(format!("report has no parameter {exp_name}")))?
            .samples;
        let (lo, hi) = range(exps.iter().copied());
        let c = anchored.iter().sum::<f64>() / anchored.len() as f64;
        for j in 0..points {
            let e = lo + (hi - lo) * j as f64 / (points - 1) as f64;
            rows.push(vec![
                curve.to_string(),
                e.to_string(),
                (c.ln() + e * anchor.ln()).exp().to_string(),
            ]);
        }
    }
    csv_string(&["curve", "exponent", "scale"], rows)
}

/// Naive/shared held-out error pairs per optimizer, one row per
/// `(label, optimizer)`.
pub fn extrapolation_bars_csv(reports: &[(String, &ExtrapolationReport)]) -> Result<String> {
    let mut rows = Vec::new();
    for (label, r) in reports {
        for (o, e) in &r.per_optimizer {
            rows.push(vec![
                label.clone(),
                o.clone(),
                e.naive_mse.to_string(),
                e.shared_mse.to_string(),
            ]);
        }
    }
    csv_string(&["source", "optimizer", "naive_mse", "shared_mse"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law_models::{LawParams, OptimizerFactors};
    use proptest::prelude::*;
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

    const SIZES: [f64; 5] = [5e7, 1.4e8, 2.5e8, 5e8, 1.5e9];
    const RATIOS: [f64; 4] = [30.0, 50.0, 100.0, 200.0];

    fn synth(law: &Law, label: &str, sigma: f64, seed: u64) -> FitPoints {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut rows = Vec::new();
        for n in SIZES {
            for r in RATIOS {
                let d = n * r;
                let eps: f64 = noise.sample(&mut rng);
                rows.push(LogPoint {
                    log_n: n.ln(),
                    log_d: d.ln(),
                    log_loss: law.eval(n, d).ln() + eps,
                });
            }
        }
        let labels = vec![label.to_string(); rows.len()];
        FitPoints::new(Axis::Data, rows, labels).unwrap()
    }

    fn merged(parts: &[FitPoints]) -> FitPoints {
        FitPoints::new(
            Axis::Data,
            parts.iter().flat_map(|p| p.rows().to_vec()).collect(),
            parts.iter().flat_map(|p| p.labels().to_vec()).collect(),
        )
        .unwrap()
    }

    fn rho_law(rho_d: f64) -> Law {
        Law::Rho {
            theta: TRUTH,
            factors: OptimizerFactors::new(1.0, rho_d, Axis::Data).unwrap(),
        }
    }

    #[test]
    fn noiseless_loo_has_tiny_spread() {
        let pts = synth(&Law::Chinchilla(TRUTH), "AdamW", 0.0, 0);
        let report = loocv(&pts, &Procedure::Chinchilla, &FitConfig::default()).unwrap();
        assert_eq!(report.n_points, 20);
        assert_eq!(report.held_out.len(), 20);
        for p in &report.parameters {
            assert_eq!(p.samples.len(), 20);
            let (mean, std) = mean_and_population_std(&p.samples);
            assert_eq!((mean, std), (p.mean, p.std));
            assert!(p.std <= 1e-6 * p.mean.abs().max(1.0), "{} std {}", p.name, p.std);
        }
        assert!(report.test_fit_error < 1e-12);
    }

    #[test]
    fn too_few_points_names_folds() {
        let pts = synth(&Law::Chinchilla(TRUTH), "AdamW", 0.0, 0);
        let six = FitPoints::new(Axis::Data, pts.rows()[..6].to_vec(), vec!["AdamW".into(); 6]).unwrap();
        let err = loocv(&six, &Procedure::Chinchilla, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Underdetermined { points: 5, required: 6, .. }));
    }

    #[test]
    fn shared_loo_names_underdetermined_fold() {
        let reference = synth(&Law::Chinchilla(TRUTH), "AdamW", 0.0, 0);
        let other = synth(&rho_law(2.0), "Muon", 0.0, 0);
        let two = FitPoints::new(Axis::Data, other.rows()[..2].to_vec(), vec!["Muon".into(); 2]).unwrap();
        let all = merged(&[reference, two]);
        let err = loocv(
            &all,
            &Procedure::Shared {
                reference: "AdamW".into(),
            },
            &FitConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::Underdetermined { context, .. } => assert!(context.unwrap().contains("fold 20")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constructed_degeneracy() {
        let n_c: f64 = 3e8;
        let alphas = [0.3, 0.35, 0.4, 0.45, 0.5, 0.55];
        let a: Vec<f64> = alphas.iter().map(|al| 7.0 * n_c.powf(*al)).collect();
        let b = vec![50.0, 60.0, 70.0, 80.0, 90.0, 100.0];
        let beta = vec![0.2, 0.3, 0.25, 0.35, 0.4, 0.3];
        let summary = |name: &str, s: Vec<f64>| ParameterSummary {
            name: name.into(),
            estimate: s[0],
            mean: 0.0,
            std: 0.0,
            samples: s,
        };
        let report = LooReport {
            procedure: Procedure::Chinchilla,
            axis: Axis::Data,
            n_points: 6,
            n_range: (1e8, 9e8),
            x_range: (1e9, 1e11),
            parameters: vec![
                summary("A", a),
                summary("alpha", alphas.to_vec()),
                summary("B", b),
                summary("beta", beta),
                summary("E", vec![2.0; 6]),
            ],
            held_out: vec![],
            train_fit_error: 0.0,
            test_fit_error: 0.0,
        };
        let c = correlation_diagnostics(&report, None).unwrap();
        assert!((c.anchor_n - 3e8).abs() < 1e-3);
        assert!(c.cv_a_at_anchor.unwrap() <= 1e-12);
        assert!((c.corr_ln_a_alpha.unwrap().abs() - 1.0).abs() < 1e-12);
        assert!(c.cv_a.unwrap() > 0.1);

        let csv = loo_scatter_csv(&report).unwrap();
        assert_eq!(csv.lines().count(), 7);
        let iso = iso_curve_csv(&report, &c, 5).unwrap();
        assert_eq!(iso.lines().count(), 11);
    }

    #[test]
    fn constant_samples_have_undefined_correlation() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert_eq!(coefficient_of_variation(&[0.0, 0.0]), None);
    }

    #[test]
    fn independent_jitter_is_weakly_correlated() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
        assert!(pearson(&x, &y).unwrap().abs() < 0.5);
    }

    proptest! {
        #[test]
        fn correlation_is_order_invariant(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..30),
            rot in 0usize..30,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut shuffled = pairs.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let (xs, ys): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
            prop_assert_eq!(pearson(&x, &y), pearson(&xs, &ys));
            if let Some(r) = pearson(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
            prop_assert_eq!(coefficient_of_variation(&x), coefficient_of_variation(&xs));
        }
    }

    #[test]
    fn extrapolation_noiseless_shared_is_exact() {
        let parts = [
            synth(&Law::Chinchilla(TRUTH), "AdamW", 0.0, 0),
            synth(&rho_law(1.5), "B", 0.0, 0),
            synth(&rho_law(2.0), "C", 0.0, 0),
        ];
        let report = extrapolation_eval(&merged(&parts), 1e9, "AdamW", &FitConfig::default()).unwrap();
        assert!(report.shared_mse <= 1e-8, "{}", report.shared_mse);
        assert!(report.naive_mse >= 0.0);
        for e in report.per_optimizer.values() {
            assert_eq!((e.n_train, e.n_held_out), (16, 4));
        }
        let bars = extrapolation_bars_csv(&[("x".into(), &report)]).unwrap();
        assert_eq!(bars.lines().count(), 4);
    }

    #[test]
    fn extrapolation_threshold_above_all_points() {
        let pts = synth(&Law::Chinchilla(TRUTH), "AdamW", 0.0, 0);
        let err = extrapolation_eval(&pts, 1e12, "AdamW", &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn factor_stds_are_filled() {
        let parts = [
            synth(&Law::Chinchilla(TRUTH), "AdamW", 0.005, 1),
            synth(&rho_law(2.0), "Muon", 0.005, 2),
        ];
        let all = merged(&parts);
        let config = FitConfig::default();
        let mut res = fit_shared(&all, "AdamW", &config).unwrap();
        annotate_factor_stds(&mut res, &all, &config).unwrap();
        let muon = &res.per_optimizer["Muon"];
        assert!(muon.rho_n_std.unwrap() > 0.0 && muon.rho_second_std.unwrap() > 0.0);
        assert_eq!(res.per_optimizer["AdamW"].rho_n_std, None);
    }
}
