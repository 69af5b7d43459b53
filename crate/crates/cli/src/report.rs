use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use optscale::fitter::{FitResult, SharedFitResult};
use optscale::validation::{
    extrapolation_bars_csv, iso_curve_csv, loo_scatter_csv, CorrelationReport, ExtrapolationReport,
    LooReport,
};
use optscale::{Error, Result, SCHEMA_VERSION};
use serde::Deserialize;
use serde_json::Value;

use crate::output::write_atomic;

#[derive(Deserialize)]
pub struct LooOutput {
    pub reports: BTreeMap<String, LooReport>,
    pub correlations: BTreeMap<String, CorrelationReport>,
}

enum Loaded {
    Fit(FitResult),
    Shared(SharedFitResult),
    Loo(LooOutput),
    Extrapolation(ExtrapolationReport),
}

struct Input {
    label: String,
    body: Loaded,
}

/// Two significant decimals in plain notation for moderate magnitudes,
/// scientific otherwise.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (0.01..1e4).contains(&a) {
        format!("{v:.2}")
    } else {
        format!("{v:.2e}")
    }
}

pub fn fmt_pm(v: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{} ± {}", fmt_num(v), fmt_num(s)),
        None => fmt_num(v),
    }
}

fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

fn load(path: &Path) -> Result<(u64, Input)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Argument(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)?;
    let version = v
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Schema(format!("{} has no schema_version", path.display())))?;
    let command = v.get("command").and_then(Value::as_str).unwrap_or_default().to_string();
    let result = v
        .get("result")
        .cloned()
        .ok_or_else(|| Error::Schema(format!("{} has no result", path.display())))?;
    let body = match command.as_str() {
        "fit" => Loaded::Fit(serde_json::from_value(result)?),
        "fit-shared" | "fit-compute" => Loaded::Shared(serde_json::from_value(result)?),
        "loocv" => Loaded::Loo(serde_json::from_value(result)?),
        "extrapolate" => Loaded::Extrapolation(serde_json::from_value(result)?),
        other => {
            return Err(Error::Schema(format!(
                "{}: command {other:?} has no report view",
                path.display()
            )))
        }
    };
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok((version, Input { label, body }))
}

fn fit_table(fits: &[(&str, &FitResult)]) -> String {
    let rows: Vec<Vec<String>> = fits
        .iter()
        .map(|(label, f)| {
            let t = &f.theta;
            vec![
                f.optimizer.clone().unwrap_or_else(|| label.to_string()),
                fmt_num(t.a),
                fmt_num(t.alpha),
                fmt_num(t.b),
                fmt_num(t.beta),
                fmt_num(t.e),
                format!("{:.2e}", f.train_fit_error),
                f.n_points.to_string(),
            ]
        })
        .collect();
    render_table(&["optimizer", "A", "alpha", "B", "beta", "E", "train_err", "points"], &rows)
}

fn shared_table(label: &str, s: &SharedFitResult) -> String {
    let t = &s.theta_ref;
    let mut out = format!(
        "{label}: reference {} (A = {}, alpha = {}, B = {}, beta = {}, E = {})\n",
        s.reference_optimizer,
        fmt_num(t.a),
        fmt_num(t.alpha),
        fmt_num(t.b),
        fmt_num(t.beta),
        fmt_num(t.e)
    );
    let rows: Vec<Vec<String>> = s
        .per_optimizer
        .iter()
        .map(|(o, f)| {
            vec![
                o.clone(),
                fmt_pm(f.factors.rho_n, f.rho_n_std),
                fmt_pm(f.factors.rho_second, f.rho_second_std),
                format!("{:.2e}", f.fit_error),
            ]
        })
        .collect();
    out += &render_table(&["optimizer", "rho_N", s.axis.rho_key(), "fit_err"], &rows);
    out
}

fn loo_table(label: &str, loo: &LooOutput) -> String {
    let mut out = String::new();
    for (key, r) in &loo.reports {
        out += &format!(
            "{label}/{key}: {} points, train_err {:.2e}, test_err {:.2e}\n",
            r.n_points, r.train_fit_error, r.test_fit_error
        );
        let rows: Vec<Vec<String>> = r
            .parameters
            .iter()
            .map(|p| vec![p.name.clone(), fmt_pm(p.estimate, Some(p.std)), fmt_num(p.mean)])
            .collect();
        out += &render_table(&["parameter", "estimate", "loo_mean"], &rows);
        if let Some(c) = loo.correlations.get(key) {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "undefined".into());
            out += &format!(
                "corr(ln A, alpha) = {}, corr(ln B, beta) = {}, cv(A) = {}, cv(A/N_c^alpha) = {}\n",
                opt(c.corr_ln_a_alpha),
                opt(c.corr_ln_b_beta),
                opt(c.cv_a),
                opt(c.cv_a_at_anchor)
            );
        }
    }
    out
}

fn extrapolation_table(label: &str, r: &ExtrapolationReport) -> String {
    let mut rows: Vec<Vec<String>> = r
        .per_optimizer
        .iter()
        .map(|(o, e)| {
            vec![
                o.clone(),
                format!("{:.3e}", e.naive_mse),
                format!("{:.3e}", e.shared_mse),
                e.n_held_out.to_string(),
            ]
        })
        .collect();
    rows.push(vec![
        "all".into(),
        format!("{:.3e}", r.naive_mse),
        format!("{:.3e}", r.shared_mse),
        r.per_optimizer.values().map(|e| e.n_held_out).sum::<usize>().to_string(),
    ]);
    let ratio = r.ratio.map(|x| format!("{x:.3}")).unwrap_or_else(|| "undefined".into());
    format!(
        "{label}: held out N > {:e}, naive/shared = {ratio}\n",
        r.threshold_n
    ) + &render_table(&["optimizer", "naive_mse", "shared_mse", "held_out"], &rows)
}

/// Renders every input and, with `plot_dir`, writes CSV plot data there.
pub fn run_report(paths: &[PathBuf], plot_dir: Option<&Path>) -> Result<String> {
    if paths.is_empty() {
        return Err(Error::Argument("report needs at least one input".into()));
    }
    let mut inputs = Vec::with_capacity(paths.len());
    let mut versions = std::collections::BTreeSet::new();
    for p in paths {
        let (v, input) = load(p)?;
        versions.insert(v);
        inputs.push(input);
    }
    if versions.len() > 1 {
        return Err(Error::Schema(format!("inputs mix schema versions {versions:?}")));
    }
    if let Some(&v) = versions.iter().next() {
        if v != SCHEMA_VERSION as u64 {
            return Err(Error::Schema(format!(
                "inputs use schema version {v}, this build reads {SCHEMA_VERSION}"
            )));
        }
    }

    let mut out = String::new();
    let fits: Vec<(&str, &FitResult)> = inputs
        .iter()
        .filter_map(|i| match &i.body {
            Loaded::Fit(f) => Some((i.label.as_str(), f)),
            _ => None,
        })
        .collect();
    if !fits.is_empty() {
        out += &fit_table(&fits);
    }
    let mut bars = Vec::new();
    let mut plots: Vec<(String, String)> = Vec::new();
    for i in &inputs {
        let section = match &i.body {
            Loaded::Fit(_) => continue,
            Loaded::Shared(s) => shared_table(&i.label, s),
            Loaded::Loo(l) => {
                for (key, r) in &l.reports {
                    plots.push((format!("{}_{key}_loo_scatter.csv", i.label), loo_scatter_csv(r)?));
                    if let Some(c) = l.correlations.get(key) {
                        plots.push((format!("{}_{key}_iso_curves.csv", i.label), iso_curve_csv(r, c, 50)?));
                    }
                }
                loo_table(&i.label, l)
            }
            Loaded::Extrapolation(r) => {
                bars.push((i.label.clone(), r));
                extrapolation_table(&i.label, r)
            }
        };
        if !out.is_empty() {
            out.push('\n');
        }
        out += &section;
    }
    if !bars.is_empty() {
        plots.push(("extrapolation_bars.csv".into(), extrapolation_bars_csv(&bars)?));
    }
    if let Some(dir) = plot_dir {
        std::fs::create_dir_all(dir)?;
        for (name, body) in plots {
            write_atomic(&dir.join(name), body.as_bytes())?;
        }
    }
    Ok(out)
}
