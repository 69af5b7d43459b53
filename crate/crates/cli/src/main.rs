//! `optscale`: batch front end for run ingestion, scaling-law fits,
//! cross-validation, extrapolation checks and spectral simulation.

mod output;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use optscale::fitter::{fit_compute_form, fit_per_optimizer, fit_shared, FitConfig};
use optscale::run_store::{
    filter_runs, to_log_points, to_log_points_compute, FilterCriteria, Format, RunSet,
};
use optscale::spectral_sim::{generate_theory_runs, SpectrumConfig, TheoryRunOptions};
use optscale::validation::{
    annotate_factor_stds, correlation_diagnostics, extrapolation_eval, iso_curve_csv, loocv,
    loo_scatter_csv, Procedure,
};
use optscale::{Error, ErrorClass, Result, SCHEMA_VERSION};
use serde_json::json;

use output::{envelope, input_summary, read_runs, to_json_bytes, write_atomic};

#[derive(Parser)]
#[command(name = "optscale", about = "Optimizer-aware scaling-law toolkit", disable_version_flag = true)]
struct Cli {
    /// Print tool and schema versions.
    #[arg(long)]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate, deduplicate and filter a run table, writing it back out.
    Ingest(IngestArgs),
    /// Independent Chinchilla fit for one optimizer.
    Fit(FitArgs),
    /// Reference-anchored shared fit over (N, D).
    FitShared(SharedArgs),
    /// Reference-anchored shared fit over (N, C).
    FitCompute(SharedArgs),
    /// Leave-one-out cross-validation with degeneracy diagnostics.
    Loocv(LoocvArgs),
    /// Naive vs shared held-out error on the largest models.
    Extrapolate(ExtrapolateArgs),
    /// Generate runs from gradient descent on a power-law quadratic.
    Simulate(SimulateArgs),
    /// Render result files as tables and plot-data CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Run table (CSV, or JSON lines for .jsonl/.json).
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Override the format inferred from the extension.
    #[arg(long)]
    format: Option<Format>,
    /// Unit of the compute column, stored as metadata.
    #[arg(long)]
    compute_unit: Option<String>,
    /// Keep only this architecture.
    #[arg(long)]
    arch: Option<String>,
    /// Keep only runs with at least this many parameters.
    #[arg(long, value_parser = parse_count)]
    min_n: Option<u64>,
    /// Keep only runs with at most this many parameters.
    #[arg(long, value_parser = parse_count)]
    max_n: Option<u64>,
}

/// Integer literal or an exact-integer float such as `1e7`.
fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(63) => Ok(v as u64),
        _ => Err(format!("expected a non-negative integer count, got {s:?}")),
    }
}

impl InputArgs {
    fn load(&self, optimizer: Option<&str>) -> Result<RunSet> {
        let runs = read_runs(&self.input, self.format, self.compute_unit.as_deref())?;
        filter_runs(
            &runs,
            &FilterCriteria {
                optimizer: optimizer.map(String::from),
                arch: self.arch.clone(),
                min_n: self.min_n,
                max_n: self.max_n,
            },
        )
    }
}

#[derive(Args)]
struct FitFlags {
    /// JSON file with fit settings; flags below override it.
    #[arg(long, value_name = "PATH")]
    fit_config: Option<PathBuf>,
    #[arg(long)]
    huber_delta: Option<f64>,
    #[arg(long = "max-iter")]
    max_iterations: Option<usize>,
    #[arg(long)]
    gradient_tol: Option<f64>,
    #[arg(long)]
    step_tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FitFlags {
    fn config(&self) -> Result<FitConfig> {
        let mut c = match &self.fit_config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Argument(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Argument(format!("fit config {}: {e}", p.display())))?
            }
            None => FitConfig::default(),
        };
        if let Some(v) = self.huber_delta {
            c.huber_delta = v;
        }
        if let Some(v) = self.max_iterations {
            c.max_iterations = v;
        }
        if let Some(v) = self.gradient_tol {
            c.gradient_tolerance = v;
        }
        if let Some(v) = self.step_tol {
            c.step_tolerance = v;
        }
        c.seed = self.seed;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Output encoding.
    #[arg(long, default_value = "csv")]
    out_format: Format,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    fit: FitFlags,
    #[arg(long)]
    optimizer: String,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct SharedArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    fit: FitFlags,
    /// Optimizer whose runs fix (A, alpha, B, beta, E).
    #[arg(long)]
    reference: String,
    /// Skip leave-one-out stds of the factors.
    #[arg(long)]
    no_factor_std: bool,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcedureArg {
    Chinchilla,
    Shared,
}

#[derive(Args)]
struct LoocvArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    fit: FitFlags,
    #[arg(long, value_enum, default_value = "chinchilla")]
    procedure: ProcedureArg,
    /// Restrict a Chinchilla run to one optimizer (default: each in turn).
    #[arg(long)]
    optimizer: Option<String>,
    /// Reference optimizer, required for the shared procedure.
    #[arg(long)]
    reference: Option<String>,
    /// Anchor model size for A/N_c^alpha (default: geometric midpoint).
    #[arg(long)]
    anchor_n: Option<f64>,
    /// Anchor data size for B/D_c^beta (default: geometric midpoint).
    #[arg(long)]
    anchor_d: Option<f64>,
    /// Directory for scatter and iso-curve CSVs.
    #[arg(long, value_name = "DIR")]
    plot_data: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct ExtrapolateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    fit: FitFlags,
    #[arg(long)]
    reference: String,
    /// Runs with more parameters than this are held out.
    #[arg(long, default_value_t = 1e9)]
    threshold_n: f64,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    gamma_l: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    l_star: f64,
    /// `(d, k)` cells: a CSV file with columns d,k, or inline `d=10,100;k=1,10`.
    #[arg(long)]
    grid: String,
    /// Std of multiplicative log-normal noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    tokens_per_step: u64,
    #[arg(long, default_value = "GD")]
    optimizer: String,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Exact per-cell breakdown (default: `<out>.breakdown.json`).
    #[arg(long, value_name = "PATH")]
    breakdown: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Result files written by other subcommands.
    inputs: Vec<PathBuf>,
    /// Also write the tables here.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Directory for plot-data CSVs.
    #[arg(long, value_name = "DIR")]
    plot_data: Option<PathBuf>,
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let runs = a.input.load(a.optimizer.as_deref())?;
    let mut bytes = Vec::new();
    match a.out_format {
        Format::Csv => runs.write_csv(&mut bytes)?,
        Format::JsonLines => runs.write_json_lines(&mut bytes)?,
    }
    write_atomic(&a.out, &bytes)?;
    println!(
        "{}",
        json!({"records": runs.len(), "optimizers": runs.optimizers(), "out": a.out.display().to_string()})
    );
    Ok(())
}

fn fit(a: &FitArgs) -> Result<()> {
    let config = a.fit.config()?;
    let runs = a.input.load(Some(&a.optimizer))?;
    if runs.is_empty() {
        return Err(Error::Argument(format!("no runs for optimizer {:?}", a.optimizer)));
    }
    let result = fit_per_optimizer(&to_log_points(&runs), &config)?;
    let env = envelope("fit", config.seed, &config, Some(input_summary(&a.input.input, &runs)), &result)?;
    write_json(&a.out, &env)
}

fn shared(a: &SharedArgs, compute: bool) -> Result<()> {
    let config = a.fit.config()?;
    let runs = a.input.load(None)?;
    let (points, mut result) = if compute {
        (to_log_points_compute(&runs)?, fit_compute_form(&runs, &a.reference, &config)?)
    } else {
        let p = to_log_points(&runs);
        let r = fit_shared(&p, &a.reference, &config)?;
        (p, r)
    };
    if !a.no_factor_std {
        annotate_factor_stds(&mut result, &points, &config)?;
    }
    let name = if compute { "fit-compute" } else { "fit-shared" };
    let cfg = json!({"fit": config, "reference": a.reference, "factor_std": !a.no_factor_std});
    let env = envelope(name, config.seed, &cfg, Some(input_summary(&a.input.input, &runs)), &result)?;
    write_json(&a.out, &env)
}

fn run_loocv(a: &LoocvArgs) -> Result<()> {
    let config = a.fit.config()?;
    let runs = a.input.load(None)?;
    let points = to_log_points(&runs);
    let anchors = match (a.anchor_n, a.anchor_d) {
        (Some(n), Some(d)) => Some((n, d)),
        (None, None) => None,
        _ => return Err(Error::Argument("give both --anchor-n and --anchor-d, or neither".into())),
    };
    let mut reports = BTreeMap::new();
    match a.procedure {
        ProcedureArg::Chinchilla => {
            let optimizers = match &a.optimizer {
                Some(o) => vec![o.clone()],
                None => points.optimizers(),
            };
            for o in optimizers {
                let own = points.for_optimizer(&o);
                if own.is_empty() {
                    return Err(Error::Argument(format!("no runs for optimizer {o:?}")));
                }
                reports.insert(o, loocv(&own, &Procedure::Chinchilla, &config)?);
            }
        }
        ProcedureArg::Shared => {
            let reference = a.reference.clone().ok_or_else(|| {
                Error::Argument("the shared procedure needs --reference".into())
            })?;
            reports.insert("shared".to_string(), loocv(&points, &Procedure::Shared { reference }, &config)?);
        }
    }
    let mut correlations = BTreeMap::new();
    for (k, r) in &reports {
        correlations.insert(k.clone(), correlation_diagnostics(r, anchors)?);
    }
    if let Some(dir) = &a.plot_data {
        std::fs::create_dir_all(dir)?;
        for (k, r) in &reports {
            write_atomic(&dir.join(format!("{k}_loo_scatter.csv")), loo_scatter_csv(r)?.as_bytes())?;
            write_atomic(
                &dir.join(format!("{k}_iso_curves.csv")),
                iso_curve_csv(r, &correlations[k], 50)?.as_bytes(),
            )?;
        }
    }
    let cfg = json!({
        "fit": config,
        "procedure": match a.procedure { ProcedureArg::Chinchilla => "chinchilla", ProcedureArg::Shared => "shared" },
        "optimizer": a.optimizer,
        "reference": a.reference,
        "anchors": anchors,
    });
    let result = json!({"reports": reports, "correlations": correlations});
    let env = envelope("loocv", config.seed, &cfg, Some(input_summary(&a.input.input, &runs)), &result)?;
    write_json(&a.out, &env)
}

fn extrapolate(a: &ExtrapolateArgs) -> Result<()> {
    let config = a.fit.config()?;
    let runs = a.input.load(None)?;
    let report = extrapolation_eval(&to_log_points(&runs), a.threshold_n, &a.reference, &config)?;
    let cfg = json!({"fit": config, "reference": a.reference, "threshold_n": a.threshold_n});
    let env = envelope("extrapolate", config.seed, &cfg, Some(input_summary(&a.input.input, &runs)), &report)?;
    write_json(&a.out, &env)
}

fn parse_list(s: &str, what: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<u64>()
                .ok()
                .or_else(|| t.parse::<f64>().ok().filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v < 1.8e19).map(|v| v as u64))
                .ok_or_else(|| Error::Argument(format!("bad {what} value {t:?} in grid")))
        })
        .collect()
}

/// Inline `d=1,10;k=5,50` (all pairs) or a CSV file with `d,k` columns.
fn parse_grid(spec: &str) -> Result<Vec<(u64, u64)>> {
    if spec.contains('=') {
        let mut ds = None;
        let mut ks = None;
        for part in spec.split(';') {
            let (key, vals) = part
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("bad grid clause {part:?}")))?;
            match key.trim() {
                "d" => ds = Some(parse_list(vals, "d")?),
                "k" => ks = Some(parse_list(vals, "k")?),
                other => return Err(Error::Argument(format!("unknown grid axis {other:?}"))),
            }
        }
        let (ds, ks) = ds
            .zip(ks)
            .ok_or_else(|| Error::Argument("inline grid needs both d= and k=".into()))?;
        return Ok(ds.iter().flat_map(|&d| ks.iter().map(move |&k| (d, k))).collect());
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| Error::Argument(format!("cannot read grid file {spec}: {e}")))?;
    let mut cells = Vec::new();
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == "d,k" => {}
        _ => return Err(Error::Argument(format!("grid file {spec} must start with header d,k"))),
    }
    for (i, l) in lines {
        let (d, k) = l
            .split_once(',')
            .ok_or_else(|| Error::Parse {
                line: i as u64 + 1,
                message: format!("expected d,k, got {l:?}"),
            })?;
        let d = parse_list(d, "d")?[0];
        let k = parse_list(k, "k")?[0];
        cells.push((d, k));
    }
    Ok(cells)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = SpectrumConfig::new(a.alpha, a.beta, a.gamma_l, a.delta, a.l_star)?;
    let grid = parse_grid(&a.grid)?;
    let opts = TheoryRunOptions {
        tokens_per_step: a.tokens_per_step,
        noise_sigma: a.noise,
        seed: a.seed,
        optimizer: a.optimizer.clone(),
        ..TheoryRunOptions::default()
    };
    let (runs, cells) = generate_theory_runs(&cfg, &grid, &opts)?;
    let mut bytes = Vec::new();
    runs.write_csv(&mut bytes)?;
    write_atomic(&a.out, &bytes)?;
    let sidecar = a.breakdown.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".breakdown.json");
        PathBuf::from(p)
    });
    let config = json!({"spectrum": cfg, "grid": grid, "options": opts});
    let env = envelope("simulate", a.seed, &config, None, &cells)?;
    write_json(&sidecar, &env)
}

fn run(cli: Cli) -> Result<()> {
    if cli.version {
        println!("optscale {} (schema {SCHEMA_VERSION})", env!("CARGO_PKG_VERSION"));
        return Ok(());
    }
    let command = cli
        .command
        .ok_or_else(|| Error::Argument("no subcommand given; see --help".into()))?;
    match &command {
        Command::Ingest(a) => ingest(a),
        Command::Fit(a) => fit(a),
        Command::FitShared(a) => shared(a, false),
        Command::FitCompute(a) => shared(a, true),
        Command::Loocv(a) => run_loocv(a),
        Command::Extrapolate(a) => extrapolate(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => {
            let text = report::run_report(&a.inputs, a.plot_data.as_deref())?;
            if let Some(p) = &a.out {
                write_atomic(p, text.as_bytes())?;
            }
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let message = e.render().to_string();
            eprintln!("{}", output::error_json(ErrorClass::Usage, "usage", message.trim_end()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => ExitCode::from(output::report_error(&e) as u8),
    }
}
