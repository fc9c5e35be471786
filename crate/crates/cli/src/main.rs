//! `spillnet` command-line front end.
//!
//! Exit codes: 0 on success, 1 for bad input or arguments, 2 for internal
//! failures. Diagnostics are a single `error:` line on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::json;

use spillnet::decomposition::{fevd_contributions, fevd_table, gfevd_contributions, gfevd_table};
use spillnet::mc::config::parse_fixed_penalty;
use spillnet::mc::dgp::generate_model_with;
use spillnet::mc::study::replication_rng;
use spillnet::mc::{parse_study_config, run_study};
use spillnet::metrics::{parse_table_csv, ExportFormat, IndexBasis, Network, NetworkDocument};
use spillnet::panel::{load_panel, read_panel, residualize_on_factor, save_panel, standardize, StandardizedPanel};
use spillnet::shock::{cholesky_factor, validate_user_map, ShockMap, DEFAULT_USER_MAP_TOLERANCE};
use spillnet::sparsify::{sparsify, EdgeMask};
use spillnet::tuner::{select_lambda, LambdaGrid, TuningConfig, TuningReport};
use spillnet::var::{companion_spectral_radius, fit_var};
use spillnet::vma::vma_coefficients;
use spillnet::{DecompositionKind, FevdTable};

/// Marks errors caused by the caller (exit code 1).
#[derive(Debug)]
struct UserError(String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn user(msg: impl Into<String>) -> anyhow::Error {
    UserError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "spillnet", version, about = "Sparse variance-decomposition networks from VAR models")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "SPILLNET_THREADS", default_value_t = 0)]
    threads: usize,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the VAR, build the variance decomposition and select the network.
    Estimate(EstimateArgs),
    /// Choose the penalty by rolling out-of-sample forecasts.
    Tune(TuneArgs),
    /// Run a Monte Carlo study on a synthetic design.
    Simulate(SimulateArgs),
    /// Convert a saved table (JSON or percent CSV) to csv, json or dot.
    Export(ExportArgs),
}

#[derive(Args)]
struct PanelArgs {
    /// Panel CSV, one column per series.
    #[arg(long, short)]
    input: PathBuf,
    /// The file has no header row.
    #[arg(long)]
    no_header: bool,
    /// The first column holds dates or other row labels.
    #[arg(long)]
    date_column: bool,
    /// Regress every series on this column first, then drop it.
    #[arg(long)]
    factor_col: Option<String>,
}

#[derive(Args)]
struct ModelArgs {
    /// VAR lag order.
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Forecast horizon.
    #[arg(long = "H", short = 'H', default_value_t = 10)]
    horizon: usize,
    /// fevd (Cholesky or --user-p) or gfevd.
    #[arg(long, default_value = "gfevd")]
    kind: DecompositionKind,
}

#[derive(Args)]
struct GridArgs {
    /// Candidate constants c in lambda = c log T / m: a comma list or a file.
    #[arg(long)]
    grid: Option<String>,
    /// Fraction of the sample used for each training window.
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Fixed penalty: logT, logT/m or a number. Tuned when omitted.
    #[arg(long)]
    lambda: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
    /// CSV with the m x m impact matrix P (no header) instead of Cholesky.
    #[arg(long)]
    user_p: Option<PathBuf>,
    /// Compute FIX/TIX/NIX from every cell instead of the selected ones.
    #[arg(long)]
    no_mask_indices: bool,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Study file (`key = value` lines); flags below override it.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Design name: S1, S2, L1..L4, D1, D2, H1, H2.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    p: Option<usize>,
    /// Sample sizes, comma separated.
    #[arg(long = "T", short = 'T')]
    t_lens: Option<String>,
    /// Horizons, comma separated.
    #[arg(long = "H", short = 'H')]
    horizons: Option<String>,
    /// fevd, gfevd or both (comma separated).
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Candidate constants for tuning (comma list or file).
    #[arg(long)]
    grid: Option<String>,
    /// Fixed penalty instead of tuning: logT, logT/m or a number.
    #[arg(long)]
    lambda: Option<String>,
    /// Draw one model for all replications.
    #[arg(long)]
    hold_fixed: bool,
    /// Also write the first replication's panel (first T) to this CSV.
    #[arg(long)]
    panel_out: Option<PathBuf>,
    /// Only write --panel-out; skip the study.
    #[arg(long, requires = "panel_out")]
    panel_only: bool,
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// fevd_table.json from `estimate`, or a percent table CSV.
    #[arg(long)]
    table: PathBuf,
    /// 0/1 CSV (label column plus m columns) for a CSV table; all edges when omitted.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Kind recorded for a CSV table.
    #[arg(long, default_value = "fevd")]
    kind: DecompositionKind,
    /// Horizon recorded for a CSV table.
    #[arg(long = "H", short = 'H', default_value_t = 10)]
    horizon: usize,
    #[arg(long)]
    format: ExportFormat,
    #[arg(long)]
    no_mask_indices: bool,
    /// Output file.
    #[arg(long, short)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            eprintln!("{}", rendered.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(1);
        }
    };
    init_logging(cli.verbose);

    let outcome = std::panic::catch_unwind(|| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build()
            .context("cannot start worker threads")?;
        pool.install(|| dispatch(&cli.command))
    });
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            let code = if is_user_error(&e) { 1 } else { 2 };
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(code)
        }
        Err(_) => ExitCode::from(2),
    }
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string().replace('\n', " ");
        if !parts.last().is_some_and(|prev| prev.contains(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).without_time().init();
}

fn is_user_error(e: &anyhow::Error) -> bool {
    for cause in e.chain() {
        if cause.is::<UserError>() || cause.is::<std::io::Error>() {
            return true;
        }
        if let Some(err) = cause.downcast_ref::<spillnet::Error>() {
            return err.is_user_error();
        }
    }
    false
}

fn dispatch(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Estimate(args) => estimate(args),
        Command::Tune(args) => tune(args),
        Command::Simulate(args) => simulate(args),
        Command::Export(args) => export(args),
    }
}

fn load(args: &PanelArgs) -> anyhow::Result<(Vec<String>, StandardizedPanel)> {
    let mut panel = load_panel(&args.input, !args.no_header, args.date_column)?;
    if let Some(name) = &args.factor_col {
        let (rest, factor) = panel.split_off_column(name)?;
        panel = residualize_on_factor(&rest, &factor)?;
    }
    panel.require_series(2)?;
    let labels = panel.labels().to_vec();
    Ok((labels, standardize(&panel)?))
}

fn parse_grid(spec: &str) -> anyhow::Result<Vec<f64>> {
    let text = if Path::new(spec).is_file() {
        fs::read_to_string(spec).with_context(|| format!("reading grid file {spec}"))?
    } else {
        spec.to_string()
    };
    let values: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| user(format!("grid value {s:?} is not a number"))))
        .collect::<anyhow::Result<_>>()?;
    if values.is_empty() {
        bail!(user("grid is empty"));
    }
    Ok(values)
}

fn tuning_config(model: &ModelArgs, grid: &GridArgs) -> anyhow::Result<TuningConfig> {
    let lambda_grid = match &grid.grid {
        Some(g) => LambdaGrid::Constants(parse_grid(g)?),
        None => LambdaGrid::default_for(model.kind, model.horizon),
    };
    Ok(TuningConfig::new(lambda_grid, grid.alpha, model.horizon, model.p, model.kind))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_tuning(report: &TuningReport, out: &Path) -> anyhow::Result<()> {
    write(&out.join("tuning.json"), &serde_json::to_string_pretty(&report.document())?)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    fs::write(out.join("tuning.csv"), buf).context("writing tuning.csv")
}

fn read_user_map(path: &Path, sigma: &DMatrix<f64>) -> anyhow::Result<ShockMap> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let p = read_panel(file, false, false).with_context(|| format!("reading {}", path.display()))?;
    Ok(validate_user_map(p.observations(), sigma, DEFAULT_USER_MAP_TOLERANCE)?)
}

fn estimate(args: &EstimateArgs) -> anyhow::Result<()> {
    let model = &args.model;
    if args.user_p.is_some() && model.kind == DecompositionKind::Gfevd {
        bail!(user("--user-p only applies to --kind fevd"));
    }
    if args.user_p.is_some() && args.lambda.is_none() {
        bail!(user("--user-p needs a fixed --lambda (tuning identifies shocks by Cholesky)"));
    }
    let (labels, panel) = load(&args.panel)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let t_len = panel.t_len();
    let m = panel.m_dim();

    let fit = fit_var(&panel, model.p)?;
    let vma = vma_coefficients(&fit.phi, model.horizon)?;
    let (contrib, table) = match model.kind {
        DecompositionKind::Fevd => {
            let map = match &args.user_p {
                Some(path) => read_user_map(path, &fit.sigma)?,
                None => cholesky_factor(&fit.sigma)?,
            };
            let c = fevd_contributions(&vma, &map)?;
            let t = fevd_table(&c)?;
            (c, t)
        }
        DecompositionKind::Gfevd => {
            let c = gfevd_contributions(&vma, &fit.sigma)?;
            let t = gfevd_table(&c, &vma, &fit.sigma)?;
            (c, t)
        }
    };

    let (lambda, constant) = match &args.lambda {
        Some(text) => (parse_fixed_penalty(text)?.value(t_len, m), None),
        None => {
            let report = select_lambda(&panel, &tuning_config(model, &args.grid)?)?;
            write_tuning(&report, &args.out)?;
            (report.lambda_star, report.constant_star())
        }
    };
    let selection = sparsify(&contrib, t_len, lambda)?;
    let basis = if args.no_mask_indices { IndexBasis::Dense } else { IndexBasis::Masked };
    let network = Network::new(&labels, &table, &selection.mask)?.with_basis(basis);

    network.export(ExportFormat::Csv, args.out.join("fevd_table.csv"))?;
    network.export(ExportFormat::Json, args.out.join("fevd_table.json"))?;
    network.export(ExportFormat::Dot, args.out.join("network.dot"))?;
    write(&args.out.join("selection.json"), &serde_json::to_string_pretty(&selection.document())?)?;
    let summary = json!({
        "t_len": t_len,
        "m": m,
        "p": model.p,
        "horizon": model.horizon,
        "kind": model.kind,
        "identification": if args.user_p.is_some() { "user" } else if model.kind == DecompositionKind::Fevd { "cholesky" } else { "generalized" },
        "lambda": lambda,
        "constant": constant,
        "k_hat": selection.k_hat,
        "candidates": m * m - m,
        "companion_radius": companion_spectral_radius(&fit),
        "labels": labels,
        "indices": network.summary(),
    });
    write(&args.out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    tracing::info!(k_hat = selection.k_hat, lambda, "estimate written to {}", args.out.display());
    Ok(())
}

fn tune(args: &TuneArgs) -> anyhow::Result<()> {
    let (_, panel) = load(&args.panel)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let report = select_lambda(&panel, &tuning_config(&args.model, &args.grid)?)?;
    write_tuning(&report, &args.out)
}

fn study_text(args: &SimulateArgs) -> anyhow::Result<String> {
    let mut text = match &args.config {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => String::new(),
    };
    let mut set = |key: &str, value: String| {
        text.push_str(&format!("\n{key} = {value}"));
    };
    if let Some(v) = &args.spec {
        set("design", v.clone());
    }
    if let Some(v) = args.p {
        set("p", v.to_string());
    }
    if let Some(v) = &args.t_lens {
        set("T", v.clone());
    }
    if let Some(v) = &args.horizons {
        set("H", v.clone());
    }
    if let Some(v) = &args.kind {
        set("kind", v.clone());
    }
    if let Some(v) = args.reps {
        set("replications", v.to_string());
    }
    if let Some(v) = args.seed {
        set("seed", v.to_string());
    }
    if let Some(v) = args.alpha {
        set("alpha", v.to_string());
    }
    if let Some(v) = &args.grid {
        let values: Vec<String> = parse_grid(v)?.iter().map(f64::to_string).collect();
        set("grid", values.join(","));
    }
    if let Some(v) = &args.lambda {
        set("lambda", v.clone());
    }
    if args.hold_fixed {
        set("hold_fixed", "true".into());
    }
    Ok(text)
}

fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    if args.config.is_none() && args.spec.is_none() {
        bail!(user("simulate needs --config or --spec"));
    }
    let cfg = parse_study_config(&study_text(args)?)?;

    if let Some(path) = &args.panel_out {
        let rep = if cfg.hold_model_fixed { u64::MAX } else { 0 };
        let model = generate_model_with(&cfg.spec, &mut replication_rng(cfg.seed, rep, 0))?;
        let t_len = cfg.t_lens[0];
        let mut rng = replication_rng(cfg.seed, 0, t_len as u64);
        let panel = spillnet::mc::dgp::simulate_panel_with(&model, t_len, cfg.spec.error_dist, &mut rng)?;
        save_panel(&panel, path)?;
    }
    if args.panel_only {
        return Ok(());
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let report = run_study(&cfg)?;
    write(&args.out.join("mc_report.json"), &report.to_json()?)?;
    let mut buf = Vec::new();
    report.write_records_csv(&mut buf)?;
    fs::write(args.out.join("mc_report.csv"), &buf).context("writing mc_report.csv")?;
    buf.clear();
    report.write_cstar_csv(&mut buf)?;
    fs::write(args.out.join("cstar_hist.csv"), &buf).context("writing cstar_hist.csv")?;
    for cell in &report.cells {
        tracing::info!(t = cell.t_len, h = cell.horizon, kind = %cell.kind, cdr1 = ?cell.cdr1, cdr0 = ?cell.cdr0, "cell done");
    }
    Ok(())
}

fn read_mask(path: &Path, m: usize) -> anyhow::Result<EdgeMask> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let grid = read_panel(file, true, true).with_context(|| format!("reading {}", path.display()))?;
    if grid.m_dim() != m || grid.t_len() != m {
        bail!(user(format!("mask is {}x{}, table is {m}x{m}", grid.t_len(), grid.m_dim())));
    }
    Ok(EdgeMask::from_matrix(grid.observations())?)
}

fn export(args: &ExportArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.table).with_context(|| format!("reading {}", args.table.display()))?;
    let is_json = args.table.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let (labels, table, mask) = if is_json {
        let doc: NetworkDocument = serde_json::from_str(&text).map_err(|e| user(format!("{}: {e}", args.table.display())))?;
        let m = doc.labels.len();
        if doc.shares.len() != m || doc.mask.len() != m {
            bail!(user("table document has inconsistent dimensions"));
        }
        let shares = DMatrix::from_fn(m, m, |i, j| doc.shares[i].get(j).copied().unwrap_or(f64::NAN));
        let bits = DMatrix::from_fn(m, m, |i, j| doc.mask[i].get(j).copied().unwrap_or(0) as f64);
        (doc.labels, FevdTable::from_shares(shares, doc.kind, doc.horizon)?, EdgeMask::from_matrix(&bits)?)
    } else {
        let (labels, shares) = parse_table_csv(&text)?;
        let m = labels.len();
        let mask = match &args.mask {
            Some(path) => read_mask(path, m)?,
            None => EdgeMask::all_ones(m),
        };
        (labels, FevdTable::from_shares(shares, args.kind, args.horizon)?, mask)
    };
    let basis = if args.no_mask_indices { IndexBasis::Dense } else { IndexBasis::Masked };
    let network = Network::new(&labels, &table, &mask)?.with_basis(basis);
    network.export(args.format, &args.out)?;
    Ok(())
}
