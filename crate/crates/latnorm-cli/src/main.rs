//! Command line interface to the discrete normal approximation toolkit.
//!
//! Subcommands:
//!
//! * `dn pmf` / `dn sample`: point masses and seeded draws of `DN_d(mu, V)`
//!   from inline `--mu`, `--cov`, and `--point` lists.
//! * `tv`: total variation between a configured model at one size and its
//!   fitted discrete normal (exact where the model's oracle fits its
//!   budget, otherwise estimated from seeded samples).
//! * `bound`: the error-bound breakdown for a model with a dependency
//!   decomposition.
//! * `model moments` / `model sample`: the fitted target moments and seeded
//!   draws of a configured model at one size.
//! * `experiment run`: a full convergence experiment over a size ladder.
//!
//! Model and experiment descriptions come from TOML config files passed via
//! `--config`; the schemas are documented in the `latnorm::harness` module
//! and in the repository README, with examples under `configs/`.  The
//! `tv`, `bound`, and `model` commands accept either a bare model table or
//! a full experiment config (whose `[model]` table is then used).
//!
//! Every command writes to stdout, or to `--out` when given, in the format
//! selected by `--format csv|json` (default `csv`).  `--seed` controls all
//! random streams and overrides the config seed; `--threads` resizes the
//! worker pool and affects speed only, never results.  Exit codes: 0 on
//! success, 2 on domain and I/O errors, 3 on accuracy and budget errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use latnorm::harness::{
    build_model, evaluate_model_row, load_config, load_model_config, report_to_csv,
    report_to_json, run_convergence_experiment, target_moments, ReportFormat,
};
use latnorm::lattice::{box_probability, dn_sample, DnParams, LatticeBox};
use latnorm::numerics::rng::make_rng;
use latnorm::numerics::DEFAULT_QUAD_TOL;
use latnorm::tv::DN_TABLE_BOX_TOL;
use latnorm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "latnorm",
    version,
    about = "Discrete normal approximation on the integer lattice",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args)]
struct GlobalArgs {
    /// Seed for all random streams; overrides the config seed
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,

    /// TOML config file: a model table for tv/bound/model commands, an
    /// experiment config for `experiment run`
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Write output to this file instead of stdout
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Output format
    #[arg(long, global = true, value_name = "csv|json", default_value = "csv",
          value_parser = parse_format)]
    format: ReportFormat,

    /// Worker thread count; affects speed only, never results
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    ReportFormat::from_str(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Discrete normal point masses and samples
    #[command(subcommand)]
    Dn(DnCommand),
    /// Total variation between a model's law and its fitted discrete normal
    Tv(TvArgs),
    /// Error-bound breakdown for a model with a dependency decomposition
    Bound(BoundArgs),
    /// Model moments and samples
    #[command(subcommand)]
    Model(ModelCommand),
    /// Convergence experiments over a size ladder
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Subcommand)]
enum DnCommand {
    /// Point mass of DN_d(mu, V) at an integer vector
    Pmf(DnPmfArgs),
    /// Seeded samples from DN_d(mu, V), one row per draw
    Sample(DnSampleArgs),
}

#[derive(Args)]
struct DnPmfArgs {
    /// Mean vector, comma separated
    #[arg(long, value_name = "X,..", allow_hyphen_values = true)]
    mu: String,

    /// Covariance matrix, row major, comma separated (d*d entries)
    #[arg(long, value_name = "X,..", allow_hyphen_values = true)]
    cov: String,

    /// Integer evaluation point, comma separated
    #[arg(long, value_name = "Z,..", allow_hyphen_values = true)]
    point: String,

    /// Absolute tolerance for the box probability; defaults to the
    /// library's quadrature default
    #[arg(long, value_name = "TOL")]
    tol: Option<f64>,
}

#[derive(Args)]
struct DnSampleArgs {
    /// Mean vector, comma separated
    #[arg(long, value_name = "X,..", allow_hyphen_values = true)]
    mu: String,

    /// Covariance matrix, row major, comma separated (d*d entries)
    #[arg(long, value_name = "X,..", allow_hyphen_values = true)]
    cov: String,

    /// Number of draws
    #[arg(long, default_value_t = 10)]
    count: u64,
}

#[derive(Args)]
struct TvArgs {
    /// Model size: cycle vertices, chain steps, torus side, or Poisson
    /// intensity
    #[arg(long)]
    size: f64,

    /// Replicates for models without an exact oracle in budget
    #[arg(long, default_value_t = 10_000)]
    replicates: u64,

    /// Tail mass excluded from lattice enumeration
    #[arg(long, default_value_t = 1e-9)]
    epsilon_tail: f64,
}

#[derive(Args)]
struct BoundArgs {
    /// Model size: cycle vertices, chain steps, torus side, or Poisson
    /// intensity
    #[arg(long)]
    size: f64,

    /// Replicates for sampled estimates
    #[arg(long, default_value_t = 10_000)]
    replicates: u64,

    /// Tail mass excluded from lattice enumeration
    #[arg(long, default_value_t = 1e-9)]
    epsilon_tail: f64,

    /// Smoothness coefficient override in [0, 1]; estimated by sampling
    /// when omitted
    #[arg(long)]
    eps_w: Option<f64>,
}

#[derive(Subcommand)]
enum ModelCommand {
    /// The discrete normal target moments fitted for a model at one size
    Moments(ModelMomentsArgs),
    /// Seeded draws of a model's count vector, one row per draw
    Sample(ModelSampleArgs),
}

#[derive(Args)]
struct ModelMomentsArgs {
    /// Model size: cycle vertices, chain steps, torus side, or Poisson
    /// intensity
    #[arg(long)]
    size: f64,

    /// Replicates for sample-moment models (geometric graph, maximal
    /// points)
    #[arg(long, default_value_t = 10_000)]
    replicates: u64,
}

#[derive(Args)]
struct ModelSampleArgs {
    /// Model size: cycle vertices, chain steps, torus side, or Poisson
    /// intensity
    #[arg(long)]
    size: f64,

    /// Number of draws
    #[arg(long, default_value_t = 10)]
    count: u64,
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Run the experiment described by --config and emit its report
    Run,
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Dn(DnCommand::Pmf(a)) => dn_pmf_cmd(&cli.global, a),
        Command::Dn(DnCommand::Sample(a)) => dn_sample_cmd(&cli.global, a),
        Command::Tv(a) => tv_cmd(&cli.global, a),
        Command::Bound(a) => bound_cmd(&cli.global, a),
        Command::Model(ModelCommand::Moments(a)) => moments_cmd(&cli.global, a),
        Command::Model(ModelCommand::Sample(a)) => model_sample_cmd(&cli.global, a),
        Command::Experiment(ExperimentCommand::Run) => experiment_cmd(&cli.global),
    }
}

fn seed_of(global: &GlobalArgs) -> u64 {
    global.seed.unwrap_or(0)
}

fn require_config(global: &GlobalArgs) -> Result<&Path> {
    global
        .config
        .as_deref()
        .ok_or_else(|| Error::domain("this command needs --config <path>"))
}

fn write_out(global: &GlobalArgs, text: String) -> Result<()> {
    match &global.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path.as_path(), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::domain(format!("{what}: bad entry {t:?}: {e}")))
        })
        .collect()
}

fn parse_i64_list(s: &str, what: &str) -> Result<Vec<i64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<i64>()
                .map_err(|e| Error::domain(format!("{what}: bad entry {t:?}: {e}")))
        })
        .collect()
}

fn dn_params_from_args(mu: &str, cov: &str) -> Result<DnParams> {
    let mu = parse_f64_list(mu, "--mu")?;
    let entries = parse_f64_list(cov, "--cov")?;
    let d = mu.len();
    if entries.len() != d * d {
        return Err(Error::domain(format!(
            "--cov: expected {d}x{d} = {} row-major entries, got {}",
            d * d,
            entries.len()
        )));
    }
    DnParams::new(
        DVector::from_vec(mu),
        DMatrix::from_row_slice(d, d, &entries),
    )
}

fn render_samples(draws: &[Vec<i64>], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => {
            let d = draws.first().map_or(0, Vec::len);
            let header: Vec<String> = (0..d).map(|j| format!("z{j}")).collect();
            let mut out = header.join(",");
            out.push('\n');
            for z in draws {
                let row: Vec<String> = z.iter().map(i64::to_string).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            Ok(out)
        }
        ReportFormat::Json => to_json_line(&draws),
    }
}

fn to_json_line<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::domain(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn dn_pmf_cmd(global: &GlobalArgs, a: &DnPmfArgs) -> Result<()> {
    let params = dn_params_from_args(&a.mu, &a.cov)?;
    let point = parse_i64_list(&a.point, "--point")?;
    if point.len() != params.dim() {
        return Err(Error::domain(format!(
            "--point: expected {} coordinates, got {}",
            params.dim(),
            point.len()
        )));
    }
    // The library's pointwise default is certified on the deterministic
    // paths (d <= 2, or a diagonal covariance) but sits below what the QMC
    // budget reaches for correlated d >= 3, where the coarser table
    // tolerance applies instead.  An explicit --tol always wins.
    let d = params.dim();
    let diagonal =
        (0..d).all(|i| (0..d).all(|j| i == j || params.sigma()[(i, j)] == 0.0));
    let tol = a.tol.unwrap_or(if d <= 2 || diagonal {
        DEFAULT_QUAD_TOL
    } else {
        DN_TABLE_BOX_TOL
    });
    let value = box_probability(&params, &LatticeBox::unit_cell(&point), tol)?;
    let text = match global.format {
        ReportFormat::Csv => format!("pmf\n{}\n", fmt_float(value)),
        ReportFormat::Json => to_json_line(&serde_json::json!({ "pmf": value }))?,
    };
    write_out(global, text)
}

fn dn_sample_cmd(global: &GlobalArgs, a: &DnSampleArgs) -> Result<()> {
    let params = dn_params_from_args(&a.mu, &a.cov)?;
    if a.count == 0 {
        return Err(Error::domain("--count must be at least 1"));
    }
    let parent = make_rng(seed_of(global), 0);
    let draws: Vec<Vec<i64>> = (0..a.count)
        .map(|k| {
            let mut sub = parent.substream(k);
            dn_sample(&params, &mut sub)
        })
        .collect();
    let text = render_samples(&draws, global.format)?;
    write_out(global, text)
}

fn tv_cmd(global: &GlobalArgs, a: &TvArgs) -> Result<()> {
    let model = load_model_config(require_config(global)?)?;
    // A fixed smoothness coefficient skips the bound side's sampling;
    // the breakdown is not reported here.
    let row = evaluate_model_row(
        &model,
        a.size,
        a.replicates,
        seed_of(global),
        a.epsilon_tail,
        Some(1.0),
    )?;
    let text = match global.format {
        ReportFormat::Csv => format!(
            "size,m,tv_estimate,mc_std_error,tail_bound\n{},{},{},{},{}\n",
            fmt_float(row.size),
            row.m,
            fmt_float(row.tv_estimate),
            fmt_float(row.mc_std_error),
            fmt_float(row.tail_bound)
        ),
        ReportFormat::Json => to_json_line(&serde_json::json!({
            "size": row.size,
            "m": row.m,
            "tv_estimate": row.tv_estimate,
            "mc_std_error": row.mc_std_error,
            "tail_bound": row.tail_bound,
        }))?,
    };
    write_out(global, text)
}

fn bound_cmd(global: &GlobalArgs, a: &BoundArgs) -> Result<()> {
    let model = load_model_config(require_config(global)?)?;
    let row = evaluate_model_row(
        &model,
        a.size,
        a.replicates,
        seed_of(global),
        a.epsilon_tail,
        a.eps_w,
    )?;
    let b = row.bound_breakdown.ok_or_else(|| {
        Error::domain(
            "this model carries no bound breakdown: only the colouring model \
             has a dependency decomposition, and its fitted m must be at \
             least 2",
        )
    })?;
    let text = match global.format {
        ReportFormat::Csv => format!(
            "size,d,m,dbar2,gamma,eps_w,eps_w_term,msqrt_term,combined\n\
             {},{},{},{},{},{},{},{},{}\n",
            fmt_float(row.size),
            b.d,
            fmt_float(b.m),
            fmt_float(b.dbar2),
            fmt_float(b.gamma),
            fmt_float(b.eps_w),
            fmt_float(b.eps_w_term),
            fmt_float(b.msqrt_term),
            fmt_float(b.combined)
        ),
        ReportFormat::Json => to_json_line(&serde_json::json!({
            "size": row.size,
            "breakdown": b,
        }))?,
    };
    write_out(global, text)
}

fn moments_cmd(global: &GlobalArgs, a: &ModelMomentsArgs) -> Result<()> {
    let config = load_model_config(require_config(global)?)?;
    let model = build_model(&config, a.size)?;
    let (mom, source) = target_moments(&model, a.replicates, &make_rng(seed_of(global), 0))?;
    let d = mom.mean.len();
    let text = match global.format {
        ReportFormat::Csv => {
            let covs: Vec<String> = (0..d).map(|k| format!("cov{k}")).collect();
            let mut out = format!("coord,mean,{}\n", covs.join(","));
            for j in 0..d {
                let row: Vec<String> = (0..d).map(|k| fmt_float(mom.cov[(j, k)])).collect();
                out.push_str(&format!("{j},{},{}\n", fmt_float(mom.mean[j]), row.join(",")));
            }
            out
        }
        ReportFormat::Json => {
            let mean: Vec<f64> = mom.mean.iter().copied().collect();
            let cov: Vec<Vec<f64>> = (0..d)
                .map(|j| (0..d).map(|k| mom.cov[(j, k)]).collect())
                .collect();
            to_json_line(&serde_json::json!({
                "source": source.to_string(),
                "mean": mean,
                "cov": cov,
            }))?
        }
    };
    write_out(global, text)
}

fn model_sample_cmd(global: &GlobalArgs, a: &ModelSampleArgs) -> Result<()> {
    let config = load_model_config(require_config(global)?)?;
    let model = build_model(&config, a.size)?;
    if a.count == 0 {
        return Err(Error::domain("--count must be at least 1"));
    }
    let parent = make_rng(seed_of(global), 0);
    let draws: Vec<Vec<i64>> = (0..a.count)
        .map(|k| {
            let mut sub = parent.substream(k);
            model.sample(&mut sub)
        })
        .collect();
    let text = render_samples(&draws, global.format)?;
    write_out(global, text)
}

fn experiment_cmd(global: &GlobalArgs) -> Result<()> {
    let mut cfg = load_config(require_config(global)?)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    let report = run_convergence_experiment(&cfg)?;
    let mut text = match global.format {
        ReportFormat::Csv => report_to_csv(&report),
        ReportFormat::Json => report_to_json(&report)?,
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    // Destination precedence: --out flag, then the config's out field,
    // then stdout.
    match global.out.as_ref().or(cfg.out.as_ref()) {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path.as_path(), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
