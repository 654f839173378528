//! The `poddp` command: single solves, seeded benchmarks and config dumps.
//! Every file written embeds the config hash and the resolved parameters.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use poddp::experiment::sigma_sweep_levels;
use poddp::{
    run_batch, solve, welch_t, BatchStats, EpisodeTrace, ExperimentConfig, ExperimentKind,
    PlannerKind,
};
use serde::Serialize;
use serde_json::{json, Value};

pub mod output;

use output::{write_json, write_jsonl, OutputDir};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] poddp::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(
    name = "poddp",
    version,
    about = "Belief-space trajectory-tree planning experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve once from the scenario's initial condition and write the tree.
    Solve(SolveArgs),
    /// Closed-loop episodes for each planner on shared seeds.
    Benchmark(BenchmarkArgs),
    /// Print the resolved configuration as TOML.
    Config(ConfigArgs),
}

fn parse_experiment(s: &str) -> std::result::Result<ExperimentKind, String> {
    s.parse().map_err(|e: poddp::Error| e.to_string())
}

fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected key=value, got \"{s}\"")),
    }
}

fn parse_planner(s: &str) -> std::result::Result<PlannerKind, String> {
    s.parse().map_err(|e: poddp::Error| e.to_string())
}

/// Flags that determine the resolved experiment configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// tmaze, terrain or lanechange. May be omitted when --config names one.
    #[arg(long, value_parser = parse_experiment)]
    pub experiment: Option<ExperimentKind>,
    /// TOML file overlaid on the experiment defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `--set solver.max_iterations=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    pub overrides: Vec<(String, String)>,
    /// Number of segments, i.e. branching levels plus one.
    #[arg(long)]
    pub segments: Option<usize>,
    /// Planning horizon in steps.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Prior probability of the first latent value.
    #[arg(long)]
    pub prior: Option<f64>,
    /// T-maze observation noise level.
    #[arg(long)]
    pub sigma_level: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(k) = self.segments {
            overrides.push(("solver.segments".into(), k.to_string()));
        }
        if let Some(t) = self.horizon {
            overrides.push(("solver.horizon".into(), t.to_string()));
        }
        let mut cfg = ExperimentConfig::load(self.experiment, self.config.as_deref(), &overrides)?;
        if let Some(p) = self.prior {
            if !(p > 0.0 && p < 1.0) {
                return Err(CliError::Usage(format!(
                    "--prior must lie in (0, 1), got {p}"
                )));
            }
            cfg.scenario.set_prior(p);
        }
        if let Some(s) = self.sigma_level {
            cfg.scenario.set_sigma_level(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory [env: PODDP_OUT_DIR, default: out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory [env: PODDP_OUT_DIR, default: out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated planners to compare.
    #[arg(long, alias = "planner", value_delimiter = ',', value_parser = parse_planner, default_value = "poddp,mlddp,pwddp")]
    pub planners: Vec<PlannerKind>,
    /// Episodes per planner.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// First episode seed; episode i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run the thirteen T-maze noise levels instead of a single level.
    #[arg(long, conflicts_with = "sigma_level")]
    pub sigma_sweep: bool,
    /// Also write every episode's step trace.
    #[arg(long)]
    pub traces: bool,
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| {
            std::env::var_os("PODDP_OUT_DIR")
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn config_value(cfg: &ExperimentConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes to JSON")
}

/// Runs the command line; returns the process exit code. Diagnostics go to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a, out),
        Command::Benchmark(a) => cmd_benchmark(a, out),
        Command::Config(a) => cmd_config(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}

fn cmd_config(args: &ConfigArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = args.resolve()?;
    let _ = writeln!(out, "# config_hash = \"{}\"", cfg.hash());
    let _ = write!(out, "{}", cfg.to_toml()?);
    Ok(EXIT_OK)
}

fn cmd_solve(args: &SolveArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = args.config.resolve()?;
    let dir = OutputDir::create(out_dir(&args.out))?;
    let built = cfg.build()?;
    let outcome = solve(built.problem(), &built.x0, &built.prior, &cfg.solver, None)?;
    let hash = cfg.hash();
    let config = config_value(&cfg);

    write_json(
        &dir.path("tree.json"),
        &json!({ "config_hash": hash, "config": config, "tree": outcome.tree.to_json()? }),
    )?;
    let header = json!({ "config_hash": hash, "config": config });
    let records: Vec<Value> = outcome
        .log
        .iter()
        .map(|r| {
            let mut v = serde_json::to_value(r).expect("iteration record serializes");
            v["config_hash"] = Value::String(hash.clone());
            v
        })
        .collect();
    write_jsonl(
        &dir.path("iterations.jsonl"),
        std::iter::once(&header).chain(records.iter()),
    )?;
    write_json(
        &dir.path("solve.json"),
        &json!({
            "config_hash": hash,
            "config": config,
            "cost": outcome.cost,
            "converged": outcome.converged,
            "iterations": outcome.iterations,
            "nodes": outcome.tree.len(),
        }),
    )?;
    let _ = writeln!(
        out,
        "{}: cost {} after {} iterations, {} nodes, converged {} -> {}",
        cfg.experiment,
        outcome.cost,
        outcome.iterations,
        outcome.tree.len(),
        outcome.converged,
        dir.root().display()
    );
    Ok(if outcome.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

#[derive(Debug, Serialize)]
pub(crate) struct SummaryRow {
    pub planner: PlannerKind,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub stderr_defined: bool,
    pub nonconverged: usize,
    pub config_hash: String,
}

#[derive(Debug, Serialize)]
struct Comparison {
    a: PlannerKind,
    b: PlannerKind,
    t: f64,
    df: f64,
    p: f64,
}

struct BatchResult {
    planner: PlannerKind,
    traces: Vec<EpisodeTrace>,
    stats: BatchStats,
}

fn run_planners(cfg: &ExperimentConfig, args: &BenchmarkArgs) -> Result<Vec<BatchResult>> {
    let built = cfg.build()?;
    args.planners
        .iter()
        .map(|&planner| {
            let traces = run_batch(
                planner,
                built.problem(),
                &built.x0,
                &built.prior,
                args.n,
                args.seed,
                &cfg.solver,
            )?;
            let stats = BatchStats::from_traces(&traces)?;
            Ok(BatchResult {
                planner,
                traces,
                stats,
            })
        })
        .collect()
}

fn rows(results: &[BatchResult], hash: &str) -> Vec<SummaryRow> {
    results
        .iter()
        .map(|r| SummaryRow {
            planner: r.planner,
            n: r.stats.n,
            mean: r.stats.mean,
            stderr: r.stats.stderr,
            stderr_defined: r.stats.stderr_defined,
            nonconverged: r.traces.iter().filter(|t| !t.converged).count(),
            config_hash: hash.to_string(),
        })
        .collect()
}

/// Welch tests for every planner pair; empty when n < 2.
fn comparisons(results: &[BatchResult]) -> Result<Vec<Comparison>> {
    let mut out = Vec::new();
    if results.first().is_none_or(|r| r.stats.n < 2) {
        return Ok(out);
    }
    for (i, a) in results.iter().enumerate() {
        for b in &results[i + 1..] {
            let w = welch_t(&a.stats.costs, &b.stats.costs)?;
            out.push(Comparison {
                a: a.planner,
                b: b.planner,
                t: w.t,
                df: w.df,
                p: w.p,
            });
        }
    }
    Ok(out)
}

/// Writes episodes.csv, summary.json and optionally traces.json for one
/// configuration; returns the summary rows.
fn write_batch(
    dir: &OutputDir,
    cfg: &ExperimentConfig,
    args: &BenchmarkArgs,
    results: &[BatchResult],
) -> Result<Vec<SummaryRow>> {
    let hash = cfg.hash();
    let built = cfg.build()?;
    let labels = built.problem().latents().clone();
    output::write_episodes_csv(
        &dir.path("episodes.csv"),
        &hash,
        &cfg.canonical_json(),
        results.iter().flat_map(|r| &r.traces),
        &labels,
    )?;
    let summary_rows = rows(results, &hash);
    write_json(
        &dir.path("summary.json"),
        &json!({
            "experiment": cfg.experiment,
            "config_hash": hash,
            "config": config_value(cfg),
            "base_seed": args.seed,
            "n": args.n,
            "rows": summary_rows,
            "comparisons": comparisons(results)?,
        }),
    )?;
    if args.traces {
        let traces: Vec<&EpisodeTrace> = results.iter().flat_map(|r| &r.traces).collect();
        write_json(
            &dir.path("traces.json"),
            &json!({ "config_hash": hash, "config": config_value(cfg), "episodes": traces }),
        )?;
    }
    Ok(summary_rows)
}

fn cmd_benchmark(args: &BenchmarkArgs, out: &mut dyn Write) -> Result<i32> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    if args.planners.is_empty() {
        return Err(CliError::Usage("no planners given".into()));
    }
    let cfg = args.config.resolve()?;
    if args.sigma_sweep && cfg.experiment != ExperimentKind::Tmaze {
        return Err(CliError::Usage(
            "--sigma-sweep applies to the tmaze experiment only".into(),
        ));
    }
    let dir = OutputDir::create(out_dir(&args.out))?;

    if !args.sigma_sweep {
        let results = run_planners(&cfg, args)?;
        for row in write_batch(&dir, &cfg, args, &results)? {
            let _ = writeln!(
                out,
                "{}: mean {:.3} stderr {:.3} (n {})",
                row.planner, row.mean, row.stderr, row.n
            );
        }
        return Ok(EXIT_OK);
    }

    let mut sweep = Vec::new();
    for (i, sigma) in sigma_sweep_levels().into_iter().enumerate() {
        let mut level_cfg = cfg.clone();
        level_cfg.scenario.set_sigma_level(sigma)?;
        let level_dir = dir.subdir(&format!("level_{i:02}"))?;
        let results = run_planners(&level_cfg, args)?;
        for row in write_batch(&level_dir, &level_cfg, args, &results)? {
            let _ = writeln!(
                out,
                "sigma {sigma}: {}: mean {:.3} stderr {:.3}",
                row.planner, row.mean, row.stderr
            );
            sweep.push((sigma, row));
        }
    }
    output::write_sweep_csv(
        &dir.path("sweep.csv"),
        &cfg.hash(),
        &cfg.canonical_json(),
        &sweep,
    )?;
    Ok(EXIT_OK)
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}
