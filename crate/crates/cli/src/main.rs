//! `ltb`: runs verification experiments from JSON configurations.
//!
//! Exit codes: 0 on completion, 1 when an exact invariant fails, 2 on
//! configuration or I/O errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ltb::config::ExperimentConfig;
use ltb::grid::{goodness_gamma, pi_good, PiGoodMode};
use ltb::harness::{check_lemmas, tb_experiment, Check, TbReport};
use ltb::operators::{certify_kernel, SamplerSpec};
use ltb::Error;

#[derive(Parser)]
#[command(name = "ltb", version, about = "Local Tb square-function verification experiments")]
struct Cli {
    /// Worker threads (default: number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Certify the size and Hölder constants of the configured kernel.
    VerifyKernel {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4096)]
        samples: usize,
    },
    /// Write the configured measure as JSON.
    GenMeasure {
        #[command(flatten)]
        common: Common,
    },
    /// Run the deterministic checkers and print one PASS/FAIL line each.
    CheckLemmas {
        #[command(flatten)]
        common: Common,
    },
    /// Probability that a fixed cube is good under a random shift.
    PiGood(PiArgs),
    /// The full pipeline.
    Tb {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seeds.monte_carlo`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `quad_k`.
    #[arg(long)]
    quad_k: Option<usize>,
    /// Overrides `outputs.csv_dir`.
    #[arg(long)]
    emit_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    MonteCarlo,
}

#[derive(Args)]
struct PiArgs {
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// A number or "auto".
    #[arg(long, default_value = "auto")]
    r: String,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    m: f64,
    /// Coarser generations available above the cube.
    #[arg(long)]
    depth: u32,
    #[arg(long, value_enum, default_value = "exact")]
    mode: Mode,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct PiOutput {
    n: usize,
    r: u32,
    alpha: f64,
    m: f64,
    gamma: f64,
    depth: u32,
    mode: &'static str,
    estimate: f64,
    stderr: f64,
}

#[derive(Serialize)]
struct TbOutput<'a> {
    config: &'a ExperimentConfig,
    all_pass: bool,
    report: &'a TbReport,
}

enum Failure {
    Invariant(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invariant(_) | Error::Construction(_) => Failure::Invariant(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(format!("i/o error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Invariant(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Cmd) -> Result<u8, Failure> {
    match cmd {
        Cmd::VerifyKernel { common, samples } => {
            let (cfg, base) = load(&common)?;
            let mu = cfg.build_measure(Some(&base))?;
            let kernel = cfg.kernel.build(mu.m())?;
            let report = certify_kernel(kernel.as_ref(), &mu, &SamplerSpec::new(cfg.seeds.monte_carlo, samples));
            emit(&cfg, &json(&report)?)?;
            Ok(0)
        }
        Cmd::GenMeasure { common } => {
            let (cfg, base) = load(&common)?;
            let mu = cfg.build_measure(Some(&base))?;
            emit(&cfg, &mu.to_json()?)?;
            Ok(0)
        }
        Cmd::CheckLemmas { common } => {
            let (cfg, base) = load(&common)?;
            let report = check_lemmas(&cfg, Some(&base))?;
            for c in &report.checks {
                println!("{}", line(c));
            }
            if let Some(path) = &cfg.outputs.report {
                write(path, &json(&report)?)?;
            }
            Ok(if report.all_pass() { 0 } else { 1 })
        }
        Cmd::PiGood(a) => {
            let gamma = goodness_gamma(a.alpha, a.m);
            let r = match a.r.as_str() {
                "auto" => ltb::grid::auto_r(a.n, gamma)?,
                s => s.parse().map_err(|_| Failure::Usage(format!("r must be a number or \"auto\", got \"{s}\"")))?,
            };
            let (mode, name) = match a.mode {
                Mode::Exact => (PiGoodMode::Exact, "exact"),
                Mode::MonteCarlo => (PiGoodMode::MonteCarlo { seed: a.seed, trials: a.trials }, "monte_carlo"),
            };
            let est = pi_good(a.n, r, gamma, a.depth, mode)?;
            let out = PiOutput {
                n: a.n,
                r,
                alpha: a.alpha,
                m: a.m,
                gamma,
                depth: a.depth,
                mode: name,
                estimate: est.estimate,
                stderr: est.stderr,
            };
            println!("{}", json(&out)?);
            Ok(0)
        }
        Cmd::Tb { common } => {
            let (cfg, base) = load(&common)?;
            let report = tb_experiment(&cfg, Some(&base))?;
            if let Some(dir) = &cfg.outputs.csv_dir {
                std::fs::create_dir_all(dir)?;
                let d = &report.decay_slopes;
                for (name, table) in [("es1.csv", &d.es1_table), ("es2.csv", &d.es2_table)] {
                    let text = table.as_ref().map_or_else(|| "k,value,scale,ratio,skipped\n".to_string(), |t| t.to_csv());
                    std::fs::write(dir.join(name), text)?;
                }
            }
            let pass = report.all_pass();
            let text = json(&TbOutput { config: &cfg, all_pass: pass, report: &report })?;
            emit(&cfg, &text)?;
            for c in report.checks.iter().filter(|c| !c.pass) {
                eprintln!("{}", line(c));
            }
            Ok(if pass { 0 } else { 1 })
        }
    }
}

/// Reads the configuration and applies the command-line overrides. Relative
/// measure paths resolve against the configuration's directory.
fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let text = std::fs::read_to_string(&c.config)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", c.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(s) = c.seed {
        cfg.seeds.monte_carlo = s;
    }
    if let Some(k) = c.quad_k {
        cfg.quad_k = k;
    }
    if let Some(d) = &c.emit_csv {
        cfg.outputs.csv_dir = Some(d.clone());
    }
    let base = c.config.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn json<T: Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Usage(format!("json error: {e}")))
}

fn line(c: &Check) -> String {
    let status = if c.pass { "PASS" } else { "FAIL" };
    match &c.error {
        Some(e) => format!("{status} {} error: {e}", c.name),
        None => format!("{status} {} value={:e} bound={:e}", c.name, c.value, c.bound),
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, format!("{text}\n"))?;
    Ok(())
}

/// Writes to `outputs.report` when set, otherwise to stdout.
fn emit(cfg: &ExperimentConfig, text: &str) -> Result<(), Failure> {
    match &cfg.outputs.report {
        Some(p) => write(p, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
