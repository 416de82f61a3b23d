use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ips::config::ExperimentConfig;
use ips::report::emit_report;
use ips::scan::{self, ScanReport};
use ips::IpsError;

const EXIT_CONFIG: u8 = 2;
const EXIT_WELLPOSED: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "ips", version, about = "Probe, singular-source and integrated indicators from DtN data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; each subcommand writes into a subdirectory named after it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized batteries, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid override, e.g. 24x24x24 or 24.
    #[arg(long, global = true, value_parser = parse_grid)]
    grid: Option<[usize; 3]>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Dirichlet solves, DtN pairings and the Alessandrini identity on random data.
    Forward,
    /// Needle sequence generation and diagnostics.
    Needle,
    /// Side A indicators over the configured point sets.
    Scan,
    /// Side B membership tests.
    Classify,
    /// Kernel-integral rate checks.
    Rates,
    /// Collects the summaries of earlier runs in the output directory.
    Report,
}

fn parse_grid(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split('x').collect();
    let nums: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
    match nums.map_err(|e| e.to_string())?.as_slice() {
        [n] => Ok([*n; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(format!("expected N or NxNxN, got {s}")),
    }
}

enum Failure {
    Config(String),
    Wellposed(String),
    Numerical(String),
}

impl From<IpsError> for Failure {
    fn from(e: IpsError) -> Self {
        match e {
            IpsError::Config(_) | IpsError::Invalid(_) => Failure::Config(e.to_string()),
            IpsError::NotWellPosed { .. } | IpsError::EigenNoConvergence { .. } => Failure::Wellposed(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(n) = cli.grid {
        cfg.grid.n = n;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out.clone().or_else(|| cfg.and_then(|c| c.output.clone())).unwrap_or_else(|| PathBuf::from("out"))
}

fn write(report: &ScanReport, dir: &Path) -> Result<(), Failure> {
    let sub = dir.join(&report.kind);
    emit_report(report, &sub).map_err(|e| Failure::Numerical(format!("writing {}: {e}", sub.display())))?;
    print!("{}", ips::report::summary_text(report));
    println!("wrote {}", sub.display());
    Ok(())
}

/// Gathers the checks of every `*/report.json` below `dir` into `dir/summary.txt`.
fn collect(dir: &Path) -> Result<(), Failure> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path().join("report.json")))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Failure::Config(format!("no reports under {}", dir.display())));
    }
    let mut text = String::new();
    let (mut pass, mut fail) = (0, 0);
    for p in &entries {
        let raw = std::fs::read_to_string(p).map_err(|e| Failure::Numerical(e.to_string()))?;
        let v: serde_json::Value = serde_json::from_str(&raw).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
        let kind = v["kind"].as_str().unwrap_or("?");
        for c in v["checks"].as_array().into_iter().flatten() {
            let ok = c["passed"].as_bool().unwrap_or(false);
            if ok {
                pass += 1;
            } else {
                fail += 1;
            }
            text += &format!(
                "{} [{kind}] {}: {}\n",
                if ok { "PASS" } else { "FAIL" },
                c["name"].as_str().unwrap_or(""),
                c["detail"].as_str().unwrap_or("")
            );
        }
    }
    text += &format!("{pass} passed, {fail} failed\n");
    std::fs::write(dir.join("summary.txt"), &text).map_err(|e| Failure::Numerical(e.to_string()))?;
    print!("{text}");
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Config(e.to_string()))?;
    }
    if let Command::Report = cli.command {
        let cfg = match &cli.config {
            Some(_) => Some(load_config(cli)?),
            None => None,
        };
        return collect(&out_dir(cli, cfg.as_ref()));
    }
    let cfg = load_config(cli)?;
    let report = match cli.command {
        Command::Forward => scan::run_forward(&cfg)?,
        Command::Needle => scan::run_needles(&cfg)?,
        Command::Scan => scan::run_scan(&cfg)?,
        Command::Classify => scan::run_classify(&cfg)?,
        Command::Rates => scan::run_rates(&cfg)?,
        Command::Report => unreachable!(),
    };
    write(&report, &out_dir(cli, Some(&cfg)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Config(m) => (EXIT_CONFIG, format!("config error: {m}")),
                Failure::Wellposed(m) => (EXIT_WELLPOSED, m),
                Failure::Numerical(m) => (EXIT_NUMERICAL, format!("numerical failure: {m}")),
            };
            eprintln!("ips: {msg}");
            ExitCode::from(code)
        }
    }
}
