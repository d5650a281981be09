use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use shrinker_cli::config::{collect_paths, ExperimentConfig, Kind};
use shrinker_cli::report::{emit_report, REPORT_FILE};
use shrinker_cli::{run_all, LabError};

/// Overrides `--out` when set.
const OUT_ENV: &str = "SHRINKER_LAB_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Verb {
    Spectrum,
    Commutators,
    Entropy,
    Flow,
    Construct,
    Rates,
    Dynamics,
    Report,
}

impl Verb {
    fn kind(self) -> Option<Kind> {
        Some(match self {
            Verb::Spectrum => Kind::Spectrum,
            Verb::Commutators => Kind::Commutators,
            Verb::Entropy => Kind::Entropy,
            Verb::Flow => Kind::Flow,
            Verb::Construct => Kind::Construct,
            Verb::Rates => Kind::Rates,
            Verb::Dynamics => Kind::Dynamics,
            Verb::Report => return None,
        })
    }
}

/// Numerical experiments on Ricci flow near the round-sphere shrinker.
///
/// Exit status: 0 on success, 2 for configuration errors, 3 for numerical
/// failures (a diagnostic file is left in the run directory) or, for
/// `report`, when any check failed.
#[derive(Debug, Parser)]
#[command(name = "shrinker-lab", version)]
struct Cli {
    verb: Verb,
    /// Experiment file or directory of `*.toml` files; repeatable. Without
    /// it the built-in default for the verb runs.
    #[arg(long, value_name = "PATH")]
    config: Vec<PathBuf>,
    /// Output root; every run writes into `<DIR>/<run name>`.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    /// Worker threads for independent runs.
    #[arg(long, value_name = "N", default_value_t = 1)]
    jobs: usize,
    /// Seed for the stochastic stages; overrides the config.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
}

fn load(cli: &Cli, kind: &Kind) -> Result<Vec<ExperimentConfig>, LabError> {
    let mut cfgs = if cli.config.is_empty() {
        vec![ExperimentConfig::parse(kind.default_config(), kind.name())?]
    } else {
        let paths = collect_paths(&cli.config)?;
        if paths.is_empty() {
            return Err(LabError::Config("no config files found".into()));
        }
        paths.iter().map(|p| ExperimentConfig::load(p)).collect::<Result<Vec<_>, _>>()?
    };
    for c in &mut cfgs {
        if &c.kind != kind {
            return Err(LabError::Config(format!("`{}` is a {} experiment, not {}", c.name(), c.kind.name(), kind.name())));
        }
        if let Some(s) = cli.seed {
            c.seed = s;
        }
    }
    let mut names: Vec<&str> = cfgs.iter().map(|c| c.name()).collect();
    names.sort();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(LabError::Config(format!("two experiments share the run name `{}`", w[0])));
    }
    Ok(cfgs)
}

fn main() -> ExitCode {
    let mut cli = Cli::parse();
    if let Some(dir) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        cli.out = PathBuf::from(dir);
    }
    let Some(kind) = cli.verb.kind() else {
        return match emit_report(&cli.out) {
            Ok(r) => {
                print!("{}", r.text);
                eprintln!("report written to {}", cli.out.join(REPORT_FILE).display());
                ExitCode::from(if r.failures() == 0 { 0 } else { 3 })
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        };
    };
    let cfgs = match load(&cli, &kind) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let mut code = 0;
    for (cfg, r) in cfgs.iter().zip(run_all(&cfgs, &cli.out, cli.jobs)) {
        match r {
            Ok(o) => {
                let failed: Vec<&str> = o.checks.iter().filter(|c| c.failed()).map(|c| c.name.as_str()).collect();
                println!(
                    "{}: {} checks, {} failed{} -> {}",
                    o.name,
                    o.checks.len(),
                    failed.len(),
                    if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) },
                    o.dir.display()
                );
            }
            Err(e) => {
                eprintln!("{}: {e}", cfg.name());
                code = code.max(e.exit_code());
            }
        }
    }
    ExitCode::from(code as u8)
}
