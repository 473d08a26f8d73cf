use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::pipeline::{run, Stage};
use crate::report::summarize;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECKS_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "monou", version, about = "OU processes with singular monotone drifts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `mc.master_seed`.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Overrides `output.directory`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides `mc.n_paths`.
    #[arg(long, global = true, value_name = "N")]
    pub paths: Option<usize>,
    /// Suppresses progress output.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample OU paths and compare moments with the closed forms.
    Simulate,
    /// Integrate the alpha sweep and check the a priori bounds.
    Sweep,
    /// Sweep plus the phi-estimates and the lemma constants.
    PhiCheck,
    /// Everything up to the Girsanov densities and the tail function.
    Girsanov,
    /// Everything up to the Psi constructions and the entropy statistic.
    Psi,
    /// Summarize an existing artifact directory.
    Report,
    /// Run every stage, then print the summary.
    All,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        match self {
            Command::Simulate => Some(Stage::Simulate),
            Command::Sweep => Some(Stage::Sweep),
            Command::PhiCheck => Some(Stage::Phi),
            Command::Girsanov => Some(Stage::Girsanov),
            Command::Psi | Command::All => Some(Stage::Psi),
            Command::Report => None,
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, String> {
    let path = cli.config.as_ref().ok_or("--config PATH is required")?;
    let mut cfg = ExperimentConfig::load(path).map_err(|e| e.to_string())?;
    if let Some(s) = cli.seed {
        cfg.mc.master_seed = s;
    }
    if let Some(n) = cli.paths {
        cfg.mc.n_paths = n;
    }
    if let Some(o) = &cli.out {
        cfg.output.directory = o.clone();
    }
    Ok(cfg)
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let quiet = cli.quiet;

    let Some(stage) = cli.command.stage() else {
        let dir = match (&cli.out, &cli.config) {
            (Some(d), _) => d.clone(),
            (None, Some(_)) => match load(&cli) {
                Ok(c) => c.output.directory,
                Err(e) => {
                    eprintln!("{e}");
                    return EXIT_USAGE;
                }
            },
            (None, None) => {
                eprintln!("report needs --out DIR or --config PATH");
                return EXIT_USAGE;
            }
        };
        let s = summarize(&dir);
        print!("{}", s.text);
        return if s.passed { EXIT_PASS } else { EXIT_CHECKS_FAILED };
    };

    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_USAGE;
        }
    };
    let resolved = match cfg.resolve() {
        Ok(r) => r,
        Err(e) => {
            eprint!("{e}");
            return EXIT_USAGE;
        }
    };
    let log = |m: &str| {
        if !quiet {
            eprintln!("{m}");
        }
    };
    let out = cfg.output.directory.clone();
    let manifest = match run(&cfg, &resolved, &out, stage, &log) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_CHECKS_FAILED;
        }
    };
    if let Some(e) = &manifest.error {
        eprintln!("run failed after {:?}: {e}", manifest.last_completed_stage().map(|s| s.name()));
    }
    if cli.command == Command::All || !quiet {
        let s = summarize(&out);
        if cli.command == Command::All {
            print!("{}", s.text);
        } else {
            let failed = manifest.checks.iter().filter(|c| c.failed_gate()).count();
            eprintln!("{} checks, {failed} failed; artifacts in {}", manifest.checks.len(), out.display());
        }
    }
    if manifest.all_passed() {
        EXIT_PASS
    } else {
        EXIT_CHECKS_FAILED
    }
}
