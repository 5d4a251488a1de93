use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fracspec::cli_io::run::error_json;
use fracspec::cli_io::{run, Command, ExperimentConfig};
use fracspec::Result;

#[derive(Parser)]
#[command(name = "fracspec", version, about = "Boundary spectral data experiments for the fractional Laplacian")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Retained eigenpairs.
    #[arg(long, global = true)]
    modes: Option<usize>,
    /// Also render SVG plots.
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Eigenpairs and boundary traces (cached).
    Spectrum {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        a: Option<f64>,
    },
    /// Elliptic DN tables over resolvent parameters and boundary data.
    Dnmap,
    /// Heat evolution driven by boundary data.
    Heat {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Identity checks; exits nonzero when one fails.
    Verify {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        a: Option<f64>,
    },
    /// Wave and heat observability reports.
    Observability,
    /// Potential reconstruction from spectral data.
    Reconstruct {
        #[arg(long)]
        reg: Option<f64>,
    },
    /// Distinguishability sweep over perturbation amplitudes.
    Sweep,
}

fn configure(cli: &Cli) -> Result<(Command, ExperimentConfig, PathBuf)> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(m) = cli.modes {
        cfg.modes = Some(m);
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    let cmd = match cli.command {
        Cmd::Spectrum { n, a } | Cmd::Verify { n, a } => {
            cfg.n = n.unwrap_or(cfg.n);
            cfg.a = a.unwrap_or(cfg.a);
            if matches!(cli.command, Cmd::Spectrum { .. }) {
                Command::Spectrum
            } else {
                Command::Verify
            }
        }
        Cmd::Dnmap => Command::Dnmap,
        Cmd::Heat { steps } => {
            cfg.steps = steps.unwrap_or(cfg.steps);
            Command::Heat
        }
        Cmd::Observability => Command::Observability,
        Cmd::Reconstruct { reg } => {
            cfg.reconstruct.reg = reg.unwrap_or(cfg.reconstruct.reg);
            Command::Reconstruct
        }
        Cmd::Sweep => Command::Sweep,
    };
    cfg.validate()?;
    let out = cfg.out_dir();
    Ok((cmd, cfg, out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure(&cli).and_then(|(cmd, cfg, out)| run(cmd, &cfg, &out, cli.plot));
    match result {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(2)
        }
    }
}
