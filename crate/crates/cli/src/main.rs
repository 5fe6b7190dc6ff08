//! `decopt` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use decopt::bench::experiment::{prepare_cell, SeedContext};
use decopt::bench::{generate_problem, run_experiment, ExperimentConfig, ProblemSpec};
use decopt::reference::{fista_solve, REFERENCE_MAX_ITER, REFERENCE_TOL};

#[derive(Parser)]
#[command(name = "decopt", version, about = "Decentralized proximal-gradient ADMM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) cell of a config and write CSVs plus a summary.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long, env = "DECOPT_OUT", default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        scale: Scale,
    },
    /// Like `run`, but the exit code is nonzero unless every cell is solved
    /// and no deterministic bound is exceeded.
    Check {
        config: PathBuf,
        #[arg(long, env = "DECOPT_OUT", default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        scale: Scale,
    },
    /// Print bound curves for the bound-carrying algorithms of a config.
    Bounds {
        config: PathBuf,
        /// Rounds at which to evaluate the curves.
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000,10000")]
        at: Vec<usize>,
        #[command(flatten)]
        scale: Scale,
    },
    /// Generate one problem instance and write its node files.
    Gen {
        #[arg(long, default_value_t = 1)]
        case: u8,
        #[arg(long, default_value_t = 5)]
        nodes: usize,
        #[arg(long, default_value_t = 20)]
        group_size: usize,
        #[arg(long, default_value_t = 10)]
        groups: usize,
        #[arg(long)]
        seed: u64,
        /// Also solve for and write the reference solution.
        #[arg(long)]
        reference: bool,
        #[arg(long, env = "DECOPT_OUT", default_value = "out")]
        out: PathBuf,
    },
}

/// Overrides for rescaling a config, e.g. `--group-size 100` for the
/// full-size instances (`n = 1000`).
#[derive(Args, Clone, Copy, Debug, Default)]
struct Scale {
    /// Replace the config's group size.
    #[arg(long)]
    group_size: Option<usize>,
}

fn load(config: &Path, scale: Scale) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(g) = scale.group_size {
        cfg.problem.group_size = g;
        cfg.name = format!("{}_ng{g}", cfg.name);
        cfg.validate()?;
    }
    Ok(cfg)
}

fn run(config: &Path, out: &Path, scale: Scale) -> Result<bool> {
    let cfg = load(config, scale)?;
    let summary = run_experiment(&cfg, out).with_context(|| format!("running {}", cfg.name))?;
    print!("{}", summary.to_text());
    Ok(summary.passed())
}

fn bounds(config: &Path, at: &[usize], scale: Scale) -> Result<()> {
    let mut cfg = load(config, scale)?;
    cfg.bounds = true;
    for &seed in &cfg.seeds {
        let ctx = SeedContext::build(&cfg, seed)?;
        for alg in &cfg.algorithms {
            let (_, _, curve) = prepare_cell(&ctx, alg, seed, &cfg.schedule, true)?;
            let Some(curve) = curve else { continue };
            println!("{} seed {seed} ({:?})", alg.label(), curve.kind);
            println!("{:>10} {:>14} {:>14}", "t", "subopt", "consensus");
            for &t in at {
                let (s, c) = curve.eval(t);
                println!("{t:>10} {s:>14.6e} {c:>14.6e}");
            }
        }
    }
    Ok(())
}

fn gen(spec: ProblemSpec, reference: bool, out: &Path) -> Result<()> {
    let problem = generate_problem(&spec)?;
    let dir = out.join(spec.key());
    std::fs::create_dir_all(&dir)?;
    for (i, obj) in problem.objectives.iter().enumerate() {
        std::fs::write(dir.join(format!("node{i}.txt")), obj.to_text())?;
    }
    let planted: Vec<String> = problem.planted.iter().map(|v| format!("{v:e}")).collect();
    std::fs::write(dir.join("planted.txt"), planted.join("\n") + "\n")?;
    println!("wrote {} node files to {}", problem.objectives.len(), dir.display());
    println!("max L / min L = {:.4}", problem.lipschitz_ratio());
    if reference {
        let sol = fista_solve(&problem.objectives, REFERENCE_TOL, REFERENCE_MAX_ITER)?;
        decopt::reference::ReferenceCache::new(&dir).store("reference", &sol)?;
        println!("F* = {:.12e} (certificate {:.2e})", sol.f_star, sol.certificate);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, scale } => run(&config, &out, scale).map(|_| true),
        Command::Check { config, out, scale } => run(&config, &out, scale),
        Command::Bounds { config, at, scale } => {
            if at.is_empty() {
                Err(anyhow::anyhow!("--at needs at least one round"))
            } else {
                bounds(&config, &at, scale).map(|_| true)
            }
        }
        Command::Gen {
            case,
            nodes,
            group_size,
            groups,
            seed,
            reference,
            out,
        } => {
            let spec = ProblemSpec {
                case,
                nodes,
                group_size,
                groups,
                seed,
            };
            match spec.validate() {
                Ok(()) => gen(spec, reference, &out).map(|_| true),
                Err(e) => Err(e.into()),
            }
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
