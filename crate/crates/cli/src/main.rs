use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dynsbm_core::exact::{exact_loglik_bruteforce, exact_loglik_transfer, exact_mle, MleConfig};
use dynsbm_core::experiment::{emit_outputs, run_consistency_experiment, ExperimentConfig};
use dynsbm_core::params::{DEFAULT_DELTA, DEFAULT_ZETA};
use dynsbm_core::sampler::{sample_dataset, GraphSequence};
use dynsbm_core::theory::{concentration_report, discrepancy_suite};
use dynsbm_core::vem::{fit_vem, InitStrategy, VemConfig};
use dynsbm_core::ModelParams;
use serde_json::json;

#[derive(Parser)]
#[command(name = "dynsbm", version, about = "Dynamic stochastic block models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Brute,
    Transfer,
}

#[derive(Subcommand)]
enum Command {
    /// Sample latent paths and graphs; writes graphs.json and labels.json.
    Generate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long = "T")]
        t_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact marginal log-likelihood of a graph sequence.
    ExactLoglik {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "transfer")]
        method: Method,
    },
    /// Exact maximum likelihood (small instances only).
    FitMle {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "Q")]
        q_classes: usize,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        time_varying_pi: bool,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = DEFAULT_ZETA)]
        zeta: f64,
        /// Record wall-clock time in the report (makes output run-dependent).
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Variational EM.
    FitVem {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "Q")]
        q_classes: usize,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        #[arg(long, default_value = "spectral-mean-graph")]
        init: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        time_varying_pi: bool,
        #[arg(long)]
        tie_diagonal: bool,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = DEFAULT_ZETA)]
        zeta: f64,
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo checks of the concentration and discrepancy bounds.
    CheckTheory {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long = "T")]
        t_steps: usize,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to δ/2.
        #[arg(long)]
        eta: Option<f64>,
        /// Randomised (z, z*) pairs for the discrepancy bounds.
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Consistency experiment over an (n, T) grid.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

fn read_params(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ModelParams::from_json(&text)?)
}

fn read_graphs(path: &Path) -> Result<GraphSequence> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(GraphSequence::from_json(&text)?)
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate {
            params,
            n,
            t_steps,
            seed,
            out,
        } => {
            let p = read_params(&params)?;
            let (z, x) = sample_dataset(&p, n, t_steps, seed)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("graphs.json"), x.to_json()? + "\n")?;
            fs::write(out.join("labels.json"), serde_json::to_string(&z)? + "\n")?;
        }
        Command::ExactLoglik {
            params,
            data,
            method,
        } => {
            let p = read_params(&params)?;
            let x = read_graphs(&data)?;
            let ll = match method {
                Method::Brute => exact_loglik_bruteforce(&p, &x)?,
                Method::Transfer => exact_loglik_transfer(&p, &x)?,
            }
            .value;
            let pairs = (x.n() * x.n().saturating_sub(1) * x.t_steps()) as f64;
            let normalized = if pairs > 0.0 {
                json!(2.0 * ll / pairs)
            } else {
                json!(null)
            };
            emit(&json!({ "loglik": ll, "normalized": normalized }), None)?;
        }
        Command::FitMle {
            data,
            q_classes,
            restarts,
            seed,
            time_varying_pi,
            delta,
            zeta,
            timing,
            out,
        } => {
            let x = read_graphs(&data)?;
            let cfg = MleConfig {
                restarts,
                seed,
                delta,
                zeta,
                time_varying_pi,
                ..MleConfig::default()
            };
            let start = std::time::Instant::now();
            let mut report = exact_mle(&x, q_classes, &cfg)?;
            if timing {
                report.wall_ms = start.elapsed().as_millis() as u64;
            }
            emit(&serde_json::to_value(&report)?, out.as_deref())?;
        }
        Command::FitVem {
            data,
            q_classes,
            restarts,
            init,
            tol,
            seed,
            time_varying_pi,
            tie_diagonal,
            delta,
            zeta,
            timing,
            out,
        } => {
            let x = read_graphs(&data)?;
            let init: InitStrategy = init.parse()?;
            if init == InitStrategy::WarmStart {
                bail!("warm-start needs a previous state and is only available from the library");
            }
            let cfg = VemConfig {
                restarts,
                init,
                tol,
                seed,
                delta,
                zeta,
                time_varying_pi,
                tie_diagonal,
                ..VemConfig::default()
            };
            let start = std::time::Instant::now();
            let mut report = fit_vem(&x, q_classes, &cfg)?;
            if timing {
                report.wall_ms = start.elapsed().as_millis() as u64;
            }
            emit(&serde_json::to_value(&report)?, out.as_deref())?;
        }
        Command::CheckTheory {
            params,
            n,
            t_steps,
            reps,
            seed,
            eta,
            instances,
            out,
        } => {
            let p = read_params(&params)?;
            let eta = eta.unwrap_or(p.delta / 2.0);
            let concentration = concentration_report(&p, n, t_steps, reps, seed, eta)?;
            let discrepancy = match discrepancy_suite(&p, n, t_steps, instances, eta, seed) {
                Ok(s) => serde_json::to_value(s)?,
                Err(e) => json!({ "skipped": e.to_string() }),
            };
            let all_pass = concentration.all_pass();
            emit(
                &json!({
                    "eta": eta,
                    "concentration": concentration,
                    "discrepancy": discrepancy,
                    "concentration_pass": all_pass,
                }),
                out.as_deref(),
            )?;
        }
        Command::Experiment { config } => {
            let cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let result = run_consistency_experiment(&cfg)?;
            let files = emit_outputs(&result, &cfg.output_dir)?;
            for f in &files {
                println!("{}", f.display());
            }
            let failing = result.failing_cells();
            if !failing.is_empty() {
                eprintln!("more than half of the replicates failed in cells {failing:?}");
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
