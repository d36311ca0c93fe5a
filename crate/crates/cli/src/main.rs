use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gradgp::chainfile::write_chain;
use gradgp::{McmcSettings, ModelKind};
use gradgp_cli::config::split_assignment;
use gradgp_cli::files::load_chain;
use gradgp_cli::plotdata::read_results;
use gradgp_cli::{emit_plot_data, fit_file, predict_file, run_experiment, write_outputs, ExperimentConfig, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Parser)]
#[command(name = "gradgp", version, about = "Gradient-enhanced (deep) GP surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark sweeps.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// Fit a model to a CSV with columns x1..xD, y and optional dy_dx1..dy_dxD.
    Fit {
        data: PathBuf,
        #[arg(long)]
        model: ModelKind,
        #[arg(long, default_value = "chain.jsonl")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        nmcmc: Option<usize>,
        #[arg(long)]
        burn: Option<usize>,
        #[arg(long)]
        thin: Option<usize>,
        /// Vecchia conditioning budget.
        #[arg(long)]
        vecchia: Option<usize>,
    },
    /// Continue a fitted chain from its final state.
    Resume {
        chain: PathBuf,
        #[arg(long)]
        nmcmc: usize,
        #[arg(long)]
        burn: usize,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Predict at the rows of a CSV with columns x1..xD.
    Predict {
        chain: PathBuf,
        data: PathBuf,
        #[arg(long)]
        grad: bool,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-scaled per-panel score tables from a results CSV.
    Plotdata {
        results: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BenchAction {
    Run {
        config: PathBuf,
        /// Override a config entry, `key=value`.
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Bench {
            action: BenchAction::Run { config, overrides },
        } => {
            let overrides = overrides
                .iter()
                .map(|s| split_assignment(s))
                .collect::<Result<Vec<_>>>()?;
            let cfg = ExperimentConfig::load(&config, &overrides)?;
            let out = run_experiment(&cfg)?;
            write_outputs(&cfg, &out)?;
            for f in &out.failures {
                eprintln!("repetition {} ({}) failed: {}", f.repetition, f.model, f.message);
            }
            println!(
                "{} fits, {} failures, results in {}",
                out.rows.len(),
                out.failures.len(),
                cfg.output.display()
            );
            Ok(out.all_succeeded())
        }
        Command::Fit {
            data,
            model,
            out,
            seed,
            nmcmc,
            burn,
            thin,
            vecchia,
        } => {
            let mut settings = model.default_settings();
            if let Some(v) = nmcmc {
                settings.mcmc.nmcmc = v;
            }
            if let Some(v) = burn {
                settings.mcmc.burn = v;
            }
            if let Some(v) = thin {
                settings.mcmc.thin = v;
            }
            settings.vecchia_m = vecchia;
            let chain = fit_file(&data, model, &settings, seed, &out)?;
            println!("{} chain with {} retained samples written to {}", model, chain.retained(), out.display());
            Ok(true)
        }
        Command::Resume {
            chain,
            nmcmc,
            burn,
            thin,
            out,
            seed,
        } => {
            let cf = load_chain(&chain)?;
            let mcmc = McmcSettings::new(nmcmc, burn, thin)?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let next = cf.chain.continue_fit(mcmc, &mut rng)?;
            let mut w = BufWriter::new(File::create(&out)?);
            write_chain(&mut w, &next, cf.input_scale.as_ref())?;
            println!("{} retained samples written to {}", next.retained(), out.display());
            Ok(true)
        }
        Command::Predict { chain, data, grad, out } => {
            match out {
                Some(path) => {
                    predict_file(&chain, &data, grad, BufWriter::new(File::create(path)?))?;
                }
                None => {
                    predict_file(&chain, &data, grad, io::stdout().lock())?;
                }
            }
            Ok(true)
        }
        Command::Plotdata { results, out } => {
            let entries = read_results(&results)?;
            for p in emit_plot_data(&entries, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
