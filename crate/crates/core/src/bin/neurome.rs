use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use neurome::config::{resolve_seed, ExperimentConfig, SweepConfig};
use neurome::experiment::{
    cmd_align, cmd_gen_queries, cmd_reconstruct, cmd_sweep, cmd_train_blackbox,
};
use neurome::reconstruct::SamplerKind;

/// Exit code of a reconstruction that finished without converging.
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "neurome",
    version,
    about = "Reconstruct query-only MLPs and verify them up to isomorphism"
)]
struct Cli {
    /// Global seed; falls back to the config file, then NEUROME_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a black box and write <out>.nrm1 plus <out>.json metadata.
    TrainBlackbox {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the black box's training epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Reconstruct a black box and write <out>.nrm1 plus <out>.json report.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        blackbox: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the surrogate learning rate.
        #[arg(long)]
        lr: Option<f32>,
        /// Override the number of outer iterations.
        #[arg(long)]
        outer_iterations: Option<usize>,
    },
    /// Align two NRM1 networks and print the comparison report as JSON.
    Align {
        candidate: PathBuf,
        reference: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        probes: usize,
    },
    /// Run a sweep file and write one report per variant plus sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Dump one sampler batch as <out>.bin plus <out>.json.
    GenQueries {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Sampler::Committee)]
        sampler: Sampler,
        #[arg(long, default_value_t = 256)]
        q: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampler {
    Committee,
    Gaussian,
    Uniform,
    Dataset,
    ExpandedDataset,
    EasyResample,
    HardResample,
}

impl From<Sampler> for SamplerKind {
    fn from(s: Sampler) -> Self {
        match s {
            Sampler::Committee => SamplerKind::Committee,
            Sampler::Gaussian => SamplerKind::Gaussian,
            Sampler::Uniform => SamplerKind::Uniform,
            Sampler::Dataset => SamplerKind::Dataset,
            Sampler::ExpandedDataset => SamplerKind::ExpandedDataset,
            Sampler::EasyResample => SamplerKind::EasyResample,
            Sampler::HardResample => SamplerKind::HardResample,
        }
    }
}

fn run(cli: Cli) -> neurome::Result<ExitCode> {
    match cli.command {
        Command::TrainBlackbox {
            config,
            out,
            epochs,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(e) = epochs {
                cfg.oracle.training.epochs = e;
            }
            let meta = cmd_train_blackbox(&cfg, &out)?;
            eprintln!(
                "trained {:?} for {} epochs, checksum {:016x}",
                cfg.spec.widths(),
                meta.epochs,
                meta.weights_checksum
            );
        }
        Command::Reconstruct {
            config,
            blackbox,
            out,
            lr,
            outer_iterations,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(r) = cfg.reconstruction.as_mut() {
                if let Some(lr) = lr {
                    r.run.lr = lr;
                }
                if let Some(o) = outer_iterations {
                    r.run.outer_iterations = o;
                }
            }
            cfg.validate()?;
            let seed = resolve_seed(cli.seed, cfg.seed)?;
            let report = cmd_reconstruct(&cfg, &blackbox, &out, seed)?;
            match &report.evaluation {
                Some(e) => eprintln!(
                    "{:?} after {} queries: max eps {:.3e} ({:.3e}%), agreement {:.4}",
                    report.status,
                    report.samples(),
                    e.max_eps,
                    e.max_eps_pct,
                    e.agreement_rate
                ),
                None => eprintln!("{:?} after {} queries", report.status, report.samples()),
            }
            if !report.converged() {
                return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
            }
        }
        Command::Align {
            candidate,
            reference,
            probes,
        } => {
            let seed = resolve_seed(cli.seed, None)?;
            let report = cmd_align(&candidate, &reference, probes, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sweep { config, out_dir } => {
            let sweep = SweepConfig::load(&config)?;
            let rows = cmd_sweep(&sweep, &out_dir, cli.seed)?;
            for r in rows {
                eprintln!(
                    "{:<24} {:?} max eps {:.3e}",
                    r.config_id, r.status, r.max_eps
                );
            }
        }
        Command::GenQueries {
            config,
            sampler,
            q,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seed = resolve_seed(cli.seed, cfg.seed)?;
            let batch = cmd_gen_queries(&cfg, sampler.into(), q, &out, seed)?;
            eprintln!(
                "wrote {} x {} {:?} queries",
                batch.inputs.nrows(),
                batch.inputs.ncols(),
                batch.provenance
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
