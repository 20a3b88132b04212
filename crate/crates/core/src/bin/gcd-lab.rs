use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gcd_lab::evaluation::EvalOptions;
use gcd_lab::experiment::{
    cmd_diagnose, cmd_eval, cmd_gen, cmd_kmeans, cmd_sweep, cmd_train, ExperimentConfig, KmeansMode,
    KmeansRequest, SweepAxis,
};
use gcd_lab::{GcdError, Result};

#[derive(Parser)]
#[command(name = "gcd-lab", version, about = "Generalized category discovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// key = value config file; missing keys keep their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set epsilon=0.5`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

fn out_or_config(out: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    out.or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| GcdError::Config("no --out given and out_dir is unset".into()))
}

#[derive(Subcommand)]
enum Command {
    /// Print the default config with every key documented
    Defaults,
    /// Generate a synthetic dataset file
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt, metrics.jsonl, report.json
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset file; generated from the config when omitted
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the unlabelled split
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rematch_per_split: bool,
        #[arg(long, default_value_t = 1)]
        active_min_count: usize,
    },
    /// k-means baselines (plain or semi-supervised)
    Kmeans {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "semi")]
        mode: String,
        /// Cluster count; defaults to the class count
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cluster this checkpoint's backbone features instead of raw inputs
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long)]
        labelled_only_centroids: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect report.json files into taxonomy.csv and histogram.csv
    Diagnose {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Train over a list of epsilon or K values and seeds
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated epsilon values
        #[arg(long, conflicts_with = "k", required_unless_present = "k")]
        epsilon: Option<String>,
        /// Comma-separated prototype counts; `2x` means twice the class count
        #[arg(long)]
        k: Option<String>,
        /// Comma-separated base seeds
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Defaults => print!("{}", ExperimentConfig::default().to_text()),
        Command::Gen { cfg, out } => {
            let ds = cmd_gen(&cfg.resolve()?, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Train { cfg, data, out } => {
            let cfg = cfg.resolve()?;
            let out = out_or_config(out, &cfg)?;
            let r = cmd_train(&cfg, data.as_deref(), &out)?.report;
            println!(
                "all {:.4} old {:.4} new {:.4} -> {}",
                r.acc.acc_all,
                r.acc.acc_old,
                r.acc.acc_new,
                out.display()
            );
        }
        Command::Eval {
            model,
            data,
            out,
            rematch_per_split,
            active_min_count,
        } => {
            let opts = EvalOptions {
                rematch_per_split,
                active_min_count,
            };
            let r = cmd_eval(&model, &data, &opts, out.as_deref())?;
            println!("{}", serde_json::to_string(&r.acc).expect("report serializes"));
        }
        Command::Kmeans {
            data,
            mode,
            k,
            seed,
            model,
            max_iters,
            labelled_only_centroids,
            out,
        } => {
            let mode: KmeansMode = mode.parse()?;
            let req = KmeansRequest {
                k,
                seed,
                model: model.as_deref(),
                max_iters,
                labelled_only_centroids,
                ..KmeansRequest::new(&data, mode)
            };
            let (r, s) = cmd_kmeans(&req, out.as_deref())?;
            println!(
                "all {:.4} old {:.4} new {:.4} objective {:.4} iterations {}",
                r.acc.acc_all, r.acc.acc_old, r.acc.acc_new, s.objective, s.iterations_run
            );
        }
        Command::Diagnose { out, reports } => {
            cmd_diagnose(&reports, &out)?;
            println!("wrote {} and {}", out.join("taxonomy.csv").display(), out.join("histogram.csv").display());
        }
        Command::Sweep {
            cfg,
            data,
            epsilon,
            k,
            seeds,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let out = out_or_config(out, &cfg)?;
            let axis = match (epsilon, k) {
                (Some(e), _) => SweepAxis::parse_epsilon(&e)?,
                (None, Some(k)) => SweepAxis::parse_k(&k, cfg.gen.num_classes)?,
                (None, None) => unreachable!("clap requires one axis"),
            };
            let seeds = seeds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| GcdError::Config(format!("bad seed `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = cmd_sweep(&cfg, &axis, &seeds, data.as_deref(), &out)?;
            println!("{} runs -> {}", rows.len(), out.join("summary.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
