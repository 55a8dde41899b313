use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecvit_cli::commands::{self, OracleOptions};
use ecvit_cli::config::{parse_patch, RunConfig};
use ecvit_cli::error::CliError;

#[derive(Parser)]
#[command(name = "ecvit", version, about = "Certified patch defense with band smoothing")]
struct Cli {
    /// Worker threads (falls back to ECVIT_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Band width in original-image pixels.
    #[arg(long)]
    band: Option<usize>,
}

impl Common {
    fn load(&self, extra: Vec<String>) -> Result<RunConfig, CliError> {
        let mut sets = self.set.clone();
        if let Some(s) = self.seed {
            sets.push(format!("train.seed={s}"));
        }
        if let Some(b) = self.band {
            sets.push(format!("certify.band={b}"));
        }
        sets.extend(extra);
        RunConfig::load(self.config.as_deref(), &sets)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train all curriculum stages and the band-unit fine-tune.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stages: Option<usize>,
        /// Classification-only baseline with the same epoch budget.
        #[arg(long)]
        baseline: bool,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Band-unit fine-tune of an existing checkpoint.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Certify the test split.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        theta: Option<f64>,
        /// Patch size such as `2x2`. Repeatable.
        #[arg(long)]
        patch: Vec<String>,
        /// `band_unit`, `masked_global` or `global`.
        #[arg(long)]
        engine: Option<String>,
        #[arg(long, default_value = "results.jsonl")]
        out: PathBuf,
    },
    /// Analytic FLOPs and certification wall-clock per engine.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test images to time.
        #[arg(long, default_value_t = 10)]
        images: usize,
    },
    /// Run the geometry, soundness, equivalence and attack oracles.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Without a checkpoint a freshly initialised model is used.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        tables: usize,
        #[arg(long, default_value_t = 100)]
        equivalence_cases: usize,
        #[arg(long, default_value_t = 200)]
        attack_trials: usize,
        #[arg(long)]
        attack_images: Option<usize>,
    },
    /// Print the effective configuration as TOML.
    ExportConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    let n = match threads {
        Some(n) => Some(n),
        None => match std::env::var("ECVIT_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| CliError::Usage(format!("ECVIT_THREADS=`{v}` is not a number")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn json(value: &impl serde::Serialize) -> String {
    serde_json::to_string(value).expect("serializable report")
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Train { common, stages, baseline, out } => {
            let extra = stages.map(|s| format!("train.stages={s}")).into_iter().collect();
            let cfg = common.load(extra)?;
            let outcome = commands::cmd_train(&cfg, &out, baseline)?;
            for m in outcome.metrics.iter().filter(|m| m.epoch == last_epoch(&outcome.metrics, m)) {
                println!(
                    "{:>8} {} epoch {:>3}: loss {:.4} (cls {:.4}, rec {:.4})",
                    m.phase, m.stage, m.epoch, m.mean_loss, m.mean_cls_loss, m.mean_rec_loss
                );
            }
            for c in &outcome.checkpoints {
                println!("wrote {}", c.display());
            }
        }
        Command::Finetune { common, checkpoint, out } => {
            let cfg = common.load(Vec::new())?;
            let path = commands::cmd_finetune(&cfg, &checkpoint, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Certify { common, checkpoint, theta, patch, engine, out } => {
            let mut extra = Vec::new();
            if let Some(t) = theta {
                extra.push(format!("certify.theta={t}"));
            }
            if !patch.is_empty() {
                let sides = patch.iter().map(|p| parse_patch(p)).collect::<Result<Vec<_>, _>>()?;
                extra.push(format!("certify.patches={sides:?}"));
            }
            if let Some(e) = engine {
                extra.push(format!("certify.engine=\"{e}\""));
            }
            let cfg = common.load(extra)?;
            let eval = commands::cmd_certify(&cfg, &checkpoint, &out)?;
            println!("{}", commands::summary_table(&cfg.certify_config(), &eval));
        }
        Command::Bench { common, checkpoint, images } => {
            let cfg = common.load(Vec::new())?;
            let r = commands::cmd_bench(&cfg, checkpoint.as_deref(), images)?;
            println!("{}", json(&r));
            eprintln!(
                "attention FLOP ratio {:.4} (predicted {:.4}), {} forwards vs {}, speedup {:.2}x",
                r.attention_flop_ratio, r.predicted_ratio, r.batched_forwards, r.naive_forwards, r.speedup
            );
        }
        Command::Oracle { common, checkpoint, tables, equivalence_cases, attack_trials, attack_images } => {
            let cfg = common.load(Vec::new())?;
            let opts = OracleOptions { tables, equivalence_cases, attack_trials, attack_images };
            commands::cmd_oracle(&cfg, checkpoint.as_deref(), &opts, &mut |r| println!("{}", json(r)))?;
        }
        Command::ExportConfig { common } => {
            print!("{}", common.load(Vec::new())?.to_toml());
        }
    }
    Ok(())
}

fn last_epoch(all: &[ecvit_core::psim::EpochMetrics], m: &ecvit_core::psim::EpochMetrics) -> usize {
    all.iter()
        .filter(|o| o.phase == m.phase && o.stage == m.stage)
        .map(|o| o.epoch)
        .max()
        .unwrap_or(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core { source, .. } = &e {
                let mut cause = std::error::Error::source(source);
                while let Some(c) = cause {
                    eprintln!("  caused by: {c}");
                    cause = c.source();
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
