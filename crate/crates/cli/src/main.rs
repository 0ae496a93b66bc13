use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pplab::cli::{self, RunArgs, Shots, TransferArgs};
use pplab::harness::MethodKind;
use pplab::{exec, Error};

/// Progressive soft-prompt experiments on a small frozen encoder.
#[derive(Parser, Debug)]
#[command(name = "pplab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pretrain the base encoder and write a frozen checkpoint.
    Pretrain {
        config: PathBuf,
    },
    /// Train a method over a task order and write results.
    Run {
        config: PathBuf,
        #[arg(long)]
        order: String,
        /// progressive | per-task | shared | finetune
        #[arg(long)]
        method: MethodKind,
        /// Training examples per class, or "all".
        #[arg(long, default_value = "all")]
        samples_per_class: Shots,
        #[arg(long)]
        seed: Option<u64>,
        /// Results directory (default: under the configured results dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prompt-to-prompt attention matrix of a checkpoint.
    Attn {
        checkpoint: PathBuf,
        /// Directory holding <task>/test.jsonl probe sets.
        dataset_dir: PathBuf,
        /// 0-based encoder layer (default: last).
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single 2M prompt versus two progressive M prompts on a task pair.
    TransferPair {
        config: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// 2 | 5 | 20 | all
        #[arg(long, default_value = "5")]
        shots: Shots,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// First seed; seeds run as seed, seed+1, ...
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn threads() -> Result<usize, String> {
    match std::env::var("PPLAB_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("PPLAB_THREADS must be a positive integer, got {v:?}")),
        },
    }
}

fn execute(cmd: Command) -> pplab::Result<()> {
    match cmd {
        Command::Pretrain { config } => {
            let (path, report) = cli::cmd_pretrain(&config)?;
            println!("wrote {}", path.display());
            println!(
                "pretrain: {} epochs, final train loss {:.4}",
                report.epochs, report.final_train_loss
            );
            for (i, a) in report.heldout_accuracy.iter().enumerate() {
                println!("  pretext task {i}: held-out accuracy {a:.4}");
            }
            if !report.heldout_accuracy.is_empty() {
                println!("  mean held-out accuracy {:.4}", report.mean_heldout_accuracy());
            }
        }
        Command::Run {
            config,
            order,
            method,
            samples_per_class,
            seed,
            out,
        } => {
            let samples_per_class = match samples_per_class {
                Shots::PerClass(n) => Some(n),
                Shots::All => None,
            };
            let s = cli::cmd_run(&RunArgs {
                config,
                order,
                method,
                samples_per_class,
                seed,
                out,
            })?;
            println!("wrote {}", s.dir.display());
            println!("max epochs per stage: {}", s.max_epochs);
            println!("average accuracy {:.4}", s.matrix.average_accuracy()?);
            if s.matrix.values.len() > 1 {
                println!("backward transfer {:.4}", s.matrix.backward_transfer()?);
                if s.matrix.baseline.is_some() {
                    println!("forward transfer {:.4}", s.matrix.forward_transfer()?);
                }
            }
        }
        Command::Attn {
            checkpoint,
            dataset_dir,
            layer,
            out,
        } => {
            let (path, m) = cli::cmd_attn(&checkpoint, &dataset_dir, layer, out.as_deref())?;
            println!("wrote {} ({}x{}, {} probes)", path.display(), m.names.len(), m.names.len(), m.probes);
        }
        Command::TransferPair {
            config,
            source,
            target,
            shots,
            seeds,
            seed,
            out,
        } => {
            let r = cli::cmd_transfer_pair(&TransferArgs {
                config,
                source,
                target,
                shots,
                seeds,
                seed,
                out,
            })?;
            println!("wrote {}", r.path.display());
            for row in &r.rows {
                println!(
                    "  seed {}: single {:.4} progressive {:.4} ({:+.1}%)",
                    row.seed,
                    row.single,
                    row.progressive,
                    100.0 * row.relative_improvement()
                );
            }
            println!(
                "sign test: {}+ / {}- / {}=, one-sided p {:.4}, two-sided p {:.4}",
                r.one_sided.positive, r.one_sided.negative, r.one_sided.ties, r.one_sided.p_value, r.two_sided.p_value
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let n = match threads() {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    match exec::with_threads(n, || execute(args.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Unknown order/method names are usage errors.
            if matches!(e, Error::UnknownName { .. }) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
