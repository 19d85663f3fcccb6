use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use leanstereo::commands::{self, BenchTarget, EXIT_USAGE};
use leanstereo::config::RunConfig;
use leanstereo::data::Split;
use leanstereo::Result;

#[derive(Parser)]
#[command(
    name = "leanstereo",
    version,
    about = "Train, evaluate and profile the LeanStereo network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value config file; a `preset` key selects default, desk or kitti.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root (overrides data.root).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Compute device; falls back to LEANSTEREO_DEVICE, then the config.
    #[arg(long)]
    device: Option<String>,
    /// Config override, repeatable (e.g. --set loss.kind=smooth_l1).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(root) = &self.dataset {
            overrides.push(format!("data.root={}", root.display()));
        }
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={}", seed));
        }
        let mut cfg = RunConfig::load(self.config.as_deref(), &overrides)?;
        commands::apply_device(&mut cfg, self.device.as_deref())?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and write checkpoints, the loss curve and the resolved config.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pooled metrics of a checkpoint on a dataset split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict one pair; writes PFM and PNG disparity, plus an error map with --gt.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        /// Ground truth as PFM or 16-bit KITTI PNG.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        device: Option<String>,
    },
    /// Parameter and MAC report at profile.size.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inference latency under the warm-up / timed / repeated-run protocol.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Time a constant-latency stub instead of the network.
        #[arg(long, value_name = "MS", hide = true)]
        stub_ms: Option<f64>,
    },
    /// Write a synthetic stereo dataset (PNG pairs, PFM ground truth).
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
    },
}

fn write_report(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| leanstereo::Error::io(format!("creating {}", dir.display()), e))?;
        let path = dir.join(name);
        std::fs::write(&path, text)
            .map_err(|e| leanstereo::Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            common,
            out,
            checkpoint,
        } => {
            let cfg = common.resolve()?;
            let s = commands::train(&cfg, &out, checkpoint.as_deref())?;
            if let Some((it, r)) = s.validations.last() {
                println!("iteration {}\n{}", it, r.to_table());
            }
        }
        Command::Evaluate {
            common,
            checkpoint,
            split,
            out,
        } => {
            let cfg = common.resolve()?;
            let o = commands::evaluate_checkpoint(&cfg, &checkpoint, split, out.as_deref())?;
            print!("{}", o.pooled.to_table());
        }
        Command::Infer {
            checkpoint,
            left,
            right,
            gt,
            out,
            device,
        } => {
            let mut cfg = RunConfig::default();
            commands::apply_device(&mut cfg, device.as_deref())?;
            let o = commands::infer(&checkpoint, &left, &right, gt.as_deref(), &out)?;
            if let Some(m) = o.metrics {
                print!("{}", m.to_table());
            }
        }
        Command::Profile {
            common,
            checkpoint,
            out,
        } => {
            let cfg = common.resolve()?;
            let r = commands::profile(&cfg, checkpoint.as_deref())?;
            print!("{}", r.to_text());
            write_report(
                out.as_deref(),
                "profile.txt",
                &format!("{}\n{}", r.to_text(), r.to_records()),
            )?;
        }
        Command::Benchmark {
            common,
            checkpoint,
            out,
            stub_ms,
        } => {
            let cfg = common.resolve()?;
            let target = match stub_ms {
                Some(ms) => BenchTarget::Stub(Duration::from_secs_f64(ms.max(0.0) / 1e3)),
                None => BenchTarget::Model(checkpoint.as_deref()),
            };
            let r = commands::benchmark(&cfg, target)?;
            print!("{}", r.to_records());
            write_report(out.as_deref(), "benchmark.txt", &r.to_records())?;
        }
        Command::Synth { common, out, split } => {
            let cfg = common.resolve()?;
            let dir = commands::synth(&cfg, &out, split)?;
            println!("wrote {} pairs to {}", cfg.data.synth_count, dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
