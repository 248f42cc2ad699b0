mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] soh_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Parser, Debug)]
#[command(name = "soh", version, about = "Battery state-of-health prediction with a patch transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON settings file, or a previous run.json.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any setting, e.g. `--set patience=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Debug, Clone, Default)]
struct ModelFlags {
    /// Full-size model instead of the desk-scale default.
    #[arg(long)]
    paper_config: bool,
    #[arg(long)]
    depth: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the cell fleet and write per-cell cycle CSVs plus a manifest.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cells: Option<usize>,
        #[arg(long)]
        max_cycles: Option<u32>,
        #[arg(long)]
        cycle_stride: Option<u32>,
        /// Disable sensor noise.
        #[arg(long)]
        no_noise: bool,
    },
    /// Build the windowed, scaled and split dataset from a fleet.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fleet: PathBuf,
        /// raw or supplementary.
        #[arg(long)]
        channels: Option<String>,
        #[arg(long)]
        v_low: Option<f64>,
        #[arg(long)]
        v_high: Option<f64>,
        /// Discretization points per channel.
        #[arg(long)]
        lv: Option<usize>,
        /// Source training ratio.
        #[arg(long)]
        rt: Option<f64>,
        /// Comma-separated target cell ids.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<u32>>,
        /// Leading target cycles reserved for fine-tuning.
        #[arg(long)]
        cycles: Option<usize>,
    },
    /// Train on the source task with early stopping.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        /// Epoch budget.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Freeze the encoder and fine-tune the head per target cell.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Source checkpoint directory.
        #[arg(long)]
        model: PathBuf,
        /// Leading target cycles to fine-tune on.
        #[arg(long)]
        cycles: Option<usize>,
        /// Fine-tuning epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Shorter fine-tuning.
        #[arg(long)]
        fast: bool,
        /// fixed or update.
        #[arg(long)]
        head_norm: Option<String>,
    },
    /// Score a checkpoint on one split of a dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "source_test")]
        split: String,
    },
    /// Repeat source training over a one-factor grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// depth, granularity, ratio or channels.
        #[arg(long)]
        kind: String,
        /// Fleet directory; simulated from the settings when omitted.
        #[arg(long)]
        fleet: Option<PathBuf>,
        /// Comma-separated grid values; the standard grid when omitted.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Epoch budget per run.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        channels: Option<String>,
        #[arg(long)]
        lv: Option<usize>,
        #[arg(long)]
        rt: Option<f64>,
    },
}

/// Collects the flags that were actually given.
#[derive(Default)]
struct Flags(Map<String, Value>);

impl Flags {
    fn opt<T: serde::Serialize>(mut self, key: &str, v: Option<T>) -> Self {
        if let Some(v) = v {
            self.0.insert(key.into(), json!(v));
        }
        self
    }

    fn on(mut self, key: &str, set: bool, v: Value) -> Self {
        if set {
            self.0.insert(key.into(), v);
        }
        self
    }

    fn model(self, m: &ModelFlags) -> Self {
        self.on("paper_config", m.paper_config, json!(true)).opt("depth", m.depth)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    use settings::Settings;
    let resolve = |c: &Common, f: Flags| Settings::resolve(c.config.as_deref(), &c.sets, f.opt("seed", c.seed).0);
    match cli.command {
        Command::Generate {
            common,
            cells,
            max_cycles,
            cycle_stride,
            no_noise,
        } => {
            let f = Flags::default()
                .opt("cells", cells)
                .opt("max_cycles", max_cycles)
                .opt("cycle_stride", cycle_stride)
                .on("noise", no_noise, json!(false));
            commands::generate(&resolve(&common, f)?, &common.out)
        }
        Command::Preprocess {
            common,
            fleet,
            channels,
            v_low,
            v_high,
            lv,
            rt,
            targets,
            cycles,
        } => {
            let f = Flags::default()
                .opt("channels", channels)
                .opt("v_low", v_low)
                .opt("v_high", v_high)
                .opt("lv", lv)
                .opt("rt", rt)
                .opt("targets", targets)
                .opt("cycles", cycles);
            commands::preprocess(&resolve(&common, f)?, &fleet, &common.out)
        }
        Command::Train {
            common,
            data,
            model,
            epochs,
            patience,
        } => {
            let f = Flags::default()
                .model(&model)
                .opt("max_epochs", epochs)
                .opt("patience", patience);
            commands::train(&resolve(&common, f)?, &data, &common.out)
        }
        Command::Transfer {
            common,
            data,
            model,
            cycles,
            epochs,
            fast,
            head_norm,
        } => {
            let epochs = epochs.or(fast.then_some(settings::FAST_FINE_TUNE_EPOCHS));
            let f = Flags::default()
                .opt("cycles", cycles)
                .opt("ft_epochs", epochs)
                .opt("head_norm", head_norm);
            commands::transfer(&resolve(&common, f)?, &data, &model, &common.out)
        }
        Command::Evaluate {
            common,
            data,
            model,
            split,
        } => {
            let split = split.parse()?;
            commands::evaluate(&resolve(&common, Flags::default())?, &data, &model, split, &common.out)
        }
        Command::Sweep {
            common,
            kind,
            fleet,
            grid,
            repeats,
            epochs,
            threads,
            model,
            channels,
            lv,
            rt,
        } => {
            let f = Flags::default()
                .model(&model)
                .opt("repeats", repeats)
                .opt("max_epochs", epochs)
                .opt("threads", threads)
                .opt("channels", channels)
                .opt("lv", lv)
                .opt("rt", rt);
            let kind = kind.parse()?;
            commands::sweep(&resolve(&common, f)?, kind, fleet.as_deref(), grid.as_deref(), &common.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
