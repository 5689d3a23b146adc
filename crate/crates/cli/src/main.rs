//! `sit`: command-line driver for the surface vision transformer toolkit.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sit_core::error::{Error, ErrorClass, Result};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "sit", version, about = "Surface vision transformer toolkit")]
struct Cli {
    /// Master seed. Overrides the `seed` key of config and spec files.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads. Overrides the `threads` key; 1 gives bitwise
    /// reproducible runs. Defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress to stderr (`-v` info, `-vv` debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the icosphere of a given order as an SMESH file.
    Icosphere {
        #[arg(long)]
        order: u32,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write the patch table of a fine icosphere cut along a coarse one.
    ///
    /// The output is text: a `patch_table <high> <low> <patches>
    /// <vertices_per_patch>` header, then one line of vertex indices per
    /// patch.
    PatchTable {
        #[arg(long, default_value_t = 6)]
        high: u32,
        #[arg(long, default_value_t = 2)]
        low: u32,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Resample an SSIG signal from one SMESH mesh onto another.
    Resample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        dst: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate a synthetic dataset: mesh, signals, manifest.csv and the
    /// resolved spec.
    #[command(after_long_help = commands::synth_help())]
    Synth {
        /// Spec file of `key=value` lines; omitted keys take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Masked-patch-prediction pretraining.
    #[command(after_long_help = commands::config_help())]
    Pretrain(TrainArgs),
    /// Supervised regression training or fine-tuning.
    #[command(after_long_help = commands::config_help())]
    Train {
        #[command(flatten)]
        args: TrainArgs,
        /// Initialize from a checkpoint (usually a pretrained one). Switches
        /// unset lr, warmup_epochs and epochs to their fine-tuning defaults.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Train only the regression head.
        #[arg(long)]
        freeze_backbone: bool,
    },
    /// Predict every row of a manifest with a trained checkpoint.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Per-head attention rollout painted on the icosphere, written as SSIG
    /// (one channel per head).
    Attention {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Example id `<subject>_<L|R>`.
        #[arg(long, required_unless_present = "average")]
        example: Option<String>,
        /// Propagate attention across layers from the regression token (the
        /// only supported method; accepted for explicitness).
        #[arg(long)]
        rollout: bool,
        /// Zero entries below this quantile of each head's map.
        #[arg(long)]
        threshold: Option<f64>,
        /// Average the maps of every example in this split instead.
        #[arg(long, value_name = "SPLIT")]
        average: Option<String>,
        /// Also write an equirectangular PNG unfolding, one band per head.
        #[arg(long)]
        png: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Config file of `key=value` lines. Relative `manifest` and `out_dir`
    /// paths resolve against the config file's directory.
    #[arg(long)]
    config: PathBuf,
    /// Extra `key=value` overrides applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = commands::Globals {
        seed: cli.seed,
        threads: cli.threads,
    };
    if g.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Icosphere { order, output } => commands::icosphere(order, &output),
        Command::PatchTable { high, low, output } => commands::patch_table(high, low, &output),
        Command::Resample { input, src, dst, output } => commands::resample(&input, &src, &dst, &output),
        Command::Synth { spec, output } => commands::synth(&g, spec.as_deref(), &output),
        Command::Pretrain(a) => commands::pretrain(&g, &a.config, &a.overrides),
        Command::Train { args, from, freeze_backbone } => {
            commands::train(&g, &args.config, &args.overrides, from.as_deref(), freeze_backbone)
        }
        Command::Predict { ckpt, manifest, output } => commands::predict(&g, &ckpt, &manifest, &output),
        Command::Attention {
            ckpt,
            manifest,
            example,
            rollout: _,
            threshold,
            average,
            png,
            output,
        } => commands::attention(
            &g,
            &commands::AttentionRequest {
                ckpt: &ckpt,
                manifest: &manifest,
                example: example.as_deref(),
                threshold,
                average: average.as_deref(),
                png: png.as_deref(),
                output: &output,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}
