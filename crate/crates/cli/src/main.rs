use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use maskcd::synthdata::PopeSplit;
use maskcd::trace::mask_to_string;
use maskcd::mask_stats;
use maskcd_cli::commands::{COUNTS_FILE, MASK_FILE};
use maskcd_cli::{Context, Overrides};

#[derive(Parser)]
#[command(name = "maskcd", version, about = "Image-head profiling and head-masked contrastive decoding")]
struct Cli {
    /// Run config (TOML).
    #[arg(long, global = true, default_value = "maskcd.toml")]
    config: PathBuf,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Image-head mask file.
    #[arg(long, global = true)]
    mask: Option<PathBuf>,
    #[arg(long, global = true)]
    split: Option<PopeSplit>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate evaluation scenes, profiling scenes and questions.
    Synth,
    /// Record image attention on the profiling corpus.
    Profile,
    /// Build an image-head mask.
    Mask {
        /// Count file (defaults to <out>/counts.txt).
        #[arg(long, conflicts_with_all = ["trace", "random_from"])]
        counts: Option<PathBuf>,
        /// Trace file, thresholded at tau.
        #[arg(long, conflicts_with = "random_from")]
        trace: Option<PathBuf>,
        /// Draw a random mask with as many heads as this mask.
        #[arg(long, requires = "seed")]
        random_from: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file (defaults to <out>/mask.txt).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Intersection over union of two masks' image heads.
    Overlap { a: PathBuf, b: PathBuf },
    /// Caption scenes and answer questions; contrastive when --mask is set.
    Decode {
        /// Output subdirectory (defaults to "maskcd" with a mask, else "baseline").
        #[arg(long)]
        label: Option<String>,
    },
    /// Score a decode directory.
    Eval {
        #[arg(long)]
        label: Option<String>,
    },
    /// Heatmap of normalized counts.
    Plot {
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Full pipeline.
    Run,
}

fn default_label(mask: &Option<PathBuf>) -> String {
    if mask.is_some() { "maskcd" } else { "baseline" }.to_string()
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        tau: cli.tau,
        alpha: cli.alpha,
        split: cli.split,
        workers: cli.workers,
        out_dir: cli.out.clone(),
    };
    let ctx = Context::load(&cli.config, &overrides)?;
    match cli.command {
        Command::Synth => {
            ctx.cmd_synth()?;
            println!("wrote scenes and questions to {}", ctx.config.out_dir.display());
        }
        Command::Profile => {
            let counts = ctx.cmd_profile()?;
            println!(
                "T={} L={} H={}",
                counts.total_tokens,
                counts.counts.layers(),
                counts.counts.heads()
            );
        }
        Command::Mask { counts, trace, random_from, seed, output } => {
            let mask = match (random_from, seed) {
                (Some(r), Some(s)) => ctx.cmd_random_mask(&r, s)?,
                (Some(_), None) => bail!("--random-from needs --seed"),
                _ => {
                    let counts = match (&counts, &trace) {
                        (None, None) => Some(ctx.out(COUNTS_FILE)),
                        _ => counts,
                    };
                    ctx.cmd_mask(counts.as_deref(), trace.as_deref())?
                }
            };
            let path = output.unwrap_or_else(|| ctx.out(MASK_FILE));
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&path, mask_to_string(&mask))?;
            println!("{} image heads ({}) -> {}", mask.num_image_heads(), mask_stats(&mask), path.display());
        }
        Command::Overlap { a, b } => {
            let o = ctx.cmd_overlap(&a, &b)?;
            println!("{o}");
        }
        Command::Decode { label } => {
            let mask = cli.mask.as_deref().map(|p| ctx.load_mask(p)).transpose()?;
            let label = label.unwrap_or_else(|| default_label(&cli.mask));
            let (captions, answers) = ctx.cmd_decode(mask.as_ref(), &label)?;
            println!("{} captions, {} answers -> {}", captions.len(), answers.len(), ctx.out(&label).display());
        }
        Command::Eval { label } => {
            let label = label.unwrap_or_else(|| default_label(&cli.mask));
            let report = ctx.cmd_eval(&label)?;
            print!("{}", report.to_key_value());
        }
        Command::Plot { counts } => {
            let counts = counts.unwrap_or_else(|| ctx.out(COUNTS_FILE));
            ctx.cmd_plot(&counts)?;
            println!("wrote heatmap.csv and heatmap.pgm to {}", ctx.config.out_dir.display());
        }
        Command::Run => {
            let summary = ctx.cmd_run()?;
            print!("{summary}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
