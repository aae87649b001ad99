//! Command-line surface: config files in, run directories out.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_ablate, cmd_eval, cmd_pretrain, cmd_train, cmd_visualize, dataset, epochs_csv, load_backbone, overlay,
    AblateArtifacts, PretrainArtifacts, TrainArtifacts, TrainSummary, Visual, BACKBONE_FILE, EPOCHS_CSV, EVAL_JSON,
    PRETRAIN_CSV, PRETRAIN_JSON, PROMPTS_FILE, SUMMARY_JSON,
};
pub use config::{Overrides, RunConfig, WeightsPreset, RESOLVED_CONFIG};

use crate::error::Result;
use crate::trainer::{MaskOrigin, MaskStrategy};

#[derive(Debug, Parser)]
#[command(name = "dapt", about = "Prompt tuning with decoupled foreground and background views")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain a backbone from scratch.
    Pretrain(Common),
    /// Tune prompts on a pretrained backbone.
    Train {
        #[command(flatten)]
        common: Common,
        /// Backbone checkpoint (default: <out>/backbone.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score prompts (or the bare backbone) on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Prompt checkpoint; omitted means zero-shot.
        #[arg(long)]
        prompts: Option<PathBuf>,
    },
    /// Run an ablation plan over every configured seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// loss-items, erase, bg-classes, blur, triplet-terms or weight-<term>.
        #[arg(long)]
        plan: String,
        /// Also score activation-map overlap with the annotated foreground.
        #[arg(long)]
        cam_iou: bool,
    },
    /// Write activation heatmaps and mask overlays of test samples.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_mask_source)]
    pub mask_source: Option<MaskOrigin>,
    #[arg(long, value_parser = parse_mask_strategy)]
    pub mask_strategy: Option<MaskStrategy>,
    #[arg(long, value_enum)]
    pub weights_preset: Option<WeightsPreset>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub erase_rate: Option<f64>,
    #[arg(long)]
    pub bg_classes: Option<usize>,
    /// Run directory, replacing the config's `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_mask_source(s: &str) -> std::result::Result<MaskOrigin, String> {
    match s {
        "gradcam" => Ok(MaskOrigin::Gradcam),
        "oracle" => Ok(MaskOrigin::Oracle),
        _ => Err(format!("expected gradcam or oracle, got `{s}`")),
    }
}

fn parse_mask_strategy(s: &str) -> std::result::Result<MaskStrategy, String> {
    match s {
        "hard" => Ok(MaskStrategy::Hard),
        "blur" => Ok(MaskStrategy::Blur),
        _ => Err(format!("expected hard or blur, got `{s}`")),
    }
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let o = Overrides {
            seed: self.seed,
            mask_source: self.mask_source,
            mask_strategy: self.mask_strategy,
            weights_preset: self.weights_preset,
            shots: self.shots,
            fraction: self.fraction,
            erase_rate: self.erase_rate,
            bg_classes: self.bg_classes,
            out: self.out.clone(),
        };
        o.apply(RunConfig::load(&self.config)?)
    }
}

fn backbone_path(config: &RunConfig, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| config.out_dir.join(BACKBONE_FILE))
}

/// Executes a parsed command and reports what it wrote.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pretrain(common) => {
            let c = common.resolve()?;
            let a = cmd_pretrain(&c)?;
            println!("wrote {}", a.checkpoint.display());
        }
        Command::Train { common, checkpoint } => {
            let c = common.resolve()?;
            let a = cmd_train(&c, &backbone_path(&c, checkpoint))?;
            let r = &a.result.report;
            if let (Some(b), Some(n), Some(h)) = (r.base_accuracy, r.novel_accuracy, r.harmonic_mean) {
                println!("base {b:.2}  novel {n:.2}  hm {h:.2}");
            } else if let Some(acc) = r.accuracy {
                println!("accuracy {acc:.2}");
            }
            println!("wrote {}", a.prompts.display());
        }
        Command::Eval {
            common,
            checkpoint,
            prompts,
        } => {
            let c = common.resolve()?;
            let r = cmd_eval(&c, &backbone_path(&c, checkpoint), prompts.as_deref())?;
            println!("{}", serde_json::to_string(&r).expect("report serializes"));
        }
        Command::Ablate {
            common,
            checkpoint,
            plan,
            cam_iou,
        } => {
            let c = common.resolve()?;
            let a = cmd_ablate(&c, &backbone_path(&c, checkpoint), plan, *cam_iou)?;
            print!("{}", a.report.to_csv());
            println!("wrote {}", a.csv.display());
        }
        Command::Visualize {
            common,
            checkpoint,
            prompts,
            count,
        } => {
            let c = common.resolve()?;
            let v = cmd_visualize(&c, &backbone_path(&c, checkpoint), prompts.as_deref(), *count)?;
            println!("wrote {} heatmaps and overlays", v.len());
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
