use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use crate::disentangle::io::{write_pgm, write_ppm};
use crate::disentangle::{gradcam_maps, Upsample};
use crate::encoder::checkpoint::write_atomic;
use crate::encoder::{pretrain_contrastive, Backbone, PromptSet};
use crate::error::{Error, Result};
use crate::scenedata::{generate, Dataset, Split};
use crate::trainer::{
    class_texts, run_ablation, run_protocol, score, AblationPlan, AblationReport, AblationSetup, EpochRecord,
    MetricsReport,
};

pub const BACKBONE_FILE: &str = "backbone.ckpt";
pub const PROMPTS_FILE: &str = "prompts.ckpt";
pub const PRETRAIN_CSV: &str = "pretrain_metrics.csv";
pub const PRETRAIN_JSON: &str = "pretrain_summary.json";
pub const EPOCHS_CSV: &str = "epochs.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const EVAL_JSON: &str = "eval.json";

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Missing(path.to_path_buf()))
    }
}

/// Backbone at `path`, checked against the encoder the config describes.
pub fn load_backbone(config: &RunConfig, path: &Path) -> Result<Backbone> {
    require(path)?;
    let b = Backbone::load(path)?;
    if b.config() != &config.encoder {
        return Err(Error::Config(format!(
            "checkpoint {} was built for a different encoder than the config describes",
            path.display()
        )));
    }
    Ok(b)
}

pub fn dataset(config: &RunConfig) -> Result<Dataset> {
    generate(&config.dataset, config.dataset_seed)
}

pub fn epochs_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,cls,visual,foreground,background\n");
    for r in trace {
        writeln!(
            out,
            "{},{:.10},{:.10},{:.10},{:.10},{:.10}",
            r.epoch, r.loss, r.cls, r.visual, r.foreground, r.background
        )
        .unwrap();
    }
    out
}

/// Artifacts of `pretrain`.
#[derive(Clone, Debug)]
pub struct PretrainArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub summary: PathBuf,
}

pub fn cmd_pretrain(config: &RunConfig) -> Result<PretrainArtifacts> {
    config.echo()?;
    let (backbone, report) = pretrain_contrastive(&config.encoder, &config.pretrain)?;
    let dir = &config.out_dir;
    let checkpoint = dir.join(BACKBONE_FILE);
    backbone.save(&checkpoint)?;
    let mut csv = String::from("epoch,train_loss,probe_loss\n");
    for (e, (l, p)) in report.epoch_loss.iter().zip(&report.probe_loss).enumerate() {
        writeln!(csv, "{e},{l:.10},{p:.10}").unwrap();
    }
    let metrics = dir.join(PRETRAIN_CSV);
    write_text(&metrics, &csv)?;
    let summary = dir.join(PRETRAIN_JSON);
    write_json(&summary, &report)?;
    log::info!("zero-shot accuracy {:.2}%", report.zero_shot_accuracy);
    Ok(PretrainArtifacts {
        checkpoint,
        metrics,
        summary,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub pseudo_label_accuracy: Option<f64>,
    pub report: MetricsReport,
}

/// Artifacts of `train`.
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub prompts: PathBuf,
    pub epochs: PathBuf,
    pub summary: PathBuf,
    pub result: TrainSummary,
}

pub fn cmd_train(config: &RunConfig, backbone: &Path) -> Result<TrainArtifacts> {
    let bb = load_backbone(config, backbone)?;
    config.echo()?;
    let data = dataset(config)?;
    let run = run_protocol(&bb, &data, config.protocol, &config.train)?;
    let dir = &config.out_dir;
    let prompts = dir.join(PROMPTS_FILE);
    run.outcome.prompts.save(&prompts, bb.config())?;
    let epochs = dir.join(EPOCHS_CSV);
    write_text(&epochs, &epochs_csv(&run.outcome.trace))?;
    let result = TrainSummary {
        seed: config.train.seed,
        pseudo_label_accuracy: run.outcome.pseudo_label_accuracy,
        report: run.report,
    };
    let summary = dir.join(SUMMARY_JSON);
    write_json(&summary, &result)?;
    Ok(TrainArtifacts {
        prompts,
        epochs,
        summary,
        result,
    })
}

/// Prompts at `path`, or the backbone's own starting prompts without one.
fn load_prompts(bb: &Backbone, path: Option<&Path>) -> Result<Option<PromptSet>> {
    path.map(|p| {
        require(p)?;
        PromptSet::load(p, bb.config())
    })
    .transpose()
}

pub fn cmd_eval(config: &RunConfig, backbone: &Path, prompts: Option<&Path>) -> Result<MetricsReport> {
    let bb = load_backbone(config, backbone)?;
    let p = load_prompts(&bb, prompts)?;
    config.echo()?;
    let data = dataset(config)?;
    let report = score(&bb, p.as_ref(), &data, config.protocol)?;
    write_json(&config.out_dir.join(EVAL_JSON), &report)?;
    Ok(report)
}

/// Artifacts of `ablate`.
#[derive(Clone, Debug)]
pub struct AblateArtifacts {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub report: AblationReport,
}

pub fn cmd_ablate(config: &RunConfig, backbone: &Path, plan: &str, cam_iou: bool) -> Result<AblateArtifacts> {
    let bb = load_backbone(config, backbone)?;
    let plan = AblationPlan::named(plan, &config.train.weights)?;
    plan.resolve(&config.train)?;
    config.echo()?;
    let data = dataset(config)?;
    let setup = AblationSetup {
        backbone: &bb,
        dataset: &data,
        protocol: config.protocol,
        seeds: config.seeds.clone(),
        cam_iou,
    };
    let report = run_ablation(&plan, &config.train, &setup)?;
    let csv = config.out_dir.join(format!("ablation-{}.csv", plan.name));
    write_text(&csv, &report.to_csv())?;
    let json = config.out_dir.join(format!("ablation-{}.json", plan.name));
    write_json(&json, &report)?;
    Ok(AblateArtifacts { csv, json, report })
}

/// Heatmap and overlay paths of one visualized sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Visual {
    pub sample: usize,
    pub heatmap: PathBuf,
    pub overlay: PathBuf,
}

/// Image with the thresholded activation region tinted red and the rest dimmed.
pub fn overlay(image: &[f64], flags: &[u8]) -> Vec<f64> {
    let n = flags.len();
    let mut out = image.to_vec();
    for (i, &f) in flags.iter().enumerate() {
        for ch in 0..3 {
            let v = image[ch * n + i];
            out[ch * n + i] = if f == 1 {
                if ch == 0 {
                    0.5 + 0.5 * v
                } else {
                    0.5 * v
                }
            } else {
                0.35 * v
            };
        }
    }
    out
}

pub fn cmd_visualize(config: &RunConfig, backbone: &Path, prompts: Option<&Path>, count: usize) -> Result<Vec<Visual>> {
    let bb = load_backbone(config, backbone)?;
    let p = load_prompts(&bb, prompts)?;
    config.echo()?;
    let data = dataset(config)?;
    let classes: Vec<usize> = (0..data.num_classes()).collect();
    let texts = class_texts(&data, &classes)?;
    let picks: Vec<usize> = data.indices(Split::Test).into_iter().take(count).collect();
    let images: Vec<_> = picks.iter().map(|&i| data.samples[i].image()).collect();
    let targets: Vec<Vec<usize>> = picks.iter().map(|&i| data.samples[i].labels.clone()).collect();
    let maps = gradcam_maps(&bb, p.as_ref(), &images, &targets, &texts, Upsample::Bilinear)?;
    let dir = config.out_dir.join("visualize");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let size = bb.config().image_size;
    let mut out = Vec::with_capacity(picks.len());
    for ((&i, m), im) in picks.iter().zip(&maps).zip(&images) {
        let heatmap = dir.join(format!("cam-{i:05}.pgm"));
        write_pgm(&heatmap, size, size, &m.pixel)?;
        let overlay_path = dir.join(format!("overlay-{i:05}.ppm"));
        let flags = m.to_mask(config.train.beta)?.flags();
        write_ppm(&overlay_path, size, size, &overlay(im.data(), &flags))?;
        out.push(Visual {
            sample: i,
            heatmap,
            overlay: overlay_path,
        });
    }
    Ok(out)
}
