use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::{harmonic_mean, MetricsReport};
use super::tune::{evaluate, tune_prompts, TuneOutcome};
use crate::encoder::Backbone;
use crate::error::Result;
use crate::scenedata::{few_shot, few_shot_among, split_base_novel, subset_fraction, Dataset, Split};

/// How training data and evaluation classes are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Protocol {
    /// `shots` samples per class, scored on every test sample.
    FewShot { shots: usize },
    /// Train on half the classes, score both halves separately.
    BaseToNovel { shots: usize },
    /// A class-stratified fraction of the whole training split.
    Fraction { fraction: f64 },
}

/// Result of one protocol run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub outcome: TuneOutcome,
    pub report: MetricsReport,
    pub train: Vec<usize>,
    pub classes: Vec<usize>,
}

fn test_of(dataset: &Dataset, classes: &[usize]) -> Vec<usize> {
    dataset
        .indices(Split::Test)
        .into_iter()
        .filter(|&i| classes.contains(&dataset.samples[i].label()))
        .collect()
}

/// Classes whose texts the prompts see during training, and the training samples.
pub fn training_split(dataset: &Dataset, protocol: Protocol, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let all: Vec<usize> = (0..dataset.num_classes()).collect();
    Ok(match protocol {
        Protocol::FewShot { shots } => (few_shot(dataset, shots, seed)?, all),
        Protocol::Fraction { fraction } => (subset_fraction(dataset, fraction, seed)?, all),
        Protocol::BaseToNovel { shots } => {
            let (base, _) = split_base_novel(&dataset.spec, dataset.spec.partition_seed)?;
            (few_shot_among(dataset, &base, shots, seed)?, base)
        }
    })
}

/// Scores prompts (or zero-shot when `None`) under `protocol`.
pub fn score(
    backbone: &Backbone,
    prompts: Option<&crate::encoder::PromptSet>,
    dataset: &Dataset,
    protocol: Protocol,
) -> Result<MetricsReport> {
    match protocol {
        Protocol::BaseToNovel { .. } => {
            let (base, novel) = split_base_novel(&dataset.spec, dataset.spec.partition_seed)?;
            let b = evaluate(backbone, prompts, dataset, &test_of(dataset, &base), &base)?;
            let n = evaluate(backbone, prompts, dataset, &test_of(dataset, &novel), &novel)?;
            let (ba, na) = (b.accuracy.unwrap_or(0.0), n.accuracy.unwrap_or(0.0));
            Ok(MetricsReport {
                base_accuracy: Some(ba),
                novel_accuracy: Some(na),
                harmonic_mean: harmonic_mean(ba, na).ok(),
                ..MetricsReport::default()
            })
        }
        _ => {
            let all: Vec<usize> = (0..dataset.num_classes()).collect();
            evaluate(backbone, prompts, dataset, &dataset.indices(Split::Test), &all)
        }
    }
}

/// Tunes prompts under `protocol` with `config` and scores them.
pub fn run_protocol(backbone: &Backbone, dataset: &Dataset, protocol: Protocol, config: &TrainConfig) -> Result<RunResult> {
    let (train, classes) = training_split(dataset, protocol, config.seed)?;
    let outcome = tune_prompts(backbone, dataset, &train, &classes, config)?;
    let mut report = score(backbone, Some(&outcome.prompts), dataset, protocol)?;
    report.loss_trace = outcome.trace.clone();
    Ok(RunResult {
        outcome,
        report,
        train,
        classes,
    })
}
