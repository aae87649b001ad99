//! Miniature dual encoder with coupled deep prompts.

mod backbone;
pub mod checkpoint;
mod config;
mod pretrain;
mod prompts;

use std::collections::BTreeMap;
use std::path::Path;

pub use backbone::{patchify, weight_shapes, Backbone, BackboneVars, ImageEncoding};
pub use config::{DeepPromptMode, EncoderConfig};
pub use pretrain::{held_out_zero_shot, pretrain_contrastive, zero_shot_accuracy, PretrainConfig, PretrainReport};
pub use prompts::{PromptSet, PromptVars};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const BACKBONE_KIND: &str = "backbone";
const PROMPT_KIND: &str = "prompts";

#[derive(serde::Serialize, serde::Deserialize)]
struct Meta {
    kind: String,
    encoder: EncoderConfig,
}

fn meta(kind: &str, config: &EncoderConfig) -> String {
    serde_json::to_string(&Meta {
        kind: kind.into(),
        encoder: config.clone(),
    })
    .expect("config serializes")
}

fn parse_meta(path: &Path, text: &str, kind: &str) -> Result<EncoderConfig> {
    let m: Meta = serde_json::from_str(text).map_err(|e| Error::format(path, format!("bad metadata: {e}")))?;
    if m.kind != kind {
        return Err(Error::format(path, format!("holds {}, expected {kind}", m.kind)));
    }
    Ok(m.encoder)
}

const CONTEXT_PREFIX: &str = "context.";

impl Backbone {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays = self.weights().clone();
        if let Some(p) = self.context_prompts() {
            for (k, v) in p.arrays() {
                arrays.insert(format!("{CONTEXT_PREFIX}{k}"), v);
            }
        }
        checkpoint::encode_arrays(&meta(BACKBONE_KIND, self.config()), &arrays)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (m, arrays) = checkpoint::load_arrays(path)?;
        let config = parse_meta(path, &m, BACKBONE_KIND)?;
        let (context, weights): (BTreeMap<_, _>, BTreeMap<_, _>) =
            arrays.into_iter().partition(|(k, _)| k.starts_with(CONTEXT_PREFIX));
        let mut backbone = Backbone::from_weights(config.clone(), weights)?;
        if !context.is_empty() {
            let arrays = context
                .into_iter()
                .map(|(k, v)| (k[CONTEXT_PREFIX.len()..].to_string(), v))
                .collect();
            backbone.set_context_prompts(Some(PromptSet::from_arrays(path, arrays, &config)?))?;
        }
        Ok(backbone)
    }
}

impl PromptSet {
    fn arrays(&self) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = self
            .text
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("text.{i:02}"), t.clone()))
            .collect();
        out.insert("coupling".into(), self.coupling.clone());
        out
    }

    pub fn to_bytes(&self, config: &EncoderConfig) -> Vec<u8> {
        checkpoint::encode_arrays(&meta(PROMPT_KIND, config), &self.arrays())
    }

    pub fn save(&self, path: &Path, config: &EncoderConfig) -> Result<()> {
        checkpoint::write_atomic(path, &self.to_bytes(config))
    }

    /// Loads prompts and checks them against the encoder they will drive.
    pub fn load(path: &Path, config: &EncoderConfig) -> Result<Self> {
        let (m, arrays) = checkpoint::load_arrays(path)?;
        let saved = parse_meta(path, &m, PROMPT_KIND)?;
        if &saved != config {
            return Err(Error::Config(format!(
                "prompts in {} were trained for a different encoder",
                path.display()
            )));
        }
        PromptSet::from_arrays(path, arrays, config)
    }

    fn from_arrays(path: &Path, mut arrays: BTreeMap<String, Tensor>, config: &EncoderConfig) -> Result<Self> {
        let coupling = arrays
            .remove("coupling")
            .ok_or_else(|| Error::format(path, "no coupling array"))?;
        let text = arrays.into_values().collect();
        let p = PromptSet { text, coupling };
        p.check(config)?;
        Ok(p)
    }
}

/// Class probabilities `softmax(Z_T · z / τ)` for one unit image feature.
pub fn zero_shot_predict(image_feature: &[f64], class_features: &Tensor, temperature: f64) -> Result<Vec<f64>> {
    let k = class_features.rows();
    if k == 0 || class_features.cols() != image_feature.len() {
        return Err(Error::Shape(format!(
            "feature of {} against class matrix {:?}",
            image_feature.len(),
            class_features.shape()
        )));
    }
    let logits: Vec<f64> = (0..k)
        .map(|j| class_features.row(j).iter().zip(image_feature).map(|(a, b)| a * b).sum::<f64>() / temperature)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `sims[i][j] = a_i · b_j` for unit rows.
pub fn similarity(a: &Tensor, b: &Tensor) -> Tensor {
    let tape = Tape::new();
    let s = tape.constant(a.clone()).matmul(tape.constant(b.clone()).transpose());
    (*s.value()).clone()
}

/// Symmetric contrastive loss over matched rows of `images` and `texts`.
pub fn symmetric_info_nce<'t>(images: Var<'t>, texts: Var<'t>, temperature: f64) -> Var<'t> {
    let b = images.value().rows();
    let diag: Vec<usize> = (0..b).collect();
    let logits = images.matmul(texts.transpose()).scale(1.0 / temperature);
    let i2t = logits.log_softmax().pick_per_row(&diag).mean();
    let t2i = logits.transpose().log_softmax().pick_per_row(&diag).mean();
    i2t.add(t2i).scale(-0.5)
}
