//! Alignment objectives over unit features.
//!
//! Every logit is a cosine similarity divided by the temperature `τ`.

use serde::{Deserialize, Serialize};

use crate::autograd::{l1_rows, Tensor, Var};
use crate::encoder::{argmax, similarity, Backbone};
use crate::error::{Error, Result};
use crate::scenedata::{render_background, TokenId, Tokenizer, BACKGROUND_CLASSES};

/// Coefficients of the composite objective and the triplet margin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub visual: f64,
    pub foreground: f64,
    pub background: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::few_shot()
    }
}

impl LossWeights {
    pub fn few_shot() -> Self {
        LossWeights {
            cls: 1.0,
            visual: 0.6,
            foreground: 0.4,
            background: 0.1,
            margin: 5.0,
        }
    }

    pub fn base_to_novel() -> Self {
        LossWeights {
            visual: 0.4,
            background: 0.5,
            ..Self::few_shot()
        }
    }

    /// Classification term only.
    pub fn baseline() -> Self {
        LossWeights {
            visual: 0.0,
            foreground: 0.0,
            background: 0.0,
            ..Self::few_shot()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cls", self.cls),
            ("visual", self.visual),
            ("foreground", self.foreground),
            ("background", self.background),
            ("margin", self.margin),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Contract(format!("loss weight `{name}` must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which distances enter the triplet hinge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripletTerms {
    /// Pull toward the foreground and push from the background.
    Both,
    /// Pull toward the foreground only.
    ForegroundPositive,
    /// Push from the background only.
    BackgroundNegative,
}

/// Background class names with their prompt texts.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundSpace {
    pub names: Vec<String>,
    pub tokens: Vec<Vec<TokenId>>,
}

impl BackgroundSpace {
    /// The first `k_b` standard background classes.
    pub fn standard(k_b: usize) -> Result<Self> {
        if k_b == 0 || k_b > BACKGROUND_CLASSES.len() {
            return Err(Error::Contract(format!(
                "background space size must be in 1..={}, got {k_b}",
                BACKGROUND_CLASSES.len()
            )));
        }
        Self::from_names(BACKGROUND_CLASSES[..k_b].iter().map(|s| s.to_string()).collect())
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Contract("empty background space".into()));
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::Contract("background class names must be unique".into()));
        }
        let tok = Tokenizer::standard();
        let tokens = names
            .iter()
            .map(|n| tok.tokenize(&render_background(n)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BackgroundSpace { names, tokens })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Unprompted text features `Z_U`, `[k_b, d]`.
    pub fn unprompted_features(&self, backbone: &Backbone) -> Result<Tensor> {
        backbone.encode_texts(&self.tokens, None)
    }
}

/// Mean cross-entropy of `softmax(f · cᵀ / τ)` at `labels`.
pub fn cross_entropy<'t>(features: Var<'t>, classes: Var<'t>, labels: &[usize], temperature: f64) -> Result<Var<'t>> {
    let (b, k) = (features.value().rows(), classes.value().rows());
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} features", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Shape(format!("label {bad} with {k} classes")));
    }
    let logits = features.matmul(classes.transpose()).scale(1.0 / temperature);
    Ok(logits.log_softmax().pick_per_row(labels).mean().scale(-1.0))
}

/// Classification loss of prompted image features against class texts.
pub fn loss_cls<'t>(images: Var<'t>, class_texts: Var<'t>, labels: &[usize], temperature: f64) -> Result<Var<'t>> {
    cross_entropy(images, class_texts, labels, temperature)
}

/// Same objective as [`loss_cls`] applied to foreground-view features.
pub fn loss_f<'t>(foregrounds: Var<'t>, class_texts: Var<'t>, labels: &[usize], temperature: f64) -> Result<Var<'t>> {
    cross_entropy(foregrounds, class_texts, labels, temperature)
}

/// Background-view features against background-class texts at fixed pseudo-labels.
pub fn loss_b<'t>(backgrounds: Var<'t>, bg_texts: Var<'t>, pseudo: &[usize], temperature: f64) -> Result<Var<'t>> {
    cross_entropy(backgrounds, bg_texts, pseudo, temperature)
}

/// Most similar background class per row, lowest index on ties.
pub fn assign_bg_pseudo(backgrounds: &Tensor, bg_texts: &Tensor) -> Result<Vec<usize>> {
    if bg_texts.rows() == 0 {
        return Err(Error::Contract("empty background space".into()));
    }
    if backgrounds.cols() != bg_texts.cols() {
        return Err(Error::Shape(format!(
            "features {:?} against background texts {:?}",
            backgrounds.shape(),
            bg_texts.shape()
        )));
    }
    let sims = similarity(backgrounds, bg_texts);
    Ok((0..sims.rows()).map(|r| argmax(sims.row(r))).collect())
}

/// `Σᵢ max(‖zᵢ − fᵢ‖₁ − ‖zᵢ − bᵢ‖₁ + α, 0)`, with either distance dropped
/// according to `terms`.
pub fn loss_v<'t>(
    images: Var<'t>,
    foregrounds: Var<'t>,
    backgrounds: Var<'t>,
    margin: f64,
    terms: TripletTerms,
) -> Result<Var<'t>> {
    let s = images.shape();
    if foregrounds.shape() != s || backgrounds.shape() != s {
        return Err(Error::Shape(format!(
            "triplet batches {:?}, {:?}, {:?}",
            s,
            foregrounds.shape(),
            backgrounds.shape()
        )));
    }
    let pull = l1_rows(images, foregrounds);
    let push = l1_rows(images, backgrounds);
    let gap = match terms {
        TripletTerms::Both => pull.sub(push),
        TripletTerms::ForegroundPositive => pull,
        TripletTerms::BackgroundNegative => push.scale(-1.0),
    };
    Ok(gap.add_scalar(margin).relu().sum())
}

/// The four loss terms of one batch; absent terms were not computed.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossComponents<'t> {
    pub cls: Option<Var<'t>>,
    pub visual: Option<Var<'t>>,
    pub foreground: Option<Var<'t>>,
    pub background: Option<Var<'t>>,
}

/// Weighted sum of the present components; zero-weight terms are left out
/// of the graph entirely.
pub fn loss_all<'t>(parts: &LossComponents<'t>, weights: &LossWeights) -> Result<Var<'t>> {
    weights.validate()?;
    let mut total: Option<Var<'t>> = None;
    for (part, w, name) in [
        (parts.cls, weights.cls, "cls"),
        (parts.visual, weights.visual, "visual"),
        (parts.foreground, weights.foreground, "foreground"),
        (parts.background, weights.background, "background"),
    ] {
        if w == 0.0 {
            continue;
        }
        let v = part.ok_or_else(|| Error::Contract(format!("term `{name}` has weight {w} but was not computed")))?;
        let term = v.scale(w);
        total = Some(match total {
            Some(t) => t.add(term),
            None => term,
        });
    }
    total.ok_or_else(|| Error::Contract("every loss weight is zero".into()))
}

/// Mean over samples and classes of the binary logistic loss at `s = sim / τ`.
pub fn multilabel_soft_margin<'t>(
    images: Var<'t>,
    class_texts: Var<'t>,
    label_sets: &[Vec<usize>],
    temperature: f64,
) -> Result<Var<'t>> {
    let (b, k) = (images.value().rows(), class_texts.value().rows());
    if label_sets.len() != b {
        return Err(Error::Shape(format!("{} label sets for {b} features", label_sets.len())));
    }
    let mut y = vec![0.0; b * k];
    for (r, set) in label_sets.iter().enumerate() {
        for &l in set {
            if l >= k {
                return Err(Error::Shape(format!("label {l} with {k} classes")));
            }
            y[r * k + l] = 1.0;
        }
    }
    let tape = images.tape();
    let pos = tape.constant(Tensor::new(vec![b, k], y.clone())?);
    let neg = tape.constant(Tensor::new(vec![b, k], y.iter().map(|v| 1.0 - v).collect())?);
    let s = images.matmul(class_texts.transpose()).scale(1.0 / temperature);
    let ll = pos.mul(s.log_sigmoid()).add(neg.mul(s.scale(-1.0).log_sigmoid()));
    Ok(ll.mean().scale(-1.0))
}
