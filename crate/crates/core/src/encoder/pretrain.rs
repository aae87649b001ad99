use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, similarity, symmetric_info_nce, Backbone, EncoderConfig, PromptSet};
use crate::autograd::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::scenedata::{
    self, background_image, mix_seed, render_background, render_foreground, Dataset, DatasetSpec, Split,
    Tokenizer, BACKGROUND_CLASSES,
};

/// Contrastive pretraining recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    /// Foreground classes in the corpus (the first entries of the catalog).
    pub num_classes: usize,
    pub scenes_per_class: usize,
    /// Held-out scenes per class for the zero-shot check.
    pub eval_per_class: usize,
    /// Classes scored by the zero-shot check.
    pub eval_classes: usize,
    /// Extra background-only views, as a fraction of the scene count.
    pub background_views: f64,
    /// Extra foreground-only views, as a fraction of the scene count.
    pub foreground_views: f64,
    /// Probability that a scene sits on its class habitat background.
    pub context_bias: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            num_classes: 20,
            scenes_per_class: 1000,
            eval_per_class: 20,
            eval_classes: 10,
            background_views: 0.5,
            foreground_views: 0.25,
            context_bias: 0.5,
            epochs: 4,
            batch_size: 32,
            learning_rate: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean loss of a fixed probe set of batches before any update.
    pub initial_probe_loss: f64,
    /// Probe loss after each epoch.
    pub probe_loss: Vec<f64>,
    /// Mean training-batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Held-out zero-shot top-1 accuracy in percent.
    pub zero_shot_accuracy: f64,
}

struct Item {
    image: Tensor,
    caption: usize,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.98;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let (c1, c2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = B1 * m[i] + (1.0 - B1) * gi;
                v[i] = B2 * v[i] + (1.0 - B2) * gi * gi;
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
            }
        }
    }
}

fn masked(image: &Tensor, mask: &[u8]) -> Tensor {
    let n = mask.len();
    let mut out = image.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if mask[i % n] == 0 {
            *v = 0.0;
        }
    }
    out
}

/// Captions: foreground texts first, then background texts.
fn captions(dataset: &Dataset, tok: &Tokenizer) -> Result<Vec<Vec<usize>>> {
    let fg = dataset.class_names.iter().map(|n| tok.tokenize(&render_foreground(n)));
    let bg = BACKGROUND_CLASSES.iter().map(|n| tok.tokenize(&render_background(n)));
    fg.chain(bg).collect()
}

fn build_corpus(dataset: &Dataset, cfg: &PretrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Item>> {
    let k = dataset.num_classes();
    let mut items = Vec::new();
    for s in dataset.samples.iter().filter(|s| s.split == Split::Train) {
        let image = s.image();
        if rng.gen_bool(cfg.foreground_views.clamp(0.0, 1.0)) {
            items.push(Item {
                image: masked(&image, &s.gt_mask),
                caption: s.label(),
            });
        }
        if rng.gen_bool(cfg.background_views.clamp(0.0, 1.0)) {
            // half the background views are the scene itself with its objects cut out
            let item = if rng.gen_bool(0.5) {
                let inverse: Vec<u8> = s.gt_mask.iter().map(|&m| 1 - m).collect();
                Item {
                    image: masked(&image, &inverse),
                    caption: k + s.bg_class,
                }
            } else {
                let bg = rng.gen_range(0..BACKGROUND_CLASSES.len());
                Item {
                    image: background_image(bg, s.size, mix_seed(s.seed, 0xB6))?,
                    caption: k + bg,
                }
            };
            items.push(item);
        }
        items.push(Item {
            image,
            caption: s.label(),
        });
    }
    Ok(items)
}

/// Batches whose captions are pairwise distinct.
fn batches(items: &[Item], num_captions: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); num_captions];
    for (i, it) in items.iter().enumerate() {
        buckets[it.caption].push(i);
    }
    for b in buckets.iter_mut() {
        b.shuffle(rng);
    }
    let mut out = Vec::new();
    loop {
        let mut live: Vec<usize> = (0..num_captions).filter(|&c| !buckets[c].is_empty()).collect();
        if live.len() < 2 {
            break;
        }
        // favour captions with more items left so buckets drain together
        live.sort_by_key(|&c| std::cmp::Reverse(buckets[c].len()));
        let top = live.len().min(batch * 2);
        let mut pick = live[..top].to_vec();
        pick.shuffle(rng);
        pick.truncate(batch);
        out.push(pick.iter().map(|&c| buckets[c].pop().unwrap()).collect());
    }
    out.shuffle(rng);
    out
}

/// Contrastive loss of one batch; gradients list backbone weights, then
/// prompt tensors when `prompts` is given.
fn batch_loss(
    backbone: &Backbone,
    prompts: Option<&PromptSet>,
    items: &[Item],
    texts: &[Vec<usize>],
    idx: &[usize],
    grads: bool,
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let w = backbone.on_tape(&tape, grads);
    let pv = prompts.map(|p| p.on_tape(&tape, grads));
    let images: Vec<Tensor> = idx.iter().map(|&i| items[i].image.clone()).collect();
    let caps: Vec<Vec<usize>> = idx.iter().map(|&i| texts[items[i].caption].clone()).collect();
    let zi = w.encode_images(&images, pv.as_ref())?.features;
    let zt = w.encode_texts(&caps, pv.as_ref())?;
    let loss = symmetric_info_nce(zi, zt, backbone.config().temperature);
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::Training(format!("contrastive loss became {value}")));
    }
    if !grads {
        return Ok((value, Vec::new()));
    }
    let g = tape.backward(loss)?;
    let mut out: Vec<Tensor> = w.leaves().map(|(_, v)| g.get(v)).collect();
    if let Some(pv) = &pv {
        out.extend(pv.leaves().iter().map(|v| g.get(v)));
    }
    Ok((value, out))
}

/// Top-1 accuracy (percent) of zero-shot prediction over `indices`, scoring
/// only the first `num_classes` class names.
pub fn zero_shot_accuracy(backbone: &Backbone, dataset: &Dataset, indices: &[usize], num_classes: usize) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Contract("zero-shot accuracy of an empty set".into()));
    }
    let tok = Tokenizer::standard();
    let texts = dataset.class_names[..num_classes]
        .iter()
        .map(|n| tok.tokenize(&render_foreground(n)))
        .collect::<Result<Vec<_>>>()?;
    let zt = backbone.encode_texts(&texts, None)?;
    let mut correct = 0;
    for chunk in indices.chunks(64) {
        let images: Vec<Tensor> = chunk.iter().map(|&i| dataset.samples[i].image()).collect();
        let sims = similarity(&backbone.encode_images(&images, None)?, &zt);
        for (r, &i) in chunk.iter().enumerate() {
            correct += (argmax(sims.row(r)) == dataset.samples[i].label()) as usize;
        }
    }
    Ok(100.0 * correct as f64 / indices.len() as f64)
}

fn corpus(encoder: &EncoderConfig, cfg: &PretrainConfig) -> Result<Dataset> {
    let spec = DatasetSpec {
        num_classes: cfg.num_classes,
        train_per_class: cfg.scenes_per_class,
        test_per_class: cfg.eval_per_class,
        image_size: encoder.image_size,
        context_bias: cfg.context_bias,
        ..DatasetSpec::default()
    };
    scenedata::generate(&spec, mix_seed(cfg.seed, 0xC0FFEE))
}

fn held_out(dataset: &Dataset, cfg: &PretrainConfig) -> Vec<usize> {
    dataset
        .indices(Split::Test)
        .into_iter()
        .filter(|&i| dataset.samples[i].label() < cfg.eval_classes)
        .collect()
}

/// Rebuilds the held-out scenes of the corpus described by `cfg` and
/// scores `backbone` on them, as recorded in [`PretrainReport::zero_shot_accuracy`].
pub fn held_out_zero_shot(backbone: &Backbone, cfg: &PretrainConfig) -> Result<f64> {
    let dataset = corpus(backbone.config(), cfg)?;
    zero_shot_accuracy(backbone, &dataset, &held_out(&dataset, cfg), cfg.eval_classes)
}

/// Trains both towers from scratch on generated image/caption pairs.
pub fn pretrain_contrastive(encoder: &EncoderConfig, cfg: &PretrainConfig) -> Result<(Backbone, PretrainReport)> {
    encoder.validate()?;
    if cfg.batch_size < 2 || cfg.epochs == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("pretraining needs batch_size ≥ 2, epochs ≥ 1 and a positive learning rate".into()));
    }
    if cfg.eval_classes == 0 || cfg.eval_classes > cfg.num_classes {
        return Err(Error::Config(format!("eval_classes must be in 1..={}", cfg.num_classes)));
    }
    let dataset = corpus(encoder, cfg)?;
    let tok = Tokenizer::standard();
    let texts = captions(&dataset, &tok)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let items = build_corpus(&dataset, cfg, &mut rng)?;
    let mut backbone = Backbone::init(encoder, mix_seed(cfg.seed, 1))?;

    let probe: Vec<Vec<usize>> = batches(&items, texts.len(), cfg.batch_size, &mut rng)
        .into_iter()
        .take(8)
        .collect();
    let probe_loss = |b: &Backbone, p: &PromptSet| -> Result<f64> {
        let mut s = 0.0;
        for idx in &probe {
            s += batch_loss(b, Some(p), &items, &texts, idx, false)?.0;
        }
        Ok(s / probe.len() as f64)
    };
    let mut context = PromptSet::init_for(&backbone, &mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2)));
    let mut report = PretrainReport {
        initial_probe_loss: probe_loss(&backbone, &context)?,
        probe_loss: Vec::new(),
        epoch_loss: Vec::new(),
        zero_shot_accuracy: 0.0,
    };

    let mut sizes: Vec<usize> = backbone.weights().values().map(Tensor::numel).collect();
    sizes.extend(context.tensors().iter().map(|t| t.numel()));
    let mut adam = Adam {
        m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        t: 0,
    };
    let plan: Vec<Vec<Vec<usize>>> = (0..cfg.epochs)
        .map(|_| batches(&items, texts.len(), cfg.batch_size, &mut rng))
        .collect();
    let total: usize = plan.iter().map(Vec::len).sum();
    let mut step = 0;
    for (epoch, epoch_batches) in plan.iter().enumerate() {
        let mut sum = 0.0;
        for idx in epoch_batches {
            let (loss, grads) = batch_loss(&backbone, Some(&context), &items, &texts, idx, true)
                .map_err(|e| Error::Training(format!("epoch {epoch}, step {step}: {e}")))?;
            sum += loss;
            let lr = cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos());
            let mut params: Vec<&mut Tensor> = backbone.weights_mut().values_mut().collect();
            params.extend(context.tensors_mut());
            adam.step(&mut params, &grads, lr);
            step += 1;
        }
        report.epoch_loss.push(sum / epoch_batches.len().max(1) as f64);
        report.probe_loss.push(probe_loss(&backbone, &context)?);
        log::info!(
            "pretrain epoch {epoch}: loss {:.4}, probe {:.4}",
            report.epoch_loss[epoch],
            report.probe_loss[epoch]
        );
    }
    backbone.set_context_prompts(Some(context))?;
    report.zero_shot_accuracy = zero_shot_accuracy(&backbone, &dataset, &held_out(&dataset, cfg), cfg.eval_classes)?;
    Ok((backbone, report))
}
