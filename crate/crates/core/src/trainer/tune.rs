use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{MaskOrigin, MaskStrategy, TrainConfig};
use super::metrics::{mean_average_precision, EpochRecord, MetricsReport};
use crate::autograd::{Tape, Tensor};
use crate::disentangle::{
    blur_triplet, erase_mask, gradcam_maps, make_triplet, oracle_mask, SemanticMask, VisualTriplet,
};
use crate::encoder::{argmax, similarity, Backbone, PromptSet};
use crate::error::{Error, Result};
use crate::losses::{
    assign_bg_pseudo, loss_all, loss_b, loss_cls, loss_f, loss_v, multilabel_soft_margin, BackgroundSpace,
    LossComponents,
};
use crate::scenedata::{mix_seed, render_foreground, Dataset, TokenId, Tokenizer, BACKGROUND_CLASSES};

/// Trained prompts with what was recorded on the way.
#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub prompts: PromptSet,
    pub trace: Vec<EpochRecord>,
    /// Background pseudo-label per training sample (empty when unused).
    pub pseudo_labels: Vec<usize>,
    /// Share of pseudo-labels naming the true scene background, in percent,
    /// over samples whose background lies inside the background space.
    pub pseudo_label_accuracy: Option<f64>,
}

/// Tokenized foreground texts for `classes`.
pub fn class_texts(dataset: &Dataset, classes: &[usize]) -> Result<Vec<Vec<TokenId>>> {
    let tok = Tokenizer::standard();
    classes
        .iter()
        .map(|&c| {
            let name = dataset
                .class_names
                .get(c)
                .ok_or_else(|| Error::Lookup(format!("class {c} not in dataset")))?;
            tok.tokenize(&render_foreground(name))
        })
        .collect()
}

/// Positions of each sample's labels within `classes`.
fn local_labels(dataset: &Dataset, indices: &[usize], classes: &[usize]) -> Result<Vec<Vec<usize>>> {
    indices
        .iter()
        .map(|&i| {
            let s = &dataset.samples[i];
            let pos: Vec<usize> = s
                .labels
                .iter()
                .filter_map(|l| classes.iter().position(|c| c == l))
                .collect();
            if classes.iter().position(|&c| c == s.label()).is_none() {
                return Err(Error::Data(format!("sample {} has a label outside the class set", s.id)));
            }
            Ok(pos)
        })
        .collect()
}

struct Views {
    masks: Vec<SemanticMask>,
}

impl Views {
    fn triplets(
        &self,
        images: &[Tensor],
        config: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<VisualTriplet>> {
        images
            .iter()
            .zip(&self.masks)
            .map(|(im, m)| match config.mask_strategy {
                MaskStrategy::Hard => make_triplet(im, m),
                MaskStrategy::Blur => blur_triplet(im, m, &config.blur, rng),
            })
            .collect()
    }
}

fn build_masks(
    backbone: &Backbone,
    prompts: &PromptSet,
    dataset: &Dataset,
    indices: &[usize],
    images: &[Tensor],
    labels: &[Vec<usize>],
    texts: &[Vec<TokenId>],
    config: &TrainConfig,
) -> Result<Views> {
    let base: Vec<SemanticMask> = match config.mask_source {
        MaskOrigin::Oracle => indices.iter().map(|&i| oracle_mask(&dataset.samples[i])).collect::<Result<_>>()?,
        MaskOrigin::Gradcam => {
            let targets: Vec<Vec<usize>> = if config.multi_label {
                labels.to_vec()
            } else {
                labels.iter().map(|l| vec![l[0]]).collect()
            };
            let mut out = Vec::with_capacity(images.len());
            for (ims, tg) in images.chunks(32).zip(targets.chunks(32)) {
                for m in gradcam_maps(backbone, Some(prompts), ims, tg, texts, config.upsample)? {
                    out.push(m.to_mask(config.beta)?);
                }
            }
            out
        }
    };
    let masks = if config.erase_rate > 0.0 {
        let grid = config.erase_grid;
        base.iter()
            .zip(indices)
            .map(|(m, &i)| erase_mask(m, config.erase_rate, grid, mix_seed(config.seed, 0xE5E + i as u64)))
            .collect::<Result<_>>()?
    } else {
        base
    };
    Ok(Views { masks })
}

fn stack(parts: &[&Tensor]) -> Tensor {
    let cols = parts[0].cols();
    let data: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(vec![data.len() / cols, cols], data).expect("consistent rows")
}

/// Optimizes a fresh prompt set on `train` against the texts of `classes`.
pub fn tune_prompts(
    backbone: &Backbone,
    dataset: &Dataset,
    train: &[usize],
    classes: &[usize],
    config: &TrainConfig,
) -> Result<TuneOutcome> {
    config.validate()?;
    if train.is_empty() || classes.is_empty() {
        return Err(Error::Contract("training needs samples and classes".into()));
    }
    let enc = backbone.config();
    let tau = enc.temperature;
    let w = config.weights;
    let need_f = w.foreground > 0.0 || w.visual > 0.0;
    let need_b = w.visual > 0.0 || w.background > 0.0;
    let need_views = need_f || need_b;

    let texts = class_texts(dataset, classes)?;
    let labels = local_labels(dataset, train, classes)?;
    let primary: Vec<usize> = labels.iter().map(|l| l[0]).collect();
    let images: Vec<Tensor> = train.iter().map(|&i| dataset.samples[i].image()).collect();
    let bg_space = BackgroundSpace::standard(config.bg_classes)?;
    let k = texts.len();
    let all_texts: Vec<Vec<TokenId>> = if w.background > 0.0 {
        texts.iter().chain(&bg_space.tokens).cloned().collect()
    } else {
        texts.clone()
    };

    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 11));
    let mut order_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 12));
    let mut blur_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 13));
    let mut prompts = PromptSet::init_for(backbone, &mut init_rng);
    let mut velocity: Vec<Vec<f64>> = prompts.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();

    let mut views = None;
    let mut pseudo: Vec<usize> = Vec::new();
    let mut pseudo_acc = None;
    let bg_unprompted = if w.background > 0.0 {
        Some(bg_space.unprompted_features(backbone)?)
    } else {
        None
    };

    let mut trace = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        let mut triplets = Vec::new();
        if need_views {
            if views.is_none() || config.mask_source == MaskOrigin::Gradcam {
                views = Some(build_masks(backbone, &prompts, dataset, train, &images, &labels, &texts, config)?);
            }
            triplets = views.as_ref().unwrap().triplets(&images, config, &mut blur_rng)?;
            if let Some(zu) = &bg_unprompted {
                if pseudo.is_empty() || config.refresh_pseudo_labels {
                    let backs: Vec<Tensor> = triplets.iter().map(|t| t.background.clone()).collect();
                    let zb = backbone.encode_images(&backs, None)?;
                    pseudo = assign_bg_pseudo(&zb, zu)?;
                    pseudo_acc = pseudo_label_accuracy(dataset, train, &pseudo, &bg_space);
                }
            }
        }
        order.shuffle(&mut order_rng);
        let mut rec = EpochRecord {
            epoch,
            ..EpochRecord::default()
        };
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for (bi, batch) in batches.iter().enumerate() {
            let tape = Tape::new();
            let bw = backbone.on_tape(&tape, false);
            let pv = prompts.on_tape(&tape, true);
            let b = batch.len();
            let mut ims: Vec<Tensor> = batch.iter().map(|&j| images[j].clone()).collect();
            if need_f {
                ims.extend(batch.iter().map(|&j| triplets[j].foreground.clone()));
            }
            if need_b {
                ims.extend(batch.iter().map(|&j| triplets[j].background.clone()));
            }
            let z = bw.encode_images(&ims, Some(&pv))?.features;
            let t = bw.encode_texts(&all_texts, Some(&pv))?;
            let zt = t.slice_rows(0, k);
            let zi = z.slice_rows(0, b);
            let zf = need_f.then(|| z.slice_rows(b, 2 * b));
            let off_b = if need_f { 2 * b } else { b };
            let zb = need_b.then(|| z.slice_rows(off_b, off_b + b));

            let batch_primary: Vec<usize> = batch.iter().map(|&j| primary[j]).collect();
            let batch_sets: Vec<Vec<usize>> = batch.iter().map(|&j| labels[j].clone()).collect();
            let cls = if config.multi_label {
                multilabel_soft_margin(zi, zt, &batch_sets, tau)?
            } else {
                loss_cls(zi, zt, &batch_primary, tau)?
            };
            let mut parts = LossComponents {
                cls: Some(cls),
                ..Default::default()
            };
            if w.foreground > 0.0 {
                let zf = zf.unwrap();
                parts.foreground = Some(if config.multi_label {
                    multilabel_soft_margin(zf, zt, &batch_sets, tau)?
                } else {
                    loss_f(zf, zt, &batch_primary, tau)?
                });
            }
            if w.visual > 0.0 {
                parts.visual = Some(loss_v(zi, zf.unwrap(), zb.unwrap(), w.margin, config.triplet_terms)?);
            }
            if w.background > 0.0 {
                let zu = t.slice_rows(k, all_texts.len());
                let pl: Vec<usize> = batch.iter().map(|&j| pseudo[j]).collect();
                parts.background = Some(loss_b(zb.unwrap(), zu, &pl, tau)?);
            }
            let loss = loss_all(&parts, &w)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Training(format!("loss is {value} at epoch {epoch}, batch {bi}")));
            }
            let grads = tape.backward(loss)?;
            let leaves = pv.leaves();
            let gs: Vec<Tensor> = leaves.iter().map(|l| grads.get(l)).collect();
            if gs.iter().any(|g| !g.all_finite()) {
                return Err(Error::Training(format!("non-finite gradient at epoch {epoch}, batch {bi}")));
            }
            for ((p, v), g) in prompts.tensors_mut().into_iter().zip(velocity.iter_mut()).zip(&gs) {
                for ((x, vel), gi) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                    *vel = config.momentum * *vel + gi;
                    *x -= config.learning_rate * *vel;
                }
            }
            let item = |v: Option<crate::autograd::Var>| v.map_or(0.0, |v| v.item());
            rec.loss += value;
            rec.cls += item(parts.cls);
            rec.visual += item(parts.visual);
            rec.foreground += item(parts.foreground);
            rec.background += item(parts.background);
        }
        let nb = batches.len() as f64;
        rec.loss /= nb;
        rec.cls /= nb;
        rec.visual /= nb;
        rec.foreground /= nb;
        rec.background /= nb;
        log::debug!("epoch {epoch}: loss {:.4}", rec.loss);
        trace.push(rec);
    }
    Ok(TuneOutcome {
        prompts,
        trace,
        pseudo_labels: pseudo,
        pseudo_label_accuracy: pseudo_acc,
    })
}

fn pseudo_label_accuracy(dataset: &Dataset, train: &[usize], pseudo: &[usize], space: &BackgroundSpace) -> Option<f64> {
    let mut n = 0;
    let mut hit = 0;
    for (&i, &p) in train.iter().zip(pseudo) {
        let truth = BACKGROUND_CLASSES[dataset.samples[i].bg_class];
        if let Some(pos) = space.names.iter().position(|n| n == truth) {
            n += 1;
            hit += (pos == p) as usize;
        }
    }
    (n > 0).then(|| 100.0 * hit as f64 / n as f64)
}

/// Scores `indices` against the texts of `classes` using whole images and
/// foreground texts only. Without prompts this is zero-shot prediction.
pub fn evaluate(
    backbone: &Backbone,
    prompts: Option<&PromptSet>,
    dataset: &Dataset,
    indices: &[usize],
    classes: &[usize],
) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::Contract("evaluation on an empty test set".into()));
    }
    let texts = class_texts(dataset, classes)?;
    let zt = backbone.encode_texts(&texts, prompts)?;
    let k = classes.len();
    let mut rows = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(64) {
        let images: Vec<Tensor> = chunk.iter().map(|&i| dataset.samples[i].image()).collect();
        rows.push(similarity(&backbone.encode_images(&images, prompts)?, &zt));
    }
    let refs: Vec<&Tensor> = rows.iter().collect();
    let sims = stack(&refs);

    let mut correct = vec![0usize; k];
    let mut count = vec![0usize; k];
    let mut sets = Vec::with_capacity(indices.len());
    for (r, &i) in indices.iter().enumerate() {
        let s = &dataset.samples[i];
        let truth = classes
            .iter()
            .position(|&c| c == s.label())
            .ok_or_else(|| Error::Data(format!("sample {} has a label outside the class set", s.id)))?;
        count[truth] += 1;
        correct[truth] += (argmax(sims.row(r)) == truth) as usize;
        sets.push(
            s.labels
                .iter()
                .filter_map(|l| classes.iter().position(|c| c == l))
                .collect::<Vec<_>>(),
        );
    }
    let total: usize = correct.iter().sum();
    let per_class = (0..k)
        .map(|c| if count[c] == 0 { 0.0 } else { 100.0 * correct[c] as f64 / count[c] as f64 })
        .collect();
    let multi = dataset.spec.multi_object;
    Ok(MetricsReport {
        accuracy: Some(100.0 * total as f64 / indices.len() as f64),
        per_class_accuracy: per_class,
        map: if multi { Some(mean_average_precision(&sims, &sets)?) } else { None },
        ..MetricsReport::default()
    })
}
