use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::disentangle::{gradcam_maps, Upsample};
use crate::encoder::{Backbone, PromptSet};
use crate::error::{Error, Result};
use crate::scenedata::{render_foreground, Dataset, Tokenizer};

/// Mean losses over the batches of one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub cls: f64,
    pub visual: f64,
    pub foreground: f64,
    pub background: f64,
}

/// Scores of one run. Percentages are in `[0, 100]`, IoU in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub per_class_accuracy: Vec<f64>,
    pub base_accuracy: Option<f64>,
    pub novel_accuracy: Option<f64>,
    pub harmonic_mean: Option<f64>,
    pub map: Option<f64>,
    pub cam_iou: Option<f64>,
    pub loss_trace: Vec<EpochRecord>,
}

/// `2ab / (a + b)`.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&a) || !(0.0..=100.0).contains(&b) {
        return Err(Error::Domain(format!("accuracies must be in [0, 100], got {a} and {b}")));
    }
    if a + b == 0.0 {
        return Err(Error::Domain("harmonic mean of two zeros".into()));
    }
    Ok(2.0 * a * b / (a + b))
}

/// Average precision of one ranking in percent; `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let total = positive.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep index order
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(100.0 * sum / total as f64)
}

/// Mean over classes of average precision; classes with no positive sample
/// are skipped with a warning.
pub fn mean_average_precision(scores: &Tensor, label_sets: &[Vec<usize>]) -> Result<f64> {
    let (n, k) = (scores.rows(), scores.cols());
    if label_sets.len() != n {
        return Err(Error::Shape(format!("{} label sets for {n} score rows", label_sets.len())));
    }
    if !scores.all_finite() {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let mut aps = Vec::new();
    for c in 0..k {
        let col: Vec<f64> = (0..n).map(|r| scores.row(r)[c]).collect();
        let pos: Vec<bool> = label_sets.iter().map(|s| s.contains(&c)).collect();
        match average_precision(&col, &pos) {
            Some(ap) => aps.push(ap),
            None => log::warn!("class {c} has no positive sample; left out of mAP"),
        }
    }
    if aps.is_empty() {
        return Err(Error::Domain("no class has a positive sample".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Mean IoU between thresholded activation maps (for each sample's own
/// labels) and the annotated foreground.
pub fn cam_foreground_iou(
    backbone: &Backbone,
    prompts: Option<&PromptSet>,
    dataset: &Dataset,
    indices: &[usize],
    classes: &[usize],
    beta: f64,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Contract("no samples to score".into()));
    }
    let tok = Tokenizer::standard();
    let texts = classes
        .iter()
        .map(|&c| tok.tokenize(&render_foreground(&dataset.class_names[c])))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for chunk in indices.chunks(32) {
        let images: Vec<Tensor> = chunk.iter().map(|&i| dataset.samples[i].image()).collect();
        let targets: Vec<Vec<usize>> = chunk
            .iter()
            .map(|&i| {
                dataset.samples[i]
                    .labels
                    .iter()
                    .filter_map(|l| classes.iter().position(|c| c == l))
                    .collect()
            })
            .collect();
        let maps = gradcam_maps(backbone, prompts, &images, &targets, &texts, Upsample::Bilinear)?;
        for (m, &i) in maps.iter().zip(chunk) {
            let s = &dataset.samples[i];
            total += mask_iou(&m.to_mask(beta)?.flags(), &s.gt_mask);
        }
    }
    Ok(total / indices.len() as f64)
}

/// IoU of two 0/1 masks; two empty masks score 1.
pub fn mask_iou(a: &[u8], b: &[u8]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x == 1 && y == 1) as usize;
        union += (x == 1 || y == 1) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_mean_table_rows() {
        assert!((harmonic_mean(82.69, 63.22).unwrap() - 71.66).abs() <= 0.01);
        assert!((harmonic_mean(69.34, 74.22).unwrap() - 71.70).abs() <= 0.01);
        assert_eq!(harmonic_mean(40.0, 40.0).unwrap(), 40.0);
        assert!(matches!(harmonic_mean(0.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]), Some(100.0));
        assert_eq!(average_precision(&[0.9, 0.8, 0.3, 0.1], &[false, true, false, false]), Some(50.0));
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(50.0));
        assert_eq!(average_precision(&[0.5], &[false]), None);
    }

    #[test]
    fn map_skips_empty_classes() {
        let s = Tensor::matrix(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        assert_eq!(mean_average_precision(&s, &[vec![0], vec![0]]).unwrap(), 100.0);
        assert!(mean_average_precision(&s, &[vec![], vec![]]).is_err());
    }

    #[test]
    fn iou_edges() {
        assert_eq!(mask_iou(&[1, 0, 1], &[1, 0, 1]), 1.0);
        assert_eq!(mask_iou(&[1, 0, 0], &[0, 1, 0]), 0.0);
    }
}
