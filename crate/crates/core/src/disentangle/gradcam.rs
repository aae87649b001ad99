use serde::{Deserialize, Serialize};

use super::{MaskSource, SemanticMask};
use crate::autograd::{Tape, Tensor};
use crate::encoder::{Backbone, PromptSet};
use crate::error::{Error, Result};
use crate::scenedata::TokenId;

/// Interpolation used to bring the patch map to pixel resolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upsample {
    #[default]
    Bilinear,
    Nearest,
}

/// Class activation map at patch and pixel resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    pub grid: usize,
    /// `grid × grid`, nonnegative.
    pub patch: Vec<f64>,
    pub size: usize,
    /// `size × size`, min-max normalized to `[0, 1]`; all zero when degenerate.
    pub pixel: Vec<f64>,
    /// The patch map was constant, so it carries no localization.
    pub degenerate: bool,
}

impl CamMap {
    /// Binary mask of pixels strictly above `beta`; a degenerate map keeps everything.
    pub fn to_mask(&self, beta: f64) -> Result<SemanticMask> {
        let flags: Vec<u8> = if self.degenerate {
            vec![1; self.size * self.size]
        } else {
            self.pixel.iter().map(|&v| (v > beta) as u8).collect()
        };
        SemanticMask::binary(self.size, self.size, &flags, MaskSource::Gradcam)
    }
}

/// Per-patch `ReLU(mean_c(∂s/∂A ∘ A))` from activation and gradient rows (`[n, c]`).
pub fn patch_cam(activation: &Tensor, gradient: &Tensor) -> Result<Vec<f64>> {
    if activation.shape() != gradient.shape() || activation.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "activation {:?} and gradient {:?}",
            activation.shape(),
            gradient.shape()
        )));
    }
    if !gradient.all_finite() {
        return Err(Error::Numeric("non-finite gradient in class activation map".into()));
    }
    let c = activation.cols();
    Ok((0..activation.rows())
        .map(|i| {
            let s: f64 = activation.row(i).iter().zip(gradient.row(i)).map(|(a, g)| a * g).sum();
            (s / c as f64).max(0.0)
        })
        .collect())
}

/// Resizes a square map; bilinear sampling uses half-pixel centers.
pub fn upsample(map: &[f64], grid: usize, size: usize, mode: Upsample) -> Vec<f64> {
    let scale = grid as f64 / size as f64;
    let coord = |dst: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(grid - 1);
        let i1 = (i0 + 1).min(grid - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = match mode {
                Upsample::Nearest => {
                    let sy = ((y as f64 * scale).floor() as usize).min(grid - 1);
                    let sx = ((x as f64 * scale).floor() as usize).min(grid - 1);
                    map[sy * grid + sx]
                }
                Upsample::Bilinear => {
                    let (y0, y1, ly) = coord(y);
                    let (x0, x1, lx) = coord(x);
                    let top = map[y0 * grid + x0] * (1.0 - lx) + map[y0 * grid + x1] * lx;
                    let bottom = map[y1 * grid + x0] * (1.0 - lx) + map[y1 * grid + x1] * lx;
                    top * (1.0 - ly) + bottom * ly
                }
            };
        }
    }
    out
}

/// Upsamples and min-max normalizes a patch map.
pub fn cam_map(patch: Vec<f64>, grid: usize, size: usize, mode: Upsample) -> CamMap {
    let up = upsample(&patch, grid, size, mode);
    let lo = up.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = up.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = !(hi - lo > 1e-12);
    let pixel = if degenerate {
        vec![0.0; size * size]
    } else {
        up.iter().map(|v| (v - lo) / (hi - lo)).collect()
    };
    CamMap {
        grid,
        patch,
        size,
        pixel,
        degenerate,
    }
}

/// Class activation maps of a batch of images.
///
/// The score for image `b` is the summed similarity between its feature and
/// the text features of `targets[b]` (indices into `class_tokens`).
pub fn gradcam_maps(
    backbone: &Backbone,
    prompts: Option<&PromptSet>,
    images: &[Tensor],
    targets: &[Vec<usize>],
    class_tokens: &[Vec<TokenId>],
    mode: Upsample,
) -> Result<Vec<CamMap>> {
    if images.len() != targets.len() {
        return Err(Error::Shape(format!("{} targets for {} images", targets.len(), images.len())));
    }
    let tape = Tape::new();
    let w = backbone.on_tape(&tape, false);
    let pv = prompts.map(|p| p.on_tape(&tape, false));
    let enc = w.encode_images(images, pv.as_ref())?;
    let texts = w.encode_texts(class_tokens, pv.as_ref())?;
    let k = class_tokens.len();
    let sims = enc.features.matmul(texts.transpose());
    let mut pick = vec![0.0; images.len() * k];
    for (b, t) in targets.iter().enumerate() {
        for &c in t {
            if c >= k {
                return Err(Error::Lookup(format!("class {c} with {k} class texts")));
            }
            pick[b * k + c] += 1.0;
        }
    }
    let score = sims
        .mul(tape.constant(Tensor::new(vec![images.len(), k], pick)?))
        .sum();
    let grad = tape.grad_tap(score, enc.tap)?;
    let act = enc.tap.value();
    let cfg = backbone.config();
    (0..images.len())
        .map(|b| {
            let patch = patch_cam(&enc.patch_rows(&act, b), &enc.patch_rows(&grad, b))?;
            Ok(cam_map(patch, cfg.grid(), cfg.image_size, mode))
        })
        .collect()
}

/// Thresholded class activation map of one image for class `class`.
pub fn gradcam_mask(
    backbone: &Backbone,
    prompts: Option<&PromptSet>,
    image: &Tensor,
    class: usize,
    class_tokens: &[Vec<TokenId>],
    beta: f64,
) -> Result<SemanticMask> {
    let maps = gradcam_maps(
        backbone,
        prompts,
        std::slice::from_ref(image),
        &[vec![class]],
        class_tokens,
        Upsample::Bilinear,
    )?;
    maps[0].to_mask(beta)
}
