use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::instrument;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    Binary,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    Gradcam,
    Oracle,
    Perturbed,
}

/// An `h × w` foreground map with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMask {
    height: usize,
    width: usize,
    values: Vec<f64>,
    mode: MaskMode,
    source: MaskSource,
}

impl SemanticMask {
    /// Binary mask from 0/1 flags.
    pub fn binary(height: usize, width: usize, flags: &[u8], source: MaskSource) -> Result<Self> {
        if flags.len() != height * width {
            return Err(Error::Shape(format!(
                "{} mask values for a {height}x{width} mask",
                flags.len()
            )));
        }
        if let Some(pos) = flags.iter().position(|&f| f > 1) {
            return Err(Error::Domain(format!("binary mask value {} at {pos}", flags[pos])));
        }
        instrument::mask_built();
        Ok(SemanticMask {
            height,
            width,
            values: flags.iter().map(|&f| f as f64).collect(),
            mode: MaskMode::Binary,
            source,
        })
    }

    pub fn soft(height: usize, width: usize, values: Vec<f64>, source: MaskSource) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{} mask values for a {height}x{width} mask",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!("soft mask value {} at {pos}", values[pos])));
        }
        instrument::mask_built();
        Ok(SemanticMask {
            height,
            width,
            values,
            mode: MaskMode::Soft,
            source,
        })
    }

    pub fn full(height: usize, width: usize, source: MaskSource) -> Self {
        Self::binary(height, width, &vec![1; height * width], source).expect("consistent size")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn source(&self) -> MaskSource {
        self.source
    }

    /// Foreground flags (`value > 0.5`).
    pub fn flags(&self) -> Vec<u8> {
        self.values.iter().map(|&v| (v > 0.5) as u8).collect()
    }

    pub fn foreground_pixels(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.5).count()
    }

    /// Intersection over union of the foreground regions; two empty masks score 1.
    pub fn iou(&self, other: &SemanticMask) -> Result<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape("iou of masks with different sizes".into()));
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in self.values.iter().zip(&other.values) {
            let (a, b) = (*a > 0.5, *b > 0.5);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
    }
}

/// `(I, I_f, I_b)` for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualTriplet {
    pub original: Tensor,
    pub foreground: Tensor,
    pub background: Tensor,
}

fn check_image(image: &Tensor, mask: &SemanticMask) -> Result<()> {
    if image.shape() != [3, mask.height, mask.width] {
        return Err(Error::Shape(format!(
            "image {:?} does not match a {}x{} mask",
            image.shape(),
            mask.height,
            mask.width
        )));
    }
    Ok(())
}

fn split_by(image: &Tensor, weights: &[f64]) -> VisualTriplet {
    let n = weights.len();
    let mut fg = image.data().to_vec();
    let mut bg = image.data().to_vec();
    for ch in 0..3 {
        for i in 0..n {
            let v = image.data()[ch * n + i];
            fg[ch * n + i] = weights[i] * v;
            bg[ch * n + i] = (1.0 - weights[i]) * v;
        }
    }
    instrument::triplet_built();
    VisualTriplet {
        original: image.clone(),
        foreground: Tensor::from_parts(image.shape().to_vec(), fg),
        background: Tensor::from_parts(image.shape().to_vec(), bg),
    }
}

/// `I_f = M ⊙ I`, `I_b = (1 − M) ⊙ I`, the mask shared by all channels.
pub fn make_triplet(image: &Tensor, mask: &SemanticMask) -> Result<VisualTriplet> {
    check_image(image, mask)?;
    Ok(split_by(image, &mask.values))
}

/// Zeroes a random `⌊rate · F⌋` of the `F` foreground cells of a
/// `grid × grid` partition of the mask.
///
/// The cell order depends only on `seed`, so for a fixed seed the erased set
/// grows with `rate`.
pub fn erase_mask(mask: &SemanticMask, rate: f64, grid: usize, seed: u64) -> Result<SemanticMask> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Contract(format!("erase rate must be in [0, 1], got {rate}")));
    }
    if mask.mode != MaskMode::Binary {
        return Err(Error::Contract("erasing needs a binary mask".into()));
    }
    if grid == 0 || mask.height % grid != 0 || mask.width % grid != 0 {
        return Err(Error::Contract(format!(
            "grid {grid} does not divide {}x{}",
            mask.height, mask.width
        )));
    }
    let (ch, cw) = (mask.height / grid, mask.width / grid);
    let cell_has_fg = |gy: usize, gx: usize| {
        (gy * ch..(gy + 1) * ch)
            .any(|y| (gx * cw..(gx + 1) * cw).any(|x| mask.values[y * mask.width + x] > 0.5))
    };
    let mut cells: Vec<(usize, usize)> = (0..grid)
        .flat_map(|gy| (0..grid).map(move |gx| (gy, gx)))
        .filter(|&(gy, gx)| cell_has_fg(gy, gx))
        .collect();
    cells.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let count = (rate * cells.len() as f64 + 1e-9).floor() as usize;

    let mut values = mask.values.clone();
    for &(gy, gx) in &cells[..count] {
        for y in gy * ch..(gy + 1) * ch {
            for x in gx * cw..(gx + 1) * cw {
                values[y * mask.width + x] = 0.0;
            }
        }
    }
    instrument::mask_built();
    Ok(SemanticMask {
        values,
        source: MaskSource::Perturbed,
        ..mask.clone()
    })
}

/// Gaussian blur with a `(width, height)` kernel and a sigma drawn uniformly
/// from `sigma_range` per application.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlur {
    pub kernel: (usize, usize),
    pub sigma_range: (f64, f64),
}

impl Default for GaussianBlur {
    fn default() -> Self {
        GaussianBlur {
            kernel: (5, 9),
            sigma_range: (0.1, 1.0),
        }
    }
}

pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let x = (i as f64 - half) / sigma;
            (-0.5 * x * x).exp()
        })
        .collect();
    let z: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= z);
    k
}

fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian filter of one `h × w` plane with reflect padding.
pub fn blur_plane(plane: &[f64], height: usize, width: usize, kernel: (usize, usize), sigma: f64) -> Result<Vec<f64>> {
    let (kw, kh) = kernel;
    if kw % 2 == 0 || kh % 2 == 0 {
        return Err(Error::Contract(format!("kernel sizes must be odd, got {kw}x{kh}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Contract(format!("sigma must be positive, got {sigma}")));
    }
    let (gx, gy) = (gaussian_kernel(kw, sigma), gaussian_kernel(kh, sigma));
    let (rx, ry) = ((kw / 2) as isize, (kh / 2) as isize);
    let mut tmp = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = (0..kw)
                .map(|k| gx[k] * plane[y * width + reflect(x as isize + k as isize - rx, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = (0..kh)
                .map(|k| gy[k] * tmp[reflect(y as isize + k as isize - ry, height) * width + x])
                .sum();
        }
    }
    Ok(out)
}

/// Soft triplet: the mask is widened by its own blur, `S = max(M, G∗M)`, so
/// foreground pixels stay intact while background pixels near the object are
/// kept partially instead of being zeroed. `I_f = S⊙I`, `I_b = (1−S)⊙I`.
pub fn blur_triplet_with_sigma(
    image: &Tensor,
    mask: &SemanticMask,
    kernel: (usize, usize),
    sigma: f64,
) -> Result<VisualTriplet> {
    check_image(image, mask)?;
    let blurred = blur_plane(&mask.values, mask.height, mask.width, kernel, sigma)?;
    let soft: Vec<f64> = mask
        .values
        .iter()
        .zip(&blurred)
        .map(|(m, b)| m.max(*b).clamp(0.0, 1.0))
        .collect();
    Ok(split_by(image, &soft))
}

pub fn blur_triplet<R: Rng>(
    image: &Tensor,
    mask: &SemanticMask,
    blur: &GaussianBlur,
    rng: &mut R,
) -> Result<VisualTriplet> {
    let (lo, hi) = blur.sigma_range;
    let sigma = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    blur_triplet_with_sigma(image, mask, blur.kernel, sigma)
}
