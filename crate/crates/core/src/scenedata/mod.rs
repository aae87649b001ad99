//! ShapeScenes: procedurally generated scenes of colored shapes over
//! background textures, with exact foreground masks.
//!
//! Every background texture is keyed to one of the 25 background class
//! names, so background pseudo-labels have a ground truth to be scored
//! against.

mod classes;
mod raster;
mod sampling;
mod store;
mod tokenizer;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub use classes::{foreground_catalog, ForegroundClass, Shape, BACKGROUND_CLASSES, COLORS, SHAPES};
pub use sampling::{few_shot, few_shot_among, split_base_novel, subset_fraction};
pub use store::{load, save, MANIFEST_FILE};
pub use tokenizer::{
    render_background, render_foreground, TokenId, Tokenizer, BACKGROUND_TEMPLATE, END_TOKEN,
    FOREGROUND_TEMPLATE,
};

const MIN_FOREGROUND: f64 = 0.01;
const MAX_FOREGROUND: f64 = 0.60;
const MAX_ATTEMPTS: usize = 64;

/// Parameters of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Number of foreground classes `k` (the first `k` of the catalog).
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    /// Scenes hold 1..=`max_objects` distinct classes instead of exactly one.
    pub multi_object: bool,
    pub max_objects: usize,
    pub partition_seed: u64,
    /// Probability that a training scene is drawn over its class habitat
    /// (see [`habitat`]) instead of a uniformly random background.
    /// Test scenes always use uniform backgrounds.
    #[serde(default)]
    pub context_bias: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            num_classes: 10,
            train_per_class: 32,
            test_per_class: 50,
            image_size: 64,
            multi_object: false,
            max_objects: 3,
            partition_seed: 0,
            context_bias: 0.0,
        }
    }
}

impl DatasetSpec {
    /// The 20-class multi-object variant.
    pub fn multi_object() -> Self {
        DatasetSpec {
            num_classes: 20,
            multi_object: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let catalog = foreground_catalog().len();
        if self.num_classes < 2 || self.num_classes > catalog {
            return Err(Error::Contract(format!(
                "num_classes must be in 2..={catalog}, got {}",
                self.num_classes
            )));
        }
        if self.image_size < 8 {
            return Err(Error::Contract("image_size must be at least 8".into()));
        }
        if !(0.0..=1.0).contains(&self.context_bias) {
            return Err(Error::Contract(format!(
                "context_bias must be in [0, 1], got {}",
                self.context_bias
            )));
        }
        if self.multi_object && self.max_objects == 0 {
            return Err(Error::Contract("max_objects must be positive".into()));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        foreground_catalog()
            .into_iter()
            .take(self.num_classes)
            .map(|c| c.name)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One generated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub id: usize,
    pub split: Split,
    /// Foreground classes present; the first entry is the stratification label.
    pub labels: Vec<usize>,
    /// Index into [`BACKGROUND_CLASSES`].
    pub bg_class: usize,
    pub seed: u64,
    pub size: usize,
    /// 8-bit pixels, channel-major (`3 × size × size`).
    pub pixels: Vec<u8>,
    /// Binary foreground mask (`size × size`, values 0 or 1).
    pub gt_mask: Vec<u8>,
}

impl SceneSample {
    pub fn label(&self) -> usize {
        self.labels[0]
    }

    /// Image as a `[3, h, w]` tensor with values in `[0, 1]`.
    pub fn image(&self) -> Tensor {
        Tensor::from_parts(
            vec![3, self.size, self.size],
            self.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        )
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.gt_mask.iter().filter(|&&m| m == 1).count() as f64 / self.gt_mask.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub class_names: Vec<String>,
    pub samples: Vec<SceneSample>,
}

impl Dataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Count of samples per primary label within `split`.
    pub fn class_histogram(&self, split: Split) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for s in self.samples.iter().filter(|s| s.split == split) {
            h[s.label()] += 1;
        }
        h
    }
}

/// Background class that co-occurs with foreground `class` in biased splits.
pub fn habitat(class: usize) -> usize {
    (7 * class + 3) % BACKGROUND_CLASSES.len()
}

pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A background texture with no objects, `[3, size, size]` in `[0, 1]`.
pub fn background_image(bg_class: usize, size: usize, seed: u64) -> Result<Tensor> {
    if bg_class >= BACKGROUND_CLASSES.len() {
        return Err(Error::Lookup(format!("background class {bg_class} out of range")));
    }
    let canvas = raster::render_background(bg_class, size, &mut ChaCha8Rng::seed_from_u64(seed));
    let px = raster::quantize(&canvas);
    Ok(Tensor::from_parts(
        vec![3, size, size],
        px.iter().map(|&p| p as f64 / 255.0).collect(),
    ))
}

/// Generates a class-stratified dataset; a pure function of `(spec, seed)`.
pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let catalog = foreground_catalog();
    let mut samples = Vec::new();
    for (split, per_class) in [(Split::Train, spec.train_per_class), (Split::Test, spec.test_per_class)] {
        for class in 0..spec.num_classes {
            for _ in 0..per_class {
                let id = samples.len();
                let sample_seed = mix_seed(seed, id as u64);
                samples.push(generate_scene(spec, &catalog, id, split, class, sample_seed)?);
            }
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        class_names: spec.class_names(),
        samples,
    })
}

fn generate_scene(
    spec: &DatasetSpec,
    catalog: &[ForegroundClass],
    id: usize,
    split: Split,
    class: usize,
    seed: u64,
) -> Result<SceneSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = spec.image_size;
    let s = size as f64;
    for _ in 0..MAX_ATTEMPTS {
        let mut labels = vec![class];
        if spec.multi_object {
            let extra = rng.gen_range(1..=spec.max_objects) - 1;
            let mut others: Vec<usize> = (0..spec.num_classes).filter(|&c| c != class).collect();
            others.shuffle(&mut rng);
            labels.extend(others.into_iter().take(extra));
        }
        let biased = split == Split::Train && spec.context_bias > 0.0 && rng.gen_bool(spec.context_bias);
        let bg_class = if biased {
            habitat(class)
        } else {
            rng.gen_range(0..BACKGROUND_CLASSES.len())
        };
        let mut canvas = raster::render_background(bg_class, size, &mut rng);

        let scale = if labels.len() > 1 { 0.75 } else { 1.0 };
        let mut union = vec![0u8; size * size];
        let mut owner = vec![usize::MAX; size * size];
        let mut placed_ok = true;
        for (slot, &label) in labels.iter().enumerate() {
            let fg = &catalog[label];
            let radius = rng.gen_range(0.17..0.32) * s * scale;
            let placement = raster::Placement {
                shape: fg.shape,
                cx: rng.gen_range(radius..=s - radius),
                cy: rng.gen_range(radius..=s - radius),
                radius,
                angle: if fg.shape == Shape::Circle || fg.shape == Shape::Ring {
                    0.0
                } else {
                    rng.gen_range(-0.35..0.35)
                },
            };
            if !placement.fits(size) {
                placed_ok = false;
                break;
            }
            let m = raster::paint(&mut canvas, &placement, fg.color, &mut rng);
            for (i, &v) in m.iter().enumerate() {
                if v == 1 {
                    union[i] = 1;
                    owner[i] = slot;
                }
            }
        }
        if !placed_ok {
            continue;
        }
        // every object must stay clearly visible after occlusion
        let visible_ok = (0..labels.len()).all(|slot| {
            owner.iter().filter(|&&o| o == slot).count() as f64 >= 0.02 * s * s
        });
        let frac = union.iter().filter(|&&m| m == 1).count() as f64 / (s * s);
        if visible_ok && (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac) {
            return Ok(SceneSample {
                id,
                split,
                labels,
                bg_class,
                seed,
                size,
                pixels: raster::quantize(&canvas),
                gt_mask: union,
            });
        }
    }
    Err(Error::Data(format!(
        "could not compose scene {id} within {MAX_ATTEMPTS} attempts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            num_classes: 4,
            train_per_class: 3,
            test_per_class: 2,
            image_size: 32,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate(&small(), 5).unwrap();
        let b = generate(&small(), 5).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(), 6).unwrap();
        assert_ne!(a.samples[0].pixels, c.samples[0].pixels);
    }

    #[test]
    fn histogram_is_uniform() {
        let d = generate(&small(), 1).unwrap();
        assert_eq!(d.class_histogram(Split::Train), vec![3; 4]);
        assert_eq!(d.class_histogram(Split::Test), vec![2; 4]);
    }

    #[test]
    fn masks_are_within_bounds() {
        let d = generate(&DatasetSpec { train_per_class: 10, ..small() }, 2).unwrap();
        for s in &d.samples {
            let f = s.foreground_fraction();
            assert!((0.01..=0.60).contains(&f), "{f}");
            assert!(s.gt_mask.iter().all(|&m| m <= 1));
            assert!(s.bg_class < BACKGROUND_CLASSES.len());
        }
    }

    #[test]
    fn mask_matches_rasterizer() {
        let catalog = foreground_catalog();
        let p = raster::Placement {
            shape: Shape::Circle,
            cx: 16.0,
            cy: 16.0,
            radius: 6.0,
            angle: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut canvas = raster::render_background(0, 32, &mut rng);
        let mask = raster::paint(&mut canvas, &p, catalog[0].color, &mut rng);
        for y in 0..32 {
            for x in 0..32 {
                let inside = (x as f64 + 0.5 - 16.0).powi(2) + (y as f64 + 0.5 - 16.0).powi(2) <= 36.0;
                assert_eq!(mask[y * 32 + x] == 1, inside);
            }
        }
    }

    #[test]
    fn multi_object_labels_are_distinct() {
        let spec = DatasetSpec {
            train_per_class: 4,
            test_per_class: 0,
            image_size: 32,
            ..DatasetSpec::multi_object()
        };
        let d = generate(&spec, 3).unwrap();
        let mut saw_multi = false;
        for s in &d.samples {
            let mut l = s.labels.clone();
            l.sort();
            l.dedup();
            assert_eq!(l.len(), s.labels.len());
            assert!(s.labels.len() <= 3);
            saw_multi |= s.labels.len() > 1;
        }
        assert!(saw_multi);
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = DatasetSpec { num_classes: 1, ..small() };
        assert!(generate(&spec, 0).is_err());
    }
}
