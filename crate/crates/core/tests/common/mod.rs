#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;
use std::sync::OnceLock;

use dapt::encoder::{pretrain_contrastive, Backbone, EncoderConfig, PretrainConfig, PretrainReport};
use dapt::scenedata::{generate, Dataset, DatasetSpec};

/// Pretrains `(encoder, cfg)` once per machine; later calls read the cached
/// checkpoint under the cargo target directory.
pub fn cached_backbone(encoder: &EncoderConfig, cfg: &PretrainConfig) -> (Backbone, PathBuf, Option<PretrainReport>) {
    let key = format!(
        "{}{}",
        serde_json::to_string(encoder).unwrap(),
        serde_json::to_string(cfg).unwrap()
    );
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("backbone-{:016x}.ckpt", h.finish()));
    if let Ok(b) = Backbone::load(&path) {
        if b.config() == encoder {
            return (b, path, None);
        }
    }
    let (b, report) = pretrain_contrastive(encoder, cfg).expect("pretraining runs");
    b.save(&path).expect("checkpoint written");
    (b, path, Some(report))
}

pub fn quick_pretrain() -> PretrainConfig {
    PretrainConfig {
        scenes_per_class: 200,
        eval_per_class: 10,
        epochs: 1,
        ..PretrainConfig::default()
    }
}

/// A briefly pretrained compact backbone shared by the tests of one binary.
pub fn quick_backbone() -> &'static Backbone {
    static B: OnceLock<Backbone> = OnceLock::new();
    B.get_or_init(|| cached_backbone(&EncoderConfig::compact(), &quick_pretrain()).0)
}

pub fn small_spec() -> DatasetSpec {
    DatasetSpec {
        num_classes: 4,
        train_per_class: 8,
        test_per_class: 6,
        image_size: 32,
        context_bias: 0.9,
        ..DatasetSpec::default()
    }
}

pub fn small_dataset() -> &'static Dataset {
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| generate(&small_spec(), 3).unwrap())
}
