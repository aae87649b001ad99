#![allow(dead_code)]

use std::path::Path;

use dapt::encoder::{pretrain_contrastive, Backbone, EncoderConfig, PretrainConfig};

/// Loads the checkpoint named by the first CLI argument, or pretrains a small
/// backbone in a few seconds when none is given.
pub fn backbone() -> Backbone {
    if let Some(path) = std::env::args().nth(1) {
        return Backbone::load(Path::new(&path)).expect("readable backbone checkpoint");
    }
    let cfg = PretrainConfig {
        scenes_per_class: 200,
        epochs: 1,
        ..PretrainConfig::default()
    };
    println!("no checkpoint given, pretraining a small backbone (pass one for stronger numbers)");
    let (bb, report) = pretrain_contrastive(&EncoderConfig::compact(), &cfg).expect("pretraining");
    println!("held-out zero-shot {:.1}%", report.zero_shot_accuracy);
    bb
}
