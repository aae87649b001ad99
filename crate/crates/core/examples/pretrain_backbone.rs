//! Contrastive pretraining of the compact dual encoder on generated captions.
//!
//! ```bash
//! cargo run --release --example pretrain_backbone -- runs/backbone.ckpt
//! ```
//!
//! The default settings take a couple of minutes on one core.

use std::path::PathBuf;

use dapt::encoder::{held_out_zero_shot, pretrain_contrastive, EncoderConfig, PretrainConfig};

fn main() -> dapt::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/backbone.ckpt".into()));
    let encoder = EncoderConfig::compact();
    let cfg = PretrainConfig::default();
    println!(
        "{} classes x {} scenes, {} epochs, context bias {}",
        cfg.num_classes, cfg.scenes_per_class, cfg.epochs, cfg.context_bias
    );

    let (backbone, report) = pretrain_contrastive(&encoder, &cfg)?;
    println!("probe loss {:.4} before training", report.initial_probe_loss);
    for (e, (train, probe)) in report.epoch_loss.iter().zip(&report.probe_loss).enumerate() {
        println!("epoch {e}: train {train:.4}  probe {probe:.4}");
    }
    println!("held-out zero-shot accuracy {:.2}%", report.zero_shot_accuracy);

    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).expect("output directory");
    }
    backbone.save(&out)?;
    // The score is a pure function of the saved weights.
    let again = held_out_zero_shot(&dapt::encoder::Backbone::load(&out)?, &cfg)?;
    assert_eq!(again, report.zero_shot_accuracy);
    println!("saved {}", out.display());
    Ok(())
}
