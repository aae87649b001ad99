//! Tuning on half of the classes and scoring both halves. The harmonic mean
//! rewards prompts that do not overfit the seen classes.
//!
//! ```bash
//! cargo run --release --example base_to_novel [-- backbone.ckpt]
//! ```

mod support;

use dapt::losses::LossWeights;
use dapt::scenedata::{generate, split_base_novel, DatasetSpec};
use dapt::trainer::{run_protocol, score, MaskOrigin, Protocol, TrainConfig};

fn main() -> dapt::Result<()> {
    let bb = support::backbone();
    let spec = DatasetSpec {
        image_size: bb.config().image_size,
        context_bias: 0.9,
        ..DatasetSpec::default()
    };
    let data = generate(&spec, 7)?;
    let (base, novel) = split_base_novel(&spec, spec.partition_seed)?;
    println!("base classes {base:?}, novel classes {novel:?}");

    let protocol = Protocol::BaseToNovel { shots: 8 };
    let zs = score(&bb, None, &data, protocol)?;
    let cfg = TrainConfig {
        epochs: 10,
        weights: LossWeights::base_to_novel(),
        mask_source: MaskOrigin::Oracle,
        ..TrainConfig::default()
    };
    let tuned = run_protocol(&bb, &data, protocol, &cfg)?.report;
    for (name, r) in [("zero-shot", &zs), ("tuned", &tuned)] {
        println!(
            "{name:>9}: base {:6.2}  novel {:6.2}  hm {:6.2}",
            r.base_accuracy.unwrap_or(0.0),
            r.novel_accuracy.unwrap_or(0.0),
            r.harmonic_mean.unwrap_or(0.0)
        );
    }
    Ok(())
}
