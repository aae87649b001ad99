//! Few-shot prompt tuning with all four loss terms, compared against the
//! classification-only baseline on the same seed.
//!
//! ```bash
//! cargo run --release --example few_shot_tuning [-- backbone.ckpt]
//! ```

mod support;

use dapt::losses::LossWeights;
use dapt::scenedata::{generate, DatasetSpec};
use dapt::trainer::{run_protocol, MaskOrigin, Protocol, TrainConfig};

fn main() -> dapt::Result<()> {
    let bb = support::backbone();
    let spec = DatasetSpec {
        image_size: bb.config().image_size,
        context_bias: 0.9,
        ..DatasetSpec::default()
    };
    let data = generate(&spec, 7)?;
    let protocol = Protocol::FewShot { shots: 8 };

    for (name, weights) in [("cls", LossWeights::baseline()), ("all", LossWeights::few_shot())] {
        let cfg = TrainConfig {
            epochs: 10,
            weights,
            mask_source: MaskOrigin::Oracle,
            ..TrainConfig::default()
        };
        let run = run_protocol(&bb, &data, protocol, &cfg)?;
        let first = &run.outcome.trace[0];
        let last = run.outcome.trace.last().unwrap();
        println!(
            "{name:>4}: accuracy {:.2}%  loss {:.3} -> {:.3}",
            run.report.accuracy.unwrap_or(0.0),
            first.loss,
            last.loss
        );
        println!(
            "      last epoch  cls {:.3}  visual {:.3}  fg {:.3}  bg {:.3}",
            last.cls, last.visual, last.foreground, last.background
        );
        if let Some(p) = run.outcome.pseudo_label_accuracy {
            println!("      background pseudo-labels {p:.1}% correct");
        }
    }
    Ok(())
}
