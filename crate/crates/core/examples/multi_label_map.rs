//! Multi-object scenes: tuning with the multi-label soft-margin loss and
//! scoring with mean average precision.
//!
//! ```bash
//! cargo run --release --example multi_label_map [-- backbone.ckpt]
//! ```

mod support;

use dapt::autograd::Tensor;
use dapt::scenedata::{generate, DatasetSpec};
use dapt::trainer::{mean_average_precision, run_protocol, score, MaskOrigin, Protocol, TrainConfig};

fn main() -> dapt::Result<()> {
    // Average precision by hand on a toy ranking.
    let scores = Tensor::matrix(4, 2, vec![0.9, 0.1, 0.2, 0.7, 0.3, 0.6, 0.8, 0.4])?;
    let labels = vec![vec![0], vec![0, 1], vec![1], vec![]];
    println!("toy mAP {:.2}", mean_average_precision(&scores, &labels)?);

    let bb = support::backbone();
    let spec = DatasetSpec {
        image_size: bb.config().image_size,
        ..DatasetSpec::multi_object()
    };
    let data = generate(&spec, 7)?;
    let protocol = Protocol::FewShot { shots: 4 };
    let zs = score(&bb, None, &data, protocol)?;
    let cfg = TrainConfig {
        multi_label: true,
        epochs: 5,
        mask_source: MaskOrigin::Oracle,
        ..TrainConfig::default()
    };
    let tuned = run_protocol(&bb, &data, protocol, &cfg)?;
    println!(
        "mAP zero-shot {:.2}  tuned {:.2}",
        zs.map.unwrap_or(0.0),
        tuned.report.map.unwrap_or(0.0)
    );
    Ok(())
}
