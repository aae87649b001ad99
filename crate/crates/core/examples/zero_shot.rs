//! Zero-shot classification with the frozen backbone: "a photo of <class>"
//! text features against whole-image features.
//!
//! ```bash
//! cargo run --release --example zero_shot [-- backbone.ckpt]
//! ```

mod support;

use dapt::scenedata::{generate, DatasetSpec, Split};
use dapt::trainer::{score, Protocol};

fn main() -> dapt::Result<()> {
    let bb = support::backbone();
    let spec = DatasetSpec {
        image_size: bb.config().image_size,
        ..DatasetSpec::default()
    };
    let data = generate(&spec, 7)?;
    println!("{} test scenes over {} classes", data.indices(Split::Test).len(), data.num_classes());

    let fs = score(&bb, None, &data, Protocol::FewShot { shots: 1 })?;
    println!("top-1 accuracy {:.2}%", fs.accuracy.unwrap_or(0.0));
    for (name, acc) in data.class_names.iter().zip(&fs.per_class_accuracy) {
        println!("  {name:<16} {acc:6.2}");
    }

    let b2n = score(&bb, None, &data, Protocol::BaseToNovel { shots: 1 })?;
    println!(
        "base {:.2}  novel {:.2}  hm {:.2}",
        b2n.base_accuracy.unwrap_or(0.0),
        b2n.novel_accuracy.unwrap_or(0.0),
        b2n.harmonic_mean.unwrap_or(0.0)
    );
    Ok(())
}
