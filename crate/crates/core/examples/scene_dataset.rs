//! Generating a synthetic scene dataset, sampling few-shot and base/novel
//! splits, and storing it on disk.
//!
//! ```bash
//! cargo run --release --example scene_dataset
//! ```

use std::path::Path;

use dapt::disentangle::io::write_ppm;
use dapt::scenedata::{few_shot, generate, habitat, load, save, split_base_novel, DatasetSpec, Split};

fn main() -> dapt::Result<()> {
    let spec = DatasetSpec {
        image_size: 32,
        context_bias: 0.9,
        ..DatasetSpec::default()
    };
    let data = generate(&spec, 7)?;
    println!("classes: {}", data.class_names.join(", "));
    println!(
        "train per class {:?}\ntest per class  {:?}",
        data.class_histogram(Split::Train),
        data.class_histogram(Split::Test)
    );

    let in_habitat = |split| {
        let idx = data.indices(split);
        let n = idx.iter().filter(|&&i| data.samples[i].bg_class == habitat(data.samples[i].label())).count();
        100.0 * n as f64 / idx.len() as f64
    };
    println!(
        "scenes on their habitat background: train {:.0}%, test {:.0}%",
        in_habitat(Split::Train),
        in_habitat(Split::Test)
    );

    let shots = few_shot(&data, 4, 1)?;
    let (base, novel) = split_base_novel(&spec, spec.partition_seed)?;
    println!("4-shot indices {shots:?}");
    println!("base {base:?} novel {novel:?}");

    let dir = Path::new("runs/scene_dataset");
    save(&data, dir)?;
    assert_eq!(load(dir)?.samples, data.samples);
    for &i in &shots[..4] {
        let s = &data.samples[i];
        write_ppm(&dir.join(format!("sample-{i:05}.ppm")), 32, 32, s.image().data())?;
    }
    println!("stored in {}", dir.display());
    Ok(())
}
