//! Building, overriding and echoing a TOML run configuration the way the
//! `dapt` binary does.
//!
//! ```bash
//! cargo run --release --example run_config
//! ```

use std::path::PathBuf;

use dapt::cli::{Overrides, RunConfig, WeightsPreset};
use dapt::trainer::{MaskOrigin, Protocol};

fn main() -> dapt::Result<()> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/fewshot.toml"))
        .expect("bundled config");
    let base = RunConfig::from_toml(&text)?;
    println!("loaded: {:?}, seeds {:?}", base.protocol, base.seeds);

    let o = Overrides {
        seed: Some(3),
        shots: Some(4),
        mask_source: Some(MaskOrigin::Gradcam),
        weights_preset: Some(WeightsPreset::BaseToNovel),
        out: Some(PathBuf::from("runs/run_config")),
        ..Overrides::default()
    };
    let c = o.apply(base)?;
    assert_eq!(c.protocol, Protocol::FewShot { shots: 4 });
    println!("weights after preset: {:?}", c.train.weights);
    println!("echo at {}", c.echo()?.display());

    let broken = text.replace("margin = 5.0\n", "");
    match RunConfig::from_toml(&broken) {
        Err(e) => println!("missing key reported: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
