//! An ablation plan over several seeds, run on a worker pool and reported as
//! mean and population std per variant.
//!
//! ```bash
//! DAPT_WORKERS=2 cargo run --release --example ablation [-- backbone.ckpt]
//! ```

mod support;

use dapt::losses::LossWeights;
use dapt::scenedata::{generate, DatasetSpec};
use dapt::trainer::{run_ablation, worker_count, AblationPlan, AblationSetup, MaskOrigin, Protocol, TrainConfig};

fn main() -> dapt::Result<()> {
    let bb = support::backbone();
    let data = generate(
        &DatasetSpec {
            image_size: bb.config().image_size,
            context_bias: 0.9,
            ..DatasetSpec::default()
        },
        7,
    )?;
    let base = TrainConfig {
        epochs: 5,
        mask_source: MaskOrigin::Oracle,
        ..TrainConfig::default()
    };
    let setup = AblationSetup {
        backbone: &bb,
        dataset: &data,
        protocol: Protocol::FewShot { shots: 4 },
        seeds: vec![1, 2, 3],
        cam_iou: true,
    };

    println!("{} workers", worker_count());
    for plan in [AblationPlan::loss_items(&LossWeights::few_shot()), AblationPlan::erase()] {
        let report = run_ablation(&plan, &base, &setup)?;
        println!("[{}]", report.plan);
        print!("{}", report.to_csv());
    }
    Ok(())
}
