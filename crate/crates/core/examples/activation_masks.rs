//! Foreground/background views from class activation maps: heatmap, hard
//! mask, blurred split and grid erasing, written as PGM/PPM images.
//!
//! ```bash
//! cargo run --release --example activation_masks [-- backbone.ckpt]
//! ```

mod support;

use std::path::Path;

use dapt::disentangle::io::{write_pgm, write_ppm};
use dapt::disentangle::{
    blur_triplet_with_sigma, erase_mask, gradcam_maps, make_triplet, oracle_mask, Upsample,
};
use dapt::scenedata::{generate, DatasetSpec, Split};
use dapt::trainer::class_texts;

fn main() -> dapt::Result<()> {
    let bb = support::backbone();
    let size = bb.config().image_size;
    let data = generate(
        &DatasetSpec {
            image_size: size,
            ..DatasetSpec::default()
        },
        7,
    )?;
    let classes: Vec<usize> = (0..data.num_classes()).collect();
    let texts = class_texts(&data, &classes)?;
    let out = Path::new("runs/activation_masks");
    std::fs::create_dir_all(out).expect("output directory");

    for &i in data.indices(Split::Test).iter().step_by(50).take(4) {
        let s = &data.samples[i];
        let image = s.image();
        let cam = &gradcam_maps(&bb, None, std::slice::from_ref(&image), &[s.labels.clone()], &texts, Upsample::Bilinear)?[0];
        let mask = cam.to_mask(0.5)?;
        let truth = oracle_mask(s)?;
        println!(
            "{:<16} foreground {:4} px  iou with annotation {:.3}{}",
            data.class_names[s.label()],
            mask.foreground_pixels(),
            mask.iou(&truth)?,
            if cam.degenerate { "  (flat map)" } else { "" }
        );

        let hard = make_triplet(&image, &mask)?;
        let soft = blur_triplet_with_sigma(&image, &mask, (5, 9), 1.0)?;
        let erased = make_triplet(&image, &erase_mask(&mask, 0.5, 8, 0)?)?;
        write_pgm(&out.join(format!("{i:05}-cam.pgm")), size, size, &cam.pixel)?;
        for (tag, t) in [("hard", &hard), ("blur", &soft), ("erase", &erased)] {
            write_ppm(&out.join(format!("{i:05}-{tag}-fg.ppm")), size, size, t.foreground.data())?;
            write_ppm(&out.join(format!("{i:05}-{tag}-bg.ppm")), size, size, t.background.data())?;
        }
    }
    println!("images in {}", out.display());
    Ok(())
}
