mod common;

use dapt::autograd::Tensor;
use dapt::disentangle::{
    blur_triplet_with_sigma, erase_mask, gradcam_mask, make_triplet, oracle_mask, MaskMode, MaskSource, SemanticMask,
};
use dapt::scenedata::Split;
use dapt::trainer::class_texts;
use proptest::prelude::*;

fn image(values: &[f64], side: usize) -> Tensor {
    Tensor::new(vec![3, side, side], values.to_vec()).unwrap()
}

#[test]
fn oracle_masks_copy_the_annotation() {
    let d = common::small_dataset();
    for s in d.samples.iter().take(10) {
        let m = oracle_mask(s).unwrap();
        assert_eq!(m.flags(), s.gt_mask);
        assert_eq!(m.source(), MaskSource::Oracle);
    }
}

#[test]
fn activation_masks_cover_the_image_grid() {
    let bb = common::quick_backbone();
    let d = common::small_dataset();
    let classes: Vec<usize> = (0..d.num_classes()).collect();
    let texts = class_texts(d, &classes).unwrap();
    let i = d.indices(Split::Test)[0];
    let s = &d.samples[i];
    let m = gradcam_mask(bb, None, &s.image(), s.label(), &texts, 0.5).unwrap();
    assert_eq!((m.height(), m.width()), (32, 32));
    assert_eq!(m.mode(), MaskMode::Binary);
    assert!(m.foreground_pixels() > 0);
    assert!(gradcam_mask(bb, None, &s.image(), 99, &texts, 0.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn views_sum_to_the_image(
        pixels in proptest::collection::vec(0.0f64..1.0, 3 * 64),
        flags in proptest::collection::vec(0u8..2, 64),
        sigma in 0.1f64..1.0,
    ) {
        let im = image(&pixels, 8);
        let m = SemanticMask::binary(8, 8, &flags, MaskSource::Oracle).unwrap();
        for t in [make_triplet(&im, &m).unwrap(), blur_triplet_with_sigma(&im, &m, (3, 5), sigma).unwrap()] {
            for ((a, f), b) in im.data().iter().zip(t.foreground.data()).zip(t.background.data()) {
                prop_assert!((a - f - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blurring_keeps_every_foreground_pixel(
        pixels in proptest::collection::vec(0.0f64..1.0, 3 * 64),
        flags in proptest::collection::vec(0u8..2, 64),
        sigma in 0.1f64..1.0,
    ) {
        let im = image(&pixels, 8);
        let m = SemanticMask::binary(8, 8, &flags, MaskSource::Oracle).unwrap();
        let hard = make_triplet(&im, &m).unwrap();
        let soft = blur_triplet_with_sigma(&im, &m, (3, 5), sigma).unwrap();
        for (h, s) in hard.foreground.data().iter().zip(soft.foreground.data()) {
            prop_assert!(s >= h);
        }
        for ch in 0..3 {
            for (p, &f) in flags.iter().enumerate() {
                if f == 1 {
                    prop_assert_eq!(soft.background.data()[ch * 64 + p], 0.0);
                }
            }
        }
    }

    #[test]
    fn erasing_only_removes_foreground(
        flags in proptest::collection::vec(0u8..2, 256),
        lo in 0.0f64..=1.0,
        hi in 0.0f64..=1.0,
        seed in 0u64..1000,
    ) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let m = SemanticMask::binary(16, 16, &flags, MaskSource::Oracle).unwrap();
        let a = erase_mask(&m, lo, 4, seed).unwrap().flags();
        let b = erase_mask(&m, hi, 4, seed).unwrap().flags();
        for ((&orig, &x), &y) in flags.iter().zip(&a).zip(&b) {
            prop_assert!(x <= orig);
            prop_assert!(y <= x);
        }
        prop_assert_eq!(erase_mask(&m, 0.0, 4, seed).unwrap().flags(), flags);
    }
}
