mod common;

use dapt::autograd::{Tape, Tensor};
use dapt::instrument;
use dapt::losses::{loss_v, LossWeights, TripletTerms};
use dapt::scenedata::{few_shot, generate, split_base_novel, DatasetSpec, Split};
use dapt::trainer::{
    evaluate, harmonic_mean, mean_average_precision, run_ablation_with, run_protocol, training_split, tune_prompts,
    AblationPlan, AblationSetup, Delta, MaskOrigin, MaskStrategy, Protocol, TrainConfig, Variant,
};
use proptest::prelude::*;

fn short(weights: LossWeights) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        weights,
        mask_source: MaskOrigin::Oracle,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_auxiliary_weights_reduce_to_the_classification_run() {
    let bb = common::quick_backbone();
    let data = common::small_dataset();
    let train = few_shot(data, 4, 2).unwrap();
    let classes: Vec<usize> = (0..data.num_classes()).collect();
    let zeroed = LossWeights {
        visual: 0.0,
        foreground: 0.0,
        background: 0.0,
        ..LossWeights::few_shot()
    };
    let a = tune_prompts(bb, data, &train, &classes, &short(LossWeights::baseline())).unwrap();
    let other = TrainConfig {
        mask_source: MaskOrigin::Gradcam,
        mask_strategy: MaskStrategy::Blur,
        erase_rate: 0.5,
        bg_classes: 5,
        ..short(zeroed)
    };
    let b = tune_prompts(bb, data, &train, &classes, &other).unwrap();
    assert_eq!(a.prompts, b.prompts);
    assert_eq!(a.trace, b.trace);
    for r in &a.trace {
        assert_eq!((r.visual, r.foreground, r.background), (0.0, 0.0, 0.0));
        assert_eq!(r.loss, r.cls);
    }
}

#[test]
fn tuning_never_touches_the_backbone_and_is_seed_deterministic() {
    let bb = common::quick_backbone();
    let data = common::small_dataset();
    let before = bb.to_bytes();
    let cfg = TrainConfig {
        epochs: 2,
        mask_source: MaskOrigin::Gradcam,
        ..TrainConfig::default()
    };
    let a = run_protocol(bb, data, Protocol::FewShot { shots: 4 }, &cfg).unwrap();
    let b = run_protocol(bb, data, Protocol::FewShot { shots: 4 }, &cfg).unwrap();
    assert_eq!(bb.to_bytes(), before);
    assert_eq!(a.report, b.report);
    assert_eq!(a.outcome.prompts, b.outcome.prompts);
    assert!(a.outcome.pseudo_label_accuracy.is_some());
}

#[test]
fn training_lowers_the_loss() {
    let bb = common::quick_backbone();
    let data = common::small_dataset();
    let cfg = TrainConfig {
        epochs: 8,
        ..short(LossWeights::few_shot())
    };
    let r = run_protocol(bb, data, Protocol::FewShot { shots: 8 }, &cfg).unwrap();
    let t = &r.outcome.trace;
    assert!(t.last().unwrap().loss < t[0].loss, "{t:?}");
}

#[test]
fn evaluation_uses_whole_images_and_class_texts_only() {
    let bb = common::quick_backbone();
    let data = common::small_dataset();
    let test = data.indices(Split::Test);
    let classes: Vec<usize> = (0..data.num_classes()).collect();
    instrument::reset();
    let start = instrument::snapshot();
    let r = evaluate(bb, None, data, &test, &classes).unwrap();
    let used = instrument::snapshot().since(&start);
    assert_eq!((used.masks, used.triplets), (0, 0));
    assert_eq!(used.image_passes, test.len() as u64);
    assert_eq!(used.text_passes, classes.len() as u64);
    assert_eq!(r.per_class_accuracy.len(), classes.len());
    assert!(evaluate(bb, None, data, &[], &classes).is_err());
}

#[test]
fn base_to_novel_trains_on_base_classes_only() {
    let bb = common::quick_backbone();
    let data = common::small_dataset();
    let (base, novel) = split_base_novel(&data.spec, data.spec.partition_seed).unwrap();
    let (train, classes) = training_split(data, Protocol::BaseToNovel { shots: 4 }, 1).unwrap();
    assert_eq!(classes, base);
    assert!(train.iter().all(|&i| base.contains(&data.samples[i].label())));
    assert!(classes.iter().all(|c| !novel.contains(c)));
    let r = run_protocol(bb, data, Protocol::BaseToNovel { shots: 4 }, &short(LossWeights::base_to_novel())).unwrap();
    let (b, n, h) = (
        r.report.base_accuracy.unwrap(),
        r.report.novel_accuracy.unwrap(),
        r.report.harmonic_mean,
    );
    if b + n > 0.0 {
        assert!((h.unwrap() - harmonic_mean(b, n).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn multi_label_runs_report_map() {
    let bb = common::quick_backbone();
    let spec = DatasetSpec {
        num_classes: 6,
        train_per_class: 4,
        test_per_class: 4,
        image_size: 32,
        multi_object: true,
        ..DatasetSpec::default()
    };
    let data = generate(&spec, 5).unwrap();
    let cfg = TrainConfig {
        multi_label: true,
        epochs: 1,
        ..short(LossWeights::few_shot())
    };
    let r = run_protocol(bb, &data, Protocol::FewShot { shots: 2 }, &cfg).unwrap();
    let map = r.report.map.unwrap();
    assert!((0.0..=100.0).contains(&map));
}

#[test]
fn ablation_rows_are_independent_of_worker_count() {
    let bb = common::quick_backbone();
    let data = common::small_dataset();
    let setup = AblationSetup {
        backbone: bb,
        dataset: data,
        protocol: Protocol::FewShot { shots: 2 },
        seeds: vec![1, 2],
        cam_iou: true,
    };
    let plan = AblationPlan {
        name: "pair".into(),
        variants: vec![
            Variant::new("cls", vec![Delta::Visual(0.0), Delta::Foreground(0.0), Delta::Background(0.0)]),
            Variant::new("all", vec![]),
        ],
    };
    let base = TrainConfig {
        epochs: 1,
        ..short(LossWeights::few_shot())
    };
    let one = run_ablation_with(&plan, &base, &setup, 1).unwrap();
    let two = run_ablation_with(&plan, &base, &setup, 2).unwrap();
    assert_eq!(one, two);
    assert_eq!(one.rows.len(), 2);
    assert_eq!(one.rows[0].runs.len(), 2);
    let csv = one.to_csv();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("variant,accuracy_mean,accuracy_std,cam_iou_mean,cam_iou_std\n"));

    let bad = AblationPlan {
        name: "bad".into(),
        variants: vec![Variant::new("x", vec![Delta::Margin(1.0), Delta::Margin(2.0)])],
    };
    assert!(run_ablation_with(&bad, &base, &setup, 1).is_err());
}

#[test]
fn plans_follow_the_table_layouts() {
    let w = LossWeights::few_shot();
    assert_eq!(AblationPlan::loss_items(&w).variants.len(), 8);
    let base = TrainConfig::default();
    let erase: Vec<f64> = AblationPlan::erase().resolve(&base).unwrap().iter().map(|c| c.erase_rate).collect();
    assert_eq!(erase, vec![0.1, 0.3, 0.5, 0.7]);
    let kb: Vec<usize> = AblationPlan::bg_classes().resolve(&base).unwrap().iter().map(|c| c.bg_classes).collect();
    assert_eq!(kb, vec![5, 10, 15, 25]);
    assert!(AblationPlan::named("weight-visual", &w).is_ok());
    assert!(AblationPlan::named("weight-nothing", &w).is_err());
    assert!(AblationPlan::named("nope", &w).is_err());
}

fn brute_ap(scores: &[f64], pos: &[bool]) -> Option<f64> {
    let n = scores.len();
    let rank = |p: usize| 1 + (0..n).filter(|&q| scores[q] > scores[p] || (scores[q] == scores[p] && q < p)).count();
    let ps: Vec<usize> = (0..n).filter(|&i| pos[i]).collect();
    if ps.is_empty() {
        return None;
    }
    let s: f64 = ps
        .iter()
        .map(|&p| ps.iter().filter(|&&q| rank(q) <= rank(p)).count() as f64 / rank(p) as f64)
        .sum();
    Some(100.0 * s / ps.len() as f64)
}

proptest! {
    #[test]
    fn harmonic_mean_lies_between_its_inputs(a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
        prop_assume!(a + b > 0.0);
        let h = harmonic_mean(a, b).unwrap();
        prop_assert!(h >= a.min(b) - 1e-12 && h <= a.max(b) + 1e-12);
        if a != b {
            prop_assert!(h < a.max(b));
        }
    }

    #[test]
    fn map_matches_brute_force(data in proptest::collection::vec((0u8..4, proptest::bool::ANY), 24)) {
        let scores = Tensor::matrix(6, 4, data.iter().map(|(s, _)| *s as f64).collect()).unwrap();
        let sets: Vec<Vec<usize>> = (0..6).map(|r| (0..4).filter(|&c| data[r * 4 + c].1).collect()).collect();
        let aps: Vec<f64> = (0..4)
            .filter_map(|c| {
                let col: Vec<f64> = (0..6).map(|r| scores.row(r)[c]).collect();
                let pos: Vec<bool> = (0..6).map(|r| sets[r].contains(&c)).collect();
                brute_ap(&col, &pos)
            })
            .collect();
        match mean_average_precision(&scores, &sets) {
            Ok(m) => prop_assert!((m - aps.iter().sum::<f64>() / aps.len() as f64).abs() < 1e-9),
            Err(_) => prop_assert!(aps.is_empty()),
        }
    }

    #[test]
    fn larger_margin_never_lowers_the_triplet_loss(
        vals in proptest::collection::vec(-1.0f64..1.0, 18),
        a in 0.0f64..10.0,
        extra in 0.0f64..5.0,
    ) {
        let tape = Tape::new();
        let m = |o: usize| tape.constant(Tensor::matrix(2, 3, vals[o..o + 6].to_vec()).unwrap());
        let (z, f, b) = (m(0), m(6), m(12));
        let lo = loss_v(z, f, b, a, TripletTerms::Both).unwrap().item();
        let hi = loss_v(z, f, b, a + extra, TripletTerms::Both).unwrap().item();
        prop_assert!(hi >= lo);
    }
}
