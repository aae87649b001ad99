use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{MaskStrategy, TrainConfig};
use super::metrics::{cam_foreground_iou, MetricsReport};
use super::protocol::{run_protocol, Protocol};
use crate::encoder::Backbone;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, TripletTerms};
use crate::scenedata::{Dataset, Split};

/// Environment variable holding the worker count of ablation runs.
pub const WORKERS_ENV: &str = "DAPT_WORKERS";

/// One change applied to the base configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "field", content = "value")]
pub enum Delta {
    Visual(f64),
    Foreground(f64),
    Background(f64),
    Margin(f64),
    EraseRate(f64),
    BgClasses(usize),
    MaskStrategy(MaskStrategy),
    TripletTerms(TripletTerms),
}

impl Delta {
    fn field(&self) -> &'static str {
        match self {
            Delta::Visual(_) => "visual",
            Delta::Foreground(_) => "foreground",
            Delta::Background(_) => "background",
            Delta::Margin(_) => "margin",
            Delta::EraseRate(_) => "erase_rate",
            Delta::BgClasses(_) => "bg_classes",
            Delta::MaskStrategy(_) => "mask_strategy",
            Delta::TripletTerms(_) => "triplet_terms",
        }
    }

    fn apply(&self, c: &mut TrainConfig) {
        match *self {
            Delta::Visual(v) => c.weights.visual = v,
            Delta::Foreground(v) => c.weights.foreground = v,
            Delta::Background(v) => c.weights.background = v,
            Delta::Margin(v) => c.weights.margin = v,
            Delta::EraseRate(v) => c.erase_rate = v,
            Delta::BgClasses(k) => c.bg_classes = k,
            Delta::MaskStrategy(s) => c.mask_strategy = s,
            Delta::TripletTerms(t) => c.triplet_terms = t,
        }
    }
}

/// A labelled set of deltas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub deltas: Vec<Delta>,
}

impl Variant {
    pub fn new(label: impl Into<String>, deltas: Vec<Delta>) -> Self {
        Variant {
            label: label.into(),
            deltas,
        }
    }

    /// `base` with every delta applied; a field set twice to different
    /// values is a plan error.
    pub fn resolve(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let mut seen: BTreeMap<&str, Delta> = BTreeMap::new();
        for d in &self.deltas {
            if let Some(prev) = seen.insert(d.field(), *d) {
                if prev != *d {
                    return Err(Error::Plan(format!(
                        "variant `{}` sets {} twice ({prev:?} and {d:?})",
                        self.label,
                        d.field()
                    )));
                }
            }
        }
        let mut c = base.clone();
        for d in &self.deltas {
            d.apply(&mut c);
        }
        c.validate()?;
        Ok(c)
    }
}

/// A named list of variants run against one base configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    pub name: String,
    pub variants: Vec<Variant>,
}

impl AblationPlan {
    /// Every on/off combination of the visual, foreground and background
    /// terms, with "on" taken from `weights`.
    pub fn loss_items(weights: &LossWeights) -> Self {
        let variants = (0..8u8)
            .map(|bits| {
                let (v, f, b) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
                let mut label = vec!["cls"];
                label.extend(v.then_some("v"));
                label.extend(f.then_some("f"));
                label.extend(b.then_some("b"));
                Variant::new(
                    label.join("+"),
                    vec![
                        Delta::Visual(if v { weights.visual } else { 0.0 }),
                        Delta::Foreground(if f { weights.foreground } else { 0.0 }),
                        Delta::Background(if b { weights.background } else { 0.0 }),
                    ],
                )
            })
            .collect();
        AblationPlan {
            name: "loss-items".into(),
            variants,
        }
    }

    /// Sweeps one loss weight (`visual`, `foreground`, `background` or `margin`).
    pub fn loss_weight(term: &str, values: &[f64]) -> Result<Self> {
        let make: fn(f64) -> Delta = match term {
            "visual" => Delta::Visual,
            "foreground" => Delta::Foreground,
            "background" => Delta::Background,
            "margin" => Delta::Margin,
            other => return Err(Error::Plan(format!("no loss weight named `{other}`"))),
        };
        Ok(AblationPlan {
            name: format!("weight-{term}"),
            variants: values
                .iter()
                .map(|&v| Variant::new(format!("{term}={v}"), vec![make(v)]))
                .collect(),
        })
    }

    pub fn erase() -> Self {
        AblationPlan {
            name: "erase".into(),
            variants: [0.1, 0.3, 0.5, 0.7]
                .iter()
                .map(|&r| Variant::new(format!("r={r}"), vec![Delta::EraseRate(r)]))
                .collect(),
        }
    }

    pub fn bg_classes() -> Self {
        AblationPlan {
            name: "bg-classes".into(),
            variants: [5, 10, 15, 25]
                .iter()
                .map(|&k| Variant::new(format!("k_b={k}"), vec![Delta::BgClasses(k)]))
                .collect(),
        }
    }

    pub fn blur() -> Self {
        AblationPlan {
            name: "blur".into(),
            variants: vec![
                Variant::new("hard", vec![Delta::MaskStrategy(MaskStrategy::Hard)]),
                Variant::new("blur", vec![Delta::MaskStrategy(MaskStrategy::Blur)]),
            ],
        }
    }

    pub fn triplet_terms() -> Self {
        AblationPlan {
            name: "triplet-terms".into(),
            variants: vec![
                Variant::new("foreground-positive", vec![Delta::TripletTerms(TripletTerms::ForegroundPositive)]),
                Variant::new("background-negative", vec![Delta::TripletTerms(TripletTerms::BackgroundNegative)]),
                Variant::new("both", vec![Delta::TripletTerms(TripletTerms::Both)]),
            ],
        }
    }

    /// Looks a plan up by name; weight sweeps read as `weight-<term>`.
    pub fn named(name: &str, weights: &LossWeights) -> Result<Self> {
        const SWEEP: [f64; 5] = [0.1, 0.2, 0.4, 0.6, 0.8];
        match name {
            "loss-items" => Ok(Self::loss_items(weights)),
            "erase" => Ok(Self::erase()),
            "bg-classes" => Ok(Self::bg_classes()),
            "blur" => Ok(Self::blur()),
            "triplet-terms" => Ok(Self::triplet_terms()),
            _ => match name.strip_prefix("weight-") {
                Some(term) => Self::loss_weight(term, &SWEEP),
                None => Err(Error::Plan(format!("unknown ablation plan `{name}`"))),
            },
        }
    }

    pub fn resolve(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
        if self.variants.is_empty() {
            return Err(Error::Plan(format!("plan `{}` has no variants", self.name)));
        }
        self.variants.iter().map(|v| v.resolve(base)).collect()
    }
}

/// What every run of a plan shares.
#[derive(Clone, Debug)]
pub struct AblationSetup<'a> {
    pub backbone: &'a Backbone,
    pub dataset: &'a Dataset,
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    /// Also score activation-map overlap with the annotated foreground.
    pub cam_iou: bool,
}

/// Mean and population standard deviation over seeds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Stat { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub accuracy: Option<Stat>,
    pub base_accuracy: Option<Stat>,
    pub novel_accuracy: Option<Stat>,
    pub harmonic_mean: Option<Stat>,
    pub map: Option<Stat>,
    pub cam_iou: Option<Stat>,
    /// Per-seed reports in seed order.
    pub runs: Vec<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub plan: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// One line per variant; columns without data in any row are left out.
    pub fn to_csv(&self) -> String {
        type Pick = fn(&AblationRow) -> Option<Stat>;
        let cols: [(&str, Pick); 6] = [
            ("accuracy", |r| r.accuracy),
            ("base", |r| r.base_accuracy),
            ("novel", |r| r.novel_accuracy),
            ("hm", |r| r.harmonic_mean),
            ("map", |r| r.map),
            ("cam_iou", |r| r.cam_iou),
        ];
        let used: Vec<_> = cols.iter().filter(|(_, f)| self.rows.iter().any(|r| f(r).is_some())).collect();
        let mut out = String::from("variant");
        for (name, _) in &used {
            out.push_str(&format!(",{name}_mean,{name}_std"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.label);
            for (_, f) in &used {
                match f(r) {
                    Some(s) => out.push_str(&format!(",{:.4},{:.4}", s.mean, s.std)),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Worker count from [`WORKERS_ENV`], else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `jobs` on up to `workers` threads; results keep job order.
pub fn run_pool<J, T, F>(jobs: &[J], workers: usize, f: F) -> Vec<T>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> T + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn single(setup: &AblationSetup, config: &TrainConfig) -> Result<MetricsReport> {
    let run = run_protocol(setup.backbone, setup.dataset, setup.protocol, config)?;
    let mut report = run.report;
    if setup.cam_iou {
        let test: Vec<usize> = setup
            .dataset
            .indices(Split::Test)
            .into_iter()
            .filter(|&i| run.classes.contains(&setup.dataset.samples[i].label()))
            .collect();
        report.cam_iou = Some(cam_foreground_iou(
            setup.backbone,
            Some(&run.outcome.prompts),
            setup.dataset,
            &test,
            &run.classes,
            config.beta,
        )?);
    }
    Ok(report)
}

/// Runs every variant of `plan` over every seed of `setup`.
pub fn run_ablation(plan: &AblationPlan, base: &TrainConfig, setup: &AblationSetup) -> Result<AblationReport> {
    run_ablation_with(plan, base, setup, worker_count())
}

pub fn run_ablation_with(
    plan: &AblationPlan,
    base: &TrainConfig,
    setup: &AblationSetup,
    workers: usize,
) -> Result<AblationReport> {
    if setup.seeds.is_empty() {
        return Err(Error::Plan("no seeds".into()));
    }
    let configs = plan.resolve(base)?;
    let jobs: Vec<TrainConfig> = configs
        .iter()
        .flat_map(|c| setup.seeds.iter().map(move |&seed| TrainConfig { seed, ..c.clone() }))
        .collect();
    let results = run_pool(&jobs, workers, |c| single(setup, c));
    let mut results = results.into_iter();
    let mut rows = Vec::with_capacity(configs.len());
    for v in &plan.variants {
        let runs = results.by_ref().take(setup.seeds.len()).collect::<Result<Vec<_>>>()?;
        let stat = |f: fn(&MetricsReport) -> Option<f64>| -> Option<Stat> {
            let vals: Option<Vec<f64>> = runs.iter().map(f).collect();
            vals.and_then(|v| Stat::of(&v))
        };
        rows.push(AblationRow {
            label: v.label.clone(),
            accuracy: stat(|r| r.accuracy),
            base_accuracy: stat(|r| r.base_accuracy),
            novel_accuracy: stat(|r| r.novel_accuracy),
            harmonic_mean: stat(|r| r.harmonic_mean),
            map: stat(|r| r.map),
            cam_iou: stat(|r| r.cam_iou),
            runs,
        });
    }
    Ok(AblationReport {
        plan: plan.name.clone(),
        seeds: setup.seeds.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_items_has_eight_distinct_rows() {
        let p = AblationPlan::loss_items(&LossWeights::few_shot());
        assert_eq!(p.variants.len(), 8);
        let cfgs = p.resolve(&TrainConfig::default()).unwrap();
        for i in 0..8 {
            for j in 0..i {
                assert_ne!(cfgs[i].weights, cfgs[j].weights);
            }
        }
        assert_eq!(cfgs[0].weights, LossWeights::baseline());
        assert_eq!(cfgs[7].weights, LossWeights::few_shot());
    }

    #[test]
    fn conflicting_deltas_rejected() {
        let v = Variant::new("x", vec![Delta::EraseRate(0.1), Delta::EraseRate(0.3)]);
        assert!(matches!(v.resolve(&TrainConfig::default()), Err(Error::Plan(_))));
        let same = Variant::new("y", vec![Delta::BgClasses(5), Delta::BgClasses(5)]);
        assert_eq!(same.resolve(&TrainConfig::default()).unwrap().bg_classes, 5);
    }

    #[test]
    fn pool_keeps_order() {
        let jobs: Vec<u64> = (0..23).collect();
        assert_eq!(run_pool(&jobs, 4, |j| j * j), jobs.iter().map(|j| j * j).collect::<Vec<_>>());
        assert!(run_pool(&Vec::<u64>::new(), 3, |j| *j).is_empty());
    }

    #[test]
    fn stat_of() {
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(Stat::of(&[]).is_none());
    }
}
