use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, Dataset, DatasetSpec, Split};
use crate::error::{Error, Result};

/// `shots` training samples for every class, indices into `dataset.samples`.
pub fn few_shot(dataset: &Dataset, shots: usize, seed: u64) -> Result<Vec<usize>> {
    let classes: Vec<usize> = (0..dataset.num_classes()).collect();
    few_shot_among(dataset, &classes, shots, seed)
}

/// `shots` training samples for each of `classes` (by primary label).
pub fn few_shot_among(dataset: &Dataset, classes: &[usize], shots: usize, seed: u64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(classes.len() * shots);
    for &class in classes {
        let mut pool: Vec<usize> = dataset
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == Split::Train && s.label() == class)
            .map(|(i, _)| i)
            .collect();
        if pool.len() < shots {
            return Err(Error::Data(format!(
                "class {class} has {} training samples, {shots} shots requested",
                pool.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, class as u64));
        pool.shuffle(&mut rng);
        pool.truncate(shots);
        pool.sort_unstable();
        out.extend(pool);
    }
    Ok(out)
}

/// Random equal halves of the class set: `(base, novel)`, each sorted.
pub fn split_base_novel(spec: &DatasetSpec, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = spec.num_classes;
    if k % 2 != 0 {
        return Err(Error::Contract(format!("base/novel split needs an even class count, got {k}")));
    }
    let mut classes: Vec<usize> = (0..k).collect();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut base = classes[..k / 2].to_vec();
    let mut novel = classes[k / 2..].to_vec();
    base.sort_unstable();
    novel.sort_unstable();
    Ok((base, novel))
}

/// Class-stratified random `⌊f·N⌋` of the training split.
pub fn subset_fraction(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Contract(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let train = dataset.indices(Split::Train);
    let k = dataset.num_classes();
    let target = (fraction * train.len() as f64 + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in &train {
        pools[dataset.samples[i].label()].push(i);
    }
    let mut quota = vec![target / k; k];
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    for &c in order.iter().take(target % k) {
        quota[c] += 1;
    }
    let mut out = Vec::with_capacity(target);
    for (c, pool) in pools.iter_mut().enumerate() {
        if pool.len() < quota[c] {
            return Err(Error::Data(format!(
                "class {c} has {} training samples, needs {}",
                pool.len(),
                quota[c]
            )));
        }
        pool.shuffle(&mut rng);
        out.extend_from_slice(&pool[..quota[c]]);
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::generate;
    use super::*;

    fn data(k: usize, per_class: usize) -> Dataset {
        generate(
            &DatasetSpec {
                num_classes: k,
                train_per_class: per_class,
                test_per_class: 2,
                image_size: 16,
                ..DatasetSpec::default()
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn few_shot_counts_and_disjointness() {
        let d = data(10, 16);
        let idx = few_shot(&d, 16, 1).unwrap();
        assert_eq!(idx.len(), 160);
        let one = few_shot(&d, 1, 1).unwrap();
        assert_eq!(one.len(), 10);
        let test: std::collections::HashSet<usize> = d.indices(Split::Test).into_iter().collect();
        assert!(idx.iter().all(|i| !test.contains(i)));
        assert!(matches!(few_shot(&d, 17, 1), Err(Error::Data(_))));
    }

    #[test]
    fn few_shot_is_reproducible_per_seed() {
        let d = data(4, 12);
        let a = few_shot(&d, 4, 10).unwrap();
        assert_eq!(a, few_shot(&d, 4, 10).unwrap());
        let b = few_shot(&d, 4, 11).unwrap();
        assert_ne!(a, b);
        let overlap = a.iter().filter(|i| b.contains(i)).count();
        assert!(overlap < a.len());
    }

    #[test]
    fn base_novel_halves() {
        let spec = DatasetSpec::default();
        let (base, novel) = split_base_novel(&spec, 3).unwrap();
        assert_eq!((base.len(), novel.len()), (5, 5));
        let mut all: Vec<usize> = base.iter().chain(&novel).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let odd = DatasetSpec { num_classes: 7, ..spec };
        assert!(matches!(split_base_novel(&odd, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn fraction_sizes_and_stratification() {
        let d = data(10, 100);
        assert_eq!(subset_fraction(&d, 1.0, 0).unwrap().len(), 1000);
        let half = subset_fraction(&d, 0.5, 0).unwrap();
        assert_eq!(half.len(), 500);
        for f in [0.05, 0.1, 0.2, 0.3] {
            let s = subset_fraction(&d, f, 4).unwrap();
            assert_eq!(s.len(), (f * 1000.0_f64).round() as usize);
            let mut counts = vec![0usize; 10];
            for &i in &s {
                counts[d.samples[i].label()] += 1;
            }
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1);
        }
        assert!(subset_fraction(&d, 0.0, 0).is_err());
        assert!(subset_fraction(&d, 1.5, 0).is_err());
    }
}
