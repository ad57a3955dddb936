//! Representative exemplar memory.
//!
//! Each class keeps an ordered list of exemplars, most representative first.
//! Lists are chosen once, when the class enters memory, and afterwards are
//! only ever truncated from the end, so every stored list is a prefix of the
//! original selection order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClassId;
use crate::tensor::Matrix;

/// Number of equal-width distance bins used by [`histogram_order`].
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum MemoryMode {
    /// At most `capacity` exemplars in total, shared evenly between classes.
    FixedTotal { capacity: usize },
    /// Exactly up to `per_class` exemplars for every class.
    FixedPerClass { per_class: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SelectionStrategy {
    /// Greedy mean matching: each prefix's mean tracks the class mean.
    Herding,
    /// Plain ascending sort by distance to the class mean.
    NearestMeanSort,
    Random { seed: u64 },
    /// Proportional sampling across a ten-bin histogram of mean distances.
    Histogram,
}

impl SelectionStrategy {
    /// Full ordering of a class's samples. `salt` decorrelates the random
    /// strategy across classes and is ignored by the others.
    pub fn order(&self, features: &Matrix, salt: u64) -> Result<Vec<usize>> {
        let mean = class_mean(features);
        match *self {
            SelectionStrategy::Herding => herding_order(features, &mean),
            SelectionStrategy::NearestMeanSort => nearest_mean_order(features, &mean),
            SelectionStrategy::Histogram => histogram_order(features, &mean),
            SelectionStrategy::Random { seed } => Ok(random_order(
                seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15),
                features.rows(),
            )),
        }
    }
}

/// Index of a sample inside the training split it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub usize);

/// A stored sample: its identity and raw (un-normalized, un-augmented) input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub id: SampleId,
    pub input: Vec<f64>,
}

/// Samples of a class entering memory, with features row-aligned to `samples`.
#[derive(Debug, Clone)]
pub struct NewClassData {
    pub class: ClassId,
    pub samples: Vec<Exemplar>,
    pub features: Matrix,
}

pub fn class_mean(features: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; features.cols()];
    for r in 0..features.rows() {
        for (m, v) in mean.iter_mut().zip(features.row(r)) {
            *m += v;
        }
    }
    let n = features.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn check_mean(features: &Matrix, mean: &[f64]) -> Result<()> {
    if features.cols() != mean.len() {
        return Err(Error::Argument(format!(
            "features have dimension {} but the mean has {}",
            features.cols(),
            mean.len()
        )));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Iterative herding. At step `k` picks the unchosen sample that brings the
/// mean of the `k` chosen features closest to `mean`; ties go to the lowest
/// index. Returns a permutation of all rows.
pub fn herding_order(features: &Matrix, mean: &[f64]) -> Result<Vec<usize>> {
    check_mean(features, mean)?;
    let n = features.rows();
    let d = features.cols();
    let mut chosen = vec![false; n];
    let mut running = vec![0.0; d];
    let mut candidate = vec![0.0; d];
    let mut order = Vec::with_capacity(n);
    for k in 1..=n {
        let inv_k = 1.0 / k as f64;
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !chosen[i]) {
            for ((c, s), f) in candidate.iter_mut().zip(&running).zip(features.row(i)) {
                *c = (s + f) * inv_k;
            }
            let dist = sq_dist(mean, &candidate);
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (pick, _) = best.expect("at least one unchosen sample");
        chosen[pick] = true;
        for (s, f) in running.iter_mut().zip(features.row(pick)) {
            *s += f;
        }
        order.push(pick);
    }
    Ok(order)
}

/// Ascending distance to `mean`, stable on ties.
pub fn nearest_mean_order(features: &Matrix, mean: &[f64]) -> Result<Vec<usize>> {
    check_mean(features, mean)?;
    let dists: Vec<f64> = (0..features.rows())
        .map(|i| sq_dist(features.row(i), mean))
        .collect();
    let mut order: Vec<usize> = (0..features.rows()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]));
    Ok(order)
}

/// Distance-histogram selection.
///
/// Distances to the mean are bucketed into [`HISTOGRAM_BINS`] equal-width
/// bins over `[min, max]`; the top edge belongs to the last bin. Bins are then
/// interleaved in proportion to their occupancy: the `j`-th member (input
/// order) of a bin holding `c` samples is placed at fractional position
/// `(j + 0.5) / c`, and samples are emitted by that position, lower bin first
/// on ties. Every prefix therefore draws from each bin roughly in proportion
/// to its size, and a bin's first member precedes any bin's second member
/// whenever bins are equally occupied.
pub fn histogram_order(features: &Matrix, mean: &[f64]) -> Result<Vec<usize>> {
    check_mean(features, mean)?;
    let n = features.rows();
    let dists: Vec<f64> = (0..n).map(|i| sq_dist(features.row(i), mean).sqrt()).collect();
    let bins = histogram_bins(&dists);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); HISTOGRAM_BINS];
    for (i, &b) in bins.iter().enumerate() {
        members[b].push(i);
    }
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for (b, list) in members.iter().enumerate() {
        let c = list.len() as f64;
        for (j, &i) in list.iter().enumerate() {
            keyed.push(((j as f64 + 0.5) / c, b, i));
        }
    }
    keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    Ok(keyed.into_iter().map(|(_, _, i)| i).collect())
}

/// Bin index of each distance.
pub fn histogram_bins(dists: &[f64]) -> Vec<usize> {
    let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = dists.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / HISTOGRAM_BINS as f64;
    dists
        .iter()
        .map(|&d| {
            if width > 0.0 {
                (((d - min) / width) as usize).min(HISTOGRAM_BINS - 1)
            } else {
                0
            }
        })
        .collect()
}

/// Seeded permutation of `0..count`.
pub fn random_order(seed: u64, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// The first `n` samples in `strategy` order.
pub fn select_exemplars(
    samples: &[Exemplar],
    features: &Matrix,
    n: usize,
    strategy: SelectionStrategy,
    salt: u64,
) -> Result<Vec<Exemplar>> {
    if samples.is_empty() || n == 0 {
        return Ok(Vec::new());
    }
    if features.rows() != samples.len() {
        return Err(Error::Argument(format!(
            "{} samples but {} feature rows",
            samples.len(),
            features.rows()
        )));
    }
    let order = strategy.order(features, salt)?;
    Ok(order.into_iter().take(n).map(|i| samples[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeMemory {
    mode: MemoryMode,
    strategy: SelectionStrategy,
    store: BTreeMap<ClassId, Vec<Exemplar>>,
}

impl RepresentativeMemory {
    pub fn new(mode: MemoryMode, strategy: SelectionStrategy) -> Self {
        RepresentativeMemory {
            mode,
            strategy,
            store: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> MemoryMode {
        self.mode
    }

    pub fn strategy(&self) -> SelectionStrategy {
        self.strategy
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.store.keys().copied()
    }

    pub fn exemplars(&self, class: ClassId) -> &[Exemplar] {
        self.store.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &[Exemplar])> {
        self.store.iter().map(|(c, v)| (*c, v.as_slice()))
    }

    pub fn num_classes(&self) -> usize {
        self.store.len()
    }

    pub fn total(&self) -> usize {
        self.store.values().map(Vec::len).sum()
    }

    /// Exemplars per class when `total_classes` classes share the memory.
    pub fn per_class_budget(&self, total_classes: usize) -> Result<usize> {
        per_class_budget(self.mode, total_classes)
    }

    /// Truncates every class list to its first `n` entries.
    pub fn reduce_exemplars(&mut self, n: usize) {
        for list in self.store.values_mut() {
            list.truncate(n);
        }
    }

    /// Makes room, then stores the selected exemplars for each new class.
    pub fn update_memory(&mut self, new_classes: Vec<NewClassData>) -> Result<()> {
        let mut incoming = BTreeSet::new();
        for nc in &new_classes {
            if self.store.contains_key(&nc.class) || !incoming.insert(nc.class) {
                return Err(Error::Config(format!("class {} is already in memory", nc.class)));
            }
        }
        let n = self.per_class_budget(self.store.len() + new_classes.len())?;
        self.reduce_exemplars(n);
        for nc in new_classes {
            let chosen =
                select_exemplars(&nc.samples, &nc.features, n, self.strategy, nc.class.0 as u64)?;
            self.store.insert(nc.class, chosen);
        }
        Ok(())
    }

    pub fn manifest(&self) -> MemoryManifest {
        MemoryManifest {
            mode: self.mode,
            strategy: self.strategy,
            classes: self
                .store
                .iter()
                .map(|(c, list)| ClassManifest {
                    class: *c,
                    sample_ids: list.iter().map(|e| e.id).collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds a memory from its manifest, fetching raw inputs by id.
    pub fn from_manifest(
        manifest: &MemoryManifest,
        mut lookup: impl FnMut(SampleId) -> Option<Vec<f64>>,
    ) -> Result<Self> {
        let mut store = BTreeMap::new();
        for entry in &manifest.classes {
            let list = entry
                .sample_ids
                .iter()
                .map(|&id| {
                    lookup(id)
                        .map(|input| Exemplar { id, input })
                        .ok_or_else(|| Error::Data(format!("unknown sample id {}", id.0)))
                })
                .collect::<Result<Vec<_>>>()?;
            if store.insert(entry.class, list).is_some() {
                return Err(Error::Data(format!("class {} listed twice", entry.class)));
            }
        }
        Ok(RepresentativeMemory {
            mode: manifest.mode,
            strategy: manifest.strategy,
            store,
        })
    }
}

pub fn per_class_budget(mode: MemoryMode, total_classes: usize) -> Result<usize> {
    if total_classes == 0 {
        return Err(Error::Argument("per-class budget over zero classes".into()));
    }
    Ok(match mode {
        MemoryMode::FixedTotal { capacity } => capacity / total_classes,
        MemoryMode::FixedPerClass { per_class } => per_class,
    })
}

/// Serializable description of memory contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryManifest {
    pub mode: MemoryMode,
    pub strategy: SelectionStrategy,
    pub classes: Vec<ClassManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassManifest {
    pub class: ClassId,
    /// Most representative first.
    pub sample_ids: Vec<SampleId>,
}

impl MemoryManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn points(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn exemplars(n: usize) -> Vec<Exemplar> {
        (0..n)
            .map(|i| Exemplar {
                id: SampleId(i),
                input: vec![i as f64],
            })
            .collect()
    }

    /// Re-evaluates every candidate from scratch at every step.
    fn greedy_oracle(features: &Matrix) -> Vec<usize> {
        let n = features.rows();
        let d = features.cols();
        let mean: Vec<f64> = (0..d)
            .map(|j| (0..n).map(|i| features.get(i, j)).sum::<f64>() / n as f64)
            .collect();
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < n {
            let mut best = None;
            let mut best_dist = f64::INFINITY;
            for cand in 0..n {
                if chosen.contains(&cand) {
                    continue;
                }
                let mut set = chosen.clone();
                set.push(cand);
                let dist: f64 = (0..d)
                    .map(|j| {
                        let m = set.iter().map(|&i| features.get(i, j)).sum::<f64>() / set.len() as f64;
                        (mean[j] - m).powi(2)
                    })
                    .sum();
                if dist < best_dist {
                    best_dist = dist;
                    best = Some(cand);
                }
            }
            chosen.push(best.unwrap());
        }
        chosen
    }

    #[test]
    fn budget_examples() {
        let total = |k| MemoryMode::FixedTotal { capacity: k };
        assert_eq!(per_class_budget(total(2000), 100).unwrap(), 20);
        assert_eq!(per_class_budget(total(2000), 10).unwrap(), 200);
        assert_eq!(per_class_budget(total(5), 2).unwrap(), 2);
        assert_eq!(
            per_class_budget(MemoryMode::FixedPerClass { per_class: 7 }, 30).unwrap(),
            7
        );
        assert!(matches!(per_class_budget(total(5), 0), Err(Error::Argument(_))));
    }

    #[test]
    fn herding_small_cases() {
        let one = points(&[[1.0, 2.0]]);
        assert_eq!(herding_order(&one, &class_mean(&one)).unwrap(), vec![0]);
        let twins = points(&[[1.0, 2.0], [1.0, 2.0]]);
        assert_eq!(herding_order(&twins, &class_mean(&twins)).unwrap(), vec![0, 1]);
        assert!(herding_order(&twins, &[0.0]).is_err());
    }

    #[test]
    fn herding_matches_greedy_oracle_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<[f64; 2]> = (0..6)
            .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
            .collect();
        let f = points(&rows);
        let oracle = greedy_oracle(&f);
        assert_eq!(herding_order(&f, &class_mean(&f)).unwrap(), oracle);
        let picked = select_exemplars(&exemplars(6), &f, 2, SelectionStrategy::Herding, 0).unwrap();
        let ids: Vec<usize> = picked.iter().map(|e| e.id.0).collect();
        assert_eq!(ids, oracle[..2].to_vec());
    }

    #[test]
    fn histogram_cases() {
        // equidistant: one occupied bin, input order
        let ring = points(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]);
        assert_eq!(histogram_order(&ring, &[0.0, 0.0]).unwrap(), vec![0, 1, 2, 3]);
        let one = points(&[[3.0, 4.0]]);
        assert_eq!(histogram_order(&one, &class_mean(&one)).unwrap(), vec![0]);

        // distances 1..10 from the origin, shuffled input order
        let dists = [7.0, 2.0, 9.0, 1.0, 10.0, 4.0, 3.0, 8.0, 6.0, 5.0];
        let f = Matrix::from_rows(&dists.iter().map(|&d| [d, 0.0]).collect::<Vec<_>>()).unwrap();
        let order = histogram_order(&f, &[0.0, 0.0]).unwrap();
        // direct simulation: bin = floor((d - 1) / 0.9) capped at 9
        let bin_of = |d: f64| (((d - 1.0) / 0.9) as usize).min(9);
        let mut bins: Vec<usize> = order.iter().map(|&i| bin_of(dists[i])).collect();
        assert_eq!(bins, (0..10).collect::<Vec<_>>());
        bins.sort();
        bins.dedup();
        assert_eq!(bins.len(), 10);
    }

    #[test]
    fn histogram_prefix_is_proportional() {
        // 8 samples near the mean, 2 far away: first five picks take 4 + 1
        let mut rows: Vec<[f64; 2]> = (0..8).map(|i| [1.0 + 0.001 * i as f64, 0.0]).collect();
        rows.push([10.0, 0.0]);
        rows.push([10.0, 0.0]);
        let f = points(&rows);
        let order = histogram_order(&f, &[0.0, 0.0]).unwrap();
        let far = order[..5].iter().filter(|&&i| i >= 8).count();
        assert_eq!(far, 1);
    }

    #[test]
    fn random_select_is_deterministic() {
        let f = Matrix::zeros(20, 3);
        let s = SelectionStrategy::Random { seed: 42 };
        let a = select_exemplars(&exemplars(20), &f, 5, s, 3).unwrap();
        let b = select_exemplars(&exemplars(20), &f, 5, s, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(random_order(9, 10), random_order(9, 10));
    }

    #[test]
    fn select_more_than_available_keeps_all_in_order() {
        let f = points(&[[0.0, 0.0], [5.0, 5.0], [1.0, 1.0]]);
        let all = select_exemplars(&exemplars(3), &f, 10, SelectionStrategy::NearestMeanSort, 0)
            .unwrap();
        let ids: Vec<usize> = all.iter().map(|e| e.id.0).collect();
        assert_eq!(ids, nearest_mean_order(&f, &class_mean(&f)).unwrap());
        assert!(select_exemplars(&exemplars(3), &f, 0, SelectionStrategy::Herding, 0)
            .unwrap()
            .is_empty());
    }

    fn new_class(class: u32, n: usize, offset: usize) -> NewClassData {
        let samples: Vec<Exemplar> = (0..n)
            .map(|i| Exemplar {
                id: SampleId(offset + i),
                input: vec![(offset + i) as f64],
            })
            .collect();
        let features =
            Matrix::from_vec(n, 1, (0..n).map(|i| ((i * 7) % 5) as f64).collect()).unwrap();
        NewClassData {
            class: ClassId(class),
            samples,
            features,
        }
    }

    #[test]
    fn reduce_keeps_prefixes() {
        let mut mem = RepresentativeMemory::new(
            MemoryMode::FixedPerClass { per_class: 3 },
            SelectionStrategy::Herding,
        );
        mem.update_memory(vec![new_class(0, 3, 0)]).unwrap();
        let full = mem.exemplars(ClassId(0)).to_vec();
        let mut big = mem.clone();
        big.reduce_exemplars(10);
        assert_eq!(big, mem);
        mem.reduce_exemplars(1);
        assert_eq!(mem.exemplars(ClassId(0)), &full[..1]);
    }

    #[test]
    fn fixed_total_update_rebalances() {
        let mut mem = RepresentativeMemory::new(
            MemoryMode::FixedTotal { capacity: 10 },
            SelectionStrategy::Herding,
        );
        mem.update_memory(vec![new_class(0, 20, 0), new_class(1, 20, 100)]).unwrap();
        assert_eq!(mem.exemplars(ClassId(0)).len(), 5);
        mem.update_memory(vec![new_class(2, 20, 200), new_class(3, 20, 300), new_class(4, 20, 400)])
            .unwrap();
        assert!(mem.iter().all(|(_, l)| l.len() == 2));
        assert_eq!(mem.total(), 10);
        assert!(matches!(mem.update_memory(vec![new_class(4, 3, 500)]), Err(Error::Config(_))));
    }

    #[test]
    fn fixed_per_class_leaves_old_lists_alone() {
        let mut mem = RepresentativeMemory::new(
            MemoryMode::FixedPerClass { per_class: 3 },
            SelectionStrategy::Herding,
        );
        mem.update_memory(vec![new_class(0, 10, 0)]).unwrap();
        let before = mem.exemplars(ClassId(0)).to_vec();
        mem.update_memory(vec![new_class(1, 50, 100)]).unwrap();
        assert_eq!(mem.exemplars(ClassId(0)), before.as_slice());
        assert_eq!(mem.exemplars(ClassId(1)).len(), 3);
    }

    #[test]
    fn manifest_round_trip() {
        let mut mem = RepresentativeMemory::new(
            MemoryMode::FixedTotal { capacity: 12 },
            SelectionStrategy::Random { seed: 5 },
        );
        mem.update_memory(vec![new_class(3, 10, 0), new_class(1, 10, 10)]).unwrap();
        let m = mem.manifest();
        let back = RepresentativeMemory::from_manifest(&m, |id| Some(vec![id.0 as f64])).unwrap();
        assert_eq!(back, mem);
        assert!(RepresentativeMemory::from_manifest(&m, |_| None).is_err());
    }
}
