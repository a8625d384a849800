//! Train/test splitting and k-fold partitioning, stratified on the skill label.

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::labels::Task;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// One cross-validation fold over the training part. Indices are node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    /// Stratified train/test split followed by stratified k-fold over the train part.
    pub fn new(g: &HeteroGraph, test_fraction: f64, k: usize, seed: u64) -> Result<Self> {
        let (train, test) = split_dataset(g, test_fraction, seed)?;
        let folds = kfold(g, &train, k, seed)?;
        Ok(Self { train, test, folds })
    }
}

/// Groups ids by stratification key (skill label, missing sorts first), each
/// group shuffled by `rng`. Group order is the key order.
fn strata(g: &HeteroGraph, ids: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for &i in ids {
        groups.entry(g.node(i).labels().get(Task::Skill)).or_default().push(i);
    }
    groups
        .into_values()
        .map(|mut v| {
            v.sort_unstable();
            v.shuffle(rng);
            v
        })
        .collect()
}

/// Splits the example nodes into `(train, test)`. Deterministic per seed;
/// every skill class with at least two members lands in both parts when the
/// test size allows it.
pub fn split_dataset(g: &HeteroGraph, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let examples = g.example_indices();
    if examples.is_empty() {
        return Err(Error::NoExamples);
    }
    let n = examples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = strata(g, &examples, &mut rng);
    let target = ((n as f64 * test_fraction).round() as usize).clamp(1.min(n - 1), n.saturating_sub(1));
    let quotas = apportion(&groups.iter().map(Vec::len).collect::<Vec<_>>(), test_fraction, target);

    let mut train = Vec::with_capacity(n - target);
    let mut test = Vec::with_capacity(target);
    for (group, q) in groups.iter().zip(quotas) {
        test.extend_from_slice(&group[..q]);
        train.extend_from_slice(&group[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Largest-remainder apportionment of `target` test slots across strata,
/// then repaired so strata of size >= 2 keep at least one member on each side.
fn apportion(sizes: &[usize], fraction: f64, target: usize) -> Vec<usize> {
    let ideal: Vec<f64> = sizes.iter().map(|&s| s as f64 * fraction).collect();
    let mut quota: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Stable sort keeps key order among equal remainders.
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    let mut assigned: usize = quota.iter().sum();
    for &i in order.iter().cycle().take(order.len() * 2) {
        if assigned >= target {
            break;
        }
        if quota[i] < sizes[i] {
            quota[i] += 1;
            assigned += 1;
        }
    }

    // Repair: a stratum of size >= 2 with nothing in test takes a slot from
    // the stratum holding the most test members; one with nothing in train
    // hands a slot to a stratum with room.
    for i in 0..sizes.len() {
        if sizes[i] >= 2 && quota[i] == 0 {
            if let Some(donor) = (0..sizes.len())
                .filter(|&j| quota[j] >= 2 || (quota[j] == 1 && sizes[j] == 1))
                .max_by_key(|&j| (quota[j], std::cmp::Reverse(j)))
            {
                quota[donor] -= 1;
                quota[i] += 1;
            }
        }
        if sizes[i] >= 2 && quota[i] == sizes[i] {
            if let Some(taker) = (0..sizes.len()).find(|&j| j != i && quota[j] + 1 < sizes[j]) {
                quota[i] -= 1;
                quota[taker] += 1;
            }
        }
    }
    quota
}

/// Stratified k-fold partition of `ids`. Validation sets are disjoint, cover
/// `ids`, and differ in size by at most one.
pub fn kfold(g: &HeteroGraph, ids: &[usize], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > ids.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the number of ids ({})",
            ids.len()
        )));
    }
    // Separate stream from the train/test split.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let dealt: Vec<usize> = strata(g, ids, &mut rng).into_iter().flatten().collect();
    let mut validation = vec![Vec::new(); k];
    for (pos, id) in dealt.into_iter().enumerate() {
        validation[pos % k].push(id);
    }
    Ok(validation
        .into_iter()
        .map(|mut val| {
            val.sort_unstable();
            let train = ids.iter().copied().filter(|i| val.binary_search(i).is_err()).collect();
            Fold { train, validation: val }
        })
        .collect())
}
