//! Difficulty control: equalize per-property triplet counts between two
//! datasets so that property mix no longer differs between them.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{KnowledgeGraph, Object, PropertyId, Triplet};
use crate::text::derive_seed;

pub type PropertyHistogram = BTreeMap<PropertyId, usize>;

pub fn property_histogram<T: AsRef<Triplet>>(ds: &[T]) -> PropertyHistogram {
    let mut h = PropertyHistogram::new();
    for t in ds {
        *h.entry(t.as_ref().property.clone()).or_default() += 1;
    }
    h
}

/// Per-property target counts: `min(count_a, count_b)` over properties
/// present in both histograms.
pub fn matched_targets(a: &PropertyHistogram, b: &PropertyHistogram) -> PropertyHistogram {
    a.iter()
        .filter_map(|(p, &na)| b.get(p).map(|&nb| (p.clone(), na.min(nb))))
        .filter(|(_, n)| *n > 0)
        .collect()
}

/// Shrinks targets so their total is at most `cap`, allocating in proportion
/// to the current targets by largest remainder (ties by property id).
pub fn cap_targets(targets: &PropertyHistogram, cap: usize) -> PropertyHistogram {
    let total: usize = targets.values().sum();
    if total <= cap {
        return targets.clone();
    }
    let mut alloc: Vec<(PropertyId, usize, u128)> = targets
        .iter()
        .map(|(p, &n)| {
            let exact = n as u128 * cap as u128;
            let floor = (exact / total as u128) as usize;
            let rem = exact % total as u128;
            (p.clone(), floor, rem)
        })
        .collect();
    let mut left = cap - alloc.iter().map(|(_, f, _)| f).sum::<usize>();
    let mut order: Vec<usize> = (0..alloc.len()).collect();
    order.sort_by(|&i, &j| alloc[j].2.cmp(&alloc[i].2).then_with(|| alloc[i].0.cmp(&alloc[j].0)));
    for i in order {
        if left == 0 {
            break;
        }
        alloc[i].1 += 1;
        left -= 1;
    }
    alloc
        .into_iter()
        .filter(|(_, n, _)| *n > 0)
        .map(|(p, n, _)| (p, n))
        .collect()
}

/// Keeps exactly `targets[p]` items of each property `p`, drawn uniformly
/// without replacement; items of other properties are dropped. Survivors
/// keep their input order.
pub fn subsample_to<T: AsRef<Triplet> + Clone>(ds: &[T], targets: &PropertyHistogram, seed: u64) -> Vec<T> {
    let mut by_property: BTreeMap<&PropertyId, Vec<usize>> = BTreeMap::new();
    for (i, t) in ds.iter().enumerate() {
        by_property.entry(&t.as_ref().property).or_default().push(i);
    }
    let mut keep = vec![false; ds.len()];
    for (p, idx) in by_property {
        let target = targets.get(p).copied().unwrap_or(0).min(idx.len());
        if target == idx.len() {
            idx.iter().for_each(|&i| keep[i] = true);
        } else if target > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, p.as_str()));
            for pick in rand::seq::index::sample(&mut rng, idx.len(), target) {
                keep[idx[pick]] = true;
            }
        }
    }
    ds.iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(t, _)| t.clone())
        .collect()
}

/// Equalizes two datasets property by property.
///
/// Afterwards both datasets hold `min(count_a(p), count_b(p))` triplets of
/// every shared property `p` and none of the others. With `cap`, targets
/// are further scaled so each output has at most `cap` items.
pub fn match_distributions<T: AsRef<Triplet> + Clone>(
    a: &[T],
    b: &[T],
    seed: u64,
    cap: Option<usize>,
) -> (Vec<T>, Vec<T>) {
    let mut targets = matched_targets(&property_histogram(a), &property_histogram(b));
    if let Some(cap) = cap {
        targets = cap_targets(&targets, cap);
    }
    (
        subsample_to(a, &targets, derive_seed(seed, "a")),
        subsample_to(b, &targets, derive_seed(seed, "b")),
    )
}

/// Equalizes any number of named datasets: each keeps, for every property
/// present in all of them, the minimum count across datasets. Dataset `name`
/// is subsampled with `derive_seed(seed, name)`.
pub fn match_datasets<T: AsRef<Triplet> + Clone>(
    datasets: &BTreeMap<String, Vec<T>>,
    seed: u64,
    cap: Option<usize>,
) -> BTreeMap<String, Vec<T>> {
    let mut hists = datasets.values().map(|d| property_histogram(d));
    let Some(first) = hists.next() else {
        return BTreeMap::new();
    };
    let mut targets = hists.fold(first, |acc, h| matched_targets(&acc, &h));
    if let Some(cap) = cap {
        targets = cap_targets(&targets, cap);
    }
    datasets
        .iter()
        .map(|(name, d)| (name.clone(), subsample_to(d, &targets, derive_seed(seed, name))))
        .collect()
}

/// Number of distinct objects reachable through `property` in the graph.
pub fn answer_space(graph: &KnowledgeGraph, property: &PropertyId) -> usize {
    let mut objects: BTreeSet<&Object> = BTreeSet::new();
    for (subject, _) in graph.subjects() {
        for (p, o) in graph.edges(subject) {
            if p == property {
                objects.insert(o);
            }
        }
    }
    objects.len()
}

/// `answer_space` for every property in one pass.
pub fn answer_space_report(graph: &KnowledgeGraph) -> BTreeMap<PropertyId, usize> {
    let mut objects: HashMap<&PropertyId, BTreeSet<&Object>> = HashMap::new();
    for (subject, _) in graph.subjects() {
        for (p, o) in graph.edges(subject) {
            objects.entry(p).or_default().insert(o);
        }
    }
    objects
        .into_iter()
        .map(|(p, set)| (p.clone(), set.len()))
        .collect()
}

/// Row of the before/after histogram file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub property_id: PropertyId,
    pub count_before: usize,
    pub count_after: usize,
    pub answer_space: usize,
}

pub fn histogram_rows(
    before: &PropertyHistogram,
    after: &PropertyHistogram,
    answer_spaces: &BTreeMap<PropertyId, usize>,
) -> Vec<HistogramRow> {
    before
        .keys()
        .chain(after.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|p| HistogramRow {
            property_id: p.clone(),
            count_before: before.get(p).copied().unwrap_or(0),
            count_after: after.get(p).copied().unwrap_or(0),
            answer_space: answer_spaces.get(p).copied().unwrap_or(0),
        })
        .collect()
}
