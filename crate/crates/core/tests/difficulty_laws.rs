use std::collections::BTreeMap;

use proptest::prelude::*;
use tailqa_core::difficulty::{cap_targets, match_distributions, property_histogram};
use tailqa_core::kg::{PropertyId, Triplet};

fn dataset(prefix: &'static str) -> impl Strategy<Value = Vec<Triplet>> {
    prop::collection::vec((0u16..200, 0u8..8, 0u16..50), 0..120).prop_map(move |rows| {
        let mut seen = std::collections::BTreeSet::new();
        rows.into_iter()
            .filter(|r| seen.insert(*r))
            .map(|(s, p, o)| Triplet::entity(&format!("{prefix}{s}"), &format!("P{p}"), &format!("Q{o}")))
            .collect()
    })
}

fn brute_min(a: &[Triplet], b: &[Triplet]) -> BTreeMap<PropertyId, usize> {
    let mut out = BTreeMap::new();
    for t in a {
        let na = a.iter().filter(|x| x.property == t.property).count();
        let nb = b.iter().filter(|x| x.property == t.property).count();
        if nb > 0 {
            out.insert(t.property.clone(), na.min(nb));
        }
    }
    out
}

fn is_subsequence(sub: &[Triplet], full: &[Triplet]) -> bool {
    let mut it = full.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matched_histograms_are_equal_and_minimal(a in dataset("Q"), b in dataset("R"), seed in any::<u64>()) {
        let (ma, mb) = match_distributions(&a, &b, seed, None);
        let ha = property_histogram(&ma);
        prop_assert_eq!(&ha, &property_histogram(&mb));
        prop_assert_eq!(ha, brute_min(&a, &b));
        prop_assert!(is_subsequence(&ma, &a));
        prop_assert!(is_subsequence(&mb, &b));
    }

    #[test]
    fn matching_is_idempotent(a in dataset("Q"), b in dataset("R"), seed in any::<u64>(), cap in prop::option::of(0usize..60)) {
        let (ma, mb) = match_distributions(&a, &b, seed, cap);
        let (ma2, mb2) = match_distributions(&ma, &mb, seed, cap);
        prop_assert_eq!(&ma, &ma2);
        prop_assert_eq!(&mb, &mb2);
        prop_assert_eq!(match_distributions(&a, &b, seed, cap), (ma, mb));
    }

    #[test]
    fn cap_bounds_total(a in dataset("Q"), b in dataset("R"), cap in 0usize..60) {
        let (ma, mb) = match_distributions(&a, &b, 1, Some(cap));
        let uncapped: usize = brute_min(&a, &b).values().sum();
        prop_assert_eq!(ma.len(), cap.min(uncapped));
        prop_assert_eq!(property_histogram(&ma), property_histogram(&mb));
        let targets = cap_targets(&brute_min(&a, &b), cap);
        for (p, n) in &targets {
            prop_assert!(*n <= brute_min(&a, &b)[p]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn many_way_matching_equalizes_all(a in dataset("Q"), b in dataset("R"), c in dataset("S"), seed in any::<u64>()) {
        use tailqa_core::difficulty::match_datasets;
        let input: BTreeMap<String, Vec<Triplet>> =
            [("a".to_string(), a.clone()), ("b".to_string(), b.clone()), ("c".to_string(), c.clone())].into();
        let out = match_datasets(&input, seed, None);
        let ha = property_histogram(&out["a"]);
        prop_assert_eq!(&ha, &property_histogram(&out["b"]));
        prop_assert_eq!(&ha, &property_histogram(&out["c"]));
        let ab = brute_min(&a, &b);
        let abc: BTreeMap<PropertyId, usize> = ab
            .into_iter()
            .filter_map(|(p, n)| {
                let nc = c.iter().filter(|x| x.property == p).count();
                (nc > 0).then(|| (p, n.min(nc)))
            })
            .collect();
        prop_assert_eq!(ha, abc);
        prop_assert_eq!(match_datasets(&out, seed, None), out);
    }
}
