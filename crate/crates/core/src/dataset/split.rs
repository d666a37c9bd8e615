use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ObjectClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn idx(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitTargets {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Classes that must occur at least once in each split.
    pub required: BTreeMap<Split, BTreeSet<ObjectClass>>,
}

impl Default for SplitTargets {
    fn default() -> Self {
        SplitTargets { train: 0.8, val: 0.1, test: 0.1, required: BTreeMap::new() }
    }
}

impl SplitTargets {
    fn fractions(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub split: BTreeMap<String, Split>,
    pub neighbourhood: BTreeMap<String, String>,
}

impl SplitAssignment {
    pub fn count(&self, s: Split) -> usize {
        self.split.values().filter(|&&x| x == s).count()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadTargets([f64; 3]),
    #[error("image `{0}` has no neighbourhood")]
    NoNeighbourhood(String),
    #[error("cannot satisfy required classes: {0:?}")]
    Infeasible(Vec<(Split, ObjectClass)>),
}

struct Hood<'a> {
    id: &'a str,
    images: Vec<&'a str>,
    classes: BTreeSet<ObjectClass>,
}

/// Assigns whole neighbourhoods to splits. Neighbourhoods needed to place
/// required classes are pinned first (rarest class first, smallest
/// neighbourhood that has it); the rest go largest first to the split
/// furthest below its target. Ties are broken by a seeded shuffle.
pub fn group_split(
    image_ids: &[String],
    neighbourhoods: &BTreeMap<String, String>,
    image_classes: &BTreeMap<String, BTreeSet<ObjectClass>>,
    targets: &SplitTargets,
    seed: u64,
) -> Result<SplitAssignment, SplitError> {
    let fr = targets.fractions();
    if fr.iter().any(|f| f.is_nan() || *f < 0.0) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SplitError::BadTargets(fr));
    }
    let mut by_id: BTreeMap<&str, Hood> = BTreeMap::new();
    for img in image_ids {
        let nb = neighbourhoods.get(img).ok_or_else(|| SplitError::NoNeighbourhood(img.clone()))?;
        let h = by_id.entry(nb.as_str()).or_insert_with(|| Hood { id: nb, images: vec![], classes: BTreeSet::new() });
        h.images.push(img);
        if let Some(cs) = image_classes.get(img) {
            h.classes.extend(cs);
        }
    }
    let mut hoods: Vec<Hood> = by_id.into_values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    hoods.shuffle(&mut rng);

    let total = image_ids.len() as f64;
    let mut filled = [0usize; 3];
    let mut assigned: Vec<Option<Split>> = vec![None; hoods.len()];

    // Pin neighbourhoods for required classes, rarest class first.
    let mut reqs: Vec<(Split, ObjectClass)> =
        targets.required.iter().flat_map(|(s, cs)| cs.iter().map(move |c| (*s, *c))).collect();
    let rarity = |c: ObjectClass| hoods.iter().filter(|h| h.classes.contains(&c)).count();
    reqs.sort_by_key(|&(s, c)| (rarity(c), c, s));
    let mut missing = Vec::new();
    for (s, c) in reqs {
        let satisfied = hoods.iter().zip(&assigned).any(|(h, a)| *a == Some(s) && h.classes.contains(&c));
        if satisfied {
            continue;
        }
        let pick = (0..hoods.len())
            .filter(|&i| assigned[i].is_none() && hoods[i].classes.contains(&c))
            .min_by_key(|&i| hoods[i].images.len());
        match pick {
            Some(i) => {
                assigned[i] = Some(s);
                filled[s.idx()] += hoods[i].images.len();
            }
            None => missing.push((s, c)),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(SplitError::Infeasible(missing));
    }

    let mut order: Vec<usize> = (0..hoods.len()).filter(|&i| assigned[i].is_none()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(hoods[i].images.len()));
    for i in order {
        let deficit = |s: Split| fr[s.idx()] * total - filled[s.idx()] as f64;
        let best =
            Split::ALL.into_iter().reduce(|a, b| if deficit(b) > deficit(a) { b } else { a }).expect("three splits");
        assigned[i] = Some(best);
        filled[best.idx()] += hoods[i].images.len();
    }

    let mut out = SplitAssignment::default();
    for (h, s) in hoods.iter().zip(assigned) {
        let s = s.expect("every neighbourhood assigned");
        for img in &h.images {
            out.split.insert(img.to_string(), s);
            out.neighbourhood.insert(img.to_string(), h.id.to_string());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout(sizes: &[usize]) -> (Vec<String>, BTreeMap<String, String>) {
        let mut ids = Vec::new();
        let mut nb = BTreeMap::new();
        for (h, &n) in sizes.iter().enumerate() {
            for k in 0..n {
                let id = format!("img-{h}-{k}");
                nb.insert(id.clone(), format!("nb-{h}"));
                ids.push(id);
            }
        }
        (ids, nb)
    }

    fn hood_splits(a: &SplitAssignment) -> BTreeMap<String, BTreeSet<Split>> {
        let mut m: BTreeMap<String, BTreeSet<Split>> = BTreeMap::new();
        for (img, s) in &a.split {
            m.entry(a.neighbourhood[img].clone()).or_default().insert(*s);
        }
        m
    }

    #[test]
    fn exact_fit() {
        let (ids, nb) = layout(&[5; 10]);
        let a = group_split(&ids, &nb, &BTreeMap::new(), &SplitTargets::default(), 1).unwrap();
        assert_eq!((a.count(Split::Train), a.count(Split::Val), a.count(Split::Test)), (40, 5, 5));
    }

    #[test]
    fn rare_class_pinned_where_required() {
        let (ids, nb) = layout(&[5; 10]);
        let mut classes = BTreeMap::new();
        classes.insert("img-7-2".to_string(), BTreeSet::from([ObjectClass::Windturbine]));
        for id in &ids {
            classes.entry(id.clone()).or_insert_with(BTreeSet::new).insert(ObjectClass::Tree);
        }
        let mut t = SplitTargets::default();
        t.required.insert(Split::Train, BTreeSet::from([ObjectClass::Windturbine, ObjectClass::Tree]));
        t.required.insert(Split::Test, BTreeSet::from([ObjectClass::Tree]));
        for seed in 0..20 {
            let a = group_split(&ids, &nb, &classes, &t, seed).unwrap();
            assert_eq!(a.split["img-7-2"], Split::Train);
            assert_eq!(a.count(Split::Train), 40);
        }
    }

    #[test]
    fn infeasible_requirements_are_listed() {
        let (ids, nb) = layout(&[3, 3]);
        let classes = BTreeMap::from([("img-0-0".to_string(), BTreeSet::from([ObjectClass::Ferry]))]);
        let mut t = SplitTargets::default();
        t.required.insert(Split::Train, BTreeSet::from([ObjectClass::Ferry]));
        t.required.insert(Split::Val, BTreeSet::from([ObjectClass::Ferry, ObjectClass::Bus]));
        assert_eq!(
            group_split(&ids, &nb, &classes, &t, 0),
            Err(SplitError::Infeasible(vec![(Split::Val, ObjectClass::Bus), (Split::Val, ObjectClass::Ferry)]))
        );
    }

    #[test]
    fn input_errors() {
        let (ids, nb) = layout(&[2]);
        let t = SplitTargets { train: 0.5, val: 0.1, test: 0.1, ..Default::default() };
        assert!(matches!(group_split(&ids, &nb, &BTreeMap::new(), &t, 0), Err(SplitError::BadTargets(_))));
        let orphan = vec!["x".to_string()];
        assert_eq!(
            group_split(&orphan, &nb, &BTreeMap::new(), &SplitTargets::default(), 0),
            Err(SplitError::NoNeighbourhood("x".into()))
        );
    }

    proptest! {
        #[test]
        fn whole_neighbourhoods_deterministic_and_near_target(
            sizes in prop::collection::vec(1usize..40, 1..30),
            seed in any::<u64>(),
        ) {
            let (ids, nb) = layout(&sizes);
            let t = SplitTargets::default();
            let a = group_split(&ids, &nb, &BTreeMap::new(), &t, seed).unwrap();
            prop_assert_eq!(a.split.len(), ids.len());
            prop_assert!(hood_splits(&a).values().all(|s| s.len() == 1));
            prop_assert_eq!(&a, &group_split(&ids, &nb, &BTreeMap::new(), &t, seed).unwrap());
            let largest = *sizes.iter().max().unwrap() as f64;
            let total = ids.len() as f64;
            for (s, f) in Split::ALL.into_iter().zip(t.fractions()) {
                prop_assert!((a.count(s) as f64 - f * total).abs() <= largest + 1e-9);
            }
        }
    }
}
