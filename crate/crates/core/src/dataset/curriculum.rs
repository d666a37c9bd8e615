use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const DEFAULT_SHARDS: usize = 120;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumItem {
    pub image_id: String,
    pub instances: usize,
    pub neighbourhood: String,
}

fn by_count(items: &mut [&CurriculumItem]) {
    items.sort_by(|a, b| a.instances.cmp(&b.instances).then_with(|| a.image_id.cmp(&b.image_id)));
}

/// Fewest instances first, ties by image id.
pub fn curriculum_order(items: &[CurriculumItem]) -> Vec<String> {
    let mut v: Vec<&CurriculumItem> = items.iter().collect();
    by_count(&mut v);
    v.into_iter().map(|i| i.image_id.clone()).collect()
}

/// Deals images round-robin into `n_shards` shards, walking neighbourhoods
/// in id order so each shard draws from every area; each shard is then
/// ordered by [`curriculum_order`].
pub fn curriculum_shards(items: &[CurriculumItem], n_shards: usize) -> Vec<Vec<String>> {
    let n = n_shards.max(1);
    let mut hoods: BTreeMap<&str, Vec<&CurriculumItem>> = BTreeMap::new();
    for it in items {
        hoods.entry(&it.neighbourhood).or_default().push(it);
    }
    let mut shards: Vec<Vec<&CurriculumItem>> = vec![Vec::new(); n];
    let mut k = 0;
    for members in hoods.values_mut() {
        members.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        for it in members.iter() {
            shards[k % n].push(it);
            k += 1;
        }
    }
    shards
        .into_iter()
        .map(|mut s| {
            by_count(&mut s);
            s.into_iter().map(|i| i.image_id.clone()).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, n: usize, hood: &str) -> CurriculumItem {
        CurriculumItem { image_id: id.into(), instances: n, neighbourhood: hood.into() }
    }

    #[test]
    fn ordering() {
        let items = [item("a", 3, "x"), item("b", 1, "x"), item("c", 2, "x")];
        assert_eq!(curriculum_order(&items), ["b", "c", "a"]);
        let tied = [item("z", 1, "x"), item("m", 1, "x"), item("a", 1, "x")];
        assert_eq!(curriculum_order(&tied), ["a", "m", "z"]);
    }

    #[test]
    fn round_robin_trace() {
        let items = [
            item("a1", 5, "A"),
            item("a2", 1, "A"),
            item("a3", 2, "A"),
            item("b1", 4, "B"),
            item("b2", 0, "B"),
            item("b3", 3, "B"),
        ];
        // a1→0 a2→1 a3→0 b1→1 b2→0 b3→1
        let s = curriculum_shards(&items, 2);
        assert_eq!(s, vec![vec!["b2", "a3", "a1"], vec!["a2", "b3", "b1"]]);
    }

    #[test]
    fn shards_partition_images() {
        let items: Vec<CurriculumItem> =
            (0..1000).map(|i| item(&format!("{i:04}"), i % 17, &format!("h{}", i % 13))).collect();
        let s = curriculum_shards(&items, DEFAULT_SHARDS);
        assert_eq!(s.len(), 120);
        let mut all: Vec<String> = s.iter().flatten().cloned().collect();
        all.sort();
        assert_eq!(all.len(), 1000);
        all.dedup();
        assert_eq!(all.len(), 1000);
        assert!(s.iter().all(|x| x.len() == 8 || x.len() == 9));
    }
}
