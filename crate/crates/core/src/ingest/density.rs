use std::collections::HashMap;

use crate::model::PanoramaMeta;

/// Minimum spacing between kept panoramas, in meters.
pub const DEFAULT_MIN_SEPARATION_M: f64 = 2.5;

/// Thins a panorama set so that no two kept images are closer than `min_sep`,
/// preferring the most recent capture.
///
/// Candidates are visited newest first (ties by id) and accepted iff no
/// already-accepted panorama lies within `min_sep`. The result keeps the
/// input order.
pub fn density_filter(panos: &[PanoramaMeta], min_sep: f64) -> Vec<PanoramaMeta> {
    assert!(min_sep > 0.0, "min_sep must be positive");
    let mut order: Vec<usize> = (0..panos.len()).collect();
    order.sort_by(|&a, &b| panos[b].timestamp.cmp(&panos[a].timestamp).then_with(|| panos[a].id.cmp(&panos[b].id)));

    let key = |i: usize| {
        let p = panos[i].position;
        ((p.x / min_sep).floor() as i64, (p.y / min_sep).floor() as i64)
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut keep = vec![false; panos.len()];
    for i in order {
        let (cx, cy) = key(i);
        let pos = panos[i].position;
        let blocked = (cx - 1..=cx + 1)
            .flat_map(|x| (cy - 1..=cy + 1).map(move |y| (x, y)))
            .filter_map(|k| grid.get(&k))
            .flatten()
            .any(|&j| panos[j].position.distance(pos) < min_sep);
        if !blocked {
            keep[i] = true;
            grid.entry((cx, cy)).or_default().push(i);
        }
    }
    panos.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p.clone()).collect()
}
