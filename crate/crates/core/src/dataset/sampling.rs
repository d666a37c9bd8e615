use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ObjectClass;

pub const DEFAULT_RFS_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum SamplingError {
    #[error("threshold must be in (0, 1], got {0}")]
    Threshold(f64),
}

/// Repeat factors per class and image, and one realized epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub threshold: f64,
    pub seed: u64,
    /// Fraction of images containing each class; classes never seen are absent.
    pub class_frequency: BTreeMap<ObjectClass, f64>,
    pub class_factor: BTreeMap<ObjectClass, f64>,
    pub image_factor: BTreeMap<String, f64>,
    pub epoch: Vec<String>,
}

impl SamplingPlan {
    /// Expected epoch length, the sum of image repeat factors.
    pub fn expected_epoch_len(&self) -> f64 {
        self.image_factor.values().sum()
    }

    /// Draws an epoch: each image appears floor(r) times, plus once more
    /// with probability frac(r). Images are listed in id order.
    pub fn realize(&self, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for (id, &r) in &self.image_factor {
            let whole = r.floor() as usize;
            let extra = usize::from(rng.random::<f64>() < r - r.floor());
            out.extend(std::iter::repeat_n(id.clone(), whole + extra));
        }
        out
    }
}

/// Category repeat factor `max(1, sqrt(t / f_c))`, image factor the
/// maximum over its classes (1 for images without classes).
pub fn repeat_factors(
    presence: &BTreeMap<String, BTreeSet<ObjectClass>>,
    threshold: f64,
    seed: u64,
) -> Result<SamplingPlan, SamplingError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(SamplingError::Threshold(threshold));
    }
    let n = presence.len() as f64;
    let mut counts: BTreeMap<ObjectClass, usize> = BTreeMap::new();
    for cs in presence.values() {
        for c in cs {
            *counts.entry(*c).or_insert(0) += 1;
        }
    }
    let class_frequency: BTreeMap<ObjectClass, f64> = counts.iter().map(|(c, k)| (*c, *k as f64 / n)).collect();
    let class_factor: BTreeMap<ObjectClass, f64> =
        class_frequency.iter().map(|(c, f)| (*c, (threshold / f).sqrt().max(1.0))).collect();
    let image_factor =
        presence.iter().map(|(id, cs)| (id.clone(), cs.iter().map(|c| class_factor[c]).fold(1.0, f64::max))).collect();
    let mut plan = SamplingPlan { threshold, seed, class_frequency, class_factor, image_factor, epoch: vec![] };
    plan.epoch = plan.realize(seed);
    Ok(plan)
}
