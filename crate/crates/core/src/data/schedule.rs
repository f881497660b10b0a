use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{fraction_of, Dataset};
use crate::error::{Error, Result};
use crate::rng;

/// Nested training sets for incremental model updates.
///
/// `sets[0]` is the base set; every later set appends one increment. The
/// last set is always the full training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementSchedule {
    pub base_fraction: f64,
    pub increment_fraction: f64,
    pub sets: Vec<Vec<usize>>,
}

impl IncrementSchedule {
    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    pub fn num_increments(&self) -> usize {
        self.sets.len().saturating_sub(1)
    }
}

/// Shuffles the training split by `seed`, takes `floor(base * N)` rows as the
/// base set, then grows by `floor(inc * N)` rows per step; the final step
/// absorbs whatever remainder is left.
pub fn increment_schedule(
    dataset: &Dataset,
    base_fraction: f64,
    increment_fraction: f64,
    seed: u64,
) -> Result<IncrementSchedule> {
    if !(0.0 < base_fraction && base_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "base_fraction {base_fraction} outside (0, 1]"
        )));
    }
    let n = dataset.split.train.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut order = dataset.split.train.clone();
    order.shuffle(&mut rng::stream(seed, &[rng::label::SHUFFLE, 1]));

    let base = fraction_of(n, base_fraction).max(1);
    let step = fraction_of(n, increment_fraction);
    if base < n && step == 0 {
        return Err(Error::InvalidConfig(format!(
            "increment_fraction {increment_fraction} yields empty increments for {n} rows"
        )));
    }
    let mut bounds = vec![base];
    let mut end = base;
    while end < n {
        end += step;
        // A tail shorter than one increment is merged into the previous step.
        if n - end.min(n) < step {
            end = n;
        }
        bounds.push(end);
    }
    let sets = bounds.iter().map(|&b| order[..b].to_vec()).collect();
    Ok(IncrementSchedule {
        base_fraction,
        increment_fraction,
        sets,
    })
}
