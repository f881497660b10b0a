//! Tabular datasets: ingestion, standardization, splits and the incremental
//! update schedule used by the model-change experiments.

mod csv;
mod schedule;
mod synth;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use self::csv::{load_csv, write_csv, LabelColumn};
pub use self::schedule::{increment_schedule, IncrementSchedule};
pub use self::synth::{synth_two_gaussians, two_gaussians_bayes_error};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// `floor(n * fraction)` with a guard against products such as `100 * 0.29`
/// landing a hair below an integer.
pub(crate) fn fraction_of(n: usize, fraction: f64) -> usize {
    ((n as f64) * fraction + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-feature z-score parameters fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    features: Tensor,
    labels: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Original label value for every class index.
    pub class_names: Vec<String>,
    pub standardization: Option<Standardization>,
    pub split: Split,
}

impl Dataset {
    /// Builds a dataset with every row in the training split.
    pub fn new(
        name: impl Into<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(Error::dimension("Dataset labels", rows.len(), labels.len()));
        }
        let j = rows[0].len();
        if j == 0 {
            return Err(Error::Contract("dataset rows have no features".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * j);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != j {
                return Err(Error::dimension("Dataset row", j, (i, r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!("row {i} has a non-finite value")));
            }
            data.extend_from_slice(r);
        }
        let c = class_names.len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidClass {
                class: bad,
                num_classes: c,
            });
        }
        let n = rows.len();
        Ok(Self {
            name: name.into(),
            features: Tensor::matrix(n, j, data)?,
            labels,
            feature_names: (0..j).map(|i| format!("x{i}")).collect(),
            class_names,
            standardization: None,
            split: Split {
                train: (0..n).collect(),
                test: Vec::new(),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.matrix_dims().1
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows and labels for `indices` as a batch matrix.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let j = self.n_features();
        let mut data = Vec::with_capacity(indices.len() * j);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let x = Tensor::matrix(indices.len().max(1), j, data).expect("batch of at least one row");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Indices (within `pool`) whose label is `class`.
    pub fn rows_of_class(&self, pool: &[usize], class: usize) -> Vec<usize> {
        pool.iter().copied().filter(|&i| self.labels[i] == class).collect()
    }

    /// Z-scores every row with statistics of the training split.
    ///
    /// Constant training columns (std below 1e-12) are centred and keep a
    /// recorded std of 1.
    pub fn standardize(&self) -> Result<Dataset> {
        if self.split.train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let j = self.n_features();
        let n = self.split.train.len() as f64;
        let mut means = vec![0.0; j];
        for &i in &self.split.train {
            for (m, v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; j];
        for &i in &self.split.train {
            for ((s, v), m) in stds.iter_mut().zip(self.row(i)).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        for s in stds.iter_mut() {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        let z = Standardization { means, stds };
        let mut out = self.clone();
        let rows = out.features.matrix_dims().0;
        for r in 0..rows {
            let scaled = z.apply(self.row(r));
            out.features.data_mut()[r * j..(r + 1) * j].copy_from_slice(&scaled);
        }
        out.standardization = Some(z);
        Ok(out)
    }

    /// Applies a previously fitted standardization to raw rows.
    pub fn with_standardization(&self, z: &Standardization) -> Result<Dataset> {
        let j = self.n_features();
        if z.means.len() != j {
            return Err(Error::dimension("standardization", z.means.len(), j));
        }
        let mut out = self.clone();
        for r in 0..self.len() {
            let scaled = z.apply(self.row(r));
            out.features.data_mut()[r * j..(r + 1) * j].copy_from_slice(&scaled);
        }
        out.standardization = Some(z.clone());
        Ok(out)
    }

    /// Deterministic shuffled partition; the test set has `floor(N * test_fraction)` rows.
    ///
    /// With `stratified`, the rule is applied per class.
    pub fn split(&self, test_fraction: f64, seed: u64, stratified: bool) -> Result<Dataset> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction {test_fraction} outside [0, 1]"
            )));
        }
        let mut rng = rng::stream(seed, &[rng::label::SHUFFLE]);
        let groups: Vec<Vec<usize>> = if stratified {
            (0..self.num_classes())
                .map(|c| (0..self.len()).filter(|&i| self.labels[i] == c).collect())
                .collect()
        } else {
            vec![(0..self.len()).collect()]
        };
        let mut train = Vec::new();
        let mut test = Vec::new();
        for mut g in groups {
            g.shuffle(&mut rng);
            let n_test = fraction_of(g.len(), test_fraction);
            test.extend_from_slice(&g[..n_test]);
            train.extend_from_slice(&g[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        let mut out = self.clone();
        out.split = Split { train, test };
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn column_dataset(values: &[f64]) -> Dataset {
        let rows = values.iter().map(|&v| vec![v]).collect();
        Dataset::new("t", rows, vec![0; values.len()], vec!["0".into()]).unwrap()
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let d = column_dataset(&[1.0, 1.0, 1.0]).standardize().unwrap();
        assert_eq!(d.features().data(), &[0.0, 0.0, 0.0]);
        assert_eq!(d.standardization.unwrap().stds, vec![1.0]);
    }

    #[test]
    fn two_point_column_maps_to_unit_scores() {
        let d = column_dataset(&[0.0, 2.0]).standardize().unwrap();
        assert_eq!(d.features().data(), &[-1.0, 1.0]);
    }

    #[test]
    fn standardized_train_columns_have_zero_mean_unit_std() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                (0..4)
                    .map(|j| rng.random_range(-3.0..3.0) * (j as f64 + 1.0) + j as f64)
                    .collect()
            })
            .collect();
        let d = Dataset::new("r", rows.clone(), vec![0; 40], vec!["a".into()])
            .unwrap()
            .split(0.25, 9, false)
            .unwrap()
            .standardize()
            .unwrap();
        for j in 0..4 {
            let vals: Vec<f64> = d.split.train.iter().map(|&i| d.row(i)[j]).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9);
            assert!((std - 1.0).abs() < 1e-9);
        }
        let z = d.standardization.as_ref().unwrap();
        for (i, raw) in rows.iter().enumerate() {
            for (a, b) in z.invert(d.row(i)).iter().zip(raw) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = column_dataset(&[0.0; 10]);
        let s = d.split(0.3, 1, false).unwrap();
        assert_eq!(s.split.test.len(), 3);
        assert_eq!(s.split.train.len(), 7);
        assert_eq!(s.split, d.split(0.3, 1, false).unwrap().split);
        let mut all: Vec<usize> = s.split.train.iter().chain(&s.split.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(d.split(0.0, 1, false).unwrap().split.test.is_empty());
    }

    #[test]
    fn stratified_split_keeps_class_proportions() {
        let rows = (0..20).map(|i| vec![i as f64]).collect();
        let labels = (0..20).map(|i| usize::from(i >= 10)).collect();
        let d = Dataset::new("s", rows, labels, vec!["a".into(), "b".into()]).unwrap();
        let s = d.split(0.2, 4, true).unwrap();
        let test_pos = s.split.test.iter().filter(|&&i| d.label(i) == 1).count();
        assert_eq!(s.split.test.len(), 4);
        assert_eq!(test_pos, 2);
    }
}
