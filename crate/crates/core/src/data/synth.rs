use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Two unit-variance isotropic Gaussian blobs centred at `∓(separation / 2) e₁`.
///
/// Rows alternate class 0 (negative side) and class 1, so every prefix is
/// balanced.
pub fn synth_two_gaussians(n_per_class: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || dim == 0 {
        return Err(Error::EmptyDataset);
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::InvalidConfig(format!("separation {separation} must be >= 0")));
    }
    let mut rng = rng::stream(seed, &[rng::label::PERTURBATION, 0x5e]);
    let mut rows = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        for class in 0..2usize {
            let centre = if class == 0 {
                -separation / 2.0
            } else {
                separation / 2.0
            };
            let mut row: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            row[0] += centre;
            rows.push(row);
            labels.push(class);
        }
    }
    Dataset::new(
        format!("synth-{dim}d-sep{separation}"),
        rows,
        labels,
        vec!["0".into(), "1".into()],
    )
}

/// Bayes-optimal error of the balanced two-blob problem, `Φ(−separation / 2)`.
pub fn two_gaussians_bayes_error(separation: f64) -> f64 {
    Normal::standard().cdf(-separation / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let a = synth_two_gaussians(20, 3, 4.0, 9).unwrap();
        let b = synth_two_gaussians(20, 3, 4.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_two_gaussians(20, 3, 4.0, 10).unwrap());
    }

    #[test]
    fn blob_means_sit_on_first_axis() {
        let d = synth_two_gaussians(4000, 2, 6.0, 1).unwrap();
        for class in 0..2 {
            let idx = d.rows_of_class(&d.split.train, class);
            let m0 = idx.iter().map(|&i| d.row(i)[0]).sum::<f64>() / idx.len() as f64;
            let m1 = idx.iter().map(|&i| d.row(i)[1]).sum::<f64>() / idx.len() as f64;
            let expected = if class == 0 { -3.0 } else { 3.0 };
            assert!((m0 - expected).abs() < 4.0 / (idx.len() as f64).sqrt());
            assert!(m1.abs() < 4.0 / (idx.len() as f64).sqrt());
        }
    }

    #[test]
    fn bayes_error_values() {
        assert!((two_gaussians_bayes_error(6.0) - 0.001_349_898_031_630_094_6).abs() < 1e-12);
        assert!((two_gaussians_bayes_error(0.0) - 0.5).abs() < 1e-15);
    }
}
