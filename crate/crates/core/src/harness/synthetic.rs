//! Seeded synthetic datasets used by the examples and the acceptance suite.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

const MIXTURE_CENTERS: [[f64; 2]; 3] = [[-2.0, 0.0], [2.0, 0.0], [0.0, 2.5]];
const MIXTURE_STD: f64 = 0.5;
const OUTLIER_BOX: f64 = 6.0;
/// Outliers keep at least this many standard deviations from every centre.
const OUTLIER_CLEARANCE: f64 = 4.0;

/// Two-dimensional mixture of three isotropic Gaussians with a fraction of
/// uniform outliers drawn away from the mixture components. Anomalies are
/// labelled `1` and appended after the inliers.
pub fn gaussian_mixture_with_outliers(n: usize, outlier_frac: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&outlier_frac) || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "need n > 0 and an outlier fraction in [0, 1), got n = {n}, fraction = {outlier_frac}"
        )));
    }
    let n_out = (outlier_frac * n as f64).round() as usize;
    let n_in = n - n_out;
    let mut rng = rng_for(seed, &[stream::SYNTHETIC, 0]);
    let mut x = Array2::zeros((n, 2));
    for i in 0..n_in {
        let c = MIXTURE_CENTERS[rng.random_range(0..MIXTURE_CENTERS.len())];
        for j in 0..2 {
            x[[i, j]] = c[j] + MIXTURE_STD * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for i in n_in..n {
        loop {
            let p = [
                rng.random_range(-OUTLIER_BOX..OUTLIER_BOX),
                rng.random_range(-OUTLIER_BOX..OUTLIER_BOX),
            ];
            let clear = MIXTURE_CENTERS.iter().all(|c| {
                let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                d2.sqrt() > OUTLIER_CLEARANCE * MIXTURE_STD
            });
            if clear {
                x[[i, 0]] = p[0];
                x[[i, 1]] = p[1];
                break;
            }
        }
    }
    let y = (0..n).map(|i| u8::from(i >= n_in)).collect();
    Dataset::new("mixture-outliers", x, Some(y))
}

/// Two Gaussian clusters in the plane: a tight one of `n1` points at the
/// origin and a diffuse one of `n2` points further out.
pub fn two_clusters(n1: usize, n2: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng_for(seed, &[stream::SYNTHETIC, 1]);
    let tight = Normal::new(0.0, 0.3).expect("valid");
    let wide = Normal::new(0.0, 1.0).expect("valid");
    let mut x = Array2::zeros((n1 + n2, 2));
    for i in 0..n1 {
        x[[i, 0]] = tight.sample(&mut rng);
        x[[i, 1]] = tight.sample(&mut rng);
    }
    for i in n1..n1 + n2 {
        x[[i, 0]] = 4.0 + wide.sample(&mut rng);
        x[[i, 1]] = wide.sample(&mut rng);
    }
    Dataset::new("two-clusters", x, None)
}

/// `n` standard normal draws in one dimension.
pub fn standard_normal_1d(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_for(seed, &[stream::SYNTHETIC, 2]);
    Array2::from_shape_fn((n, 1), |_| rng.sample(StandardNormal))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_shape_and_labels() {
        let ds = gaussian_mixture_with_outliers(200, 0.05, 1).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.n_anomalies(), 10);
        assert_eq!(ds, gaussian_mixture_with_outliers(200, 0.05, 1).unwrap());
    }

    #[test]
    fn outliers_are_clear_of_components() {
        let ds = gaussian_mixture_with_outliers(400, 0.1, 3).unwrap();
        let y = ds.labels().unwrap();
        for (row, &l) in ds.x.rows().into_iter().zip(y) {
            if l == 1 {
                for c in MIXTURE_CENTERS {
                    let d = ((row[0] - c[0]).powi(2) + (row[1] - c[1]).powi(2)).sqrt();
                    assert!(d > OUTLIER_CLEARANCE * MIXTURE_STD);
                }
            }
        }
    }
}
