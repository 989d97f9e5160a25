//! Closed-form Gaussian and Laplacian kernels and the plain KDE baseline.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdo::{feature_map, FrequencySample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Laplacian,
}

/// `(1/σ^d) exp(−‖x−y‖²/(2σ²))` or `(1/σ^d) exp(−‖x−y‖/σ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormKernel {
    family: KernelFamily,
    sigma: f64,
    d: usize,
}

impl ClosedFormKernel {
    pub fn new(family: KernelFamily, sigma: f64, d: usize) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {sigma}"
            )));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Self { family, sigma, d })
    }

    pub fn gaussian(sigma: f64, d: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, sigma, d)
    }

    pub fn laplacian(sigma: f64, d: usize) -> Result<Self> {
        Self::new(KernelFamily::Laplacian, sigma, d)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.family, sigma, self.d)
    }

    fn prefactor(&self) -> f64 {
        self.sigma.powi(-(self.d as i32))
    }

    /// Kernel value as a function of the squared distance.
    pub fn profile(&self, sq_dist: f64) -> f64 {
        let s = self.sigma;
        let e = match self.family {
            KernelFamily::Gaussian => (-sq_dist / (2.0 * s * s)).exp(),
            KernelFamily::Laplacian => (-sq_dist.sqrt() / s).exp(),
        };
        self.prefactor() * e
    }

    /// Value, gradient in `y` and Laplacian in `y` of `k(x, y)`.
    ///
    /// At `x = y` the Laplacian kernel is not differentiable; the gradient is
    /// taken as zero there and the Laplacian drops the singular term.
    pub fn derivatives(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> (f64, Array1<f64>, f64) {
        let mut value = 0.0;
        let mut grad = vec![0.0; self.d];
        let mut lap = 0.0;
        self.accumulate(x, y, 1.0, &mut value, &mut grad, &mut lap);
        (value, Array1::from(grad), lap)
    }

    /// Adds `w·k`, `w·∇_y k` and `w·Δ_y k` at `(x, y)` to the accumulators
    /// without allocating.
    pub fn accumulate(
        &self,
        x: ArrayView1<f64>,
        y: ArrayView1<f64>,
        w: f64,
        value: &mut f64,
        grad: &mut [f64],
        lap: &mut f64,
    ) {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum();
        let k = self.profile(r2);
        let s = self.sigma;
        let d = self.d as f64;
        *value += w * k;
        match self.family {
            KernelFamily::Gaussian => {
                let c = -w * k / (s * s);
                for ((g, a), b) in grad.iter_mut().zip(x).zip(y) {
                    *g += c * (b - a);
                }
                *lap += w * (r2 / (s * s * s * s) - d / (s * s)) * k;
            }
            KernelFamily::Laplacian => {
                let r = r2.sqrt();
                if r == 0.0 {
                    *lap += w * k / (s * s);
                    return;
                }
                let c = -w * k / (s * r);
                for ((g, a), b) in grad.iter_mut().zip(x).zip(y) {
                    *g += c * (b - a);
                }
                *lap += w * (1.0 / (s * s) - (d - 1.0) / (s * r)) * k;
            }
        }
    }
}

impl ClosedFormKernel {
    /// Adds `w·k` and `w·∇_y k` at `(x, y)`; slice form of [`Self::accumulate`]
    /// without the Laplacian.
    pub fn accumulate_gradient(&self, x: &[f64], y: &[f64], w: f64, value: &mut f64, grad: &mut [f64]) {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum();
        let k = self.profile(r2);
        *value += w * k;
        let s = self.sigma;
        let c = match self.family {
            KernelFamily::Gaussian => -w * k / (s * s),
            KernelFamily::Laplacian => {
                let r = r2.sqrt();
                if r == 0.0 {
                    return;
                }
                -w * k / (s * r)
            }
        };
        for ((g, a), b) in grad.iter_mut().zip(x).zip(y) {
            *g += c * (b - a);
        }
    }
}

/// Evaluates a closed-form kernel at a pair of points.
pub fn eval_kernel(k: &ClosedFormKernel, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.len() != k.d || y.len() != k.d {
        return Err(Error::DimensionMismatch {
            expected: k.d,
            got: if x.len() != k.d { x.len() } else { y.len() },
        });
    }
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(k.profile(sq))
}

/// Exact Gram matrix `k(x_i, y_j)` for a closed-form kernel.
pub fn closed_form_matrix(
    k: &ClosedFormKernel,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<ndarray::Array2<f64>> {
    for cols in [x.ncols(), y.ncols()] {
        if cols != k.d {
            return Err(Error::DimensionMismatch {
                expected: k.d,
                got: cols,
            });
        }
    }
    let mut out = ndarray::Array2::zeros((x.nrows(), y.nrows()));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut row, xi)| {
            for (o, yj) in row.iter_mut().zip(y.axis_iter(Axis(0))) {
                let sq: f64 = xi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                *o = k.profile(sq);
            }
        });
    Ok(out)
}

/// Kernel used by the KDE baseline.
#[derive(Clone, Copy, Debug)]
pub enum KdeKernel<'a> {
    ClosedForm(&'a ClosedFormKernel),
    Sampled(&'a FrequencySample),
}

/// KDE `(1/N) Σ_i k(x_i, y_j)` for every query row.
///
/// With a sampled SDO kernel the values can be slightly negative and are
/// returned as computed.
pub fn kde_density(
    x_train: ArrayView2<f64>,
    y: ArrayView2<f64>,
    kernel: KdeKernel<'_>,
) -> Result<Array1<f64>> {
    if x_train.nrows() == 0 {
        return Err(Error::EmptyInput("KDE training set"));
    }
    let n = x_train.nrows() as f64;
    match kernel {
        KdeKernel::ClosedForm(k) => {
            let gram = closed_form_matrix(k, x_train, y)?;
            Ok(gram.sum_axis(Axis(0)) / n)
        }
        KdeKernel::Sampled(fs) => {
            let mean_features = feature_map(x_train, fs)?.sum_axis(Axis(0)) / n;
            Ok(feature_map(y, fs)?.dot(&mean_features))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn gaussian_at_zero_distance() {
        let k = ClosedFormKernel::gaussian(1.0, 2).unwrap();
        let x = array![0.3, -0.2];
        assert_eq!(eval_kernel(&k, x.view(), x.view()).unwrap(), 1.0);
    }

    #[test]
    fn diagonal_is_inverse_bandwidth_power() {
        let k = ClosedFormKernel::laplacian(0.5, 3).unwrap();
        let x = array![1.0, 2.0, 3.0];
        assert_relative_eq!(eval_kernel(&k, x.view(), x.view()).unwrap(), 8.0);
    }

    #[test]
    fn laplacian_value() {
        let k = ClosedFormKernel::laplacian(2.0, 1).unwrap();
        let v = eval_kernel(&k, array![0.0].view(), array![2.0].view()).unwrap();
        assert_relative_eq!(v, 0.5 * (-1.0f64).exp(), epsilon = 1e-15);
        assert!((v - 0.1839).abs() < 1e-4);
    }

    #[test]
    fn symmetric() {
        for k in [
            ClosedFormKernel::gaussian(0.7, 2).unwrap(),
            ClosedFormKernel::laplacian(0.7, 2).unwrap(),
        ] {
            let x = array![0.1, 0.9];
            let y = array![-1.3, 0.2];
            assert_eq!(
                eval_kernel(&k, x.view(), y.view()).unwrap(),
                eval_kernel(&k, y.view(), x.view()).unwrap()
            );
        }
    }

    #[test]
    fn invalid_bandwidth() {
        assert!(ClosedFormKernel::gaussian(0.0, 1).is_err());
        assert!(ClosedFormKernel::laplacian(-1.0, 1).is_err());
    }

    #[test]
    fn single_point_kde() {
        let k = ClosedFormKernel::gaussian(1.0, 1).unwrap();
        let x = array![[0.4]];
        let v = kde_density(x.view(), x.view(), KdeKernel::ClosedForm(&k)).unwrap();
        assert_eq!(v[0], 1.0);
    }

    #[test]
    fn symmetric_pair_kde() {
        let k = ClosedFormKernel::laplacian(0.8, 1).unwrap();
        let x = array![[-1.5], [1.5]];
        let v = kde_density(x.view(), array![[0.0]].view(), KdeKernel::ClosedForm(&k)).unwrap();
        let expected = eval_kernel(&k, array![1.5].view(), array![0.0].view()).unwrap();
        assert_relative_eq!(v[0], expected, epsilon = 1e-15);
    }

    #[test]
    fn kde_linearity() {
        let k = ClosedFormKernel::gaussian(0.6, 2).unwrap();
        let x = array![[0.0, 0.0], [1.0, 0.5], [-0.3, 0.2]];
        let y = array![[0.1, 0.1], [2.0, -1.0]];
        let v = kde_density(x.view(), y.view(), KdeKernel::ClosedForm(&k)).unwrap();
        let gram = closed_form_matrix(&k, x.view(), y.view()).unwrap();
        assert_relative_eq!(v.sum(), gram.sum() / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn empty_training_set() {
        let k = ClosedFormKernel::gaussian(1.0, 1).unwrap();
        let x = ndarray::Array2::<f64>::zeros((0, 1));
        assert!(kde_density(x.view(), array![[0.0]].view(), KdeKernel::ClosedForm(&k)).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for k in [
            ClosedFormKernel::gaussian(0.9, 2).unwrap(),
            ClosedFormKernel::laplacian(0.9, 2).unwrap(),
        ] {
            let x = array![0.2, -0.1];
            let y = array![0.7, 0.4];
            let (_, grad, lap) = k.derivatives(x.view(), y.view());
            let h = 1e-5;
            let mut fd_lap = 0.0;
            for j in 0..2 {
                let mut yp = y.clone();
                yp[j] += h;
                let mut ym = y.clone();
                ym[j] -= h;
                let kp = eval_kernel(&k, x.view(), yp.view()).unwrap();
                let km = eval_kernel(&k, x.view(), ym.view()).unwrap();
                let k0 = eval_kernel(&k, x.view(), y.view()).unwrap();
                assert_relative_eq!(grad[j], (kp - km) / (2.0 * h), max_relative = 1e-7);
                fd_lap += (kp - 2.0 * k0 + km) / (h * h);
            }
            assert_relative_eq!(lap, fd_lap, max_relative = 1e-4);
        }
    }
}
