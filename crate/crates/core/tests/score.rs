//! Score, Hutchinson trace and score-matching statistic against independent
//! finite-difference and closed-form references.

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sosrep::baseline::ClosedFormKernel;
use sosrep::model::{fit_model, FittedModel, KdeModel, KernelSpec};
use sosrep::score::{analytic_fd_statistic, fd_statistic, hutchinson_trace, score, score_divergence, FdOptions};
use sosrep::sdo::{FrequencySpec, SdoParams};
use sosrep::solver::SolverOptions;

fn cloud(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

fn sdo_model(a: f64, d: usize) -> FittedModel {
    let spec = KernelSpec::Sdo(FrequencySpec::new(SdoParams::with_default_order(a, d).unwrap(), 512, 3));
    fit_model(cloud(40, d, 1).view(), &spec, &SolverOptions::default()).unwrap()
}

fn gaussian_kde(sigma: f64, d: usize) -> KdeModel {
    let k = KernelSpec::ClosedForm(ClosedFormKernel::gaussian(sigma, d).unwrap());
    KdeModel::new(cloud(40, d, 2).view(), &k).unwrap()
}

/// Central differences of `log p` computed from batch density evaluation only.
fn numeric_score(log_p: impl Fn(&Array1<f64>) -> f64, x: &Array1<f64>) -> Array1<f64> {
    let h = 1e-6;
    Array1::from_shape_fn(x.len(), |j| {
        let mut up = x.clone();
        let mut down = x.clone();
        up[j] += h;
        down[j] -= h;
        (log_p(&up) - log_p(&down)) / (2.0 * h)
    })
}

fn assert_close(a: &Array1<f64>, b: &Array1<f64>, rel: f64) {
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= rel * (1.0 + y.abs()), "{a} vs {b}");
    }
}

#[test]
fn sosrep_score_matches_numeric_gradient_of_log_density() {
    let model = sdo_model(0.2, 2);
    let log_p = |p: &Array1<f64>| {
        let y = p.clone().insert_axis(ndarray::Axis(0));
        model.evaluate_density(y.view()).unwrap()[0].ln()
    };
    for q in cloud(10, 2, 9).rows() {
        let q = q.to_owned();
        assert_close(&score(&model, q.view()).unwrap(), &numeric_score(log_p, &q), 1e-5);
    }
}

#[test]
fn kde_score_matches_numeric_gradient_of_log_density() {
    let model = gaussian_kde(0.5, 3);
    let log_p = |p: &Array1<f64>| {
        let y = p.clone().insert_axis(ndarray::Axis(0));
        model.density(y.view()).unwrap()[0].ln()
    };
    for q in cloud(10, 3, 4).rows() {
        let q = q.to_owned();
        assert_close(&score(&model, q.view()).unwrap(), &numeric_score(log_p, &q), 1e-5);
    }
}

#[test]
fn score_vanishes_at_centre_of_symmetric_kde() {
    let x = array![[-1.0, 0.5], [1.0, -0.5], [0.3, 0.7], [-0.3, -0.7]];
    let k = KernelSpec::ClosedForm(ClosedFormKernel::gaussian(0.8, 2).unwrap());
    let model = KdeModel::new(x.view(), &k).unwrap();
    let s = score(&model, array![0.0, 0.0].view()).unwrap();
    assert!(s.iter().all(|v| v.abs() < 1e-14), "{s}");
}

#[test]
fn score_and_statistic_ignore_normalization() {
    let model = sdo_model(0.5, 2);
    let scaled = model.scaled(37.0);
    let y = cloud(30, 2, 5);
    for q in y.rows() {
        assert_close(&score(&model, q).unwrap(), &score(&scaled, q).unwrap(), 1e-10);
    }
    let opts = FdOptions::default();
    let a = fd_statistic(&model, y.view(), &opts).unwrap();
    let b = fd_statistic(&scaled, y.view(), &opts).unwrap();
    assert!((a.value - b.value).abs() <= 1e-6 * (1.0 + a.value.abs()));
}

#[test]
fn hutchinson_trace_matches_exact_divergence() {
    let model = gaussian_kde(0.7, 2);
    let opts = FdOptions {
        n_fd_iters: 4000,
        h: 1e-5,
        ..FdOptions::default()
    };
    for q in cloud(5, 2, 6).rows() {
        let exact = score_divergence(&model, q).unwrap();
        let est = hutchinson_trace(|p| score(&model, p), q, &opts).unwrap();
        assert!((est - exact).abs() <= 0.05 * exact.abs() + 1e-3, "{est} vs {exact}");
    }
}

#[test]
fn statistic_agrees_with_analytic_version() {
    for (name, stat, exact) in [
        {
            let m = gaussian_kde(0.6, 2);
            let y = cloud(50, 2, 7);
            let opts = FdOptions { n_fd_iters: 400, ..FdOptions::default() };
            ("kde", fd_statistic(&m, y.view(), &opts).unwrap(), analytic_fd_statistic(&m, y.view()).unwrap())
        },
        {
            let m = sdo_model(0.5, 2);
            let y = cloud(50, 2, 8);
            let opts = FdOptions { n_fd_iters: 400, ..FdOptions::default() };
            ("sosrep", fd_statistic(&m, y.view(), &opts).unwrap(), analytic_fd_statistic(&m, y.view()).unwrap())
        },
    ] {
        assert_eq!(stat.retained, exact.retained);
        let rel = (stat.value - exact.value).abs() / exact.value.abs();
        assert!(rel <= 0.05, "{name}: {} vs {}", stat.value, exact.value);
    }
}

#[test]
fn statistic_is_reproducible_and_seed_dependent() {
    let model = sdo_model(0.3, 3);
    let y = cloud(20, 3, 10);
    let opts = FdOptions::default();
    let a = fd_statistic(&model, y.view(), &opts).unwrap();
    let b = fd_statistic(&model, y.view(), &opts).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    let c = fd_statistic(&model, y.view(), &FdOptions { seed: 1, ..opts }).unwrap();
    assert_ne!(a.value, c.value);
}

#[test]
fn statistic_rejects_wrong_dimension() {
    let model = sdo_model(0.3, 2);
    assert!(fd_statistic(&model, cloud(3, 3, 0).view(), &FdOptions::default()).is_err());
    assert!(score(&model, array![0.0, 0.0, 0.0].view()).is_err());
}
