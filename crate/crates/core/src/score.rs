//! Score functions, Hutchinson trace estimation and Fisher-divergence tuning.
//!
//! For a model with log-density `p · log|g|` the score is `p ∇g / g`. The
//! score-matching statistic `mean(tr ∇s + ½‖s‖²)` estimates the Fisher
//! divergence to the data up to a constant that does not depend on the
//! model, so it can rank hyperparameters without normalizing the density.
//! The Jacobian trace is estimated by finite-difference Hutchinson probes.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fit_model, KdeModel, KernelSpec, ScoreModel};
use crate::rng::{rng_for, stream};
use crate::solver::SolverOptions;

const VANISHING: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    /// Coordinates `±1` with equal probability.
    #[default]
    Rademacher,
    /// Coordinates uniform on `{−1, 0, 1}`; the estimate is divided by the
    /// probe variance `2/3`.
    #[serde(rename = "paper_three_point", alias = "three_point")]
    ThreePoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdOptions {
    pub n_fd_iters: usize,
    pub h: f64,
    pub probe: Probe,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            n_fd_iters: 100,
            h: 1e-4,
            probe: Probe::Rademacher,
            seed: 0,
        }
    }
}

impl FdOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_fd_iters == 0 {
            return Err(Error::InvalidParameter("n_fd_iters must be positive".into()));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "finite-difference step must be positive, got {}",
                self.h
            )));
        }
        Ok(())
    }
}

/// `∇ log p(x)`.
pub fn score<M: ScoreModel + ?Sized>(model: &M, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    let x = x.to_vec();
    let mut out = vec![0.0; x.len()];
    score_into(model, &x, &mut out)?;
    Ok(Array1::from(out))
}

fn score_into<M: ScoreModel + ?Sized>(model: &M, x: &[f64], out: &mut [f64]) -> Result<()> {
    let g = model.expansion().value_and_gradient(x, out);
    if !(g.abs() >= VANISHING) {
        return Err(Error::VanishingDensity);
    }
    let c = model.exponent() / g;
    out.iter_mut().for_each(|v| *v *= c);
    Ok(())
}

/// Exact `tr ∇s(x) = p (Δg/g − ‖∇g‖²/g²)`.
pub fn score_divergence<M: ScoreModel + ?Sized>(model: &M, x: ArrayView1<f64>) -> Result<f64> {
    let local = model.expansion().local(x)?;
    let g = local.value;
    if !(g.abs() >= VANISHING) {
        return Err(Error::VanishingDensity);
    }
    let grad_sq = local.gradient.dot(&local.gradient);
    Ok(model.exponent() * (local.laplacian / g - grad_sq / (g * g)))
}

fn probe_vector(opts: &FdOptions, row: u64, k: usize, d: usize) -> Array1<f64> {
    let mut rng = rng_for(opts.seed, &[stream::PROBE, row, k as u64]);
    match opts.probe {
        Probe::Rademacher => Array1::from_iter((0..d).map(|_| {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        })),
        Probe::ThreePoint => {
            Array1::from_iter((0..d).map(|_| rng.random_range(-1i32..=1) as f64))
        }
    }
}

fn hutchinson_with<F>(
    score_fn: &F,
    x: ArrayView1<f64>,
    s0: &Array1<f64>,
    opts: &FdOptions,
    row: u64,
) -> Result<f64>
where
    F: Fn(ArrayView1<f64>) -> Result<Array1<f64>>,
{
    let mut acc = 0.0;
    for k in 0..opts.n_fd_iters {
        let eps = probe_vector(opts, row, k, x.len());
        let shifted = &x + &(&eps * opts.h);
        let s1 = score_fn(shifted.view())?;
        acc += (&s1 - s0).dot(&eps) / opts.h;
    }
    let mean = acc / opts.n_fd_iters as f64;
    Ok(match opts.probe {
        Probe::Rademacher => mean,
        Probe::ThreePoint => mean * 1.5,
    })
}

/// Hutchinson estimate of `tr ∇s(x)` from forward differences
/// `(s(x + hε) − s(x))·ε / h` averaged over `n_fd_iters` probes.
pub fn hutchinson_trace<F>(score_fn: F, x: ArrayView1<f64>, opts: &FdOptions) -> Result<f64>
where
    F: Fn(ArrayView1<f64>) -> Result<Array1<f64>>,
{
    opts.validate()?;
    let s0 = score_fn(x)?;
    hutchinson_with(&score_fn, x, &s0, opts, 0)
}

/// Score-matching statistic and the row accounting behind it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdValue {
    pub value: f64,
    pub retained: usize,
    pub skipped: usize,
}

fn aggregate(rows: Vec<Option<f64>>) -> Result<FdValue> {
    let total = rows.len();
    let kept: Vec<f64> = rows.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::AllRowsSkipped(total));
    }
    Ok(FdValue {
        value: kept.iter().sum::<f64>() / kept.len() as f64,
        retained: kept.len(),
        skipped: total - kept.len(),
    })
}

fn skip_vanishing<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::VanishingDensity) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `mean over rows of (Hutchinson trace + ½‖s‖²)`; rows where the density
/// vanishes at `y` or at a probe point are skipped.
pub fn fd_statistic<M: ScoreModel + ?Sized>(
    model: &M,
    y: ArrayView2<f64>,
    opts: &FdOptions,
) -> Result<FdValue> {
    opts.validate()?;
    if y.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: y.ncols(),
        });
    }
    if y.nrows() == 0 {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let rows: Vec<Option<f64>> = y
        .axis_iter(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, x)| skip_vanishing(row_statistic(model, x, opts, i as u64)))
        .collect::<Result<_>>()?;
    aggregate(rows)
}

/// Number of distinct probe vectors in dimension `d`, if small enough to
/// enumerate.
fn probe_patterns(probe: Probe, d: usize) -> Option<usize> {
    let base: usize = match probe {
        Probe::Rademacher => 2,
        Probe::ThreePoint => 3,
    };
    u32::try_from(d).ok().and_then(|d| base.checked_pow(d))
}

/// Hutchinson trace plus `½‖s‖²` at one row. In low dimension the probes
/// repeat, so the shifted score is memoized per distinct probe.
fn row_statistic<M: ScoreModel + ?Sized>(
    model: &M,
    x: ArrayView1<f64>,
    opts: &FdOptions,
    row: u64,
) -> Result<f64> {
    let d = x.len();
    let x = x.to_vec();
    let mut s0 = vec![0.0; d];
    score_into(model, &x, &mut s0)?;
    let memoize = probe_patterns(opts.probe, d).is_some_and(|p| p <= opts.n_fd_iters);
    let mut seen: Vec<(Array1<f64>, f64)> = Vec::new();
    let mut shifted = vec![0.0; d];
    let mut s1 = vec![0.0; d];
    let mut acc = 0.0;
    for k in 0..opts.n_fd_iters {
        let eps = probe_vector(opts, row, k, d);
        if memoize {
            if let Some((_, term)) = seen.iter().find(|(e, _)| *e == eps) {
                acc += term;
                continue;
            }
        }
        for ((p, &xi), &e) in shifted.iter_mut().zip(&x).zip(&eps) {
            *p = xi + opts.h * e;
        }
        score_into(model, &shifted, &mut s1)?;
        let term = s1.iter().zip(&s0).zip(&eps).map(|((a, b), e)| (a - b) * e).sum::<f64>() / opts.h;
        acc += term;
        if memoize {
            seen.push((eps, term));
        }
    }
    let mean = acc / opts.n_fd_iters as f64;
    let trace = match opts.probe {
        Probe::Rademacher => mean,
        Probe::ThreePoint => mean * 1.5,
    };
    Ok(trace + 0.5 * s0.iter().map(|v| v * v).sum::<f64>())
}

/// The same statistic with the exact Jacobian trace.
pub fn analytic_fd_statistic<M: ScoreModel + ?Sized>(model: &M, y: ArrayView2<f64>) -> Result<FdValue> {
    if y.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: y.ncols(),
        });
    }
    let rows: Vec<Option<f64>> = y
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|x| {
            let Some(s) = skip_vanishing(score(model, x))? else {
                return Ok(None);
            };
            let div = score_divergence(model, x)?;
            Ok(Some(div + 0.5 * s.dot(&s)))
        })
        .collect::<Result<_>>()?;
    aggregate(rows)
}

/// One evaluated candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdEntry {
    pub a: f64,
    pub fd: f64,
    pub retained_rows: usize,
    pub skipped_rows: usize,
}

/// Evaluated candidates ordered by strictly decreasing `a`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FdProfile {
    entries: Vec<FdEntry>,
}

impl FdProfile {
    pub fn new(mut entries: Vec<FdEntry>) -> Result<Self> {
        entries.sort_by(|x, y| y.a.total_cmp(&x.a));
        for w in entries.windows(2) {
            if !(w[0].a > w[1].a) {
                return Err(Error::InvalidParameter(format!(
                    "profile values of a must be distinct, found {} twice",
                    w[0].a
                )));
            }
        }
        if let Some(e) = entries.iter().find(|e| !(e.a > 0.0) || e.fd.is_nan()) {
            return Err(Error::InvalidParameter(format!(
                "invalid profile entry a = {}, fd = {}",
                e.a, e.fd
            )));
        }
        Ok(Self { entries })
    }

    /// Profile from `(a, fd)` pairs with no row accounting.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(a, fd)| FdEntry {
                    a,
                    fd,
                    retained_rows: 0,
                    skipped_rows: 0,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[FdEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV with columns `a,fd,retained_rows,skipped_rows`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidParameter(e.to_string());
        w.write_record(["a", "fd", "retained_rows", "skipped_rows"])
            .map_err(csv_err)?;
        for e in &self.entries {
            w.write_record([
                crate::io::fmt_float(e.a),
                crate::io::fmt_float(e.fd),
                e.retained_rows.to_string(),
                e.skipped_rows.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn is_stable_at(fd: &[f64], i: usize, window: usize) -> bool {
    (1..=window).all(|k| fd[i] < fd[i - k] && fd[i] < fd[i + k])
}

/// Index of the first (largest-`a`) entry strictly below its `window`
/// neighbours on each side, for values ordered by decreasing `a`.
pub fn stable_minimum_index(fd: &[f64], window: usize) -> Option<usize> {
    if fd.len() < 2 * window + 1 {
        return None;
    }
    (window..fd.len() - window).find(|&i| is_stable_at(fd, i, window))
}

/// Largest `a` whose statistic is strictly below its `window` neighbours on
/// both sides.
pub fn stable_minimum(profile: &FdProfile, window: usize) -> Result<Option<f64>> {
    let needed = 2 * window + 1;
    if profile.len() < needed {
        return Err(Error::ProfileTooShort {
            needed,
            got: profile.len(),
        });
    }
    let fd: Vec<f64> = profile.entries.iter().map(|e| e.fd).collect();
    Ok(stable_minimum_index(&fd, window).map(|i| profile.entries[i].a))
}

/// Result of [`tune`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub selected: f64,
    pub selected_index: usize,
    /// True when the selection is a certified stable minimum rather than the
    /// global-minimum fallback.
    pub stable: bool,
    pub profile: FdProfile,
    pub evaluations: usize,
    pub warnings: Vec<String>,
}

/// Lazy stable-minimum search over `candidates` (strictly decreasing).
///
/// Candidates are visited from the largest downward. At position `i` the
/// immediate neighbours are evaluated first and the outer neighbours only
/// when `i` beats both, so a certified minimum costs a few evaluations past
/// it. Each candidate is evaluated at most once. If no stable minimum
/// exists, every remaining candidate is evaluated and the global minimum is
/// taken, ties going to the larger value. A candidate whose evaluation fails
/// numerically is recorded with `fd = +∞`.
pub fn tune<F>(candidates: &[f64], window: usize, mut eval: F) -> Result<TuneOutcome>
where
    F: FnMut(f64) -> Result<FdValue>,
{
    let needed = 2 * window + 1;
    if candidates.len() < needed {
        return Err(Error::ProfileTooShort {
            needed,
            got: candidates.len(),
        });
    }
    if candidates.iter().any(|a| !(a.is_finite() && *a > 0.0))
        || candidates.windows(2).any(|w| !(w[0] > w[1]))
    {
        return Err(Error::InvalidParameter(
            "candidates must be positive and strictly decreasing".into(),
        ));
    }

    let mut cache: Vec<Option<FdValue>> = vec![None; candidates.len()];
    let mut warnings = Vec::new();
    let mut evaluations = 0;
    let mut get = |i: usize, warnings: &mut Vec<String>| -> Result<f64> {
        if let Some(v) = cache[i] {
            return Ok(v.value);
        }
        evaluations += 1;
        let v = match eval(candidates[i]) {
            Ok(v) if !v.value.is_nan() => v,
            Ok(_) => {
                warnings.push(format!("candidate {}: statistic is NaN", candidates[i]));
                FdValue {
                    value: f64::INFINITY,
                    retained: 0,
                    skipped: 0,
                }
            }
            Err(e) if e.is_numerical() => {
                warnings.push(format!("candidate {}: {e}", candidates[i]));
                FdValue {
                    value: f64::INFINITY,
                    retained: 0,
                    skipped: 0,
                }
            }
            Err(e) => return Err(e),
        };
        cache[i] = Some(v);
        Ok(v.value)
    };

    let mut found = None;
    'scan: for i in window..candidates.len() - window {
        let centre = get(i, &mut warnings)?;
        for k in 1..=window {
            let left = get(i - k, &mut warnings)?;
            let right = get(i + k, &mut warnings)?;
            if !(centre < left && centre < right) {
                continue 'scan;
            }
        }
        found = Some(i);
        break;
    }

    let (selected_index, stable) = match found {
        Some(i) => (i, true),
        None => {
            for i in 0..candidates.len() {
                get(i, &mut warnings)?;
            }
            let values: Vec<f64> = cache.iter().map(|v| v.expect("evaluated").value).collect();
            if values.iter().all(|v| v.is_infinite() && *v > 0.0) {
                return Err(Error::AllCandidatesFailed);
            }
            let mut best = 0;
            for (i, v) in values.iter().enumerate() {
                if *v < values[best] {
                    best = i;
                }
            }
            (best, false)
        }
    };

    let entries = candidates
        .iter()
        .zip(&cache)
        .filter_map(|(&a, v)| {
            v.map(|v| FdEntry {
                a,
                fd: v.value,
                retained_rows: v.retained,
                skipped_rows: v.skipped,
            })
        })
        .collect();
    Ok(TuneOutcome {
        selected: candidates[selected_index],
        selected_index,
        stable,
        profile: FdProfile::new(entries)?,
        evaluations,
        warnings,
    })
}

/// `n` log-spaced values from `hi` down to `lo`.
pub fn log_grid_descending(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && n >= 2) {
        return Err(Error::InvalidParameter(format!(
            "log grid needs 0 < lo < hi and n ≥ 2, got lo = {lo}, hi = {hi}, n = {n}"
        )));
    }
    let (l, h) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|i| {
            if i == 0 {
                hi
            } else if i + 1 == n {
                lo
            } else {
                10f64.powf(h - (h - l) * i as f64 / (n - 1) as f64)
            }
        })
        .collect())
}

/// Tunes the SOSREP smoothness (or bandwidth) on `y_test`.
pub fn tune_sosrep(
    x_train: ArrayView2<f64>,
    y_test: ArrayView2<f64>,
    kernel: &KernelSpec,
    candidates: &[f64],
    solver: &SolverOptions,
    fd: &FdOptions,
) -> Result<TuneOutcome> {
    tune(candidates, 3, |a| {
        let model = fit_model(x_train, &kernel.with_scale_parameter(a)?, solver)?;
        fd_statistic(&model, y_test, fd)
    })
}

/// Tunes the KDE smoothness (or bandwidth) on `y_test`.
pub fn tune_kde(
    x_train: ArrayView2<f64>,
    y_test: ArrayView2<f64>,
    kernel: &KernelSpec,
    candidates: &[f64],
    fd: &FdOptions,
) -> Result<TuneOutcome> {
    tune(candidates, 3, |a| {
        let model = KdeModel::new(x_train, &kernel.with_scale_parameter(a)?)?;
        fd_statistic(&model, y_test, fd)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn linear(a: Array2<f64>) -> impl Fn(ArrayView1<f64>) -> Result<Array1<f64>> {
        move |x| Ok(a.dot(&x))
    }

    #[test]
    fn hutchinson_standard_normal() {
        let opts = FdOptions {
            n_fd_iters: 200,
            ..Default::default()
        };
        let t = hutchinson_trace(linear(-Array2::eye(3)), array![0.3, -1.0, 2.0].view(), &opts)
            .unwrap();
        assert!((t + 3.0).abs() <= 0.06, "{t}");
    }

    #[test]
    fn hutchinson_diagonal() {
        let opts = FdOptions {
            n_fd_iters: 200,
            ..Default::default()
        };
        let a = Array2::from_diag(&array![1.0, 2.0, 3.0]);
        let t = hutchinson_trace(linear(a), array![0.0, 0.0, 0.0].view(), &opts).unwrap();
        assert!((t - 6.0).abs() <= 0.12, "{t}");
    }

    #[test]
    fn hutchinson_deterministic() {
        let opts = FdOptions {
            n_fd_iters: 1,
            seed: 42,
            ..Default::default()
        };
        let a = array![[1.0, 2.0], [0.5, -1.0]];
        let x = array![0.1, 0.2];
        let t1 = hutchinson_trace(linear(a.clone()), x.view(), &opts).unwrap();
        let t2 = hutchinson_trace(linear(a), x.view(), &opts).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn memoized_row_matches_direct_hutchinson() {
        use crate::baseline::ClosedFormKernel;
        let x = array![[0.0, 0.1], [0.5, -0.4], [-0.3, 0.8], [1.0, 1.0]];
        let k = KernelSpec::ClosedForm(ClosedFormKernel::gaussian(0.7, 2).unwrap());
        let model = KdeModel::new(x.view(), &k).unwrap();
        for probe in [Probe::Rademacher, Probe::ThreePoint] {
            let opts = FdOptions { probe, seed: 3, ..Default::default() };
            assert!(probe_patterns(probe, 2).unwrap() <= opts.n_fd_iters);
            let y = array![[0.2, 0.3]];
            let memo = fd_statistic(&model, y.view(), &opts).unwrap().value;
            let s0 = score(&model, y.row(0)).unwrap();
            let direct = hutchinson_trace(|p| score(&model, p), y.row(0), &opts).unwrap() + 0.5 * s0.dot(&s0);
            assert!((memo - direct).abs() <= 1e-10 * (1.0 + direct.abs()), "{memo} vs {direct}");
        }
    }

    #[test]
    fn probe_wire_names() {
        assert_eq!(serde_json::to_string(&Probe::ThreePoint).unwrap(), "\"paper_three_point\"");
        let p: Probe = serde_json::from_str("\"three_point\"").unwrap();
        assert_eq!(p, Probe::ThreePoint);
    }

    #[test]
    fn probe_patterns_saturate() {
        assert_eq!(probe_patterns(Probe::Rademacher, 3), Some(8));
        assert_eq!(probe_patterns(Probe::ThreePoint, 2), Some(9));
        assert_eq!(probe_patterns(Probe::Rademacher, 200), None);
    }

    #[test]
    fn three_point_probe_is_corrected() {
        let opts = FdOptions {
            n_fd_iters: 20_000,
            probe: Probe::ThreePoint,
            ..Default::default()
        };
        let a = Array2::from_diag(&array![1.0, 2.0, 3.0]);
        let t = hutchinson_trace(linear(a), array![0.0, 0.0, 0.0].view(), &opts).unwrap();
        assert!((t - 6.0).abs() < 0.1, "{t}");
    }

    #[test]
    fn stable_minimum_examples() {
        let grid: Vec<f64> = (0..7).map(|i| 10f64.powi(-i)).collect();
        let pairs = |fd: &[f64]| -> Vec<(f64, f64)> {
            grid.iter().copied().zip(fd.iter().copied()).collect()
        };
        let p = FdProfile::from_pairs(&pairs(&[7.0, 5.0, 4.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        assert_eq!(stable_minimum(&p, 3).unwrap(), Some(grid[3]));
        let p = FdProfile::from_pairs(&pairs(&[7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0])).unwrap();
        assert_eq!(stable_minimum(&p, 3).unwrap(), None);
        let p = FdProfile::from_pairs(&pairs(&[7.0, 6.0, 5.0, 4.0, 3.0, 2.0])).unwrap_or_default();
        assert!(stable_minimum(&p, 3).is_err());
    }

    #[test]
    fn two_minima_prefers_larger_a() {
        let fd = [9.0, 8.0, 7.0, 1.0, 7.0, 8.0, 9.0, 8.0, 7.0, 0.5, 7.0, 8.0, 9.0];
        assert_eq!(stable_minimum_index(&fd, 3), Some(3));
    }

    #[test]
    fn tune_equal_values_falls_back_to_largest() {
        let grid = log_grid_descending(1e-3, 1e3, 9).unwrap();
        let out = tune(&grid, 3, |_| {
            Ok(FdValue {
                value: 1.0,
                retained: 1,
                skipped: 0,
            })
        })
        .unwrap();
        assert!(!out.stable);
        assert_eq!(out.selected_index, 0);
        assert_eq!(out.profile.len(), 9);
    }

    #[test]
    fn tune_records_failures_as_infinite() {
        let grid = log_grid_descending(1e-3, 1e3, 9).unwrap();
        let out = tune(&grid, 3, |a| {
            if a < 1e-2 {
                Err(Error::Diverged { iteration: 3 })
            } else {
                Ok(FdValue {
                    value: (a.log10() - 1.0).powi(2),
                    retained: 1,
                    skipped: 0,
                })
            }
        })
        .unwrap();
        assert!(out.profile.entries().iter().all(|e| e.fd.is_finite() || e.fd == f64::INFINITY));
        assert!(tune(&grid, 3, |_| Err(Error::Diverged { iteration: 0 })).is_err());
    }

    #[test]
    fn profile_csv_has_header() {
        let p = FdProfile::from_pairs(&[(2.0, 1.5), (1.0, -0.5)]).unwrap();
        let csv = p.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("a,fd,retained_rows,skipped_rows"));
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid_descending(1e-6, 1e2, 25).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], 1e2);
        assert_eq!(g[24], 1e-6);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    proptest! {
        #[test]
        fn lazy_tune_matches_exhaustive(fd in prop::collection::vec(-5.0..5.0f64, 7..30)) {
            let n = fd.len();
            let grid: Vec<f64> = (0..n).map(|i| 2f64.powi(-(i as i32))).collect();
            let calls = std::cell::RefCell::new(vec![0usize; n]);
            let out = tune(&grid, 3, |a| {
                let i = grid.iter().position(|&g| g == a).unwrap();
                calls.borrow_mut()[i] += 1;
                Ok(FdValue { value: fd[i], retained: 1, skipped: 0 })
            }).unwrap();
            prop_assert!(calls.borrow().iter().all(|&c| c <= 1));
            match stable_minimum_index(&fd, 3) {
                Some(i) => {
                    prop_assert!(out.stable);
                    prop_assert_eq!(out.selected_index, i);
                }
                None => {
                    prop_assert!(!out.stable);
                    let min = fd.iter().copied().fold(f64::INFINITY, f64::min);
                    let first = fd.iter().position(|&v| v == min).unwrap();
                    prop_assert_eq!(out.selected_index, first);
                }
            }
        }

        #[test]
        fn unique_dip_found(n in 7usize..40, pos in 3usize..36) {
            prop_assume!(pos + 3 < n);
            let grid: Vec<f64> = (0..n).map(|i| 1.5f64.powi(-(i as i32))).collect();
            let fd: Vec<f64> = (0..n).map(|i| (i as f64 - pos as f64).powi(2)).collect();
            let out = tune(&grid, 3, |a| {
                let i = grid.iter().position(|&g| g == a).unwrap();
                Ok(FdValue { value: fd[i], retained: 1, skipped: 0 })
            }).unwrap();
            prop_assert_eq!(out.selected_index, pos);
            prop_assert!(out.evaluations <= pos + 4);
        }
    }
}
