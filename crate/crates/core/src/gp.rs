//! Gaussian-process posterior over candidate batches.
//!
//! Given observations `(x_i, y_i)` and a kernel `k`, the posterior of the
//! objective at a batch `X = (x_1..x_q)` is multivariate normal with
//!
//! ```text
//! mu(X)    = mu0(X) + K(X, x_1:n) Kt^{-1} (y - mu0(x_1:n))
//! Sigma(X) = K(X, X) - K(X, x_1:n) Kt^{-1} K(x_1:n, X)
//! ```
//!
//! where `Kt = K(x_1:n, x_1:n) + nugget * I`; the small fixed nugget keeps the
//! training Gram matrix well conditioned under noise-free evaluations. The
//! batch block `K(X, X)` receives jitter only if its factorization fails.
//!
//! [`posterior_batch`] optionally evaluates the partial derivatives of
//! `mu`, `Sigma`, and the Cholesky factor `L(X)` with respect to every batch
//! coordinate; the gradient estimator in [`crate::qei`] consumes these. A
//! [`GpModel`] is an immutable snapshot: refitting builds a new model, and any
//! number of workers may read one concurrently.

use crate::kernel::{k_eval_unchecked, k_grad_x_into, MeanFunction, SeKernelParams};
use crate::linalg::{
    cholesky, logdet_from_factor, solve_triangular, CholFactor, JitterPolicy, LowerTriangular,
    Mat, Side, SymMatrix,
};
use crate::real::Real;
use crate::rng::{Purpose, Stream};
use crate::sga::latin_hypercube;
use crate::{Error, Result};

/// Nugget variance used throughout the experiments.
pub const DEFAULT_NUGGET: f64 = 1e-4;

/// Evaluated points with their objective values inside a box domain.
///
/// Points are pairwise distinct: exact or near-exact duplicates are dropped
/// on ingest, keeping the first occurrence.
#[derive(Debug, Clone)]
pub struct ObservationSet<T> {
    bounds: Vec<(T, T)>,
    points: Vec<Vec<T>>,
    values: Vec<T>,
}

impl<T: Real> ObservationSet<T> {
    pub fn new(bounds: Vec<(T, T)>) -> Self {
        assert!(bounds.iter().all(|&(lo, hi)| hi > lo), "empty box side");
        ObservationSet {
            bounds,
            points: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_data(bounds: Vec<(T, T)>, points: Vec<Vec<T>>, values: Vec<T>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points vs {} values",
                points.len(),
                values.len()
            )));
        }
        let mut set = Self::new(bounds);
        for (p, v) in points.into_iter().zip(values) {
            set.push(p, v)?;
        }
        Ok(set)
    }

    /// Appends an evaluation; returns `false` when the point duplicates an
    /// existing one and is dropped.
    pub fn push(&mut self, point: Vec<T>, value: T) -> Result<bool> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point of length {} in a {}-dimensional box",
                point.len(),
                self.dim()
            )));
        }
        if point
            .iter()
            .zip(&self.bounds)
            .any(|(&x, &(lo, hi))| x < lo || x > hi)
        {
            return Err(Error::OutOfBounds);
        }
        let tol = self.duplicate_tol();
        if self.points.iter().any(|q| dist_sq(q, &point) < tol * tol) {
            return Ok(false);
        }
        self.points.push(point);
        self.values.push(value);
        Ok(true)
    }

    fn duplicate_tol(&self) -> T {
        let diag: T = self
            .bounds
            .iter()
            .map(|&(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<T>()
            .sqrt();
        diag * T::of(1e-12)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> &[(T, T)] {
        &self.bounds
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Best (smallest) observed value.
    pub fn incumbent(&self) -> Option<T> {
        self.values
            .iter()
            .copied()
            .fold(None, |acc: Option<T>, v| {
                Some(acc.map_or(v, |a| a.min(v)))
            })
    }
}

#[inline]
fn dist_sq<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// An immutable fitted Gaussian-process model.
#[derive(Debug, Clone)]
pub struct GpModel<T> {
    observations: ObservationSet<T>,
    kernel: SeKernelParams<T>,
    mean: MeanFunction<T>,
    nugget: T,
    train_factor: LowerTriangular<T>,
    alpha: Vec<T>,
}

impl<T: Real> GpModel<T> {
    /// Conditions the prior on the observation set. The model owns a copy of
    /// the data plus the factored training covariance and the weight vector
    /// `alpha = Kt^{-1} (y - mu0)`.
    pub fn fit(
        observations: ObservationSet<T>,
        kernel: SeKernelParams<T>,
        mean: MeanFunction<T>,
        nugget: T,
    ) -> Result<Self> {
        if kernel.dim() != observations.dim() {
            return Err(Error::DimensionMismatch(format!(
                "kernel dimension {} vs domain dimension {}",
                kernel.dim(),
                observations.dim()
            )));
        }
        let n = observations.len();
        let gram = train_gram(&observations, &kernel, nugget);
        let CholFactor { lower, .. } = cholesky(&gram, JitterPolicy::Escalate)?;
        let resid: Vec<T> = observations
            .values()
            .iter()
            .zip(observations.points())
            .map(|(&y, p)| y - mean.eval(p))
            .collect();
        let alpha = if n == 0 {
            Vec::new()
        } else {
            let tmp = solve_triangular(&lower, &resid, Side::Lower)?;
            solve_triangular(&lower, &tmp, Side::TransposedUpper)?
        };
        Ok(GpModel {
            observations,
            kernel,
            mean,
            nugget,
            train_factor: lower,
            alpha,
        })
    }

    pub fn observations(&self) -> &ObservationSet<T> {
        &self.observations
    }

    pub fn kernel(&self) -> &SeKernelParams<T> {
        &self.kernel
    }

    pub fn mean(&self) -> MeanFunction<T> {
        self.mean
    }

    pub fn nugget(&self) -> T {
        self.nugget
    }

    pub fn incumbent(&self) -> Option<T> {
        self.observations.incumbent()
    }
}

fn train_gram<T: Real>(
    obs: &ObservationSet<T>,
    kernel: &SeKernelParams<T>,
    nugget: T,
) -> SymMatrix<T> {
    let n = obs.len();
    let pts = obs.points();
    let mut gram = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut v = k_eval_unchecked(kernel, &pts[i], &pts[j]);
            if i == j {
                v += nugget;
            }
            gram.set(i, j, v);
        }
    }
    gram
}

/// Partial derivatives of the batch posterior with respect to one batch
/// coordinate `X[point][dim]`.
#[derive(Debug, Clone)]
pub struct CoordPartial<T> {
    pub point: usize,
    pub dim: usize,
    /// `d mu / d X[point][dim]`; zero except at `point`.
    pub dmean: Vec<T>,
    /// `d Sigma / d X[point][dim]`; nonzero only in row/column `point`.
    pub dcov: SymMatrix<T>,
    /// Forward-mode derivative of the Cholesky factor.
    pub dchol: LowerTriangular<T>,
}

/// The posterior distribution of the objective at a candidate batch, with its
/// Cholesky factor and (optionally) all coordinate partials.
#[derive(Debug, Clone)]
pub struct PosteriorBatch<T> {
    pub batch: Mat<T>,
    pub mean: Vec<T>,
    pub cov: SymMatrix<T>,
    pub chol: LowerTriangular<T>,
    pub chol_jitter: T,
    pub partials: Vec<CoordPartial<T>>,
}

impl<T: Real> PosteriorBatch<T> {
    pub fn q(&self) -> usize {
        self.batch.rows()
    }
}

/// Evaluates the batch posterior; with `with_derivatives` every one of the
/// `q * d` coordinate partials is populated (the inner optimization reuses
/// them across all Monte-Carlo replicates of an iteration).
pub fn posterior_batch<T: Real>(
    model: &GpModel<T>,
    batch: &Mat<T>,
    with_derivatives: bool,
) -> Result<PosteriorBatch<T>> {
    let q = batch.rows();
    let d = model.observations.dim();
    if batch.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "batch has {} columns, domain dimension is {d}",
            batch.cols()
        )));
    }
    if q == 0 {
        return Err(Error::DimensionMismatch("empty batch".into()));
    }
    let n = model.observations.len();
    let train = model.observations.points();
    let kernel = &model.kernel;

    // cross-covariances and whitened columns v_i = Lt^{-1} K(x_1:n, x_i)
    let mut cross: Vec<Vec<T>> = Vec::with_capacity(q);
    let mut white: Vec<Vec<T>> = Vec::with_capacity(q);
    for i in 0..q {
        let xi = batch.row(i);
        let b: Vec<T> = (0..n)
            .map(|j| k_eval_unchecked(kernel, xi, &train[j]))
            .collect();
        let v = if n == 0 {
            Vec::new()
        } else {
            solve_triangular(&model.train_factor, &b, Side::Lower)?
        };
        cross.push(b);
        white.push(v);
    }

    let mut mean = Vec::with_capacity(q);
    for i in 0..q {
        let mut m = model.mean.eval(batch.row(i));
        for (bj, aj) in cross[i].iter().zip(&model.alpha) {
            m += *bj * *aj;
        }
        mean.push(m);
    }

    let mut cov = SymMatrix::zeros(q);
    for i in 0..q {
        for j in 0..=i {
            let prior = k_eval_unchecked(kernel, batch.row(i), batch.row(j));
            cov.set(i, j, prior - dot(&white[i], &white[j]));
        }
    }
    let CholFactor { lower, jitter } = cholesky(&cov, JitterPolicy::Escalate)?;

    let mut partials = Vec::new();
    if with_derivatives {
        partials.reserve(q * d);
        // batch-batch kernel gradients, one d-vector per ordered pair
        let mut pair_grad = vec![vec![T::zero(); d]; q * q];
        for m in 0..q {
            for i in 0..q {
                k_grad_x_into(kernel, batch.row(m), batch.row(i), &mut pair_grad[m * q + i]);
            }
        }
        let mut train_grad = vec![T::zero(); d];
        let mut db = vec![vec![T::zero(); n]; d];
        for m in 0..q {
            // d K(x_m, x_1:n) / d x_m, sliced per coordinate
            for j in 0..n {
                k_grad_x_into(kernel, batch.row(m), &train[j], &mut train_grad);
                for k in 0..d {
                    db[k][j] = train_grad[k];
                }
            }
            for k in 0..d {
                let dv = if n == 0 {
                    Vec::new()
                } else {
                    solve_triangular(&model.train_factor, &db[k], Side::Lower)?
                };
                let mut dmean = vec![T::zero(); q];
                dmean[m] = dot(&db[k], &model.alpha);
                let mut dcov = SymMatrix::zeros(q);
                for i in 0..q {
                    if i == m {
                        // k(x_m, x_m) is constant for a stationary kernel
                        dcov.set(m, m, -(T::of(2.0)) * dot(&dv, &white[m]));
                    } else {
                        let dk = pair_grad[m * q + i][k];
                        dcov.set(m, i, dk - dot(&dv, &white[i]));
                    }
                }
                let dchol = crate::linalg::cholesky_derivative(&lower, &dcov)?;
                partials.push(CoordPartial {
                    point: m,
                    dim: k,
                    dmean,
                    dcov,
                    dchol,
                });
            }
        }
    }

    Ok(PosteriorBatch {
        batch: batch.clone(),
        mean,
        cov,
        chol: lower,
        chol_jitter: jitter,
        partials,
    })
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Log marginal likelihood of the observations under a zero prior mean,
/// together with its gradient with respect to the log-hyperparameters
/// `(log sigma_f^2, log l_1, ..., log l_d)`.
pub fn log_marginal_likelihood<T: Real>(
    obs: &ObservationSet<T>,
    params: &SeKernelParams<T>,
    nugget: T,
) -> Result<(T, Vec<T>)> {
    let n = obs.len();
    let gram = train_gram(obs, params, nugget);
    let CholFactor { lower, .. } = cholesky(&gram, JitterPolicy::Escalate)?;
    let y = obs.values();
    let tmp = solve_triangular(&lower, y, Side::Lower)?;
    let alpha = solve_triangular(&lower, &tmp, Side::TransposedUpper)?;
    let half = T::of(0.5);
    let value = -half * dot(y, &alpha)
        - half * logdet_from_factor(&lower)
        - T::of(n as f64) * half * T::of(2.0 * std::f64::consts::PI).ln();

    // Kt^{-1} column by column for the trace term
    let mut kinv = Mat::zeros(n, n);
    for j in 0..n {
        let mut e = vec![T::zero(); n];
        e[j] = T::one();
        let t = solve_triangular(&lower, &e, Side::Lower)?;
        let col = solve_triangular(&lower, &t, Side::TransposedUpper)?;
        for i in 0..n {
            kinv[(i, j)] = col[i];
        }
    }

    // grad_j = 1/2 * sum_{a,b} (alpha_a alpha_b - Kinv_ab) * dK_ab/dtheta_j
    let np = params.dim() + 1;
    let mut grad = vec![T::zero(); np];
    let pts = obs.points();
    for a in 0..n {
        for b in 0..n {
            let w = half * (alpha[a] * alpha[b] - kinv[(a, b)]);
            let kg = crate::kernel::k_grad_params(params, &pts[a], &pts[b])?;
            for (g, &kgj) in grad.iter_mut().zip(&kg) {
                *g += w * kgj;
            }
        }
    }
    Ok((value, grad))
}

fn lml_value<T: Real>(obs: &ObservationSet<T>, params: &SeKernelParams<T>, nugget: T) -> Option<T> {
    let gram = train_gram(obs, params, nugget);
    let lower = cholesky(&gram, JitterPolicy::Escalate).ok()?.lower;
    let y = obs.values();
    let tmp = solve_triangular(&lower, y, Side::Lower).ok()?;
    let alpha = solve_triangular(&lower, &tmp, Side::TransposedUpper).ok()?;
    let half = T::of(0.5);
    let n = obs.len();
    Some(
        -half * dot(y, &alpha)
            - half * logdet_from_factor(&lower)
            - T::of(n as f64) * half * T::of(2.0 * std::f64::consts::PI).ln(),
    )
}

/// Search box for the log-hyperparameters, sized from the domain widths and
/// the sample variance of the observed values.
fn log_param_box<T: Real>(obs: &ObservationSet<T>) -> Vec<(T, T)> {
    let n = obs.len();
    let mean = obs.values().iter().copied().sum::<T>() / T::of(n as f64);
    let var = obs
        .values()
        .iter()
        .map(|&y| (y - mean) * (y - mean))
        .sum::<T>()
        / T::of(n as f64);
    let mut bx = Vec::with_capacity(obs.dim() + 1);
    let lo = (T::of(1e-6) * var + T::of(1e-12)).ln();
    let hi = (T::of(100.0) * var + T::of(1e-6)).ln();
    bx.push((lo, hi));
    for &(l, h) in obs.bounds() {
        let w = h - l;
        bx.push(((T::of(1e-2) * w).ln(), (T::of(10.0) * w).ln()));
    }
    bx
}

fn clamp_into<T: Real>(x: &mut [T], bx: &[(T, T)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bx) {
        *v = (*v).max(lo).min(hi);
    }
}

/// Empirical-Bayes hyperparameter estimate: the best local maximizer of the
/// log marginal likelihood found by `restarts` runs of projected gradient
/// ascent on the log-parameters with backtracking step control.
///
/// Deterministic given `seed`.
pub fn fit_hyperparameters<T: Real>(
    obs: &ObservationSet<T>,
    restarts: usize,
    seed: u64,
) -> Result<SeKernelParams<T>> {
    if obs.len() < 2 {
        return Err(Error::InsufficientData {
            need: 2,
            got: obs.len(),
        });
    }
    let restarts = restarts.max(1);
    let bx = log_param_box(obs);
    let starts = latin_hypercube(restarts, &bx, Stream::new(seed, Purpose::HyperStart, 0, 0));

    let mut best: Option<(T, Vec<T>)> = None;
    for start in starts {
        let mut theta = start;
        clamp_into(&mut theta, &bx);
        let mut cur = match lml_value(obs, &SeKernelParams::from_log(&theta), obs_nugget::<T>()) {
            Some(v) => v,
            None => continue,
        };
        let mut step = T::one();
        for _ in 0..200 {
            let params = SeKernelParams::from_log(&theta);
            let (_, grad) = match log_marginal_likelihood(obs, &params, obs_nugget::<T>()) {
                Ok(vg) => vg,
                Err(_) => break,
            };
            // projected-gradient stationarity measure
            let mut proj = theta.clone();
            for (p, &g) in proj.iter_mut().zip(&grad) {
                *p += g;
            }
            clamp_into(&mut proj, &bx);
            let pg_norm = proj
                .iter()
                .zip(&theta)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>()
                .sqrt();
            if pg_norm < T::of(1e-6) {
                break;
            }
            let mut advanced = false;
            while step > T::of(1e-14) {
                let mut trial = theta.clone();
                for (t, &g) in trial.iter_mut().zip(&grad) {
                    *t += step * g;
                }
                clamp_into(&mut trial, &bx);
                let tv = lml_value(obs, &SeKernelParams::from_log(&trial), obs_nugget::<T>());
                if let Some(tv) = tv {
                    if tv > cur {
                        theta = trial;
                        cur = tv;
                        // let the step grow: nearly flat directions (e.g. a
                        // signal variance far below the nugget) need long
                        // moves to reach their box face
                        step = (step * T::of(2.0)).min(T::of(1e8));
                        advanced = true;
                        break;
                    }
                }
                step *= T::of(0.5);
            }
            if !advanced {
                break;
            }
        }
        match &best {
            Some((bv, _)) if *bv >= cur => {}
            _ => best = Some((cur, theta)),
        }
    }
    best.map(|(_, theta)| SeKernelParams::from_log(&theta))
        .ok_or(Error::NotPositiveDefinite { max_jitter: 0.0 })
}

#[inline]
fn obs_nugget<T: Real>() -> T {
    T::of(DEFAULT_NUGGET)
}

/// Draws `n` Latin-hypercube points and values sampled from the GP prior
/// `N(0, K + nugget I)`. Random instances built this way are well
/// conditioned, unlike arbitrary responses interpolated at a tiny nugget;
/// the gradient diagnostics build their trial models with this.
pub fn sample_prior_observations<T: Real>(
    bounds: Vec<(T, T)>,
    n: usize,
    kernel: &SeKernelParams<T>,
    nugget: T,
    seed: u64,
) -> Result<ObservationSet<T>> {
    let pts = latin_hypercube(n, &bounds, Stream::new(seed, Purpose::LhsStart, 0, 1));
    let mut gram = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut v = k_eval_unchecked(kernel, &pts[i], &pts[j]);
            if i == j {
                v += nugget;
            }
            gram.set(i, j, v);
        }
    }
    let lower = cholesky(&gram, JitterPolicy::Escalate)?.lower;
    let s = Stream::new(seed, Purpose::Sample, 0, 1);
    let z: Vec<T> = (0..n).map(|i| s.normal(i as u64)).collect();
    let mut obs = ObservationSet::new(bounds);
    for (i, p) in pts.into_iter().enumerate() {
        let mut y = T::zero();
        for k in 0..=i {
            y += lower.get(i, k) * z[k];
        }
        obs.push(p, y)?;
    }
    Ok(obs)
}
