//! Prior mean and squared-exponential covariance with analytic derivatives.
//!
//! The kernel is anisotropic (one length scale per input dimension):
//!
//! ```text
//! k(x, x') = sigma_f^2 * exp(-1/2 * sum_k (x_k - x'_k)^2 / l_k^2)
//! ```
//!
//! Hyperparameters are stored in natural units but optimized in log-space;
//! [`k_grad_params`] therefore differentiates with respect to
//! `(log sigma_f^2, log l_1, ..., log l_d)`.

use crate::real::Real;
use crate::{Error, Result};

/// Squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SeKernelParams<T> {
    pub signal_variance: T,
    pub length_scales: Vec<T>,
}

impl<T: Real> SeKernelParams<T> {
    pub fn new(signal_variance: T, length_scales: Vec<T>) -> Self {
        assert!(signal_variance > T::zero(), "signal variance must be > 0");
        assert!(
            length_scales.iter().all(|&l| l > T::zero()),
            "length scales must be > 0"
        );
        SeKernelParams {
            signal_variance,
            length_scales,
        }
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    /// `(log sigma_f^2, log l_1, ..., log l_d)`.
    pub fn to_log(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.dim() + 1);
        v.push(self.signal_variance.ln());
        v.extend(self.length_scales.iter().map(|l| l.ln()));
        v
    }

    pub fn from_log(log: &[T]) -> Self {
        SeKernelParams {
            signal_variance: log[0].exp(),
            length_scales: log[1..].iter().map(|&v| v.exp()).collect(),
        }
    }

    fn check_dim(&self, x: &[T], y: &[T]) -> Result<()> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "kernel dimension {} vs points of length {} and {}",
                self.dim(),
                x.len(),
                y.len()
            )));
        }
        Ok(())
    }
}

/// Constant prior mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFunction<T> {
    pub constant: T,
}

impl<T: Real> MeanFunction<T> {
    pub fn zero() -> Self {
        MeanFunction { constant: T::zero() }
    }

    #[inline]
    pub fn eval(&self, _x: &[T]) -> T {
        self.constant
    }
}

impl<T: Real> Default for MeanFunction<T> {
    fn default() -> Self {
        Self::zero()
    }
}

/// Kernel value `k(x, x')`.
pub fn k_eval<T: Real>(params: &SeKernelParams<T>, x: &[T], y: &[T]) -> Result<T> {
    params.check_dim(x, y)?;
    Ok(k_eval_unchecked(params, x, y))
}

#[inline]
pub(crate) fn k_eval_unchecked<T: Real>(params: &SeKernelParams<T>, x: &[T], y: &[T]) -> T {
    let half = T::of(0.5);
    let mut s = T::zero();
    for ((&xi, &yi), &l) in x.iter().zip(y).zip(&params.length_scales) {
        let d = (xi - yi) / l;
        s += d * d;
    }
    params.signal_variance * (-half * s).exp()
}

/// Gradient of `k(x, x')` with respect to the first argument.
pub fn k_grad_x<T: Real>(params: &SeKernelParams<T>, x: &[T], y: &[T]) -> Result<Vec<T>> {
    params.check_dim(x, y)?;
    let k = k_eval_unchecked(params, x, y);
    Ok(x.iter()
        .zip(y)
        .zip(&params.length_scales)
        .map(|((&xi, &yi), &l)| -(xi - yi) / (l * l) * k)
        .collect())
}

/// Writes `d k(x, y) / d x` into `out`; the allocation-free path used when
/// assembling posterior derivatives.
#[inline]
pub(crate) fn k_grad_x_into<T: Real>(params: &SeKernelParams<T>, x: &[T], y: &[T], out: &mut [T]) {
    let k = k_eval_unchecked(params, x, y);
    for (o, ((&xi, &yi), &l)) in out
        .iter_mut()
        .zip(x.iter().zip(y).zip(&params.length_scales))
    {
        *o = -(xi - yi) / (l * l) * k;
    }
}

/// Gradient of `k(x, x')` with respect to the log-hyperparameters, ordered as
/// `(log sigma_f^2, log l_1, ..., log l_d)`.
pub fn k_grad_params<T: Real>(params: &SeKernelParams<T>, x: &[T], y: &[T]) -> Result<Vec<T>> {
    params.check_dim(x, y)?;
    let k = k_eval_unchecked(params, x, y);
    let mut g = Vec::with_capacity(params.dim() + 1);
    // d k / d log sigma_f^2 = k
    g.push(k);
    // d k / d log l_j = k * (x_j - y_j)^2 / l_j^2
    for ((&xi, &yi), &l) in x.iter().zip(y).zip(&params.length_scales) {
        let d = (xi - yi) / l;
        g.push(k * d * d);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Stream};

    fn params1() -> SeKernelParams<f64> {
        SeKernelParams::new(1.0, vec![1.0])
    }

    #[test]
    fn zero_distance_gives_signal_variance() {
        let p = SeKernelParams::new(2.5, vec![0.7, 1.3]);
        let x = vec![0.4, -1.0];
        assert_eq!(k_eval(&p, &x, &x).unwrap(), 2.5);
    }

    #[test]
    fn unit_instance_value() {
        // d=1, sigma^2=1, l=1, |x-x'| = sqrt(2)  ->  e^{-1}
        let v = k_eval(&params1(), &[2.0f64.sqrt()], &[0.0]).unwrap();
        assert!((v - 0.367_879_441_171_442_32).abs() < 1e-12);
    }

    #[test]
    fn decays_monotonically_with_distance() {
        let p = params1();
        let mut prev = f64::INFINITY;
        for i in 0..60 {
            let d = i as f64 * 0.5;
            let v = k_eval(&p, &[d], &[0.0]).unwrap();
            assert!(v <= prev && v > 0.0);
            prev = v;
        }
        assert!(prev < 1e-100);
    }

    #[test]
    fn symmetry_is_exact() {
        let s = Stream::new(1, Purpose::Sample, 0, 0);
        let p = SeKernelParams::new(1.7, vec![0.5, 2.0, 1.1]);
        for t in 0..100u64 {
            let x: Vec<f64> = (0..3).map(|j| s.normal(10 * t + j)).collect();
            let y: Vec<f64> = (0..3).map(|j| s.normal(10 * t + 3 + j)).collect();
            assert_eq!(k_eval(&p, &x, &y).unwrap(), k_eval(&p, &y, &x).unwrap());
        }
    }

    #[test]
    fn grad_x_is_zero_at_coincident_points() {
        let p = SeKernelParams::new(3.0, vec![0.9, 1.4]);
        let x = vec![0.3, 0.8];
        assert!(k_grad_x(&p, &x, &x).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn grad_x_unit_instance() {
        // d=1, sigma^2=1, l=1, x=1, x'=0  ->  -e^{-1/2}
        let g = k_grad_x(&params1(), &[1.0], &[0.0]).unwrap();
        assert!((g[0] + 0.606_530_659_712_633_42).abs() < 1e-12);
    }

    #[test]
    fn grad_x_matches_finite_differences() {
        let s = Stream::new(2, Purpose::Sample, 0, 0);
        let p = SeKernelParams::new(1.3, vec![0.6, 1.1, 0.9]);
        let h = 1e-6;
        for t in 0..100u64 {
            let x: Vec<f64> = (0..3).map(|j| s.normal(10 * t + j)).collect();
            let y: Vec<f64> = (0..3).map(|j| s.normal(10 * t + 5 + j)).collect();
            let g = k_grad_x(&p, &x, &y).unwrap();
            for j in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd =
                    (k_eval(&p, &xp, &y).unwrap() - k_eval(&p, &xm, &y).unwrap()) / (2.0 * h);
                assert!((g[j] - fd).abs() < 1e-6, "coord {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn param_grad_at_coincident_points() {
        let p = SeKernelParams::new(2.0, vec![0.5, 0.5]);
        let x = vec![1.0, -1.0];
        let g = k_grad_params(&p, &x, &x).unwrap();
        assert_eq!(g[0], 2.0); // d k / d log sigma^2 = sigma^2 at x = x'
        assert_eq!(&g[1..], &[0.0, 0.0]);
    }

    #[test]
    fn param_grad_matches_symbolic_form_in_1d() {
        let p = SeKernelParams::new(1.5, vec![0.8]);
        let (x, y) = (0.9f64, -0.4f64);
        let k = k_eval(&p, &[x], &[y]).unwrap();
        let g = k_grad_params(&p, &[x], &[y]).unwrap();
        let want = k * (x - y) * (x - y) / (0.8 * 0.8);
        assert!((g[1] - want).abs() < 1e-14);
    }

    #[test]
    fn param_grad_matches_finite_differences() {
        let s = Stream::new(3, Purpose::Sample, 0, 0);
        let h = 1e-6;
        for t in 0..100u64 {
            let p = SeKernelParams::new(
                s.uniform_in(20 * t, 0.3, 3.0),
                vec![s.uniform_in(20 * t + 1, 0.3, 2.0), s.uniform_in(20 * t + 2, 0.3, 2.0)],
            );
            let x: Vec<f64> = (0..2).map(|j| s.normal(20 * t + 3 + j)).collect();
            let y: Vec<f64> = (0..2).map(|j| s.normal(20 * t + 6 + j)).collect();
            let g = k_grad_params(&p, &x, &y).unwrap();
            let log = p.to_log();
            for j in 0..3 {
                let mut lp = log.clone();
                let mut lm = log.clone();
                lp[j] += h;
                lm[j] -= h;
                let kp = k_eval(&SeKernelParams::from_log(&lp), &x, &y).unwrap();
                let km = k_eval(&SeKernelParams::from_log(&lm), &x, &y).unwrap();
                let fd = (kp - km) / (2.0 * h);
                assert!((g[j] - fd).abs() < 1e-6, "param {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = params1();
        assert!(matches!(
            k_eval(&p, &[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(k_grad_x(&p, &[0.0], &[0.0, 1.0]).is_err());
        assert!(k_grad_params(&p, &[0.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn gram_matrices_factor_after_nugget() {
        use crate::linalg::{cholesky, JitterPolicy, SymMatrix};
        let s = Stream::new(4, Purpose::Sample, 0, 0);
        let p = SeKernelParams::new(1.0, vec![0.4, 0.4]);
        for t in 0..20u64 {
            let pts: Vec<Vec<f64>> = (0..10)
                .map(|i| (0..2).map(|j| s.uniform(100 * t + 2 * i + j)).collect())
                .collect();
            let mut gram = SymMatrix::zeros(10);
            for i in 0..10 {
                for j in 0..=i {
                    let mut v = k_eval(&p, &pts[i], &pts[j]).unwrap();
                    if i == j {
                        v += 1e-4;
                    }
                    gram.set(i, j, v);
                }
            }
            let f = cholesky(&gram, JitterPolicy::Off).unwrap();
            assert!(f.lower.diag().all(|d| d > 0.0));
        }
    }
}
