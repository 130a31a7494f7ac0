//! Batch Bayesian global optimization of expensive black-box functions.
//!
//! The crate selects batches of `q` evaluation points by maximizing the
//! multi-points expected improvement (q-EI) of a Gaussian-process posterior.
//! q-EI has no cheap closed form for general `q`, so the inner maximization
//! runs multistart projected stochastic gradient ascent driven by a pathwise
//! (infinitesimal perturbation analysis) Monte-Carlo gradient estimator, with
//! Polyak-Ruppert averaging of the iterates.
//!
//! Module layout, bottom up:
//!
//! * [`real`] - scalar abstraction; the numeric core is generic over `f32`/`f64`.
//! * [`rng`] - counter-based seeded random streams, reproducible across workers.
//! * [`normal`] - standard normal pdf/cdf/quantile to double accuracy.
//! * [`linalg`] - dense symmetric linear algebra, Cholesky and its forward-mode
//!   derivative.
//! * [`kernel`] - squared-exponential covariance with analytic derivatives.
//! * [`gp`] - Gaussian-process posterior over candidate batches, marginal
//!   likelihood, hyperparameter fitting.
//! * [`qei`] - Monte-Carlo q-EI, the pathwise gradient estimator, the scalar
//!   closed form, and a deterministic quadrature oracle for `q <= 3`.
//! * [`sga`] - projected stochastic gradient ascent, multistart proposals,
//!   Latin hypercube designs.
//! * [`policy`] - outer-loop batch policies: q-EI maximization (synchronous
//!   and asynchronous) and the Constant-Liar baselines.
//! * [`testbed`] - standard test functions and the replicated experiment
//!   runner.
//!
//! The orchestration layers ([`policy`], [`testbed`]) are `f64`-only; the
//! aliases at the crate root fix the default scalar for the generic types.

pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod normal;
pub mod policy;
pub mod qei;
pub mod real;
pub mod rng;
pub mod sga;
pub mod testbed;

pub use real::Real;

/// Errors surfaced by the numeric core.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("matrix not positive definite even with jitter {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular triangular factor: zero diagonal entry {index}")]
    SingularFactor { index: usize },
    #[error("need at least {need} observations, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("sigma must be strictly positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("quadrature oracle supports q <= 3, got q = {0}")]
    UnsupportedDimension(usize),
    #[error("separation repair failed after {rounds} rounds; min separation too large for the box")]
    RepairFailed { rounds: usize },
    #[error("policy {0} does not support pending points")]
    UnsupportedPending(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("point outside the domain box")]
    OutOfBounds,
}

pub type Result<T> = std::result::Result<T, Error>;

/// Default-precision aliases for the main generic types.
pub type Mat64 = linalg::Mat<f64>;
pub type SymMatrix64 = linalg::SymMatrix<f64>;
pub type LowerTriangular64 = linalg::LowerTriangular<f64>;
pub type SeKernelParams64 = kernel::SeKernelParams<f64>;
pub type ObservationSet64 = gp::ObservationSet<f64>;
pub type GpModel64 = gp::GpModel<f64>;
pub type PosteriorBatch64 = gp::PosteriorBatch<f64>;
pub type ImprovementTransform64 = qei::ImprovementTransform<f64>;
pub type QeiEstimate64 = qei::QeiEstimate<f64>;
pub type SgaConfig64 = sga::SgaConfig<f64>;
pub type Proposal64 = sga::Proposal<f64>;
pub type FeasibleSet64 = sga::FeasibleSet<f64>;
