//! Outer-loop batch-selection policies.
//!
//! * `MoeQei` maximizes q-EI directly over the whole batch (synchronously or
//!   conditioned on pending points).
//! * `Ego` is the sequential special case `q = 1` on the same code path.
//! * `ClMin` / `ClMax` are Constant-Liar baselines: the batch fills greedily,
//!   maximizing single-point expected improvement against a posterior
//!   augmented with fabricated responses at the points already chosen. The
//!   liar value is the minimum (resp. maximum) of the values actually
//!   observed when the batch started; hyperparameters stay frozen during the
//!   greedy fill and liar points are discarded once the batch is formed.
//! * `ClMix` builds both liar batches and keeps whichever estimates higher
//!   under common random numbers (ties to the min variant).

use std::time::Instant;

use crate::gp::{fit_hyperparameters, GpModel, ObservationSet};
use crate::kernel::MeanFunction;
use crate::linalg::Mat;
use crate::qei::{build_transform, estimate_qei_batch, QeiEstimate};
use crate::rng::{Purpose, Stream};
use crate::sga::{
    latin_hypercube, project, propose_batch, FeasibleSet, Proposal, ProposalDiagnostics,
    SgaConfig,
};
use crate::testbed::{ExperimentTrace, IterationRecord, TestFunction};
use crate::{Error, Result};

/// Restarts used when refitting hyperparameters inside the outer loop.
const FIT_RESTARTS: usize = 3;

const TAG_FIT: u64 = 1;
const TAG_SUGGEST: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    MoeQei,
    Ego,
    ClMin,
    ClMax,
    ClMix,
}

impl PolicyKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "moe-qei" => Some(PolicyKind::MoeQei),
            "ego" => Some(PolicyKind::Ego),
            "cl-min" => Some(PolicyKind::ClMin),
            "cl-max" => Some(PolicyKind::ClMax),
            "cl-mix" => Some(PolicyKind::ClMix),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::MoeQei => "moe-qei",
            PolicyKind::Ego => "ego",
            PolicyKind::ClMin => "cl-min",
            PolicyKind::ClMax => "cl-max",
            PolicyKind::ClMix => "cl-mix",
        }
    }
}

/// Points issued but not yet evaluated.
#[derive(Debug, Clone)]
pub struct PendingSet {
    pub points: Mat<f64>,
}

impl PendingSet {
    pub fn empty(dim: usize) -> Self {
        PendingSet {
            points: Mat::zeros(0, dim),
        }
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn feasible_set(model: &GpModel<f64>, pending: &PendingSet, r: f64) -> FeasibleSet<f64> {
    let mut anchors = model.observations().points().to_vec();
    anchors.extend(pending.points.iter_rows().map(|row| row.to_vec()));
    FeasibleSet::new(model.observations().bounds().to_vec(), r, anchors)
}

fn check_pending_in_box(model: &GpModel<f64>, pending: &PendingSet) -> Result<()> {
    let bounds = model.observations().bounds();
    for row in pending.points.iter_rows() {
        if row
            .iter()
            .zip(bounds)
            .any(|(&v, &(lo, hi))| v < lo || v > hi)
        {
            return Err(Error::OutOfBounds);
        }
    }
    Ok(())
}

/// Proposes the next batch under the given policy.
///
/// `q` is the total batch size including the `pending.len()` points still
/// under evaluation; the proposal contains the `q - p` new points. The
/// Constant-Liar policies require an empty pending set.
pub fn suggest(
    policy: PolicyKind,
    model: &GpModel<f64>,
    q: usize,
    pending: &PendingSet,
    cfg: &SgaConfig<f64>,
) -> Result<Proposal<f64>> {
    cfg.validate()?;
    if q == 0 {
        return Err(Error::InvalidConfig("q must be >= 1".into()));
    }
    if pending.len() >= q {
        return Err(Error::InvalidConfig(format!(
            "pending count {} must be below q = {q}",
            pending.len()
        )));
    }
    check_pending_in_box(model, pending)?;
    match policy {
        PolicyKind::MoeQei => {
            let h = feasible_set(model, pending, cfg.min_separation);
            propose_batch(model, &h, q, &pending.points, cfg)
        }
        PolicyKind::Ego => {
            if q != 1 {
                return Err(Error::InvalidConfig(
                    "ego is the sequential q = 1 policy; use moe-qei for batches".into(),
                ));
            }
            if !pending.is_empty() {
                return Err(Error::UnsupportedPending("ego"));
            }
            let h = feasible_set(model, pending, cfg.min_separation);
            propose_batch(model, &h, 1, &pending.points, cfg)
        }
        PolicyKind::ClMin | PolicyKind::ClMax => {
            if !pending.is_empty() {
                return Err(Error::UnsupportedPending(policy.name()));
            }
            let (batch, _liars, diagnostics) = constant_liar_batch(model, q, policy, cfg)?;
            let estimate = estimate_batches(model, &[&batch], cfg)?.pop().unwrap();
            Ok(Proposal {
                batch,
                estimated_qei: estimate,
                restart_index: 0,
                diagnostics,
            })
        }
        PolicyKind::ClMix => {
            if !pending.is_empty() {
                return Err(Error::UnsupportedPending("cl-mix"));
            }
            let (b_min, _, d_min) = constant_liar_batch(model, q, PolicyKind::ClMin, cfg)?;
            let (b_max, _, d_max) = constant_liar_batch(model, q, PolicyKind::ClMax, cfg)?;
            let ests = estimate_batches(model, &[&b_min, &b_max], cfg)?;
            // ties keep the min variant
            if ests[1].mean > ests[0].mean {
                Ok(Proposal {
                    batch: b_max,
                    estimated_qei: ests.into_iter().nth(1).unwrap(),
                    restart_index: 1,
                    diagnostics: d_max,
                })
            } else {
                Ok(Proposal {
                    batch: b_min,
                    estimated_qei: ests.into_iter().next().unwrap(),
                    restart_index: 0,
                    diagnostics: d_min,
                })
            }
        }
    }
}

/// q-EI of whole candidate batches under the real model, sharing one
/// selection stream so competing batches see identical draws.
fn estimate_batches(
    model: &GpModel<f64>,
    batches: &[&Mat<f64>],
    cfg: &SgaConfig<f64>,
) -> Result<Vec<QeiEstimate<f64>>> {
    let f_star = model
        .incumbent()
        .unwrap_or_else(|| model.mean().constant);
    let mut transforms = Vec::with_capacity(batches.len());
    for b in batches {
        let post = crate::gp::posterior_batch(model, b, false)?;
        transforms.push(build_transform(&post, f_star, 0)?);
    }
    let refs: Vec<&_> = transforms.iter().collect();
    Ok(estimate_qei_batch(
        &refs,
        cfg.eval_samples,
        Stream::new(cfg.seed, Purpose::Selection, u64::MAX, 0),
    ))
}

/// Greedy Constant-Liar fill. Returns the batch, the liar values it used
/// (one per greedy step after the first), and aggregated inner diagnostics.
pub(crate) fn constant_liar_batch(
    model: &GpModel<f64>,
    q: usize,
    variant: PolicyKind,
    cfg: &SgaConfig<f64>,
) -> Result<(Mat<f64>, Vec<f64>, ProposalDiagnostics<f64>)> {
    let obs = model.observations();
    if obs.is_empty() {
        return Err(Error::InsufficientData { need: 1, got: 0 });
    }
    // liar from the *originally observed* values, fixed for the whole fill
    let liar = match variant {
        PolicyKind::ClMin => obs
            .values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min),
        PolicyKind::ClMax => obs
            .values()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
        _ => return Err(Error::InvalidConfig("not a constant-liar variant".into())),
    };

    let mut aug = obs.clone();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut liars_used = Vec::new();
    let mut diagnostics = ProposalDiagnostics {
        restarts: 0,
        unique_solutions: 0,
        final_grad_norms: Vec::new(),
    };
    for _step in 0..q {
        // hyperparameters stay frozen at the real-data fit
        let step_model = GpModel::fit(
            aug.clone(),
            model.kernel().clone(),
            model.mean(),
            model.nugget(),
        )?;
        let h = FeasibleSet::new(
            aug.bounds().to_vec(),
            cfg.min_separation,
            aug.points().to_vec(),
        );
        let inner = propose_batch(&step_model, &h, 1, &Mat::zeros(0, obs.dim()), cfg)?;
        let point = inner.batch.row(0).to_vec();
        diagnostics.restarts += inner.diagnostics.restarts;
        diagnostics.unique_solutions += inner.diagnostics.unique_solutions;
        if let Some(&n) = inner
            .diagnostics
            .final_grad_norms
            .get(inner.restart_index.min(inner.diagnostics.final_grad_norms.len() - 1))
        {
            diagnostics.final_grad_norms.push(n);
        }
        if rows.len() + 1 < q {
            aug.push(point.clone(), liar)?;
            liars_used.push(liar);
        }
        rows.push(point);
    }
    Ok((Mat::from_rows(&rows), liars_used, diagnostics))
}

/// Runs the full outer optimization loop: a `(2d + 2)`-point Latin hypercube
/// initialization, then per iteration a suggested batch, its evaluations,
/// and a hyperparameter refit. Deterministic given `seed` (wall times aside).
pub fn run_outer_loop(
    function: TestFunction,
    policy: PolicyKind,
    q: usize,
    iterations: usize,
    cfg: &SgaConfig<f64>,
    seed: u64,
) -> Result<ExperimentTrace> {
    if iterations == 0 {
        return Err(Error::InvalidConfig("need at least one iteration".into()));
    }
    let bounds = function.bounds();
    let d = bounds.len();
    let init = latin_hypercube(2 * d + 2, &bounds, Stream::new(seed, Purpose::OuterInit, 0, 0));
    let mut obs = ObservationSet::new(bounds.clone());
    for p in init {
        let y = function.evaluate(&p)?;
        obs.push(p, y)?;
    }
    let mut model = refit(&obs, seed, 0)?;
    let mut best = model.incumbent().expect("initialized");
    let initial_best = best;

    let mut records = Vec::with_capacity(iterations);
    for it in 1..=iterations {
        let start = Instant::now();
        let mut cfg_it = cfg.clone();
        cfg_it.seed = Stream::derive_seed(seed, TAG_SUGGEST, it as u64);
        let pending = PendingSet::empty(d);
        let proposal = suggest(policy, &model, q, &pending, &cfg_it)?;
        // duplicate-evaluation guard: repair any batch point that slipped
        // within the separation radius of an existing observation
        let guard = feasible_set(&model, &pending, cfg.min_separation);
        let batch = project(&proposal.batch, &guard)?;

        let mut values = Vec::with_capacity(batch.rows());
        for row in batch.iter_rows() {
            let y = function.evaluate(row)?;
            obs.push(row.to_vec(), y)?;
            best = best.min(y);
            values.push(y);
        }
        model = refit(&obs, seed, it as u64)?;
        let regret = best - function.f_min();
        debug_assert!(regret >= 0.0);
        records.push(IterationRecord {
            iteration: it,
            batch,
            values,
            best_so_far: best,
            regret,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            pending: None,
        });
    }
    Ok(ExperimentTrace {
        policy,
        function,
        q,
        seed,
        initial_best,
        records,
    })
}

fn refit(obs: &ObservationSet<f64>, seed: u64, iteration: u64) -> Result<GpModel<f64>> {
    let params = fit_hyperparameters(obs, FIT_RESTARTS, Stream::derive_seed(seed, TAG_FIT, iteration))?;
    GpModel::fit(
        obs.clone(),
        params,
        MeanFunction::zero(),
        crate::gp::DEFAULT_NUGGET,
    )
}

/// Simulated asynchronous run: after an initial `q`-point batch, each entry
/// of `completions_schedule` completes one pending evaluation (index taken
/// modulo the pending count) and a single replacement point is suggested
/// conditioned on the other `q - 1` still-pending points.
pub fn run_async_demo(
    function: TestFunction,
    q: usize,
    completions_schedule: &[usize],
    cfg: &SgaConfig<f64>,
    seed: u64,
) -> Result<ExperimentTrace> {
    if q < 2 {
        return Err(Error::InvalidConfig(
            "the asynchronous demo needs q >= 2".into(),
        ));
    }
    let bounds = function.bounds();
    let d = bounds.len();
    let init = latin_hypercube(2 * d + 2, &bounds, Stream::new(seed, Purpose::OuterInit, 0, 0));
    let mut obs = ObservationSet::new(bounds.clone());
    for p in init {
        let y = function.evaluate(&p)?;
        obs.push(p, y)?;
    }
    let mut model = refit(&obs, seed, 0)?;
    let mut best = model.incumbent().expect("initialized");
    let initial_best = best;

    let mut cfg0 = cfg.clone();
    cfg0.seed = Stream::derive_seed(seed, TAG_SUGGEST, 0);
    let first = suggest(PolicyKind::MoeQei, &model, q, &PendingSet::empty(d), &cfg0)?;
    let mut pending: Vec<Vec<f64>> = first.batch.iter_rows().map(|r| r.to_vec()).collect();

    let mut records = Vec::with_capacity(completions_schedule.len());
    for (decision, &pick) in completions_schedule.iter().enumerate() {
        let start = Instant::now();
        let idx = pick % pending.len();
        let done = pending.remove(idx);
        let y = function.evaluate(&done)?;
        obs.push(done.clone(), y)?;
        best = best.min(y);
        model = refit(&obs, seed, decision as u64 + 1)?;

        let mut cfg_it = cfg.clone();
        cfg_it.seed = Stream::derive_seed(seed, TAG_SUGGEST, decision as u64 + 1);
        let pend = PendingSet {
            points: Mat::from_rows(&pending.iter().cloned().collect::<Vec<_>>()),
        };
        let proposal = suggest(PolicyKind::MoeQei, &model, q, &pend, &cfg_it)?;
        let new_point = proposal.batch.row(0).to_vec();
        pending.push(new_point.clone());

        records.push(IterationRecord {
            iteration: decision + 1,
            batch: Mat::from_rows(&[new_point]),
            values: vec![y],
            best_so_far: best,
            regret: best - function.f_min(),
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            pending: Some(Mat::from_rows(&pending.iter().cloned().collect::<Vec<_>>())),
        });
    }
    Ok(ExperimentTrace {
        policy: PolicyKind::MoeQei,
        function,
        q,
        seed,
        initial_best,
        records,
    })
}
