//! Standard global-optimization test functions and the replicated
//! experiment runner.

use rayon::prelude::*;

use crate::linalg::Mat;
use crate::policy::{run_outer_loop, PolicyKind};
use crate::rng::{pairwise_sum, Purpose, Stream};
use crate::sga::SgaConfig;
use crate::{Error, Result};

/// Benchmark objectives with known optima.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Branin2,
    Hartmann3,
    Ackley5,
    Hartmann6,
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN3_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];
const HARTMANN3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];
const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

impl TestFunction {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "branin2" => Some(TestFunction::Branin2),
            "hartmann3" => Some(TestFunction::Hartmann3),
            "ackley5" => Some(TestFunction::Ackley5),
            "hartmann6" => Some(TestFunction::Hartmann6),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Branin2 => "branin2",
            TestFunction::Hartmann3 => "hartmann3",
            TestFunction::Ackley5 => "ackley5",
            TestFunction::Hartmann6 => "hartmann6",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            TestFunction::Branin2 => 2,
            TestFunction::Hartmann3 => 3,
            TestFunction::Ackley5 => 5,
            TestFunction::Hartmann6 => 6,
        }
    }

    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            TestFunction::Branin2 => vec![(-5.0, 10.0), (0.0, 15.0)],
            TestFunction::Hartmann3 => vec![(0.0, 1.0); 3],
            TestFunction::Ackley5 => vec![(-32.768, 32.768); 5],
            TestFunction::Hartmann6 => vec![(0.0, 1.0); 6],
        }
    }

    /// Known global minimum value.
    pub fn f_min(self) -> f64 {
        match self {
            TestFunction::Branin2 => 0.397887,
            TestFunction::Hartmann3 => -3.86278,
            TestFunction::Ackley5 => 0.0,
            TestFunction::Hartmann6 => -3.32237,
        }
    }

    /// Tabulated minimizers, for documentation and the correctness check.
    pub fn minimizers(self) -> Vec<Vec<f64>> {
        match self {
            TestFunction::Branin2 => vec![
                vec![-std::f64::consts::PI, 12.275],
                vec![std::f64::consts::PI, 2.275],
                vec![9.42478, 2.475],
            ],
            TestFunction::Hartmann3 => vec![vec![0.114614, 0.555649, 0.852547]],
            TestFunction::Ackley5 => vec![vec![0.0; 5]],
            TestFunction::Hartmann6 => {
                vec![vec![0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573]]
            }
        }
    }

    pub fn evaluate(self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} expects {} coordinates, got {}",
                self.name(),
                self.dim(),
                x.len()
            )));
        }
        if x.iter()
            .zip(self.bounds())
            .any(|(&v, (lo, hi))| v < lo || v > hi)
        {
            return Err(Error::OutOfBounds);
        }
        Ok(match self {
            TestFunction::Branin2 => branin(x[0], x[1]),
            TestFunction::Hartmann3 => hartmann(&HARTMANN3_A, &HARTMANN3_P, x),
            TestFunction::Ackley5 => ackley(x),
            TestFunction::Hartmann6 => hartmann(&HARTMANN6_A, &HARTMANN6_P, x),
        })
    }
}

fn branin(x1: f64, x2: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let b = 5.1 / (4.0 * pi * pi);
    let c = 5.0 / pi;
    let t = 1.0 / (8.0 * pi);
    let u = x2 - b * x1 * x1 + c * x1 - 6.0;
    u * u + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

fn hartmann<const D: usize>(a: &[[f64; D]; 4], p: &[[f64; D]; 4], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..4 {
        let mut inner = 0.0;
        for j in 0..D {
            let d = x[j] - p[i][j];
            inner += a[i][j] * d * d;
        }
        s += HARTMANN_ALPHA[i] * (-inner).exp();
    }
    -s
}

fn ackley(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (a, b, c) = (20.0, 0.2, 2.0 * std::f64::consts::PI);
    let mean_sq = x.iter().map(|&v| v * v).sum::<f64>() / n;
    let mean_cos = x.iter().map(|&v| (c * v).cos()).sum::<f64>() / n;
    -a * (-b * mean_sq.sqrt()).exp() - mean_cos.exp() + a + std::f64::consts::E
}

/// One outer-loop iteration's record.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub batch: Mat<f64>,
    pub values: Vec<f64>,
    pub best_so_far: f64,
    pub regret: f64,
    pub elapsed_ms: f64,
    /// Pending set at the decision, populated by the asynchronous driver.
    pub pending: Option<Mat<f64>>,
}

/// Full record of one seeded outer-loop run.
#[derive(Debug, Clone)]
pub struct ExperimentTrace {
    pub policy: PolicyKind,
    pub function: TestFunction,
    pub q: usize,
    pub seed: u64,
    pub initial_best: f64,
    pub records: Vec<IterationRecord>,
}

impl ExperimentTrace {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.regret)
    }

    /// First iteration whose running best reaches `log10(regret) <= level`,
    /// or `iterations + 1` when it never does.
    pub fn iterations_to_log10_regret(&self, level: f64) -> usize {
        for r in &self.records {
            if log10_regret(r.regret) <= level {
                return r.iteration;
            }
        }
        self.records.len() + 1
    }
}

/// Regret on a log scale, floored so an exact optimum stays finite.
pub fn log10_regret(regret: f64) -> f64 {
    (regret + 1e-12).log10()
}

/// Per-iteration aggregate across repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub iteration: usize,
    pub mean_log10_regret: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
    pub reps: usize,
}

/// Replicated experiment: `reps` seeded outer-loop runs (seed = base + rep)
/// and their per-iteration aggregate.
#[derive(Debug, Clone)]
pub struct ReplicatedRuns {
    pub traces: Vec<ExperimentTrace>,
    pub table: Vec<AggregateRow>,
}

/// Runs `reps` independent repetitions of the outer loop and aggregates
/// mean log10 regret with a normal-approximation 95% confidence interval.
#[allow(clippy::too_many_arguments)]
pub fn run_replicated(
    function: TestFunction,
    policy: PolicyKind,
    q: usize,
    iterations: usize,
    reps: usize,
    base_seed: u64,
    cfg: &SgaConfig<f64>,
) -> Result<ReplicatedRuns> {
    let traces: Vec<Result<ExperimentTrace>> = (0..reps)
        .into_par_iter()
        .map(|rep| run_outer_loop(function, policy, q, iterations, cfg, base_seed + rep as u64))
        .collect();
    let traces: Result<Vec<_>> = traces.into_iter().collect();
    let traces = traces?;
    let table = aggregate(&traces);
    Ok(ReplicatedRuns { traces, table })
}

/// Aggregates traces into the per-iteration table. Values are sorted before
/// summation, so the result is independent of the order the repetitions are
/// supplied in.
pub fn aggregate(traces: &[ExperimentTrace]) -> Vec<AggregateRow> {
    if traces.is_empty() {
        return Vec::new();
    }
    let iterations = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let reps = traces.len();
    (0..iterations)
        .map(|it| {
            let mut vals: Vec<f64> = traces
                .iter()
                .map(|t| log10_regret(t.records[it].regret))
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = pairwise_sum(&vals) / reps as f64;
            let half = if reps > 1 {
                let sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
                let sd = (pairwise_sum(&sq) / (reps as f64 - 1.0)).sqrt();
                1.96 * sd / (reps as f64).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                iteration: it + 1,
                mean_log10_regret: mean,
                ci95_lo: mean - half,
                ci95_hi: mean + half,
                reps,
            }
        })
        .collect()
}

/// Seeded uniform box sample, used by the optimum sanity check.
pub fn random_box_sample(function: TestFunction, count: usize, seed: u64) -> f64 {
    let bounds = function.bounds();
    let s = Stream::new(seed, Purpose::Sample, 0, 0);
    let d = bounds.len();
    let mut best = f64::INFINITY;
    let mut x = vec![0.0; d];
    for i in 0..count {
        for (j, v) in x.iter_mut().enumerate() {
            let (lo, hi) = bounds[j];
            *v = lo + (hi - lo) * s.uniform_f64((i * d + j) as u64);
        }
        best = best.min(function.evaluate(&x).expect("in-box sample"));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [TestFunction; 4] = [
        TestFunction::Branin2,
        TestFunction::Hartmann3,
        TestFunction::Ackley5,
        TestFunction::Hartmann6,
    ];

    #[test]
    fn minimizers_evaluate_to_the_tabulated_minimum() {
        for f in ALL {
            for m in f.minimizers() {
                let v = f.evaluate(&m).unwrap();
                assert!(
                    (v - f.f_min()).abs() < 1e-4,
                    "{}: {v} vs {}",
                    f.name(),
                    f.f_min()
                );
            }
        }
    }

    #[test]
    fn ackley_is_zero_at_the_origin() {
        let v = TestFunction::Ackley5.evaluate(&[0.0; 5]).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn branin_reference_value() {
        let v = TestFunction::Branin2
            .evaluate(&[std::f64::consts::PI, 2.275])
            .unwrap();
        assert!((v - 0.397_887_357_729_738_3).abs() < 1e-12);
    }

    #[test]
    fn out_of_box_and_wrong_dimension_are_rejected() {
        assert!(matches!(
            TestFunction::Branin2.evaluate(&[11.0, 0.0]),
            Err(Error::OutOfBounds)
        ));
        assert!(TestFunction::Hartmann3.evaluate(&[0.5; 4]).is_err());
    }

    #[test]
    fn random_search_never_beats_the_tabulated_optimum() {
        for f in ALL {
            let best = random_box_sample(f, 1_000_000, 99);
            assert!(
                best >= f.f_min() - 1e-9,
                "{}: sampled {best} below {}",
                f.name(),
                f.f_min()
            );
        }
    }

    #[test]
    fn aggregation_is_order_invariant_and_degenerate_for_one_rep() {
        let mk = |seed: u64, regrets: &[f64]| ExperimentTrace {
            policy: PolicyKind::MoeQei,
            function: TestFunction::Branin2,
            q: 1,
            seed,
            initial_best: 1.0,
            records: regrets
                .iter()
                .enumerate()
                .map(|(i, &r)| IterationRecord {
                    iteration: i + 1,
                    batch: Mat::zeros(1, 2),
                    values: vec![0.0],
                    best_so_far: r,
                    regret: r,
                    elapsed_ms: 0.0,
                    pending: None,
                })
                .collect(),
        };
        let a = mk(0, &[1.0, 0.5]);
        let b = mk(1, &[0.8, 0.1]);
        let c = mk(2, &[1.3, 0.9]);
        let t1 = aggregate(&[a.clone(), b.clone(), c.clone()]);
        let t2 = aggregate(&[c, a.clone(), b]);
        assert_eq!(t1, t2);

        let single = aggregate(&[a]);
        assert_eq!(single[0].ci95_lo, single[0].ci95_hi);
        assert_eq!(single[0].ci95_lo, single[0].mean_log10_regret);
    }

    #[test]
    fn parse_round_trips_names() {
        for f in ALL {
            assert_eq!(TestFunction::parse(f.name()), Some(f));
        }
        assert_eq!(TestFunction::parse("nope"), None);
    }
}
