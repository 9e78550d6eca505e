//! Sensor selection under a cardinality bound.
//!
//! `f(Q)` is the optimal weighted precision cost of a certified design that
//! uses the sensors in `Q`, or `+∞` when no design is certified. `h(Q)` is
//! the corresponding precision vector. Greedy sensor elimination (GSE),
//! least-precise elimination (LPE), reweighted ℓ1 minimization (RLM) and an
//! exhaustive oracle all work on these two set functions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::admm::AdmmConfig;
use crate::error::{Error, Result};
use crate::estimator::{self, DesignSpec, EstimatorResult};
use crate::lmi::{EstimatorKind, Framework};
use crate::model::{LtiPlant, SensorCatalog, SensorSubset};

/// Default bound on the number of subsets the exhaustive oracle may visit.
pub const EXHAUSTIVE_BUDGET: u128 = 10_000;

/// Default iteration cap of RLM.
pub const RLM_MAX_ITER: usize = 50;

/// A set-function value: finite, or the infeasibility marker that orders
/// above every finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost {
    Finite(f64),
    Infinite,
}

impl Cost {
    pub fn is_finite(self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Cost::Finite(v) => Some(v),
            Cost::Infinite => None,
        }
    }

    /// The value as `f64`, with `+∞` for the marker.
    pub fn to_f64(self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }
}

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.total_cmp(b),
            (Cost::Finite(_), Cost::Infinite) => Ordering::Less,
            (Cost::Infinite, Cost::Finite(_)) => Ordering::Greater,
            (Cost::Infinite, Cost::Infinite) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(v) => write!(f, "{v}"),
            Cost::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionProblem {
    pub plant: LtiPlant,
    pub catalog: SensorCatalog,
    pub framework: Framework,
    pub estimator: EstimatorKind,
    pub gamma: f64,
    pub k_s: usize,
    pub admm: AdmmConfig,
}

impl SelectionProblem {
    pub fn new(
        plant: LtiPlant,
        catalog: SensorCatalog,
        framework: Framework,
        estimator: EstimatorKind,
        gamma: f64,
        k_s: usize,
        admm: AdmmConfig,
    ) -> Result<Self> {
        if k_s == 0 || k_s > catalog.len() {
            return Err(Error::InvalidArgument(format!(
                "cardinality bound {k_s} outside 1..={}",
                catalog.len()
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("γ must be positive, got {gamma}")));
        }
        admm.validate()?;
        Ok(Self {
            plant,
            catalog,
            framework,
            estimator,
            gamma,
            k_s,
            admm,
        })
    }

    pub fn n_s(&self) -> usize {
        self.catalog.len()
    }

    fn spec(&self, subset: &SensorSubset, weights: &[f64]) -> DesignSpec {
        DesignSpec {
            framework: self.framework,
            estimator: self.estimator,
            gamma: self.gamma,
            rho: subset.ids().iter().map(|&i| weights[i]).collect(),
            subset: subset.clone(),
        }
    }

    /// One certified design on `subset` with per-sensor `weights` indexed by
    /// catalog id. Any failure to certify is reported as `None`.
    fn design_with(&self, subset: &SensorSubset, weights: &[f64]) -> Option<EstimatorResult> {
        if subset.is_empty() {
            return None;
        }
        estimator::design(&self.plant, &self.catalog, &self.spec(subset, weights), &self.admm).ok()
    }

    /// Shared solve behind `f` and `h`.
    pub fn evaluate(&self, subset: &SensorSubset) -> Evaluation {
        Evaluation::from_design(subset, self.design_with(subset, self.catalog.weights()))
    }
}

/// `f` and `h` of one subset from a single solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub subset: SensorSubset,
    pub cost: Cost,
    /// Precisions aligned with `subset.ids()`; all `+∞` when infeasible.
    pub precisions: Vec<f64>,
    pub design: Option<EstimatorResult>,
}

impl Evaluation {
    fn from_design(subset: &SensorSubset, design: Option<EstimatorResult>) -> Self {
        match design {
            Some(d) => Self {
                subset: subset.clone(),
                cost: Cost::Finite(d.objective),
                precisions: d.p.values().to_vec(),
                design: Some(d),
            },
            None => Self {
                subset: subset.clone(),
                cost: Cost::Infinite,
                precisions: vec![f64::INFINITY; subset.len()],
                design: None,
            },
        }
    }
}

/// `f(Q)`: certified optimal cost, `+∞` when infeasible or `Q = ∅`.
pub fn eval_f(problem: &SelectionProblem, subset: &SensorSubset) -> Cost {
    problem.evaluate(subset).cost
}

/// `h(Q)`: optimal precisions aligned with `subset.ids()`, all `+∞` when
/// infeasible.
pub fn eval_h(problem: &SelectionProblem, subset: &SensorSubset) -> Vec<f64> {
    problem.evaluate(subset).precisions
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Gse,
    Lpe,
    Rlm,
    Exhaustive,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Gse => "gse",
            Algorithm::Lpe => "lpe",
            Algorithm::Rlm => "rlm",
            Algorithm::Exhaustive => "exhaustive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceAction {
    /// A candidate subset was evaluated.
    Evaluated,
    /// The sensor was removed from the working set.
    Eliminated,
    /// RLM dropped the sensor because its precision fell below the threshold.
    Dropped,
    /// The sensor survived an RLM round; the cost column is its precision.
    Kept,
    /// Final design on the returned subset.
    Final,
}

impl TraceAction {
    pub fn name(self) -> &'static str {
        match self {
            TraceAction::Evaluated => "evaluated",
            TraceAction::Eliminated => "eliminated",
            TraceAction::Dropped => "dropped",
            TraceAction::Kept => "kept",
            TraceAction::Final => "final",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    /// Catalog id the row refers to, if any.
    pub candidate: Option<usize>,
    pub cost: Cost,
    pub action: TraceAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub algorithm: Algorithm,
    /// Empty when the algorithm reached infeasibility.
    pub subset: SensorSubset,
    pub cost: Cost,
    /// Precisions aligned with `subset.ids()`.
    pub precisions: Vec<f64>,
    /// Set-function evaluations made by the algorithm's main loop.
    pub evaluations: usize,
    /// Additional solves on the returned subset.
    pub final_passes: usize,
    pub trace: Vec<TraceRow>,
    pub design: Option<EstimatorResult>,
}

impl SelectionResult {
    pub fn is_feasible(&self) -> bool {
        self.cost.is_finite()
    }

    fn infeasible(algorithm: Algorithm, evaluations: usize, final_passes: usize, trace: Vec<TraceRow>) -> Self {
        Self {
            algorithm,
            subset: SensorSubset::empty(),
            cost: Cost::Infinite,
            precisions: Vec::new(),
            evaluations,
            final_passes,
            trace,
            design: None,
        }
    }

    fn from_evaluation(
        algorithm: Algorithm,
        eval: Evaluation,
        evaluations: usize,
        final_passes: usize,
        trace: Vec<TraceRow>,
    ) -> Self {
        if !eval.cost.is_finite() {
            return Self::infeasible(algorithm, evaluations, final_passes, trace);
        }
        Self {
            algorithm,
            subset: eval.subset,
            cost: eval.cost,
            precisions: eval.precisions,
            evaluations,
            final_passes,
            trace,
            design: eval.design,
        }
    }
}

/// Evaluates every subset, in parallel when the `std` feature is enabled.
/// Results keep the input order.
fn evaluate_all(problem: &SelectionProblem, subsets: &[SensorSubset]) -> Vec<Evaluation> {
    #[cfg(feature = "std")]
    {
        use rayon::prelude::*;
        subsets.par_iter().map(|s| problem.evaluate(s)).collect()
    }
    #[cfg(not(feature = "std"))]
    {
        subsets.iter().map(|s| problem.evaluate(s)).collect()
    }
}

/// Index of the smallest cost; the first one wins ties.
fn argmin(costs: impl Iterator<Item = Cost>) -> Option<(usize, Cost)> {
    let mut best: Option<(usize, Cost)> = None;
    for (i, c) in costs.enumerate() {
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((i, c));
        }
    }
    best
}

/// `N_S(N_S+1)/2 − k_S(k_S+1)/2`.
pub fn gse_evaluation_count(n_s: usize, k_s: usize) -> usize {
    n_s * (n_s + 1) / 2 - k_s * (k_s + 1) / 2
}

/// Greedy sensor elimination: starting from all sensors, repeatedly remove
/// the sensor whose removal increases the cost least.
pub fn gse(problem: &SelectionProblem) -> SelectionResult {
    let mut q = SensorSubset::full(problem.n_s());
    let mut trace = Vec::new();
    let mut evaluations = 0;
    let mut current: Option<Evaluation> = None;
    for round in 1..=problem.n_s() - problem.k_s {
        let candidates: Vec<SensorSubset> = q.ids().iter().map(|&s| q.without(s)).collect();
        let evals = evaluate_all(problem, &candidates);
        evaluations += evals.len();
        for (&s, e) in q.ids().iter().zip(&evals) {
            trace.push(TraceRow {
                round,
                candidate: Some(s),
                cost: e.cost,
                action: TraceAction::Evaluated,
            });
        }
        let (i, best) = argmin(evals.iter().map(|e| e.cost)).expect("non-empty working set");
        if !best.is_finite() {
            return SelectionResult::infeasible(Algorithm::Gse, evaluations, 0, trace);
        }
        let removed = q.ids()[i];
        trace.push(TraceRow {
            round,
            candidate: Some(removed),
            cost: best,
            action: TraceAction::Eliminated,
        });
        q = q.without(removed);
        current = evals.into_iter().nth(i);
    }
    let (eval, final_passes) = match current {
        Some(e) => (e, 0),
        None => (problem.evaluate(&q), 1),
    };
    if final_passes > 0 {
        trace.push(TraceRow {
            round: 0,
            candidate: None,
            cost: eval.cost,
            action: TraceAction::Final,
        });
    }
    SelectionResult::from_evaluation(Algorithm::Gse, eval, evaluations, final_passes, trace)
}

/// Least-precise elimination: repeatedly solve on the working set and
/// remove the sensor with the smallest optimal precision. The returned
/// subset gets one final design pass.
pub fn lpe(problem: &SelectionProblem) -> SelectionResult {
    let mut q = SensorSubset::full(problem.n_s());
    let mut trace = Vec::new();
    let mut evaluations = 0;
    for round in 1..=problem.n_s() - problem.k_s {
        let eval = problem.evaluate(&q);
        evaluations += 1;
        if !eval.cost.is_finite() {
            trace.push(TraceRow {
                round,
                candidate: None,
                cost: eval.cost,
                action: TraceAction::Evaluated,
            });
            return SelectionResult::infeasible(Algorithm::Lpe, evaluations, 0, trace);
        }
        let (i, _) = argmin(eval.precisions.iter().map(|&p| Cost::Finite(p))).expect("non-empty working set");
        let removed = q.ids()[i];
        trace.push(TraceRow {
            round,
            candidate: Some(removed),
            cost: eval.cost,
            action: TraceAction::Eliminated,
        });
        q = q.without(removed);
    }
    let eval = problem.evaluate(&q);
    trace.push(TraceRow {
        round: 0,
        candidate: None,
        cost: eval.cost,
        action: TraceAction::Final,
    });
    SelectionResult::from_evaluation(Algorithm::Lpe, eval, evaluations, 1, trace)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlmConfig {
    pub max_iter: usize,
    /// Support threshold; `None` uses `10⁻³` times the largest finite
    /// precision of the first solve (or `10⁻³` if there is none).
    pub epsilon: Option<f64>,
}

impl Default for RlmConfig {
    fn default() -> Self {
        Self {
            max_iter: RLM_MAX_ITER,
            epsilon: None,
        }
    }
}

/// Reweighted ℓ1 minimization: solve on all sensors with weights
/// `ρ_s = 1/(ε + p_s)` until at most `k_S` precisions exceed `ε`, then
/// design on that support with the catalog weights.
pub fn rlm(problem: &SelectionProblem, config: &RlmConfig) -> SelectionResult {
    let n = problem.n_s();
    let full = SensorSubset::full(n);
    let mut weights = vec![1.0; n];
    let mut eps = config.epsilon;
    let mut trace = Vec::new();
    let mut evaluations = 0;
    for round in 1..=config.max_iter {
        let design = problem.design_with(&full, &weights);
        evaluations += 1;
        let Some(design) = design else {
            trace.push(TraceRow {
                round,
                candidate: None,
                cost: Cost::Infinite,
                action: TraceAction::Evaluated,
            });
            return SelectionResult::infeasible(Algorithm::Rlm, evaluations, 0, trace);
        };
        let p = design.p.values();
        let e = *eps.get_or_insert_with(|| {
            let max = p.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
            1e-3 * if max > 0.0 { max } else { 1.0 }
        });
        trace.push(TraceRow {
            round,
            candidate: None,
            cost: Cost::Finite(design.objective),
            action: TraceAction::Evaluated,
        });
        let support: SensorSubset = (0..n).filter(|&s| p[s] > e).collect();
        for (s, &ps) in p.iter().enumerate() {
            trace.push(TraceRow {
                round,
                candidate: Some(s),
                cost: Cost::Finite(ps),
                action: if ps > e {
                    TraceAction::Kept
                } else {
                    TraceAction::Dropped
                },
            });
        }
        if support.len() <= problem.k_s {
            let eval = problem.evaluate(&support);
            trace.push(TraceRow {
                round: 0,
                candidate: None,
                cost: eval.cost,
                action: TraceAction::Final,
            });
            return SelectionResult::from_evaluation(Algorithm::Rlm, eval, evaluations, 1, trace);
        }
        for (w, &ps) in weights.iter_mut().zip(p) {
            *w = 1.0 / (e + ps);
        }
    }
    SelectionResult::infeasible(Algorithm::Rlm, evaluations, 0, trace)
}

/// `C(n, k)` without overflow for the sizes used here.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<SensorSubset> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(SensorSubset::new(c.iter().copied()));
        let mut i = k;
        while i > 0 && c[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        c[i - 1] += 1;
        for j in i..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// Evaluates `f` on every subset of size exactly `k_S` (monotonicity makes
/// these optimal among sizes `≤ k_S`) and returns the lexicographically
/// first minimizer.
pub fn exhaustive(problem: &SelectionProblem, budget: u128) -> Result<SelectionResult> {
    let needed = binomial(problem.n_s(), problem.k_s);
    if needed > budget {
        return Err(Error::Budget { needed, budget });
    }
    let subsets = combinations(problem.n_s(), problem.k_s);
    let evals = evaluate_all(problem, &subsets);
    let trace = evals
        .iter()
        .enumerate()
        .map(|(i, e)| TraceRow {
            round: i + 1,
            candidate: None,
            cost: e.cost,
            action: TraceAction::Evaluated,
        })
        .collect();
    let n = evals.len();
    let (i, _) = argmin(evals.iter().map(|e| e.cost)).expect("at least one subset");
    let best = evals.into_iter().nth(i).expect("index in range");
    Ok(SelectionResult::from_evaluation(
        Algorithm::Exhaustive,
        best,
        n,
        0,
        trace,
    ))
}

/// Runs `algorithm` with default settings.
pub fn run(problem: &SelectionProblem, algorithm: Algorithm) -> Result<SelectionResult> {
    Ok(match algorithm {
        Algorithm::Gse => gse(problem),
        Algorithm::Lpe => lpe(problem),
        Algorithm::Rlm => rlm(problem, &RlmConfig::default()),
        Algorithm::Exhaustive => exhaustive(problem, EXHAUSTIVE_BUDGET)?,
    })
}
