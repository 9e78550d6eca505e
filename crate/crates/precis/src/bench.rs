//! Desk-scale experiments: the Example-1 regression, the spring-mass
//! scaling sweep and the algorithm comparison on a random ensemble.

use std::path::Path;
use std::time::Instant;

use precis_core::admm::{self, AdmmConfig, AdmmStatus};
use precis_core::lmi::{self, EstimatorKind, Framework};
use precis_core::model::{self, SensorSubset};
use precis_core::selection::{self, Algorithm, Cost, RlmConfig, SelectionProblem, SelectionResult};
use rayon::prelude::*;

use crate::error::Result;
use crate::io::user_ids;

/// Relative tolerance of the Example-1 comparison.
pub const EXAMPLE1_TOL: f64 = 0.03;

/// Solver settings of the design benches: defaults with a 2000-iteration
/// cap.
pub fn desk_admm() -> AdmmConfig {
    AdmmConfig {
        max_iter: 2000,
        ..AdmmConfig::default()
    }
}

/// Solver settings of the scaling bench: moderate-accuracy stopping
/// tolerances `ε_abs = 10⁻⁴`, `ε_rel = 10⁻³`.
pub fn scaling_admm() -> AdmmConfig {
    AdmmConfig {
        eps_abs: 1e-4,
        eps_rel: 1e-3,
        ..AdmmConfig::default()
    }
}

fn subset_label(s: &SensorSubset) -> String {
    user_ids(s).iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn cost_field(c: Cost) -> String {
    match c {
        Cost::Finite(v) => format!("{v}"),
        Cost::Infinite => "inf".into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example1Row {
    pub subset: SensorSubset,
    pub expected: f64,
    pub measured: Cost,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example1Report {
    pub rows: Vec<Example1Row>,
    /// `f(R∪Q) + f(R∩Q) > f(R) + f(Q)` for `Q = {s1,s4}`, `R = {s2,s3}`.
    pub submodularity_violated: bool,
    /// `f(R∪Q) + f(R∩Q) < (1 − tol)(f(R) + f(Q))` for `Q = {s2,s3,s4}`,
    /// `R = {s1,s2,s3}`.
    pub supermodularity_violated: bool,
    pub seconds: f64,
}

impl Example1Report {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass) && self.submodularity_violated && self.supermodularity_violated
    }
}

fn add(a: Cost, b: Cost) -> Cost {
    match (a, b) {
        (Cost::Finite(x), Cost::Finite(y)) => Cost::Finite(x + y),
        _ => Cost::Infinite,
    }
}

/// H∞ observer designs on the Example-1 plant (`γ = 0.5`, `ρ = 1`)
/// compared with the published costs.
pub fn run_example1_regression(config: &AdmmConfig) -> Result<Example1Report> {
    let start = Instant::now();
    let (plant, catalog) = model::example1_plant();
    let problem = SelectionProblem::new(
        plant,
        catalog,
        Framework::Hinf,
        EstimatorKind::Observer,
        0.5,
        4,
        config.clone(),
    )?;
    let cases: [(&[usize], f64); 5] = [
        (&[0, 3], 22.52),
        (&[1, 2], 22.52),
        (&[1, 2, 3], 22.52),
        (&[0, 1, 2], 18.84),
        (&[0, 1, 2, 3], 14.0),
    ];
    let rows: Vec<Example1Row> = cases
        .par_iter()
        .map(|&(ids, expected)| {
            let subset = SensorSubset::new(ids.iter().copied());
            let measured = selection::eval_f(&problem, &subset);
            let rel_error = (measured.to_f64() / expected - 1.0).abs();
            Example1Row {
                subset,
                expected,
                measured,
                rel_error,
                pass: rel_error <= EXAMPLE1_TOL,
            }
        })
        .collect();
    let f = |i: usize| rows[i].measured;
    let empty = selection::eval_f(&problem, &SensorSubset::empty());
    // Q = {s1,s4}, R = {s2,s3}: R∪Q = S, R∩Q = ∅.
    let submodularity_violated = add(f(4), empty) > add(f(0), f(1));
    // Q = {s2,s3,s4}, R = {s1,s2,s3}: R∪Q = S, R∩Q = {s2,s3}.
    let lhs = add(f(4), f(1));
    let rhs = add(f(2), f(3));
    let supermodularity_violated = match (lhs, rhs) {
        (Cost::Finite(l), Cost::Finite(r)) => l < (1.0 - EXAMPLE1_TOL) * r,
        _ => false,
    };
    Ok(Example1Report {
        rows,
        submodularity_violated,
        supermodularity_violated,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn write_example1_csv(report: &Example1Report, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["subset", "expected", "measured", "rel_error", "pass"])?;
    for r in &report.rows {
        w.write_record([
            subset_label(&r.subset),
            format!("{}", r.expected),
            cost_field(r.measured),
            format!("{:.6}", r.rel_error),
            if r.pass { "PASS" } else { "FAIL" }.into(),
        ])?;
    }
    w.flush().map_err(|e| crate::error::Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub masses: usize,
    pub nx: usize,
    /// Median wall time of one solve, seconds.
    pub median_time: f64,
    pub times: Vec<f64>,
    pub iterations: usize,
    pub status: AdmmStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln(median_time)` against `ln(N_x)`.
    pub slope: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Times the solver on the full-sensor H∞ observer program of each
/// spring-mass chain. Program construction is excluded from the timing.
pub fn run_scaling(masses: &[usize], gamma: f64, repetitions: usize, config: &AdmmConfig) -> Result<ScalingReport> {
    let mut rows = Vec::with_capacity(masses.len());
    for &m in masses {
        let (plant, catalog) = model::spring_mass_plant(m)?;
        let subset = SensorSubset::full(catalog.len());
        let meas = model::assemble_measurement(&plant, &catalog, &subset)?;
        let program = lmi::build_hinf_observer(&plant, &meas, catalog.weights(), gamma)?;
        let mut times = Vec::with_capacity(repetitions.max(1));
        let mut last = None;
        for _ in 0..repetitions.max(1) {
            let start = Instant::now();
            let r = admm::solve(&program, config)?;
            times.push(start.elapsed().as_secs_f64());
            last = Some(r);
        }
        let last = last.expect("at least one repetition");
        rows.push(ScalingRow {
            masses: m,
            nx: plant.nx(),
            median_time: median(&times),
            times,
            iterations: last.iterations,
            status: last.status,
        });
    }
    let nx: Vec<f64> = rows.iter().map(|r| r.nx as f64).collect();
    let t: Vec<f64> = rows.iter().map(|r| r.median_time).collect();
    let slope = if rows.len() >= 2 {
        loglog_slope(&nx, &t)
    } else {
        f64::NAN
    };
    Ok(ScalingReport { rows, slope })
}

pub fn write_scaling_csv(report: &ScalingReport, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["M", "N_x", "median_time", "iterations", "status", "slope"])?;
    for r in &report.rows {
        w.write_record([
            r.masses.to_string(),
            r.nx.to_string(),
            format!("{:.6e}", r.median_time),
            r.iterations.to_string(),
            format!("{:?}", r.status).to_ascii_lowercase(),
            format!("{:.4}", report.slope),
        ])?;
    }
    w.flush().map_err(|e| crate::error::Error::io(path, e))?;
    Ok(())
}

/// A seeded family of random selection problems.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub count: usize,
    /// System `i` uses plant seed `seed + i`.
    pub seed: u64,
    pub nx: usize,
    pub nd: usize,
    pub ns: usize,
    pub gamma: f64,
    pub k_s: usize,
    pub framework: Framework,
    pub estimator: EstimatorKind,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            count: 20,
            seed: 7,
            nx: 5,
            nd: 3,
            ns: 12,
            gamma: 0.1,
            k_s: 4,
            framework: Framework::Hinf,
            estimator: EstimatorKind::Observer,
        }
    }
}

/// One algorithm's outcome on one system.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub algorithm: Algorithm,
    pub subset: SensorSubset,
    pub cost: Cost,
    pub evaluations: usize,
    pub final_passes: usize,
    /// `|1 − f̂/f*|·100`, when both costs are finite.
    pub error_pct: Option<f64>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemRow {
    pub system: usize,
    pub seed: u64,
    pub reference: Outcome,
    /// GSE, LPE and RLM in that order.
    pub outcomes: Vec<Outcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub exact: usize,
    pub infeasible: usize,
    /// Systems entering the error statistics (both costs finite).
    pub scored: usize,
    pub mean_error_pct: f64,
    pub sd_error_pct: f64,
    pub mean_evaluations: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub spec: EnsembleSpec,
    pub rows: Vec<SystemRow>,
    pub summaries: Vec<AlgorithmSummary>,
    /// Systems whose exhaustive optimum is infeasible.
    pub reference_infeasible: usize,
}

impl ComparisonReport {
    pub fn summary(&self, algorithm: Algorithm) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm)
    }
}

fn outcome(r: &SelectionResult, reference: &SelectionResult) -> Outcome {
    let error_pct = match (r.cost, reference.cost) {
        (Cost::Finite(f), Cost::Finite(opt)) => Some((1.0 - f / opt).abs() * 100.0),
        _ => None,
    };
    Outcome {
        algorithm: r.algorithm,
        subset: r.subset.clone(),
        cost: r.cost,
        evaluations: r.evaluations,
        final_passes: r.final_passes,
        error_pct,
        exact: error_pct.is_some() && r.subset == reference.subset,
    }
}

/// Runs one system of the ensemble.
pub fn run_system(spec: &EnsembleSpec, system: usize, config: &AdmmConfig) -> Result<SystemRow> {
    let seed = spec.seed + system as u64;
    let (plant, catalog) = model::random_plant(seed, spec.nx, spec.nd, spec.ns)?;
    let problem = SelectionProblem::new(
        plant,
        catalog,
        spec.framework,
        spec.estimator,
        spec.gamma,
        spec.k_s,
        config.clone(),
    )?;
    let reference = selection::exhaustive(&problem, selection::EXHAUSTIVE_BUDGET)?;
    let results = [
        selection::gse(&problem),
        selection::lpe(&problem),
        selection::rlm(&problem, &RlmConfig::default()),
    ];
    Ok(SystemRow {
        system,
        seed,
        reference: outcome(&reference, &reference),
        outcomes: results.iter().map(|r| outcome(r, &reference)).collect(),
    })
}

fn summarize(algorithm: Algorithm, outcomes: &[&Outcome]) -> AlgorithmSummary {
    let errors: Vec<f64> = outcomes.iter().filter_map(|o| o.error_pct).collect();
    let n = errors.len() as f64;
    let mean = if errors.is_empty() {
        f64::NAN
    } else {
        errors.iter().sum::<f64>() / n
    };
    let sd = if errors.len() < 2 {
        0.0
    } else {
        (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    AlgorithmSummary {
        algorithm,
        exact: outcomes.iter().filter(|o| o.exact).count(),
        infeasible: outcomes.iter().filter(|o| !o.cost.is_finite()).count(),
        scored: errors.len(),
        mean_error_pct: mean,
        sd_error_pct: sd,
        mean_evaluations: outcomes.iter().map(|o| o.evaluations as f64).sum::<f64>() / outcomes.len().max(1) as f64,
    }
}

/// Exhaustive search, GSE, LPE and RLM on every system of the ensemble.
/// Percent errors are taken against the exhaustive optimum and only over
/// systems where both costs are finite.
pub fn run_comparison(spec: &EnsembleSpec, config: &AdmmConfig) -> Result<ComparisonReport> {
    let budget = selection::binomial(spec.ns, spec.k_s);
    if budget > selection::EXHAUSTIVE_BUDGET {
        return Err(precis_core::Error::Budget {
            needed: budget,
            budget: selection::EXHAUSTIVE_BUDGET,
        }
        .into());
    }
    let rows: Vec<SystemRow> = (0..spec.count)
        .into_par_iter()
        .map(|i| run_system(spec, i, config))
        .collect::<Result<_>>()?;
    let summaries = [Algorithm::Gse, Algorithm::Lpe, Algorithm::Rlm]
        .iter()
        .enumerate()
        .map(|(k, &a)| summarize(a, &rows.iter().map(|r| &r.outcomes[k]).collect::<Vec<_>>()))
        .collect();
    Ok(ComparisonReport {
        spec: spec.clone(),
        reference_infeasible: rows.iter().filter(|r| !r.reference.cost.is_finite()).count(),
        rows,
        summaries,
    })
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_comparison_csv(report: &ComparisonReport, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "scope",
        "system",
        "seed",
        "algorithm",
        "subset",
        "cost",
        "error_pct",
        "exact",
        "evaluations",
        "final_passes",
        "infeasible",
        "scored",
        "mean_error_pct",
        "sd_error_pct",
    ])?;
    for row in &report.rows {
        for o in std::iter::once(&row.reference).chain(&row.outcomes) {
            w.write_record([
                "system".to_string(),
                row.system.to_string(),
                row.seed.to_string(),
                o.algorithm.name().into(),
                subset_label(&o.subset),
                cost_field(o.cost),
                opt_f64(o.error_pct),
                o.exact.to_string(),
                o.evaluations.to_string(),
                o.final_passes.to_string(),
                (!o.cost.is_finite()).to_string(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
    }
    for s in &report.summaries {
        w.write_record([
            "summary".to_string(),
            String::new(),
            report.spec.seed.to_string(),
            s.algorithm.name().into(),
            String::new(),
            String::new(),
            String::new(),
            s.exact.to_string(),
            format!("{:.2}", s.mean_evaluations),
            String::new(),
            s.infeasible.to_string(),
            s.scored.to_string(),
            format!("{:.6}", s.mean_error_pct),
            format!("{:.6}", s.sd_error_pct),
        ])?;
    }
    w.flush().map_err(|e| crate::error::Error::io(path, e))?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    }
    Ok(csv::Writer::from_path(path)?)
}
