//! Observer and filter design: build, solve, recover, certify.
//!
//! A design is certified when the H2 or H∞ norm of the recovered error
//! system, computed independently of the solver, does not exceed γ.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix};
#[allow(unused_imports)]
use num_traits::Float;

use crate::admm::{self, AdmmConfig, AdmmStatus, IterRecord};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lmi::{self, Assignment, EstimatorKind, Framework};
use crate::model::{self, LtiPlant, MeasurementModel, PrecisionVector, SensorCatalog, SensorSubset};

/// Condition number of `X` above which recovery is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative accuracy of [`hinf_norm`] used for certification.
pub const NORM_TOL: f64 = 1e-9;

/// First and last multiplicative increments tried by [`tighten`].
pub const DELTA_START: f64 = 1e-3;
pub const DELTA_MAX: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub framework: Framework,
    pub estimator: EstimatorKind,
    pub gamma: f64,
    /// Weights of the subset's sensors in ascending id order.
    pub rho: Vec<f64>,
    pub subset: SensorSubset,
}

impl DesignSpec {
    /// Spec whose weights are taken from the catalog.
    pub fn from_catalog(
        catalog: &SensorCatalog,
        framework: Framework,
        estimator: EstimatorKind,
        gamma: f64,
        subset: SensorSubset,
    ) -> Self {
        let rho = subset
            .ids()
            .iter()
            .map(|&i| catalog.weights().get(i).copied().unwrap_or(1.0))
            .collect();
        Self {
            framework,
            estimator,
            gamma,
            rho,
            subset,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    /// `x̂' = (A + L C_y) x̂ − L y`.
    Observer { l: DMatrix<f64> },
    /// `x_F' = A_F x_F + B_F y`, `ẑ = C_F x_F`.
    Filter {
        a_f: DMatrix<f64>,
        b_f: DMatrix<f64>,
        c_f: DMatrix<f64>,
    },
}

/// Error dynamics `e' = A e + B w`, `ε = C e` driven by `w = [d; n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Where the certified estimator matrices came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainSource {
    /// Inversion formulas applied to the solver's matrix variables.
    Recovered,
    /// Riccati gain for the solver's precisions (Kalman gain for H2, central
    /// γ-level gain for H∞), used when the recovered matrices fail to
    /// certify.
    Riccati,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostics {
    pub status: AdmmStatus,
    pub iterations: usize,
    pub primal: f64,
    pub dual: f64,
    /// Objective of the raw solver iterate, before tightening.
    pub raw_objective: f64,
    /// Largest eigenvalue over the LMI blocks at the final precisions.
    pub lmi_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub spec: DesignSpec,
    pub p: PrecisionVector,
    pub estimator: Estimator,
    /// Norm of the error system at `p`.
    pub norm: f64,
    pub certified: bool,
    /// `ρᵀp`.
    pub objective: f64,
    /// Uniform increment applied to the solver's precisions (0 if none).
    pub delta: f64,
    pub gain: GainSource,
    pub diagnostics: SolverDiagnostics,
}

/// Builds, solves, recovers and certifies one design.
pub fn design(
    plant: &LtiPlant,
    catalog: &SensorCatalog,
    spec: &DesignSpec,
    config: &AdmmConfig,
) -> Result<EstimatorResult> {
    design_traced(plant, catalog, spec, config).map(|(r, _)| r)
}

/// [`design`], also returning the solver's per-iteration residuals.
pub fn design_traced(
    plant: &LtiPlant,
    catalog: &SensorCatalog,
    spec: &DesignSpec,
    config: &AdmmConfig,
) -> Result<(EstimatorResult, Vec<IterRecord>)> {
    let meas = model::assemble_measurement(plant, catalog, &spec.subset)?;
    if spec.rho.len() != meas.ny() {
        return Err(Error::Dimension(format!(
            "{} weights for a subset of {} sensors",
            spec.rho.len(),
            meas.ny()
        )));
    }
    precheck(plant, &meas, spec)?;
    let program = lmi::build_program(spec.framework, spec.estimator, plant, &meas, &spec.rho, spec.gamma)?;
    let solved = admm::solve(&program, config)?;
    if solved.status == AdmmStatus::Infeasible {
        return Err(Error::InfeasibleDesign(format!(
            "solver stalled with primal residual {:.3e} after {} iterations",
            solved.primal, solved.iterations
        )));
    }
    let recovered = recover(&solved.assignment, spec);
    let cert = lmi::certify(&program, &solved.assignment, lmi::MARGIN_TOL);
    let diagnostics = SolverDiagnostics {
        status: solved.status,
        iterations: solved.iterations,
        primal: solved.primal,
        dual: solved.dual,
        raw_objective: solved.objective,
        lmi_margin: cert.margin,
    };
    let base = &solved.assignment.p;
    match repair(plant, &meas, spec, base, recovered.as_ref().ok()) {
        Some(r) => Ok((
            EstimatorResult {
                spec: spec.clone(),
                objective: spec.rho.iter().zip(&r.p).map(|(a, b)| a * b).sum(),
                p: PrecisionVector::new(r.p, 0.0)?,
                estimator: r.estimator,
                norm: r.norm,
                certified: true,
                delta: r.delta,
                gain: r.gain,
                diagnostics,
            },
            solved.history,
        )),
        None => Err(match recovered {
            Err(e) => e,
            Ok(est) => {
                let norm = achieved_norm(plant, &meas, spec.framework, &est, base).unwrap_or(f64::INFINITY);
                uncertified(norm, spec.gamma)
            }
        }),
    }
}

fn uncertified(norm: f64, gamma: f64) -> Error {
    Error::InfeasibleDesign(format!(
        "norm {norm:.6e} exceeds γ = {gamma} and scaling precisions by up to {:.0}% does not repair it",
        DELTA_MAX * 100.0
    ))
}

struct Repaired {
    estimator: Estimator,
    gain: GainSource,
    p: Vec<f64>,
    norm: f64,
    delta: f64,
}

/// Smallest `δ ∈ {0, 10⁻³, 2·10⁻³, …} ≤ 0.2` at which `(1 + δ)·base`
/// certifies, with the given matrices first and the Riccati gain second.
fn repair(
    plant: &LtiPlant,
    meas: &MeasurementModel,
    spec: &DesignSpec,
    base: &[f64],
    recovered: Option<&Estimator>,
) -> Option<Repaired> {
    if base.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return None;
    }
    let framework = spec.framework;
    let attempt = |delta: f64| -> Option<Repaired> {
        let p: Vec<f64> = base.iter().map(|v| v * (1.0 + delta)).collect();
        if let Some(est) = recovered {
            let norm = achieved_norm(plant, meas, framework, est, &p).unwrap_or(f64::INFINITY);
            if norm <= spec.gamma {
                return Some(Repaired {
                    estimator: est.clone(),
                    gain: GainSource::Recovered,
                    p,
                    norm,
                    delta,
                });
            }
        }
        let est = riccati_estimator(plant, meas, framework, spec.estimator, spec.gamma, &p).ok()?;
        let norm = achieved_norm(plant, meas, framework, &est, &p).unwrap_or(f64::INFINITY);
        (norm <= spec.gamma).then_some(Repaired {
            estimator: est,
            gain: GainSource::Riccati,
            p,
            norm,
            delta,
        })
    };
    let schedule = delta_schedule();
    // Both norms are nonincreasing in p, so failure at the largest step is final.
    let last = *schedule.last().expect("non-empty schedule");
    let fallback = attempt(last)?;
    schedule[..schedule.len() - 1]
        .iter()
        .find_map(|&d| attempt(d))
        .or(Some(fallback))
}

/// `0, 10⁻³, 2·10⁻³, 4·10⁻³, …` up to [`DELTA_MAX`].
pub fn delta_schedule() -> Vec<f64> {
    let mut out = vec![0.0];
    let mut d = DELTA_START;
    while d <= DELTA_MAX {
        out.push(d);
        d *= 2.0;
    }
    out
}

/// Necessary conditions checked before solving: detectability of
/// `(A, C_y)` for observers, a Hurwitz `A` for filters (the filter error
/// system contains `A` itself).
pub fn precheck(plant: &LtiPlant, meas: &MeasurementModel, spec: &DesignSpec) -> Result<()> {
    if !(spec.gamma > 0.0 && spec.gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "performance bound must be positive, got {}",
            spec.gamma
        )));
    }
    match spec.estimator {
        EstimatorKind::Observer => {
            if !model::hautus_detectable(plant.a(), &meas.c_y) {
                return Err(Error::InfeasibleDesign("(A, C_y) is not detectable".into()));
            }
        }
        EstimatorKind::Filter => {
            let abscissa = linalg::spectral_abscissa(plant.a());
            if abscissa >= 0.0 {
                return Err(Error::InfeasibleDesign(format!(
                    "filter error dynamics contain A, whose spectral abscissa is {abscissa:.3e}"
                )));
            }
        }
    }
    Ok(())
}

/// `L = X⁻¹Y` for observers; `A_F = X⁻¹P`, `B_F = X⁻¹Y` and `C_F` from `Q`
/// (H∞) or `−N` (H2) for filters.
pub fn recover(assignment: &Assignment, spec: &DesignSpec) -> Result<Estimator> {
    let x = assignment.require("X")?;
    let (values, _) = linalg::sym_eig(x);
    let (lo, hi) = (values[0], values[values.len() - 1]);
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::Recovery(format!("X has eigenvalues in [{lo:.3e}, {hi:.3e}]")));
    }
    let x_inv = x
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Recovery("X is not positive definite".into()))?
        .inverse();
    let y = assignment.require("Y")?;
    match spec.estimator {
        EstimatorKind::Observer => Ok(Estimator::Observer { l: &x_inv * y }),
        EstimatorKind::Filter => {
            let p = assignment.require("P")?;
            let c_f = match spec.framework {
                Framework::Hinf => assignment.require("Q")?.clone(),
                Framework::H2 => -assignment.require("N")?,
            };
            Ok(Estimator::Filter {
                a_f: &x_inv * p,
                b_f: &x_inv * y,
                c_f,
            })
        }
    }
}

/// Estimator built from the Riccati gain for precisions `p`:
/// `L = −(P C_yᵀ + B_w D_wᵀ)(D_w D_wᵀ)⁻¹` where `P` is the stabilizing
/// solution of the filtering Riccati equation (with the `−C_zᵀC_z/γ²` term
/// for H∞). Filters are returned in observer form `A_F = A + L C_y`,
/// `B_F = −L`, `C_F = C_z`.
pub fn riccati_estimator(
    plant: &LtiPlant,
    meas: &MeasurementModel,
    framework: Framework,
    kind: EstimatorKind,
    gamma: f64,
    p: &[f64],
) -> Result<Estimator> {
    if let Some(v) = p.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("precision {v} is not positive")));
    }
    let sigma: Vec<f64> = p.iter().map(|v| 1.0 / v.sqrt()).collect();
    let (b_w, d_w) = model::augment_disturbance(plant, meas, &sigma)?;
    let r = &d_w * d_w.transpose();
    let r_inv = r
        .cholesky()
        .ok_or_else(|| Error::Recovery("measurement noise covariance is singular".into()))?
        .inverse();
    let s = &b_w * d_w.transpose();
    let f = plant.a() - &s * &r_inv * &meas.c_y;
    let mut g = meas.c_y.transpose() * &r_inv * &meas.c_y;
    if framework == Framework::Hinf {
        g -= plant.c_z().transpose() * plant.c_z() / (gamma * gamma);
    }
    let q = linalg::symmetrize(&(&b_w * b_w.transpose() - &s * &r_inv * s.transpose()));
    let x = linalg::care_solve(&f.transpose(), &linalg::symmetrize(&g), &q)
        .map_err(|e| Error::Recovery(format!("Riccati gain: {e}")))?;
    if linalg::lambda_min(&x) < -1e-9 * x.norm().max(1.0) {
        return Err(Error::Recovery("Riccati solution is not positive semidefinite".into()));
    }
    let l = -(&x * meas.c_y.transpose() + s) * r_inv;
    Ok(match kind {
        EstimatorKind::Observer => Estimator::Observer { l },
        EstimatorKind::Filter => Estimator::Filter {
            a_f: plant.a() + &l * &meas.c_y,
            b_f: -l,
            c_f: plant.c_z().clone(),
        },
    })
}

/// Closed-loop error dynamics with noise scales `σ = 1/√p`.
pub fn error_system(
    plant: &LtiPlant,
    meas: &MeasurementModel,
    estimator: &Estimator,
    p: &[f64],
) -> Result<ErrorSystem> {
    if let Some(v) = p.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidArgument(format!("precision {v} is not positive")));
    }
    let sigma: Vec<f64> = p.iter().map(|v| 1.0 / v.sqrt()).collect();
    let (b_w, d_w) = model::augment_disturbance(plant, meas, &sigma)?;
    match estimator {
        Estimator::Observer { l } => {
            if l.shape() != (plant.nx(), meas.ny()) {
                return Err(Error::Dimension(format!(
                    "observer gain is {}x{}, expected {}x{}",
                    l.nrows(),
                    l.ncols(),
                    plant.nx(),
                    meas.ny()
                )));
            }
            Ok(ErrorSystem {
                a: plant.a() + l * &meas.c_y,
                b: &b_w + l * &d_w,
                c: plant.c_z().clone(),
            })
        }
        Estimator::Filter { a_f, b_f, c_f } => {
            let nx = plant.nx();
            let nf = a_f.nrows();
            if !a_f.is_square() || b_f.shape() != (nf, meas.ny()) || c_f.shape() != (plant.nz(), nf) {
                return Err(Error::Dimension("filter matrices have inconsistent shapes".into()));
            }
            let mut a = DMatrix::zeros(nx + nf, nx + nf);
            a.view_mut((0, 0), (nx, nx)).copy_from(plant.a());
            a.view_mut((nx, 0), (nf, nx)).copy_from(&(b_f * &meas.c_y));
            a.view_mut((nx, nx), (nf, nf)).copy_from(a_f);
            let mut b = DMatrix::zeros(nx + nf, b_w.ncols());
            b.view_mut((0, 0), (nx, b_w.ncols())).copy_from(&b_w);
            b.view_mut((nx, 0), (nf, b_w.ncols())).copy_from(&(b_f * &d_w));
            let mut c = DMatrix::zeros(plant.nz(), nx + nf);
            c.view_mut((0, 0), (plant.nz(), nx)).copy_from(plant.c_z());
            c.view_mut((0, nx), (plant.nz(), nf)).copy_from(&(-c_f));
            Ok(ErrorSystem { a, b, c })
        }
    }
}

/// Norm of the error system in the given framework.
pub fn achieved_norm(
    plant: &LtiPlant,
    meas: &MeasurementModel,
    framework: Framework,
    estimator: &Estimator,
    p: &[f64],
) -> Result<f64> {
    let sys = error_system(plant, meas, estimator, p)?;
    match framework {
        Framework::H2 => h2_norm(&sys),
        Framework::Hinf => hinf_norm(&sys, NORM_TOL),
    }
}

/// Largest singular value of `C (jωI − A)⁻¹ B`.
pub fn sigma_max_at(sys: &ErrorSystem, omega: f64) -> f64 {
    let n = sys.a.nrows();
    let mut m = sys.a.map(|x| Complex::new(-x, 0.0));
    for i in 0..n {
        m[(i, i)] += Complex::new(0.0, omega);
    }
    let b = sys.b.map(|x| Complex::new(x, 0.0));
    let Some(x) = m.lu().solve(&b) else {
        return f64::INFINITY;
    };
    let g = sys.c.map(|x| Complex::new(x, 0.0)) * x;
    if g.is_empty() {
        return 0.0;
    }
    g.singular_values().iter().copied().fold(0.0, f64::max)
}

/// H∞ norm by the Hamiltonian imaginary-axis test.
///
/// A lower bound from frequency samples is raised by evaluating the gain at
/// midpoints between the imaginary-axis eigenvalues of
/// `[[A, BBᵀ/γ²], [−CᵀC, −Aᵀ]]` at `γ = (1 + 2·tol)·lower` until none
/// remain. The returned value is that final `γ`, an upper bound within
/// relative `2·tol` of the norm.
pub fn hinf_norm(sys: &ErrorSystem, tol: f64) -> Result<f64> {
    let n = sys.a.nrows();
    let abscissa = linalg::spectral_abscissa(&sys.a);
    if abscissa >= 0.0 {
        return Err(Error::Unstable { max_real: abscissa });
    }
    if sys.b.iter().all(|&x| x == 0.0) || sys.c.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let mut lower = sigma_max_at(sys, 0.0);
    for z in linalg::eigenvalues(&sys.a) {
        lower = lower.max(sigma_max_at(sys, z.im.abs()));
    }
    let bbt = &sys.b * sys.b.transpose();
    let ctc = sys.c.transpose() * &sys.c;
    let tol = tol.max(1e-14);
    for _ in 0..200 {
        let gamma = (1.0 + 2.0 * tol) * lower.max(f64::MIN_POSITIVE);
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&sys.a);
        h.view_mut((0, n), (n, n)).copy_from(&(&bbt / (gamma * gamma)));
        h.view_mut((n, 0), (n, n)).copy_from(&(-&ctc));
        h.view_mut((n, n), (n, n)).copy_from(&(-sys.a.transpose()));
        let scale = h.norm().max(1.0);
        let mut omegas: Vec<f64> = linalg::eigenvalues(&h)
            .into_iter()
            .filter(|z| z.re.abs() <= 1e-7 * scale && z.im >= 0.0)
            .map(|z| z.im)
            .collect();
        if omegas.is_empty() {
            return Ok(gamma);
        }
        omegas.sort_by(f64::total_cmp);
        let mut best = lower;
        if omegas.len() == 1 {
            best = best.max(sigma_max_at(sys, omegas[0]));
        }
        for w in omegas.windows(2) {
            best = best.max(sigma_max_at(sys, 0.5 * (w[0] + w[1])));
        }
        for &w in &omegas {
            best = best.max(sigma_max_at(sys, w));
        }
        if best <= lower * (1.0 + tol) {
            return Ok(gamma);
        }
        lower = best;
    }
    Ok((1.0 + 2.0 * tol) * lower)
}

/// H2 norm `√trace(C P Cᵀ)` with `A P + P Aᵀ + B Bᵀ = 0`.
pub fn h2_norm(sys: &ErrorSystem) -> Result<f64> {
    let p = linalg::lyap_solve(&sys.a, &(&sys.b * sys.b.transpose()))?;
    Ok((&sys.c * p * sys.c.transpose()).trace().max(0.0).sqrt())
}

/// Repairs a result whose norm exceeds γ by scaling every precision by
/// `1 + δ`, `δ = 10⁻³, 2·10⁻³, …` up to `0.2`. At each `δ` the result's own
/// matrices are tried first, then the Riccati gain for the scaled
/// precisions.
pub fn tighten(mut result: EstimatorResult, plant: &LtiPlant, meas: &MeasurementModel) -> Result<EstimatorResult> {
    let gamma = result.spec.gamma;
    let norm = achieved_norm(plant, meas, result.spec.framework, &result.estimator, result.p.values())
        .unwrap_or(f64::INFINITY);
    if norm <= gamma {
        result.norm = norm;
        result.certified = true;
        return Ok(result);
    }
    let base = result.p.values().to_vec();
    let r =
        repair(plant, meas, &result.spec, &base, Some(&result.estimator)).ok_or_else(|| uncertified(norm, gamma))?;
    result.objective = result.spec.rho.iter().zip(&r.p).map(|(a, b)| a * b).sum();
    result.p = PrecisionVector::new(r.p, 0.0)?;
    result.estimator = r.estimator;
    result.gain = r.gain;
    result.norm = r.norm;
    result.delta = (1.0 + result.delta) * (1.0 + r.delta) - 1.0;
    result.certified = true;
    Ok(result)
}

/// Short human-readable tag for a framework/estimator pair.
pub fn kind_label(framework: Framework, estimator: EstimatorKind) -> String {
    let f = match framework {
        Framework::H2 => "h2",
        Framework::Hinf => "hinf",
    };
    let e = match estimator {
        EstimatorKind::Observer => "observer",
        EstimatorKind::Filter => "filter",
    };
    format!("{f}-{e}")
}
