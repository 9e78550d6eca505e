//! Test-side oracles and property checks shared by the integration suites.
#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use precis_core::linalg::{self, ReducedVecMap};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

pub fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n).prop_map(|m| (&m + m.transpose()) * 0.5)
}

/// `G − (‖G‖₂ + margin) I`, whose spectral abscissa is at most `−margin`.
pub fn shifted_hurwitz(g: &DMatrix<f64>, margin: f64) -> DMatrix<f64> {
    let n = g.nrows();
    let norm = g.singular_values().max();
    g - DMatrix::identity(n, n) * (norm + margin)
}

pub fn hurwitz(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n).prop_map(|g| shifted_hurwitz(&g, 0.1))
}

/// Solves `A P + P Aᵀ + W = 0` through the dense Kronecker system.
pub fn kron_lyap(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = linalg::kron(&eye, a) + linalg::kron(a, &eye);
    let rhs = -DVector::from_column_slice(w.as_slice());
    let x = k.lu().solve(&rhs)?;
    Some(DMatrix::from_column_slice(n, n, x.as_slice()))
}

/// Lyapunov stability test: `A P + P Aᵀ = −I` has a positive definite solution.
pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    match kron_lyap(a, &DMatrix::identity(n, n)) {
        Some(p) => ((&p + p.transpose()) * 0.5).cholesky().is_some(),
        None => false,
    }
}

pub fn h2_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let p = kron_lyap(a, &(b * b.transpose())).expect("nonsingular Lyapunov operator");
    (c * p * c.transpose()).trace().max(0.0).sqrt()
}

pub fn gain_at(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, omega: f64) -> f64 {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| Complex::new(-a[(i, j)], if i == j { omega } else { 0.0 }));
    let bc = b.map(|x| Complex::new(x, 0.0));
    let x = m.lu().solve(&bc).expect("jω is not an eigenvalue");
    let g = c.map(|x| Complex::new(x, 0.0)) * x;
    g.singular_values().max()
}

pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (l, h) = (lo.log10(), hi.log10());
    (0..count)
        .map(|i| 10f64.powf(l + (h - l) * i as f64 / (count - 1) as f64))
        .collect()
}

/// Largest gain over `ω = 0` and `count` log-spaced frequencies in `[10⁻³, 10³]`.
pub fn sweep_peak(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, count: usize) -> (f64, f64) {
    let mut best = (0.0, gain_at(a, b, c, 0.0));
    for w in log_space(1e-3, 1e3, count) {
        let g = gain_at(a, b, c, w);
        if g > best.1 {
            best = (w, g);
        }
    }
    best
}

/// Sweep peak refined by golden-section search on the bracketing grid cell.
pub fn hinf_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let count = 4000;
    let (w, g) = sweep_peak(a, b, c, count);
    let ratio = 10f64.powf(6.0 / (count - 1) as f64);
    let (lo, hi) = if w == 0.0 { (0.0, 1e-3) } else { (w / ratio, w * ratio) };
    let refined = golden_max(|x| gain_at(a, b, c, x), lo, hi, 1e-10);
    g.max(refined)
}

pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

pub fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let x = golden_min(|x| -f(x), lo, hi, tol);
    f(x)
}

/// Symmetric eigen-decomposition clamp computed with nalgebra directly.
pub fn clamp_oracle(p: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let e = nalgebra::SymmetricEigen::new(p.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(eps)));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<(), TestCaseError> {
    let err = (a - b).amax();
    prop_assert!(err <= tol, "max deviation {err:e} exceeds {tol:e}");
    Ok(())
}

// Kernel properties.

pub fn kron_case() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    (1usize..4, 1usize..4, 1usize..4, 1usize..4)
        .prop_flat_map(|(m, n, p, q)| (matrix(m, n), matrix(n, p), matrix(p, q)))
}

/// `vec(ABC) = (Cᵀ ⊗ A) vec(B)`.
pub fn check_vec_kron(case: &(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)) -> Result<(), TestCaseError> {
    let (a, b, c) = case;
    let lhs = linalg::vec(&(a * b * c));
    let rhs = linalg::kron(&c.transpose(), a) * linalg::vec(b);
    prop_assert!((&lhs - &rhs).amax() <= 1e-10 * (1.0 + lhs.amax()));
    Ok(())
}

pub fn commutation_case() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..6, 1usize..6).prop_flat_map(|(m, n)| matrix(m, n))
}

/// `T vec(Y) = vec(Yᵀ)` and `T` is a permutation matrix.
pub fn check_commutation(y: &DMatrix<f64>) -> Result<(), TestCaseError> {
    let (m, n) = y.shape();
    let t = linalg::commutation_matrix(m, n);
    prop_assert_eq!(t.shape(), (m * n, m * n));
    prop_assert!(t.iter().all(|&x| x == 0.0 || x == 1.0));
    for i in 0..m * n {
        prop_assert_eq!(t.row(i).sum(), 1.0);
        prop_assert_eq!(t.column(i).sum(), 1.0);
    }
    prop_assert_eq!(&t * linalg::vec(y), linalg::vec(&y.transpose()));
    Ok(())
}

pub fn symmetric_case() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..7).prop_flat_map(symmetric)
}

/// `unvec_r(vec_r(X)) = X` exactly.
pub fn check_vec_r_round_trip(x: &DMatrix<f64>) -> Result<(), TestCaseError> {
    let map = ReducedVecMap::new(x.nrows());
    let v = map.vec_r(x);
    prop_assert_eq!(v.len(), x.nrows() * (x.nrows() + 1) / 2);
    prop_assert_eq!(&map.unvec_r(&v), x);
    Ok(())
}

pub fn projection_case() -> impl Strategy<Value = (DMatrix<f64>, f64, Vec<DMatrix<f64>>)> {
    (1usize..6).prop_flat_map(|n| {
        (
            symmetric(n),
            prop_oneof![Just(1e-6), 1e-3f64..0.5],
            prop::collection::vec(matrix(n, n), 8),
        )
    })
}

/// `𝒫(P)` matches the eigenvalue clamp, has spectrum `≥ ε`, and no feasible
/// competitor `GGᵀ + εI` or clamped perturbation is closer to `P`.
pub fn check_projection(case: &(DMatrix<f64>, f64, Vec<DMatrix<f64>>)) -> Result<(), TestCaseError> {
    let (p, eps, others) = case;
    let z = linalg::psd_project(p, *eps).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let scale = 1.0 + p.amax();
    close(&z, &clamp_oracle(p, *eps), 1e-9 * scale)?;
    close(&z, &z.transpose(), 1e-12 * scale)?;
    let lmin = nalgebra::SymmetricEigen::new(z.clone()).eigenvalues.min();
    prop_assert!(lmin >= eps - 1e-9 * scale);
    let d = (p - &z).norm();
    let n = p.nrows();
    for g in others {
        let competitor = g * g.transpose() + DMatrix::identity(n, n) * *eps;
        prop_assert!((p - &competitor).norm() >= d - 1e-9 * scale);
        let nudged = clamp_oracle(&(&z + (g + g.transpose()) * 1e-3), *eps);
        prop_assert!((p - &nudged).norm() >= d - 1e-9 * scale);
    }
    Ok(())
}

pub fn shrink_case() -> impl Strategy<Value = (f64, f64)> {
    (-10.0f64..10.0, 0.0f64..5.0)
}

/// `𝒮(a, b) = argmin_x b|x| + ½(x − a)²`. Golden section resolves the
/// minimiser only to about `√ε` of the objective's scale, so the argument
/// is compared at that resolution and the objective at rounding level.
pub fn check_soft_threshold(case: &(f64, f64)) -> Result<(), TestCaseError> {
    let (a, b) = *case;
    let got = linalg::soft_threshold(&[a], &[b])[0];
    let f = |x: f64| b * x.abs() + 0.5 * (x - a) * (x - a);
    let span = a.abs() + b + 1.0;
    let oracle = golden_min(f, -span, span, 1e-11);
    let resolution = 4.0 * f64::EPSILON.sqrt() * span;
    prop_assert!(
        f(got) <= f(oracle) + 4.0 * f64::EPSILON * (1.0 + f(oracle)),
        "𝒮({a}, {b}) = {got} is not a minimiser"
    );
    prop_assert!(
        (got - oracle).abs() <= resolution,
        "𝒮({a}, {b}) = {got}, golden section gives {oracle}"
    );
    Ok(())
}

pub fn lyapunov_case() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
    (1usize..7).prop_flat_map(|n| (hurwitz(n), (1usize..4).prop_flat_map(move |m| matrix(n, m))))
}

/// `‖AP + PAᵀ + W‖_F ≤ 10⁻⁸‖W‖_F` for `W = BBᵀ`.
pub fn check_lyapunov(case: &(DMatrix<f64>, DMatrix<f64>)) -> Result<(), TestCaseError> {
    let (a, b) = case;
    let w = b * b.transpose();
    let p = linalg::lyap_solve(a, &w).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let res = (a * &p + &p * a.transpose() + &w).norm();
    prop_assert!(res <= 1e-8 * w.norm(), "residual {res:e} for ‖W‖ = {:e}", w.norm());
    close(&p, &p.transpose(), 1e-10 * (1.0 + p.amax()))?;
    Ok(())
}

pub fn hinf_case() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    (matrix(4, 4), matrix(4, 2), matrix(2, 4)).prop_map(|(g, b, c)| (shifted_hurwitz(&g, 0.5), b, c))
}

/// The Hamiltonian value agrees with a 10⁴-point log-spaced sweep to 0.1%.
pub fn check_hinf_sweep(case: &(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)) -> Result<(), TestCaseError> {
    let (a, b, c) = case;
    let sys = precis_core::estimator::ErrorSystem {
        a: a.clone(),
        b: b.clone(),
        c: c.clone(),
    };
    let norm = precis_core::estimator::hinf_norm(&sys, 1e-6).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let (_, peak) = sweep_peak(a, b, c, 10_000);
    prop_assert!((norm - peak).abs() <= 1e-3 * peak, "Hamiltonian {norm}, sweep {peak}");
    Ok(())
}
