//! Dense kernels used by the solver: vectorization identities, proximal
//! operators, cone projection, least squares and matrix equations.
//!
//! Everything here works on `nalgebra` dynamic matrices. Vectorization is
//! column-major throughout, matching `nalgebra`'s storage order.

use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Relative cut-off below which singular values are treated as zero.
pub const PINV_RCOND: f64 = 1e-10;

/// Relative asymmetry tolerated by routines that expect symmetric input.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
        }
    }
    out
}

/// Column-major vectorization.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec: length mismatch");
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Commutation matrix `T` of order `mn` with `T vec(Y) = vec(Yᵀ)` for every
/// `m × n` matrix `Y`.
pub fn commutation_matrix(m: usize, n: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(m * n, m * n);
    for i in 0..m {
        for j in 0..n {
            t[(j + i * n, i + j * m)] = 1.0;
        }
    }
    t
}

/// Scalar soft threshold `max(0, a - b) - max(0, -a - b)`.
#[inline]
pub fn shrink(a: f64, b: f64) -> f64 {
    (a - b).max(0.0) - (-a - b).max(0.0)
}

/// Elementwise soft threshold, the proximal operator of a weighted l1 norm.
pub fn soft_threshold(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "soft_threshold: length mismatch");
    a.iter().zip(b).map(|(&x, &t)| shrink(x, t)).collect()
}

/// Frobenius norm of `m - mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(p: &DMatrix<f64>) -> Result<()> {
    if !p.is_square() {
        return Err(Error::Dimension(alloc::format!(
            "expected a square matrix, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    let asym = asymmetry(p);
    if asym > SYMMETRY_TOL * p.norm().max(1.0) {
        return Err(Error::Symmetry { asymmetry: asym });
    }
    Ok(())
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
///
/// Returns `(λ, R)` with `P = R diag(λ) Rᵀ` and orthonormal columns in `R`.
pub fn sym_eig(p: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = p.nrows();
    let eig = symmetrize(p).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max(p: &DMatrix<f64>) -> f64 {
    if p.is_empty() {
        return f64::NEG_INFINITY;
    }
    symmetrize(p)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(p: &DMatrix<f64>) -> f64 {
    if p.is_empty() {
        return f64::INFINITY;
    }
    symmetrize(p)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Projection onto `{P : P ⪰ εI}` by clamping the spectrum from below.
pub fn psd_project(p: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    check_symmetric(p)?;
    Ok(clamp_spectrum(p, eps))
}

/// Spectrum clamp without the symmetry check; callers guarantee symmetry.
pub(crate) fn clamp_spectrum(p: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let n = p.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, p[(0, 0)].max(eps));
    }
    let eig = symmetrize(p).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= eps) {
        return symmetrize(p);
    }
    let mut scaled = eig.eigenvectors.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= eig.eigenvalues[k].max(eps);
    }
    symmetrize(&(scaled * eig.eigenvectors.transpose()))
}

/// Moore-Penrose pseudo-inverse via SVD, dropping singular values below
/// [`PINV_RCOND`] times the largest one.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = PINV_RCOND * smax;
    let mut out = DMatrix::zeros(n, m);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            out += v_t.row(k).transpose() * u.column(k).transpose() * (1.0 / s);
        }
    }
    out
}

/// Minimum-norm solution of `min ‖A x − b‖₂`.
pub fn lstsq_pinv(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    assert_eq!(a.nrows(), b.len(), "lstsq_pinv: row mismatch");
    pinv(a) * b
}

/// Index map between the lower triangle of a symmetric `n × n` matrix and a
/// vector of length `n(n+1)/2`.
///
/// Packing is lower-triangular, column-major: `(0,0), (1,0), …, (n-1,0),
/// (1,1), …`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReducedVecMap {
    n: usize,
}

impl ReducedVecMap {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Position of entry `(i, j)` (either triangle) in the packed vector.
    pub fn index(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        // columns before c hold n + (n-1) + … + (n-c+1) entries
        c * self.n - c * c.saturating_sub(1) / 2 + (r - c)
    }

    /// `(row, col)` pairs in packing order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |j| (j..self.n).map(move |i| (i, j)))
    }

    pub fn vec_r(&self, x: &DMatrix<f64>) -> DVector<f64> {
        assert_eq!(x.shape(), (self.n, self.n), "vec_r: shape mismatch");
        DVector::from_iterator(self.len(), self.pairs().map(|(i, j)| x[(i, j)]))
    }

    pub fn unvec_r(&self, v: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(v.len(), self.len(), "unvec_r: length mismatch");
        let mut x = DMatrix::zeros(self.n, self.n);
        for (k, (i, j)) in self.pairs().enumerate() {
            x[(i, j)] = v[k];
            x[(j, i)] = v[k];
        }
        x
    }
}

/// Combine the columns of `a` (which acts on `vec(X)` of an `n × n` matrix)
/// so that `a · vec(X) = ā_r · vec_r(X)` for every symmetric `X`.
pub fn reduced_columns(a: &DMatrix<f64>, map: &ReducedVecMap) -> Result<DMatrix<f64>> {
    let n = map.order();
    if a.ncols() != n * n {
        return Err(Error::Dimension(alloc::format!(
            "reduced_columns: expected {} columns, got {}",
            n * n,
            a.ncols()
        )));
    }
    let mut out = DMatrix::zeros(a.nrows(), map.len());
    for (k, (i, j)) in map.pairs().enumerate() {
        let mut col = a.column(i + j * n).into_owned();
        if i != j {
            col += a.column(j + i * n);
        }
        out.set_column(k, &col);
    }
    Ok(out)
}

/// Eigenvalues of a general real matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.is_empty() {
        return Vec::new();
    }
    let n = a.nrows();
    let max_niter = 100 * n.max(1);
    let schur = |m: DMatrix<f64>| nalgebra::Schur::try_new(m, f64::EPSILON, max_niter);
    if let Some(s) = schur(a.clone()) {
        return s.complex_eigenvalues().iter().copied().collect();
    }
    if let Some(s) = schur(a.transpose()) {
        return s.complex_eigenvalues().iter().copied().collect();
    }
    // Exact shifts and a diagonal similarity perturb the QR iteration's path
    // without changing the spectrum.
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for k in 1..=4 {
        let shift = scale * 0.1 * k as f64;
        let d = DVector::from_fn(n, |i, _| 1.0 + 0.01 * k as f64 * i as f64);
        let m = DMatrix::from_fn(n, n, |i, j| d[i] * a[(i, j)] / d[j]) + DMatrix::identity(n, n) * shift;
        if let Some(s) = schur(m) {
            return s.complex_eigenvalues().iter().map(|z| z - shift).collect();
        }
    }
    a.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part over the spectrum of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

fn to_complex(a: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    a.map(|x| Complex::new(x, 0.0))
}

/// Solve `A P + P Aᵀ + W = 0` for Hurwitz `A` by a complex Schur
/// (Bartels–Stewart) sweep.
pub fn lyap_solve(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || w.shape() != (n, n) {
        return Err(Error::Dimension(alloc::format!(
            "lyap_solve: A is {}x{}, W is {}x{}",
            a.nrows(),
            a.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let schur = nalgebra::linalg::Schur::new(to_complex(a));
    let (q, t) = schur.unpack();
    let max_real = (0..n).map(|k| t[(k, k)].re).fold(f64::NEG_INFINITY, f64::max);
    if max_real >= 0.0 {
        return Err(Error::Unstable { max_real });
    }

    let solve = |rhs: &DMatrix<f64>| -> DMatrix<f64> {
        let c = -(q.adjoint() * to_complex(rhs) * &q);
        let mut y = DMatrix::<Complex<f64>>::zeros(n, n);
        for j in (0..n).rev() {
            let mut col = c.column(j).into_owned();
            for k in (j + 1)..n {
                let s = t[(j, k)].conj();
                col -= y.column(k) * s;
            }
            let shift = t[(j, j)].conj();
            for i in (0..n).rev() {
                let mut acc = col[i];
                for k in (i + 1)..n {
                    acc -= t[(i, k)] * y[(k, j)];
                }
                y[(i, j)] = acc / (t[(i, i)] + shift);
            }
        }
        symmetrize(&(&q * y * q.adjoint()).map(|z| z.re))
    };

    let residual = |p: &DMatrix<f64>| a * p + p * a.transpose() + w;
    let mut p = solve(w);
    let target = 1e-10 * w.norm();
    for _ in 0..2 {
        let r = residual(&p);
        if r.norm() <= target {
            break;
        }
        p += solve(&r);
    }
    Ok(p)
}

/// Stabilizing solution of `Aᵀ X + X A − X G X + Q = 0` (`G`, `Q`
/// symmetric, `G` possibly indefinite) from the matrix sign of the
/// Hamiltonian `[[A, −G], [−Q, −Aᵀ]]`. Fails when the Hamiltonian has
/// eigenvalues on or near the imaginary axis or the residual stays large.
pub fn care_solve(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || g.shape() != (n, n) || q.shape() != (n, n) {
        return Err(Error::Dimension(alloc::format!(
            "care_solve: A is {}x{}, G is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            g.nrows(),
            g.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let mut z = DMatrix::zeros(2 * n, 2 * n);
    z.view_mut((0, 0), (n, n)).copy_from(a);
    z.view_mut((0, n), (n, n)).copy_from(&(-g));
    z.view_mut((n, 0), (n, n)).copy_from(&(-q));
    z.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let fail = || Error::InvalidArgument("care_solve: Hamiltonian has eigenvalues near the imaginary axis".into());
    let mut converged = false;
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det = lu.determinant();
        let inv = lu.try_inverse().ok_or_else(fail)?;
        let c = if det != 0.0 && det.is_finite() {
            det.abs().powf(-1.0 / (2 * n) as f64)
        } else {
            1.0
        };
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).norm();
        z = next;
        if !change.is_finite() {
            return Err(fail());
        }
        if change <= 1e-12 * z.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(fail());
    }
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    let mut w22 = z.view((n, n), (n, n)).into_owned();
    for i in 0..n {
        w22[(i, i)] += 1.0;
    }
    lhs.view_mut((n, 0), (n, n)).copy_from(&w22);
    let mut rhs = DMatrix::zeros(2 * n, n);
    let mut w11 = z.view((0, 0), (n, n)).into_owned();
    for i in 0..n {
        w11[(i, i)] += 1.0;
    }
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-w11));
    rhs.view_mut((n, 0), (n, n))
        .copy_from(&(-z.view((n, 0), (n, n)).into_owned()));
    let x = lhs.svd(true, true).solve(&rhs, PINV_RCOND).map_err(|_| fail())?;
    let x = symmetrize(&x);
    let residual = a.transpose() * &x + &x * a - &x * g * &x + q;
    let scale = (a.norm() * x.norm() + g.norm() * x.norm() * x.norm() + q.norm()).max(f64::MIN_POSITIVE);
    if !(residual.norm() <= 1e-8 * scale) {
        return Err(fail());
    }
    Ok(x)
}

/// Weighted packing of a symmetric matrix's lower triangle: diagonal entries
/// as-is, off-diagonal entries scaled by √2, so `‖svec(M)‖₂ = ‖M‖_F`.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let map = ReducedVecMap::new(n);
    DVector::from_iterator(
        map.len(),
        map.pairs().map(|(i, j)| {
            if i == j {
                m[(i, j)]
            } else {
                core::f64::consts::SQRT_2 * m[(i, j)]
            }
        }),
    )
}

/// Inverse of [`svec`].
pub fn unsvec(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let map = ReducedVecMap::new(n);
    let mut m = DMatrix::zeros(n, n);
    for (k, (i, j)) in map.pairs().enumerate() {
        if i == j {
            m[(i, i)] = v[k];
        } else {
            let x = v[k] * core::f64::consts::FRAC_1_SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    m
}
