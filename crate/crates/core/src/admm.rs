//! ADMM for affine LMI programs.
//!
//! Each block constraint `M_b ≺ 0` is split as `M_b + H_b = 0` with
//! `H_b ⪰ ε_H I`. With the scaled dual `U_b`, one iteration is
//!
//! ```text
//! p   ← argmin ρᵀp + (μ/2) Σ ‖M_b + H_b + U_b‖²   (soft threshold, p ≥ ε_p)
//! V_j ← argmin Σ ‖M_b + H_b + U_b‖²               (least squares, per variable)
//! H_b ← 𝒫(−M_b − U_b)                              (spectrum clamp at ε_H)
//! U_b ← U_b + M_b + H_b
//! ```
//!
//! Block values are stored in weighted lower-triangular packing (off-diagonal
//! entries scaled by √2), so Euclidean norms of the packed vectors equal
//! Frobenius norms of the blocks and every least-squares step is exact.
//!
//! By default the sweep is wrapped in safeguarded Anderson acceleration;
//! setting `anderson_memory = 0` runs the plain iteration above.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{self, ReducedVecMap};
use crate::lmi::{AffineLmiProgram, Assignment, LmiBlock, MatrixVarSpec, Structure, Term};

/// How definite (`X ≻ 0`) variables are kept definite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XUpdateMode {
    /// Unconstrained least squares followed by a spectrum clamp at `ε_p`.
    ProjectedLeastSquares,
    /// Exact constrained least squares by an inner ADMM loop.
    InnerAdmm,
    /// `−X ≺ 0` becomes one more slacked block; the update is unconstrained.
    DefinitenessSlack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    pub mu: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub eps_p: f64,
    pub eps_h: f64,
    pub x_update_mode: XUpdateMode,
    pub inner_mu: f64,
    pub inner_max_iter: usize,
    /// Anderson acceleration memory (0 runs the plain iteration).
    pub anderson_memory: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            mu: 10.0,
            eps_abs: 1e-6,
            eps_rel: 1e-5,
            max_iter: 20_000,
            eps_p: 1e-6,
            eps_h: 1e-8,
            x_update_mode: XUpdateMode::DefinitenessSlack,
            inner_mu: 1.0,
            inner_max_iter: 50,
            anderson_memory: 10,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu", self.mu),
            ("eps_abs", self.eps_abs),
            ("eps_rel", self.eps_rel),
            ("eps_p", self.eps_p),
            ("eps_h", self.eps_h),
            ("inner_mu", self.inner_mu),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iter == 0 || self.inner_max_iter == 0 {
            return Err(Error::InvalidArgument("iteration limits must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmmStatus {
    Converged,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub primal: f64,
    pub dual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmResult {
    pub status: AdmmStatus,
    pub assignment: Assignment,
    pub objective: f64,
    pub primal: f64,
    pub dual: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub iterations: usize,
    pub history: Vec<IterRecord>,
}

/// Coordinates of a matrix variable: `vec_r` for symmetric, `vec` otherwise.
#[derive(Debug, Clone)]
struct VarLayout {
    spec: MatrixVarSpec,
    map: Option<ReducedVecMap>,
}

impl VarLayout {
    fn new(spec: &MatrixVarSpec) -> Self {
        let map = spec.structure.is_symmetric().then(|| ReducedVecMap::new(spec.rows));
        Self {
            spec: spec.clone(),
            map,
        }
    }

    fn dof(&self) -> usize {
        self.spec.dof()
    }

    fn to_matrix(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        match &self.map {
            Some(m) => m.unvec_r(theta),
            None => linalg::unvec(theta, self.spec.rows, self.spec.cols),
        }
    }

    fn to_theta(&self, v: &DMatrix<f64>) -> DVector<f64> {
        match &self.map {
            Some(m) => m.vec_r(v),
            None => linalg::vec(v),
        }
    }

    /// Matrix of the `k`-th coordinate direction.
    fn basis(&self, k: usize) -> DMatrix<f64> {
        let mut e = DVector::zeros(self.dof());
        e[k] = 1.0;
        self.to_matrix(&e)
    }

    /// Frobenius weight of each coordinate (2 for off-diagonal symmetric).
    fn weights(&self) -> DVector<f64> {
        match &self.map {
            Some(m) => DVector::from_iterator(m.len(), m.pairs().map(|(i, j)| if i == j { 1.0 } else { 2.0 })),
            None => DVector::from_element(self.dof(), 1.0),
        }
    }
}

/// The linear map from a variable's coordinates into one block, restricted
/// to the packed rows it can touch.
#[derive(Debug, Clone)]
struct Coupling {
    block: usize,
    rows: Vec<usize>,
    k: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct CompiledBlock {
    n: usize,
    constant: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    block: usize,
    /// Packed index of the diagonal entry.
    idx: usize,
    coeff: f64,
}

#[derive(Debug, Clone)]
struct CompiledVar {
    layout: VarLayout,
    couplings: Vec<Coupling>,
    pinv: DMatrix<f64>,
    /// Present in inner-ADMM mode for definite variables.
    inner: Option<InnerLs>,
    project: bool,
}

#[derive(Debug, Clone)]
struct InnerLs {
    pinv: DMatrix<f64>,
    sqrt_w: DVector<f64>,
    scale: f64,
}

/// A program prepared for ADMM: couplings and pseudo-inverses are computed
/// once per scaling and reused every iteration.
#[derive(Debug, Clone)]
pub struct Solver {
    config: AdmmConfig,
    n_p: usize,
    weights: Vec<f64>,
    blocks: Vec<CompiledBlock>,
    vars: Vec<CompiledVar>,
    slots: Vec<Slot>,
    dim: usize,
}

/// Iterates of one solve. Block quantities are packed and expressed in the
/// solver's current block scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub p: Vec<f64>,
    pub theta: Vec<DVector<f64>>,
    pub m: Vec<DVector<f64>>,
    pub h: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub iteration: usize,
    pub history: Vec<IterRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
}

impl Residuals {
    fn unset() -> Self {
        Self {
            primal: f64::INFINITY,
            dual: f64::INFINITY,
            eps_pri: 0.0,
            eps_dual: 0.0,
        }
    }

    pub fn converged(&self) -> bool {
        self.primal <= self.eps_pri && self.dual <= self.eps_dual
    }
}

fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn definiteness_block(spec: &MatrixVarSpec) -> LmiBlock {
    let n = spec.rows;
    let mut b = LmiBlock::new(&format!("{}>0", spec.name), vec![n]);
    b.push(Term::new(
        0,
        0,
        &spec.name,
        DMatrix::identity(n, n) * -0.5,
        DMatrix::identity(n, n),
    ));
    b
}

impl Solver {
    pub fn new(program: &AffineLmiProgram, config: &AdmmConfig) -> Result<Self> {
        config.validate()?;
        if program.vars.is_empty() {
            return Err(Error::Program("program has no matrix variables".into()));
        }
        let mut blocks_src: Vec<LmiBlock> = program.blocks.clone();
        if config.x_update_mode == XUpdateMode::DefinitenessSlack {
            for v in program.vars.iter().filter(|v| v.structure == Structure::SymmetricPd) {
                blocks_src.push(definiteness_block(v));
            }
        }

        let mut blocks = Vec::with_capacity(blocks_src.len());
        let mut slots = Vec::new();
        for (bi, b) in blocks_src.iter().enumerate() {
            let n = b.size();
            let map = ReducedVecMap::new(n);
            if let (Some(slot), Some(o)) = (b.precision, b.precision_offset()) {
                for k in 0..program.n_p {
                    slots.push(Slot {
                        block: bi,
                        idx: map.index(o + k, o + k),
                        coeff: slot.coeff,
                    });
                }
            }
            blocks.push(CompiledBlock {
                n,
                constant: linalg::svec(&b.constant),
            });
        }
        if slots.len() != program.n_p {
            return Err(Error::Program(format!(
                "{} precisions but {} precision entries in blocks",
                program.n_p,
                slots.len()
            )));
        }

        let mut vars = Vec::with_capacity(program.vars.len());
        for spec in &program.vars {
            let layout = VarLayout::new(spec);
            let mut couplings = Vec::new();
            for (bi, b) in blocks_src.iter().enumerate() {
                let terms: Vec<&Term> = b.terms.iter().filter(|t| t.var == spec.name).collect();
                if terms.is_empty() {
                    continue;
                }
                let n = b.size();
                let mut full = DMatrix::zeros(packed_len(n), layout.dof());
                for k in 0..layout.dof() {
                    let e = layout.basis(k);
                    let mut val = DMatrix::zeros(n, n);
                    for t in &terms {
                        b.accumulate_term(t, &e, &mut val);
                    }
                    full.set_column(k, &linalg::svec(&val));
                }
                let rows: Vec<usize> = (0..full.nrows())
                    .filter(|&r| full.row(r).iter().any(|&x| x != 0.0))
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                couplings.push(Coupling {
                    block: bi,
                    k: full.select_rows(rows.iter()),
                    rows,
                });
            }
            if couplings.is_empty() {
                return Err(Error::Program(format!(
                    "variable {} does not appear in any block",
                    spec.name
                )));
            }
            let definite = spec.structure == Structure::SymmetricPd;
            let inner = (definite && config.x_update_mode == XUpdateMode::InnerAdmm).then(|| InnerLs {
                pinv: DMatrix::zeros(0, 0),
                sqrt_w: layout.weights().map(f64::sqrt),
                scale: (config.inner_mu / 2.0).sqrt(),
            });
            let project = definite && config.x_update_mode == XUpdateMode::ProjectedLeastSquares;
            vars.push(CompiledVar {
                layout,
                couplings,
                pinv: DMatrix::zeros(0, 0),
                inner,
                project,
            });
        }
        let dim = program.n_p + vars.iter().map(|v| v.layout.dof()).sum::<usize>();
        let mut solver = Self {
            config: config.clone(),
            n_p: program.n_p,
            weights: program.weights.clone(),
            blocks,
            vars,
            slots,
            dim,
        };
        for j in 0..solver.vars.len() {
            solver.refresh_var(j);
        }
        Ok(solver)
    }

    /// Caches the pseudo-inverses of variable `j`.
    fn refresh_var(&mut self, j: usize) {
        let v = &mut self.vars[j];
        let stacked = stack(&v.couplings, v.layout.dof());
        v.pinv = linalg::pinv(&stacked);
        if let Some(inner) = v.inner.as_mut() {
            let dof = v.layout.dof();
            let mut aug = DMatrix::zeros(stacked.nrows() + dof, dof);
            aug.view_mut((0, 0), stacked.shape()).copy_from(&stacked);
            for k in 0..dof {
                aug[(stacked.nrows() + k, k)] = inner.scale * inner.sqrt_w[k];
            }
            inner.pinv = linalg::pinv(&aug);
        }
    }

    pub fn config(&self) -> &AdmmConfig {
        &self.config
    }

    /// Number of slacked blocks, including any definiteness blocks.
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Order of slacked block `b`.
    pub fn block_order(&self, b: usize) -> usize {
        self.blocks[b].n
    }

    /// Cached pseudo-inverse of the stacked coefficient matrix of variable `j`.
    pub fn coefficient_pinv(&self, j: usize) -> &DMatrix<f64> {
        &self.vars[j].pinv
    }

    /// Stacked (scaled) coefficient matrix of variable `j` over every block
    /// it enters.
    pub fn coefficient_matrix(&self, j: usize) -> DMatrix<f64> {
        let v = &self.vars[j];
        stack(&v.couplings, v.layout.dof())
    }

    fn objective(&self, p: &[f64]) -> f64 {
        self.weights.iter().zip(p).map(|(w, p)| w * p).sum()
    }

    /// `p = 1`, definite variables `I`, others `0`; `H = 𝒫(−M)`, `U = 0`.
    pub fn initial_state(&self) -> AdmmState {
        let p = vec![1.0; self.n_p];
        let theta: Vec<DVector<f64>> = self
            .vars
            .iter()
            .map(|v| {
                let s = &v.layout.spec;
                if s.structure == Structure::SymmetricPd {
                    v.layout.to_theta(&DMatrix::identity(s.rows, s.cols))
                } else {
                    DVector::zeros(v.layout.dof())
                }
            })
            .collect();
        self.state_with(p, theta)
    }

    fn state_with(&self, p: Vec<f64>, theta: Vec<DVector<f64>>) -> AdmmState {
        let m = self.evaluate_packed(&p, &theta);
        let u: Vec<DVector<f64>> = self.blocks.iter().map(|b| DVector::zeros(packed_len(b.n))).collect();
        let mut state = AdmmState {
            p,
            theta,
            m,
            h: u.clone(),
            u,
            iteration: 0,
            history: Vec::new(),
        };
        self.slack_update(&mut state);
        state
    }

    /// Starting point from an existing assignment (missing variables start
    /// as in [`Solver::initial_state`]).
    pub fn state_from(&self, assignment: &Assignment) -> Result<AdmmState> {
        if assignment.p.len() != self.n_p {
            return Err(Error::Dimension(format!(
                "{} precisions given, program has {}",
                assignment.p.len(),
                self.n_p
            )));
        }
        let init = self.initial_state();
        let theta = self
            .vars
            .iter()
            .zip(init.theta)
            .map(|(v, th0)| match assignment.get(&v.layout.spec.name) {
                Some(x) if x.shape() == (v.layout.spec.rows, v.layout.spec.cols) => v.layout.to_theta(x),
                _ => th0,
            })
            .collect();
        let p = assignment.p.iter().map(|&p| p.max(self.config.eps_p)).collect();
        Ok(self.state_with(p, theta))
    }

    fn evaluate_packed(&self, p: &[f64], theta: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut m: Vec<DVector<f64>> = self.blocks.iter().map(|b| b.constant.clone()).collect();
        for (v, th) in self.vars.iter().zip(theta) {
            for c in &v.couplings {
                let d = &c.k * th;
                for (r, &row) in c.rows.iter().enumerate() {
                    m[c.block][row] += d[r];
                }
            }
        }
        for (s, &pk) in self.slots.iter().zip(p) {
            m[s.block][s.idx] -= s.coeff * pk;
        }
        m
    }

    /// Packed value of every block at the state's iterate, unscaled.
    pub fn block_values(&self, state: &AdmmState) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .zip(&state.m)
            .map(|(b, m)| linalg::unsvec(m, b.n))
            .collect()
    }

    /// Closed-form precision step.
    pub fn p_update(&self, state: &mut AdmmState) {
        let mu = self.config.mu;
        for (i, s) in self.slots.iter().enumerate() {
            let coeff = s.coeff;
            let (b, idx) = (s.block, s.idx);
            let old = state.p[i];
            let c = state.m[b][idx] + coeff * old + state.h[b][idx] + state.u[b][idx];
            let new = precision_step(c, coeff, self.weights[i], mu, self.config.eps_p);
            state.m[b][idx] -= coeff * (new - old);
            state.p[i] = new;
        }
    }

    /// Least-squares step for variable `j` with every other iterate fixed.
    pub fn var_update(&self, state: &mut AdmmState, j: usize) {
        let v = &self.vars[j];
        let old = state.theta[j].clone();
        let mut r = DVector::zeros(v.pinv.ncols());
        let mut off = 0;
        for c in &v.couplings {
            let own = &c.k * &old;
            for (k, &row) in c.rows.iter().enumerate() {
                r[off + k] = state.m[c.block][row] - own[k] + state.h[c.block][row] + state.u[c.block][row];
            }
            off += c.rows.len();
        }
        let mut new = -(&v.pinv * &r);
        if let Some(inner) = &v.inner {
            new = self.inner_solve(v, inner, &r, &new);
        } else if v.project {
            let x = linalg::clamp_spectrum(&v.layout.to_matrix(&new), self.config.eps_p);
            new = v.layout.to_theta(&x);
        }
        let delta = &new - &old;
        for c in &v.couplings {
            let d = &c.k * &delta;
            for (k, &row) in c.rows.iter().enumerate() {
                state.m[c.block][row] += d[k];
            }
        }
        state.theta[j] = new;
    }

    fn inner_solve(&self, v: &CompiledVar, inner: &InnerLs, r: &DVector<f64>, start: &DVector<f64>) -> DVector<f64> {
        let n = v.layout.dof();
        let eps = self.config.eps_p;
        let project = |theta: &DVector<f64>| {
            v.layout
                .to_theta(&linalg::clamp_spectrum(&v.layout.to_matrix(theta), eps))
        };
        let mut z = project(start);
        let mut uu = DVector::zeros(n);
        let mut rhs = DVector::zeros(r.len() + n);
        rhs.rows_mut(0, r.len()).copy_from(r);
        for _ in 0..self.config.inner_max_iter {
            for k in 0..n {
                rhs[r.len() + k] = inner.scale * inner.sqrt_w[k] * (uu[k] - z[k]);
            }
            let x = -(&inner.pinv * &rhs);
            let z_new = project(&(&x + &uu));
            uu += &x - &z_new;
            let change = (&z_new - &z).norm();
            z = z_new;
            if (&x - &z).norm() <= 1e-10 * (1.0 + z.norm()) && change <= 1e-10 * (1.0 + z.norm()) {
                break;
            }
        }
        z
    }

    /// `H_b = 𝒫(−M_b − U_b)` for every block.
    pub fn slack_update(&self, state: &mut AdmmState) {
        for (bi, b) in self.blocks.iter().enumerate() {
            let w = -(&state.m[bi] + &state.u[bi]);
            state.h[bi] = if b.n == 1 {
                DVector::from_element(1, w[0].max(self.config.eps_h))
            } else {
                let mat = linalg::unsvec(&w, b.n);
                linalg::svec(&linalg::clamp_spectrum(&mat, self.config.eps_h))
            };
        }
    }

    /// `U_b += M_b + H_b`.
    pub fn dual_update(&self, state: &mut AdmmState) {
        for bi in 0..self.blocks.len() {
            let step = &state.m[bi] + &state.h[bi];
            state.u[bi] += step;
        }
    }

    /// Primal and dual residuals with their stopping thresholds.
    pub fn residuals(&self, prev_h: &[DVector<f64>], state: &AdmmState) -> Residuals {
        let mu = self.config.mu;
        let mut primal = 0.0;
        let mut dual = 0.0;
        let mut m_norm = 0.0;
        let mut h_norm = 0.0;
        let mut u_norm = 0.0;
        let mut entries = 0usize;
        for (bi, (block, prev)) in self.blocks.iter().zip(prev_h).enumerate() {
            primal += (&state.m[bi] + &state.h[bi]).norm_squared();
            dual += (&state.h[bi] - prev).norm_squared();
            m_norm += state.m[bi].norm_squared();
            h_norm += state.h[bi].norm_squared();
            u_norm += state.u[bi].norm_squared();
            entries += block.n * block.n;
        }
        let eps_pri =
            (entries as f64).sqrt() * self.config.eps_abs + self.config.eps_rel * m_norm.sqrt().max(h_norm.sqrt());
        let eps_dual = (self.dim as f64).sqrt() * self.config.eps_abs + self.config.eps_rel * mu * u_norm.sqrt();
        Residuals {
            primal: primal.sqrt(),
            dual: mu * dual.sqrt(),
            eps_pri,
            eps_dual,
        }
    }

    /// One full sweep: `p`, each variable in declaration order, `H`, `U`.
    pub fn step(&self, state: &mut AdmmState) -> Residuals {
        self.p_update(state);
        for j in 0..self.vars.len() {
            self.var_update(state, j);
        }
        let prev_h = state.h.clone();
        self.slack_update(state);
        self.dual_update(state);
        state.iteration += 1;
        let res = self.residuals(&prev_h, state);
        state.history.push(IterRecord {
            iter: state.iteration,
            objective: self.objective(&state.p),
            primal: res.primal,
            dual: res.dual,
        });
        res
    }

    pub fn assignment(&self, state: &AdmmState) -> Assignment {
        let mut a = Assignment::new(state.p.clone());
        for (v, th) in self.vars.iter().zip(&state.theta) {
            a.set(&v.layout.spec.name, v.layout.to_matrix(th));
        }
        a
    }

    fn pack(&self, state: &AdmmState) -> DVector<f64> {
        let parts = state.theta.iter().chain(&state.h).chain(&state.u);
        let len: usize = parts.clone().map(|v| v.len()).sum();
        let mut z = DVector::zeros(len);
        let mut off = 0;
        for v in parts {
            z.rows_mut(off, v.len()).copy_from(v);
            off += v.len();
        }
        z
    }

    fn unpack(&self, state: &mut AdmmState, z: &DVector<f64>) {
        let mut off = 0;
        for v in state
            .theta
            .iter_mut()
            .chain(state.h.iter_mut())
            .chain(state.u.iter_mut())
        {
            let n = v.len();
            v.copy_from(&z.rows(off, n));
            off += n;
        }
        state.m = self.evaluate_packed(&state.p, &state.theta);
    }

    /// Runs from `state` until convergence or the iteration limit.
    pub fn run(&self, state: AdmmState) -> AdmmResult {
        if self.config.anderson_memory > 0 {
            self.run_accelerated(state)
        } else {
            self.run_plain(state)
        }
    }

    fn run_plain(&self, mut state: AdmmState) -> AdmmResult {
        let mut last = Residuals::unset();
        while state.iteration < self.config.max_iter {
            last = self.step(&mut state);
            if last.converged() {
                break;
            }
        }
        self.finish(state, last)
    }

    /// Type-II Anderson acceleration of the fixed-point map
    /// `(V, H, U) ↦ step(V, H, U)`. An extrapolated point whose fixed-point
    /// residual grows is discarded in favour of the last plain step and the
    /// memory is cleared. The returned state is always a plain step.
    fn run_accelerated(&self, mut state: AdmmState) -> AdmmResult {
        let mem = self.config.anderson_memory;
        let mut last = Residuals::unset();
        let mut z = self.pack(&state);
        let mut df: Vec<DVector<f64>> = Vec::new();
        let mut dg: Vec<DVector<f64>> = Vec::new();
        let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
        let mut prev_norm = f64::INFINITY;
        while state.iteration < self.config.max_iter {
            last = self.step(&mut state);
            if last.converged() || state.iteration >= self.config.max_iter {
                break;
            }
            let g = self.pack(&state);
            let f = &g - &z;
            let f_norm = f.norm();
            if f_norm > prev_norm && !df.is_empty() {
                if let Some((g_prev, _)) = prev.take() {
                    df.clear();
                    dg.clear();
                    prev_norm = f64::INFINITY;
                    self.unpack(&mut state, &g_prev);
                    z = g_prev;
                    continue;
                }
            }
            if let Some((g_prev, f_prev)) = prev.take() {
                df.push(&f - f_prev);
                dg.push(&g - g_prev);
                if df.len() > mem {
                    df.remove(0);
                    dg.remove(0);
                }
            }
            prev_norm = f_norm;
            let next = anderson_point(&g, &f, &df, &dg);
            prev = Some((g, f));
            self.unpack(&mut state, &next);
            z = next;
        }
        self.finish(state, last)
    }

    fn finish(&self, state: AdmmState, last: Residuals) -> AdmmResult {
        let status = if last.converged() {
            AdmmStatus::Converged
        } else if self.stalled_infeasible(&state, &last) {
            AdmmStatus::Infeasible
        } else {
            AdmmStatus::MaxIter
        };
        AdmmResult {
            status,
            assignment: self.assignment(&state),
            objective: self.objective(&state.p),
            primal: last.primal,
            dual: last.dual,
            eps_pri: last.eps_pri,
            eps_dual: last.eps_dual,
            iterations: state.iteration,
            history: state.history,
        }
    }

    fn stalled_infeasible(&self, state: &AdmmState, last: &Residuals) -> bool {
        if last.primal <= 1e3 * last.eps_pri {
            return false;
        }
        let n = state.history.len();
        let window = (n / 5).max(1);
        if n <= window {
            return false;
        }
        let start = state.history[n - window - 1].primal;
        last.primal >= start
    }
}

/// `g − ΔG γ` with `γ = argmin ‖f − ΔF γ‖` (lightly regularized normal
/// equations).
fn anderson_point(g: &DVector<f64>, f: &DVector<f64>, df: &[DVector<f64>], dg: &[DVector<f64>]) -> DVector<f64> {
    let k = df.len();
    if k == 0 {
        return g.clone();
    }
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for i in 0..k {
        rhs[i] = df[i].dot(f);
        for j in 0..=i {
            let v = df[i].dot(&df[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let reg = 1e-10 * (0..k).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    for i in 0..k {
        gram[(i, i)] += reg;
    }
    let mut out = g.clone();
    if let Some(ch) = gram.cholesky() {
        let gam = ch.solve(&rhs);
        for i in 0..k {
            out.axpy(-gam[i], &dg[i], 1.0);
        }
    }
    out
}

fn stack(couplings: &[Coupling], dof: usize) -> DMatrix<f64> {
    let rows = couplings.iter().map(|c| c.rows.len()).sum();
    let mut out = DMatrix::zeros(rows, dof);
    let mut off = 0;
    for c in couplings {
        out.view_mut((off, 0), c.k.shape()).copy_from(&c.k);
        off += c.rows.len();
    }
    out
}

/// `argmin_{p ≥ ε} ρp + (μ/2)(c − c_p·p)² = max(ε, 𝒮(c/c_p, ρ/(μ c_p²)))`.
pub fn precision_step(c: f64, coeff: f64, rho: f64, mu: f64, eps_p: f64) -> f64 {
    linalg::shrink(c / coeff, rho / (mu * coeff * coeff)).max(eps_p)
}

/// Solves `program` from the default starting point.
pub fn solve(program: &AffineLmiProgram, config: &AdmmConfig) -> Result<AdmmResult> {
    let solver = Solver::new(program, config)?;
    let state = solver.initial_state();
    Ok(solver.run(state))
}

/// `min ‖Ā vec_r(X) + v̄‖₂ subject to X ⪰ ε_p I` by an inner ADMM loop on
/// `X̂ = Ẑ`, with `Ẑ` the projected copy. `Ā` acts on `vec_r` coordinates.
pub fn inner_psd_lstsq(a: &DMatrix<f64>, v: &DVector<f64>, n: usize, config: &AdmmConfig) -> Result<DMatrix<f64>> {
    let map = ReducedVecMap::new(n);
    if a.ncols() != map.len() || a.nrows() != v.len() {
        return Err(Error::Dimension(format!(
            "inner least squares: Ā is {}x{}, v̄ has {} rows, order {n}",
            a.nrows(),
            a.ncols(),
            v.len()
        )));
    }
    let eps = config.eps_p;
    let w: DVector<f64> = DVector::from_iterator(map.len(), map.pairs().map(|(i, j)| if i == j { 1.0 } else { 2.0 }));
    let scale = (config.inner_mu / 2.0).sqrt();
    let mut aug = DMatrix::zeros(a.nrows() + map.len(), map.len());
    aug.view_mut((0, 0), a.shape()).copy_from(a);
    for k in 0..map.len() {
        aug[(a.nrows() + k, k)] = scale * w[k].sqrt();
    }
    let pinv = linalg::pinv(&aug);
    let project = |x: &DVector<f64>| map.vec_r(&linalg::clamp_spectrum(&map.unvec_r(x), eps));
    let mut z = project(&-(linalg::pinv(a) * v));
    let mut u = DVector::zeros(map.len());
    let mut rhs = DVector::zeros(aug.nrows());
    rhs.rows_mut(0, v.len()).copy_from(v);
    for _ in 0..config.inner_max_iter {
        for k in 0..map.len() {
            rhs[a.nrows() + k] = scale * w[k].sqrt() * (u[k] - z[k]);
        }
        let x = -(&pinv * &rhs);
        let z_new = project(&(&x + &u));
        u += &x - &z_new;
        let change = (&z_new - &z).norm();
        z = z_new;
        if (&x - &z).norm() <= 1e-10 * (1.0 + z.norm()) && change <= 1e-10 * (1.0 + z.norm()) {
            break;
        }
    }
    Ok(map.unvec_r(&z))
}
