//! Affine LMI programs for precision-optimal estimator design.
//!
//! Every design problem has the form
//!
//! ```text
//! minimize ρᵀp  subject to  M_b(p, V₁, …, V_m) ≺ 0  for each block b
//! ```
//!
//! where each `M_b` is affine. A block is described by a partition into
//! sub-blocks, a constant symmetric matrix, a list of [`Term`]s and at most
//! one precision slot contributing `-c_p·diag(p)` to a diagonal sub-block.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{LtiPlant, MeasurementModel};

/// Strictness margin used when certifying `M ≺ 0`.
pub const MARGIN_TOL: f64 = 1e-9;

/// Lower bound on `λ_min` of definite variables accepted by [`certify`].
pub const SPD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Framework {
    H2,
    Hinf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Observer,
    Filter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    General,
    Symmetric,
    /// Symmetric and required to be positive definite.
    SymmetricPd,
}

impl Structure {
    pub fn is_symmetric(self) -> bool {
        !matches!(self, Structure::General)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVarSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub structure: Structure,
}

impl MatrixVarSpec {
    pub fn new(name: &str, rows: usize, cols: usize, structure: Structure) -> Self {
        Self {
            name: name.to_string(),
            rows,
            cols,
            structure,
        }
    }

    /// Number of free scalars: `n(n+1)/2` for symmetric, `rows·cols` otherwise.
    pub fn dof(&self) -> usize {
        if self.structure.is_symmetric() {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }
}

/// `left · V · right` (or `left · Vᵀ · right`) placed at sub-block
/// `(row, col)`.
///
/// Off-diagonal terms are mirrored into `(col, row)`; a term on a diagonal
/// sub-block contributes `F + Fᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub row: usize,
    pub col: usize,
    pub var: String,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub transposed: bool,
}

impl Term {
    pub fn new(row: usize, col: usize, var: &str, left: DMatrix<f64>, right: DMatrix<f64>) -> Self {
        Self {
            row,
            col,
            var: var.to_string(),
            left,
            right,
            transposed: false,
        }
    }

    pub fn transposed(mut self) -> Self {
        self.transposed = !self.transposed;
        self
    }

    /// `F = left · V⁽ᵀ⁾ · right`.
    pub fn value(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        if self.transposed {
            &self.left * v.transpose() * &self.right
        } else {
            &self.left * v * &self.right
        }
    }
}

/// Where `-c_p·diag(p)` enters a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionSlot {
    pub sub_block: usize,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub name: String,
    pub partition: Vec<usize>,
    pub constant: DMatrix<f64>,
    pub terms: Vec<Term>,
    pub precision: Option<PrecisionSlot>,
}

impl LmiBlock {
    pub fn new(name: &str, partition: Vec<usize>) -> Self {
        let n = partition.iter().sum();
        Self {
            name: name.to_string(),
            partition,
            constant: DMatrix::zeros(n, n),
            terms: Vec::new(),
            precision: None,
        }
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    /// Row offset of each sub-block.
    pub fn offsets(&self) -> Vec<usize> {
        self.partition
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect()
    }

    /// Row of the first precision entry, if the block carries precisions.
    pub fn precision_offset(&self) -> Option<usize> {
        self.precision.map(|s| self.offsets()[s.sub_block])
    }

    /// Sets the constant sub-block `(row, col)` and its mirror.
    pub fn set_constant(&mut self, row: usize, col: usize, value: &DMatrix<f64>) {
        let offs = self.offsets();
        let (r0, c0) = (offs[row], offs[col]);
        self.constant.view_mut((r0, c0), value.shape()).copy_from(value);
        if row != col {
            self.constant
                .view_mut((c0, r0), (value.ncols(), value.nrows()))
                .copy_from(&value.transpose());
        }
    }

    pub fn push(&mut self, term: Term) {
        self.terms.push(term);
    }

    /// Adds the contribution of one term evaluated at `v` into `out`.
    pub fn accumulate_term(&self, term: &Term, v: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let offs = self.offsets();
        let f = term.value(v);
        let (r0, c0) = (offs[term.row], offs[term.col]);
        let mut dst = out.view_mut((r0, c0), f.shape());
        dst += &f;
        if term.row == term.col {
            dst += f.transpose();
        } else {
            let mut mirror = out.view_mut((c0, r0), (f.ncols(), f.nrows()));
            mirror += f.transpose();
        }
    }

    /// Adds `-c_p·diag(p)` into `out`.
    pub fn accumulate_precision(&self, p: &[f64], out: &mut DMatrix<f64>) {
        if let (Some(slot), Some(o)) = (self.precision, self.precision_offset()) {
            for (k, &pk) in p.iter().enumerate() {
                out[(o + k, o + k)] -= slot.coeff * pk;
            }
        }
    }
}

/// Values for `p` and every matrix variable, keyed by variable name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    pub p: Vec<f64>,
    vars: BTreeMap<String, DMatrix<f64>>,
}

impl Assignment {
    pub fn new(p: Vec<f64>) -> Self {
        Self {
            p,
            vars: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: DMatrix<f64>) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: DMatrix<f64>) {
        self.vars.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.vars.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.get(name).ok_or_else(|| Error::Assignment(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    /// Zero matrices for every variable of `program` and `p = 0`.
    pub fn zeros(program: &AffineLmiProgram) -> Self {
        let mut a = Self::new(vec![0.0; program.n_p]);
        for v in &program.vars {
            a.set(&v.name, DMatrix::zeros(v.rows, v.cols));
        }
        a
    }
}

/// Value of a block at an assignment.
pub fn evaluate_block(block: &LmiBlock, assignment: &Assignment) -> Result<DMatrix<f64>> {
    let mut out = block.constant.clone();
    for term in &block.terms {
        let v = assignment.require(&term.var)?;
        block.accumulate_term(term, v, &mut out);
    }
    if block.precision.is_some() {
        block.accumulate_precision(&assignment.p, &mut out);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgramMeta {
    pub framework: Framework,
    pub estimator: EstimatorKind,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmiProgram {
    pub n_p: usize,
    pub weights: Vec<f64>,
    pub vars: Vec<MatrixVarSpec>,
    pub blocks: Vec<LmiBlock>,
    pub meta: ProgramMeta,
}

impl AffineLmiProgram {
    /// Validates shapes and returns the program.
    pub fn new(weights: Vec<f64>, vars: Vec<MatrixVarSpec>, blocks: Vec<LmiBlock>, meta: ProgramMeta) -> Result<Self> {
        let prog = Self {
            n_p: weights.len(),
            weights,
            vars,
            blocks,
            meta,
        };
        prog.validate()?;
        Ok(prog)
    }

    pub fn var(&self, name: &str) -> Option<&MatrixVarSpec> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn objective(&self, p: &[f64]) -> f64 {
        self.weights.iter().zip(p).map(|(w, p)| w * p).sum()
    }

    fn validate(&self) -> Result<()> {
        if !(self.meta.gamma > 0.0 && self.meta.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "performance bound must be positive, got {}",
                self.meta.gamma
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("weight {w} is not positive")));
        }
        for v in &self.vars {
            if v.structure.is_symmetric() && v.rows != v.cols {
                return Err(Error::Dimension(format!(
                    "symmetric variable {} is {}x{}",
                    v.name, v.rows, v.cols
                )));
            }
        }
        for b in &self.blocks {
            let parts = b.partition.len();
            if b.constant.nrows() != b.partition.iter().sum::<usize>() {
                return Err(Error::Dimension(format!("block {}: constant size", b.name)));
            }
            if linalg::asymmetry(&b.constant) > 0.0 {
                return Err(Error::Dimension(format!("block {}: constant is not symmetric", b.name)));
            }
            if let Some(slot) = b.precision {
                if slot.sub_block >= parts || b.partition[slot.sub_block] != self.n_p {
                    return Err(Error::Dimension(format!(
                        "block {}: precision sub-block does not have {} rows",
                        b.name, self.n_p
                    )));
                }
            }
            for t in &b.terms {
                let spec = self
                    .var(&t.var)
                    .ok_or_else(|| Error::Program(format!("block {} references unknown variable {}", b.name, t.var)))?;
                if t.row >= parts || t.col >= parts {
                    return Err(Error::Dimension(format!("block {}: term position", b.name)));
                }
                let (vr, vc) = if t.transposed {
                    (spec.cols, spec.rows)
                } else {
                    (spec.rows, spec.cols)
                };
                if t.left.ncols() != vr
                    || t.right.nrows() != vc
                    || t.left.nrows() != b.partition[t.row]
                    || t.right.ncols() != b.partition[t.col]
                {
                    return Err(Error::Dimension(format!(
                        "block {}: term in {} at ({}, {}) has inconsistent factors",
                        b.name, t.var, t.row, t.col
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub block_lambda_max: Vec<f64>,
    pub var_lambda_min: Vec<(String, f64)>,
    /// `-max_b λ_max(M_b)`; positive when every block is negative definite.
    pub margin: f64,
    pub feasible: bool,
}

/// Checks every block for `λ_max < -margin_tol`, every definite variable for
/// `λ_min ≥` [`SPD_FLOOR`], and `p > 0`.
pub fn certify(program: &AffineLmiProgram, assignment: &Assignment, margin_tol: f64) -> Certificate {
    let mut block_lambda_max = Vec::with_capacity(program.blocks.len());
    let mut ok = assignment.p.len() == program.n_p && assignment.p.iter().all(|&p| p > 0.0);
    for b in &program.blocks {
        let lmax = match evaluate_block(b, assignment) {
            Ok(m) => linalg::lambda_max(&m),
            Err(_) => f64::INFINITY,
        };
        ok &= lmax < -margin_tol;
        block_lambda_max.push(lmax);
    }
    let mut var_lambda_min = Vec::new();
    for v in program.vars.iter().filter(|v| v.structure == Structure::SymmetricPd) {
        let lmin = assignment.get(&v.name).map_or(f64::NEG_INFINITY, linalg::lambda_min);
        ok &= lmin >= SPD_FLOOR;
        var_lambda_min.push((v.name.clone(), lmin));
    }
    let worst = block_lambda_max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Certificate {
        block_lambda_max,
        var_lambda_min,
        margin: -worst,
        feasible: ok,
    }
}

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

fn scaled_eye(n: usize, s: f64) -> DMatrix<f64> {
    DMatrix::identity(n, n) * s
}

fn check_inputs(plant: &LtiPlant, meas: &MeasurementModel, rho: &[f64]) -> Result<()> {
    if meas.c_y.ncols() != plant.nx() || meas.d_d.ncols() != plant.nd() || meas.d_d.nrows() != meas.ny() {
        return Err(Error::Dimension(format!(
            "measurement model is {}x{} / {}x{} for a plant with N_x = {}, N_d = {}",
            meas.c_y.nrows(),
            meas.c_y.ncols(),
            meas.d_d.nrows(),
            meas.d_d.ncols(),
            plant.nx(),
            plant.nd()
        )));
    }
    if rho.len() != meas.ny() {
        return Err(Error::Dimension(format!(
            "{} weights for {} measurements",
            rho.len(),
            meas.ny()
        )));
    }
    Ok(())
}

/// `sym(X A + Y C_y)` at `(0, 0)` and `X B_d + Y D_d` at `(0, 1)`.
fn observer_core(block: &mut LmiBlock, plant: &LtiPlant, meas: &MeasurementModel) {
    let nx = plant.nx();
    block.push(Term::new(0, 0, "X", eye(nx), plant.a().clone()));
    block.push(Term::new(0, 0, "Y", eye(nx), meas.c_y.clone()));
    block.push(Term::new(0, 1, "X", eye(nx), plant.b_d().clone()));
    block.push(Term::new(0, 1, "Y", eye(nx), meas.d_d.clone()));
}

/// The shared upper-left part of both filter blocks with `R B_d + Y D_d` and
/// `X B_d + Y D_d` placed in column `d_col`.
fn filter_core(block: &mut LmiBlock, plant: &LtiPlant, meas: &MeasurementModel, d_col: usize) {
    let nx = plant.nx();
    block.push(Term::new(0, 0, "R", eye(nx), plant.a().clone()));
    block.push(Term::new(0, 0, "Y", eye(nx), meas.c_y.clone()));
    block.push(Term::new(0, 1, "P", eye(nx), eye(nx)));
    block.push(Term::new(0, 1, "X", plant.a().transpose(), eye(nx)));
    block.push(Term::new(0, 1, "Y", meas.c_y.transpose(), eye(nx)).transposed());
    block.push(Term::new(1, 1, "P", eye(nx), eye(nx)));
    block.push(Term::new(0, d_col, "R", eye(nx), plant.b_d().clone()));
    block.push(Term::new(0, d_col, "Y", eye(nx), meas.d_d.clone()));
    block.push(Term::new(1, d_col, "X", eye(nx), plant.b_d().clone()));
    block.push(Term::new(1, d_col, "Y", eye(nx), meas.d_d.clone()));
}

fn trace_block(nz: usize, gamma: f64) -> LmiBlock {
    let mut b = LmiBlock::new("trace", vec![1]);
    b.constant[(0, 0)] = -gamma * gamma;
    for i in 0..nz {
        let mut l = DMatrix::zeros(1, nz);
        l[(0, i)] = 0.5;
        let mut r = DMatrix::zeros(nz, 1);
        r[(i, 0)] = 1.0;
        b.push(Term::new(0, 0, "Q", l, r));
    }
    b
}

fn x_minus_r(nx: usize) -> LmiBlock {
    let mut b = LmiBlock::new("X-R", vec![nx]);
    b.push(Term::new(0, 0, "X", scaled_eye(nx, 0.5), eye(nx)));
    b.push(Term::new(0, 0, "R", scaled_eye(nx, -0.5), eye(nx)));
    b
}

/// H∞ observer: one block over `[x, d, z, y]` with `c_p = γ`.
pub fn build_hinf_observer(
    plant: &LtiPlant,
    meas: &MeasurementModel,
    rho: &[f64],
    gamma: f64,
) -> Result<AffineLmiProgram> {
    check_inputs(plant, meas, rho)?;
    let (nx, nd, nz, ny) = (plant.nx(), plant.nd(), plant.nz(), meas.ny());
    let mut m = LmiBlock::new("M", vec![nx, nd, nz, ny]);
    observer_core(&mut m, plant, meas);
    m.set_constant(0, 2, &plant.c_z().transpose());
    m.push(Term::new(0, 3, "Y", eye(nx), eye(ny)));
    m.set_constant(1, 1, &scaled_eye(nd, -gamma));
    m.set_constant(2, 2, &scaled_eye(nz, -gamma));
    m.precision = Some(PrecisionSlot {
        sub_block: 3,
        coeff: gamma,
    });
    AffineLmiProgram::new(
        rho.to_vec(),
        vec![
            MatrixVarSpec::new("X", nx, nx, Structure::SymmetricPd),
            MatrixVarSpec::new("Y", nx, ny, Structure::General),
        ],
        vec![m],
        ProgramMeta {
            framework: Framework::Hinf,
            estimator: EstimatorKind::Observer,
            gamma,
        },
    )
}

/// H2 observer: `M ≺ 0` over `[x, d, y]`, `[[-Q, C_z], [C_zᵀ, -X]] ≺ 0` and
/// `trace(Q) < γ²`.
pub fn build_h2_observer(
    plant: &LtiPlant,
    meas: &MeasurementModel,
    rho: &[f64],
    gamma: f64,
) -> Result<AffineLmiProgram> {
    check_inputs(plant, meas, rho)?;
    let (nx, nd, nz, ny) = (plant.nx(), plant.nd(), plant.nz(), meas.ny());
    let mut m = LmiBlock::new("M", vec![nx, nd, ny]);
    observer_core(&mut m, plant, meas);
    m.push(Term::new(0, 2, "Y", eye(nx), eye(ny)));
    m.set_constant(1, 1, &scaled_eye(nd, -1.0));
    m.precision = Some(PrecisionSlot {
        sub_block: 2,
        coeff: 1.0,
    });

    let mut qx = LmiBlock::new("QX", vec![nz, nx]);
    qx.push(Term::new(0, 0, "Q", scaled_eye(nz, -0.5), eye(nz)));
    qx.set_constant(0, 1, plant.c_z());
    qx.push(Term::new(1, 1, "X", scaled_eye(nx, -0.5), eye(nx)));

    AffineLmiProgram::new(
        rho.to_vec(),
        vec![
            MatrixVarSpec::new("X", nx, nx, Structure::SymmetricPd),
            MatrixVarSpec::new("Y", nx, ny, Structure::General),
            MatrixVarSpec::new("Q", nz, nz, Structure::Symmetric),
        ],
        vec![m, qx, trace_block(nz, gamma)],
        ProgramMeta {
            framework: Framework::H2,
            estimator: EstimatorKind::Observer,
            gamma,
        },
    )
}

/// H∞ filter: `M ≺ 0` over `[x, x_F, z, d, y]` with `c_p = γ`, and `X − R ≺ 0`.
pub fn build_hinf_filter(
    plant: &LtiPlant,
    meas: &MeasurementModel,
    rho: &[f64],
    gamma: f64,
) -> Result<AffineLmiProgram> {
    check_inputs(plant, meas, rho)?;
    let (nx, nd, nz, ny) = (plant.nx(), plant.nd(), plant.nz(), meas.ny());
    let mut m = LmiBlock::new("M", vec![nx, nx, nz, nd, ny]);
    filter_core(&mut m, plant, meas, 3);
    m.set_constant(0, 2, &plant.c_z().transpose());
    m.push(Term::new(1, 2, "Q", scaled_eye(nx, -1.0), eye(nz)).transposed());
    m.push(Term::new(0, 4, "Y", eye(nx), eye(ny)));
    m.push(Term::new(1, 4, "Y", eye(nx), eye(ny)));
    m.set_constant(2, 2, &scaled_eye(nz, -gamma));
    m.set_constant(3, 3, &scaled_eye(nd, -gamma));
    m.precision = Some(PrecisionSlot {
        sub_block: 4,
        coeff: gamma,
    });
    AffineLmiProgram::new(
        rho.to_vec(),
        vec![
            MatrixVarSpec::new("X", nx, nx, Structure::SymmetricPd),
            MatrixVarSpec::new("Y", nx, ny, Structure::General),
            MatrixVarSpec::new("P", nx, nx, Structure::General),
            MatrixVarSpec::new("Q", nz, nx, Structure::General),
            MatrixVarSpec::new("R", nx, nx, Structure::Symmetric),
        ],
        vec![m, x_minus_r(nx)],
        ProgramMeta {
            framework: Framework::Hinf,
            estimator: EstimatorKind::Filter,
            gamma,
        },
    )
}

/// H2 filter: `M ≺ 0` over `[x, x_F, d, y]`, `X − R ≺ 0`, `trace(Q) < γ²`
/// and `[[-Q, C_z, N], [·, -R, -X], [·, ·, -X]] ≺ 0`.
pub fn build_h2_filter(plant: &LtiPlant, meas: &MeasurementModel, rho: &[f64], gamma: f64) -> Result<AffineLmiProgram> {
    check_inputs(plant, meas, rho)?;
    let (nx, nd, nz, ny) = (plant.nx(), plant.nd(), plant.nz(), meas.ny());
    let mut m = LmiBlock::new("M", vec![nx, nx, nd, ny]);
    filter_core(&mut m, plant, meas, 2);
    m.push(Term::new(0, 3, "Y", eye(nx), eye(ny)));
    m.push(Term::new(1, 3, "Y", eye(nx), eye(ny)));
    m.set_constant(2, 2, &scaled_eye(nd, -1.0));
    m.precision = Some(PrecisionSlot {
        sub_block: 3,
        coeff: 1.0,
    });

    let mut qn = LmiBlock::new("QN", vec![nz, nx, nx]);
    qn.push(Term::new(0, 0, "Q", scaled_eye(nz, -0.5), eye(nz)));
    qn.set_constant(0, 1, plant.c_z());
    qn.push(Term::new(0, 2, "N", eye(nz), eye(nx)));
    qn.push(Term::new(1, 1, "R", scaled_eye(nx, -0.5), eye(nx)));
    qn.push(Term::new(1, 2, "X", scaled_eye(nx, -1.0), eye(nx)));
    qn.push(Term::new(2, 2, "X", scaled_eye(nx, -0.5), eye(nx)));

    AffineLmiProgram::new(
        rho.to_vec(),
        vec![
            MatrixVarSpec::new("X", nx, nx, Structure::SymmetricPd),
            MatrixVarSpec::new("Y", nx, ny, Structure::General),
            MatrixVarSpec::new("P", nx, nx, Structure::General),
            MatrixVarSpec::new("Q", nz, nz, Structure::Symmetric),
            MatrixVarSpec::new("R", nx, nx, Structure::Symmetric),
            MatrixVarSpec::new("N", nz, nx, Structure::General),
        ],
        vec![m, x_minus_r(nx), trace_block(nz, gamma), qn],
        ProgramMeta {
            framework: Framework::H2,
            estimator: EstimatorKind::Filter,
            gamma,
        },
    )
}

/// Dispatches to the builder for `(framework, estimator)`.
pub fn build_program(
    framework: Framework,
    estimator: EstimatorKind,
    plant: &LtiPlant,
    meas: &MeasurementModel,
    rho: &[f64],
    gamma: f64,
) -> Result<AffineLmiProgram> {
    match (framework, estimator) {
        (Framework::Hinf, EstimatorKind::Observer) => build_hinf_observer(plant, meas, rho, gamma),
        (Framework::H2, EstimatorKind::Observer) => build_h2_observer(plant, meas, rho, gamma),
        (Framework::Hinf, EstimatorKind::Filter) => build_hinf_filter(plant, meas, rho, gamma),
        (Framework::H2, EstimatorKind::Filter) => build_h2_filter(plant, meas, rho, gamma),
    }
}
