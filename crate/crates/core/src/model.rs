//! Plants, sensor catalogs and sensor subsets.
//!
//! A plant is `ẋ = A x + B_d d`, `z = C_z x`. Each catalog sensor `i`
//! measures `y_i = C_i x + D_i d + σ_i n_i`, where the noise scale `σ_i` is
//! the design unknown (its precision is `p_i = 1/σ_i²`).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix, DVector, RowDVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

/// Continuous LTI plant.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    a: DMatrix<f64>,
    b_d: DMatrix<f64>,
    c_z: DMatrix<f64>,
}

impl LtiPlant {
    pub fn new(a: DMatrix<f64>, b_d: DMatrix<f64>, c_z: DMatrix<f64>) -> Result<Self> {
        let nx = a.nrows();
        if nx == 0 || !a.is_square() {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b_d.nrows() != nx || b_d.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B_d must be {nx}xN_d with N_d >= 1, got {}x{}",
                b_d.nrows(),
                b_d.ncols()
            )));
        }
        if c_z.ncols() != nx || c_z.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "C_z must be N_zx{nx} with N_z >= 1, got {}x{}",
                c_z.nrows(),
                c_z.ncols()
            )));
        }
        if a.iter().chain(b_d.iter()).chain(c_z.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "plant matrices contain non-finite entries".into(),
            ));
        }
        Ok(Self { a, b_d, c_z })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_d(&self) -> &DMatrix<f64> {
        &self.b_d
    }

    pub fn c_z(&self) -> &DMatrix<f64> {
        &self.c_z
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nd(&self) -> usize {
        self.b_d.ncols()
    }

    pub fn nz(&self) -> usize {
        self.c_z.nrows()
    }
}

/// One candidate sensor: `y = C_i x + D_i d + σ n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorDef {
    pub id: usize,
    pub c: RowDVector<f64>,
    pub d: RowDVector<f64>,
    pub label: String,
}

/// The candidate set `S` with per-sensor cost weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorCatalog {
    sensors: Vec<SensorDef>,
    weights: Vec<f64>,
}

impl SensorCatalog {
    /// Builds a catalog whose sensors are the rows of `c` and `d`; ids are
    /// row indices.
    pub fn from_rows(
        plant: &LtiPlant,
        c: &DMatrix<f64>,
        d: &DMatrix<f64>,
        weights: Vec<f64>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if c.nrows() != d.nrows() {
            return Err(Error::Dimension(format!(
                "C rows ({}) and D rows ({}) differ",
                c.nrows(),
                d.nrows()
            )));
        }
        let sensors = (0..c.nrows())
            .map(|i| SensorDef {
                id: i,
                c: c.row(i).into_owned(),
                d: d.row(i).into_owned(),
                label: labels
                    .as_ref()
                    .and_then(|l| l.get(i).cloned())
                    .unwrap_or_else(|| format!("s{}", i + 1)),
            })
            .collect();
        Self::new(plant, sensors, weights)
    }

    pub fn new(plant: &LtiPlant, sensors: Vec<SensorDef>, weights: Vec<f64>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidArgument("sensor catalog is empty".into()));
        }
        if weights.len() != sensors.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} sensors",
                weights.len(),
                sensors.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("sensor weight {w} is not positive")));
        }
        for (k, s) in sensors.iter().enumerate() {
            if s.id != k {
                return Err(Error::InvalidArgument(format!(
                    "sensor ids must be 0..N_S-1 in order, found {} at position {k}",
                    s.id
                )));
            }
            if s.c.len() != plant.nx() || s.d.len() != plant.nd() {
                return Err(Error::Dimension(format!(
                    "sensor {k}: C_i has {} columns (want {}), D_i has {} (want {})",
                    s.c.len(),
                    plant.nx(),
                    s.d.len(),
                    plant.nd()
                )));
            }
        }
        Ok(Self { sensors, weights })
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn sensors(&self) -> &[SensorDef] {
        &self.sensors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Same sensors with different weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} sensors",
                weights.len(),
                self.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!("sensor weight {w} is not positive")));
        }
        Ok(Self {
            sensors: self.sensors.clone(),
            weights,
        })
    }

    /// Stacked `C_i` rows for every catalog sensor.
    pub fn c_all(&self) -> DMatrix<f64> {
        let rows: Vec<_> = self.sensors.iter().map(|s| s.c.clone()).collect();
        DMatrix::from_rows(&rows)
    }

    /// Stacked `D_i` rows for every catalog sensor.
    pub fn d_all(&self) -> DMatrix<f64> {
        let rows: Vec<_> = self.sensors.iter().map(|s| s.d.clone()).collect();
        DMatrix::from_rows(&rows)
    }
}

/// A set of catalog ids, always kept sorted and free of duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SensorSubset(Vec<usize>);

impl SensorSubset {
    pub fn new(ids: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = ids.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// `{0, …, n-1}`.
    pub fn full(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn without(&self, id: usize) -> Self {
        Self(self.0.iter().copied().filter(|&x| x != id).collect())
    }

    pub fn union(&self, other: &Self) -> Self {
        Self::new(self.0.iter().chain(other.0.iter()).copied())
    }

    pub fn intersection(&self, other: &Self) -> Self {
        Self(self.0.iter().copied().filter(|&x| other.contains(x)).collect())
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.0.iter().all(|&x| other.contains(x))
    }

    /// Position of `id` within the subset (the row of `C_y` it owns).
    pub fn position(&self, id: usize) -> Option<usize> {
        self.0.binary_search(&id).ok()
    }
}

impl FromIterator<usize> for SensorSubset {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self::new(iter)
    }
}

/// Compact measurement model of a subset: `y = C_y x + D_d d + diag(σ) n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub c_y: DMatrix<f64>,
    pub d_d: DMatrix<f64>,
    pub subset: SensorSubset,
}

impl MeasurementModel {
    pub fn ny(&self) -> usize {
        self.c_y.nrows()
    }
}

/// Sensor precisions `p_i = 1/σ_i²`, bounded below by a positive floor.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionVector(Vec<f64>);

impl PrecisionVector {
    pub fn new(values: Vec<f64>, floor: f64) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= floor && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "precision {v} is below the floor {floor:e}"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Noise scales `σ_i = 1/√p_i`.
    pub fn sigma(&self) -> Vec<f64> {
        self.0.iter().map(|p| 1.0 / p.sqrt()).collect()
    }

    pub fn weighted_l1(&self, weights: &[f64]) -> f64 {
        self.0.iter().zip(weights).map(|(p, w)| p * w).sum()
    }
}

/// Stack the rows of the subset's sensors in ascending id order.
pub fn assemble_measurement(
    plant: &LtiPlant,
    catalog: &SensorCatalog,
    subset: &SensorSubset,
) -> Result<MeasurementModel> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    if let Some(&id) = subset.ids().iter().find(|&&id| id >= catalog.len()) {
        return Err(Error::InvalidSensor { id, len: catalog.len() });
    }
    let ny = subset.len();
    let mut c_y = DMatrix::zeros(ny, plant.nx());
    let mut d_d = DMatrix::zeros(ny, plant.nd());
    for (row, &id) in subset.ids().iter().enumerate() {
        let s = &catalog.sensors()[id];
        c_y.set_row(row, &s.c);
        d_d.set_row(row, &s.d);
    }
    Ok(MeasurementModel {
        c_y,
        d_d,
        subset: subset.clone(),
    })
}

/// `B_w = [B_d 0]`, `D_w = [D_d diag(σ)]`.
pub fn augment_disturbance(
    plant: &LtiPlant,
    meas: &MeasurementModel,
    sigma: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ny = meas.ny();
    if sigma.len() != ny {
        return Err(Error::Dimension(format!(
            "{} noise scales for {ny} measurements",
            sigma.len()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::InvalidArgument(format!("noise scale {s} is not positive")));
    }
    let (nx, nd) = (plant.nx(), plant.nd());
    let mut b_w = DMatrix::zeros(nx, nd + ny);
    b_w.view_mut((0, 0), (nx, nd)).copy_from(plant.b_d());
    let mut d_w = DMatrix::zeros(ny, nd + ny);
    d_w.view_mut((0, 0), (ny, nd)).copy_from(&meas.d_d);
    for (k, &s) in sigma.iter().enumerate() {
        d_w[(k, nd + k)] = s;
    }
    Ok((b_w, d_w))
}

fn identity_catalog(plant: &LtiPlant) -> SensorCatalog {
    let nx = plant.nx();
    SensorCatalog::from_rows(
        plant,
        &DMatrix::identity(nx, nx),
        &DMatrix::zeros(nx, plant.nd()),
        alloc::vec![1.0; nx],
        None,
    )
    .expect("identity catalog matches plant dimensions")
}

/// Chain of `M` unit masses, springs and dampers between two walls.
///
/// States are positions then velocities; one sensor per state.
pub fn spring_mass_plant(masses: usize) -> Result<(LtiPlant, SensorCatalog)> {
    if masses == 0 {
        return Err(Error::InvalidArgument(
            "spring-mass chain needs at least one mass".into(),
        ));
    }
    let m = masses;
    let h = DMatrix::from_fn(m, m, |i, j| match i.abs_diff(j) {
        0 => -2.0,
        1 => 1.0,
        _ => 0.0,
    });
    let mut a = DMatrix::zeros(2 * m, 2 * m);
    a.view_mut((0, m), (m, m)).fill_with_identity();
    a.view_mut((m, 0), (m, m)).copy_from(&h);
    a.view_mut((m, m), (m, m)).copy_from(&h);
    let mut b_d = DMatrix::zeros(2 * m, m);
    b_d.view_mut((m, 0), (m, m)).fill_with_identity();
    let plant = LtiPlant::new(a, b_d, DMatrix::identity(2 * m, 2 * m))?;
    let catalog = identity_catalog(&plant);
    Ok((plant, catalog))
}

/// The four-state, two-disturbance plant used to show that the cost is not
/// submodular; sensor `s_i` measures state `i`.
pub fn example1_plant() -> (LtiPlant, SensorCatalog) {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            -2.0, 1.0, -1.0, 0.0, //
            1.0, -2.0, 0.0, -1.0,
        ],
    );
    let b_d = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    let plant = LtiPlant::new(a, b_d, DMatrix::identity(4, 4)).expect("static dimensions");
    let catalog = identity_catalog(&plant);
    (plant, catalog)
}

/// Smallest distance between the random plant spectrum and the imaginary axis.
pub const RANDOM_PLANT_MARGIN: f64 = 0.1;

/// Seeded random stable plant.
///
/// The spectrum is drawn with real parts uniform in `[-2, -0.1]`; each
/// remaining pair of slots becomes a complex-conjugate pair with probability
/// one half, imaginary part uniform in `[-1, 1]`. The real block-diagonal
/// form is conjugated by a random orthogonal matrix (QR of a Gaussian
/// matrix). `B_d` and every `C_i` are standard normal, `D_i = 0`, `C_z = I`.
pub fn random_plant(seed: u64, nx: usize, nd: usize, ns: usize) -> Result<(LtiPlant, SensorCatalog)> {
    if nx == 0 || nd == 0 || ns == 0 {
        return Err(Error::InvalidArgument(
            "random plant dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut d = DMatrix::zeros(nx, nx);
    let mut k = 0;
    while k < nx {
        let re = rng.random_range(-2.0..=-RANDOM_PLANT_MARGIN);
        if nx - k >= 2 && rng.random_bool(0.5) {
            let im = rng.random_range(-1.0..=1.0);
            d[(k, k)] = re;
            d[(k + 1, k + 1)] = re;
            d[(k, k + 1)] = im;
            d[(k + 1, k)] = -im;
            k += 2;
        } else {
            d[(k, k)] = re;
            k += 1;
        }
    }
    let g = DMatrix::from_fn(nx, nx, |_, _| normal(&mut rng));
    let q = g.qr().q();
    let a = &q * d * q.transpose();

    let b_d = DMatrix::from_fn(nx, nd, |_, _| normal(&mut rng));
    let c = DMatrix::from_fn(ns, nx, |_, _| normal(&mut rng));
    let plant = LtiPlant::new(a, b_d, DMatrix::identity(nx, nx))?;
    let catalog = SensorCatalog::from_rows(&plant, &c, &DMatrix::zeros(ns, nd), alloc::vec![1.0; ns], None)?;
    Ok((plant, catalog))
}

/// Hautus test: `rank [λI − A; C_y] = N_x` for every eigenvalue with
/// non-negative real part.
pub fn hautus_detectable(a: &DMatrix<f64>, c_y: &DMatrix<f64>) -> bool {
    let nx = a.nrows();
    let ny = c_y.nrows();
    for lambda in linalg::eigenvalues(a) {
        if lambda.re < -1e-9 {
            continue;
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(nx + ny, nx);
        for i in 0..nx {
            for j in 0..nx {
                let diag = if i == j { lambda } else { Complex::new(0.0, 0.0) };
                m[(i, j)] = diag - Complex::new(a[(i, j)], 0.0);
            }
        }
        for i in 0..ny {
            for j in 0..nx {
                m[(nx + i, j)] = Complex::new(c_y[(i, j)], 0.0);
            }
        }
        let sv: DVector<f64> = m.singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let rank = sv.iter().filter(|&&s| s > 1e-9 * smax.max(1.0)).count();
        if rank < nx {
            return false;
        }
    }
    true
}
