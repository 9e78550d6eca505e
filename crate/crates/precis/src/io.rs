//! Plant and design-result files.
//!
//! A plant file is a [`Document`] with matrices `A`, `B_d`, `C_z` and `C`
//! (one row per sensor), an optional `D` (defaults to zero), and optional
//! `weights` and `labels` lines with one value per sensor:
//!
//! ```text
//! matrix A
//! 2 2
//! 0 1
//! -2 -2
//! matrix B_d
//! 2 1
//! 0
//! 1
//! matrix C_z
//! 1 2
//! 1 0
//! matrix C
//! 2 2
//! 1 0
//! 0 1
//! weights 1 2
//! ```
//!
//! Sensor ids in result files are 1-based, like everywhere a user sees them.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use precis_core::estimator::{Estimator, EstimatorResult, GainSource};
use precis_core::lmi::{EstimatorKind, Framework};
use precis_core::model::{LtiPlant, SensorCatalog, SensorSubset};

use crate::error::{Error, Result};
use crate::text::{Document, DocumentWriter, ParseError};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_path<T>(path: &Path, r: std::result::Result<T, ParseError>) -> Result<T> {
    r.map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn check_shape(
    line: usize,
    name: &str,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> std::result::Result<(), ParseError> {
    if m.shape() == (rows, cols) {
        Ok(())
    } else {
        Err(ParseError::new(
            line,
            format!("`{name}` is {}x{}, expected {rows}x{cols}", m.nrows(), m.ncols()),
        ))
    }
}

/// Parses plant file text.
pub fn parse_plant(text: &str) -> std::result::Result<(LtiPlant, SensorCatalog), ParseError> {
    let doc = Document::parse(text)?;
    for name in doc.names() {
        if !matches!(name, "A" | "B_d" | "C_z" | "C" | "D" | "weights" | "labels") {
            let line = doc.get(name).map_or(0, |e| e.line);
            return Err(ParseError::new(line, format!("unknown entry `{name}`")));
        }
    }
    let (la, a) = doc.require_matrix("A")?;
    let nx = a.nrows();
    if nx == 0 || !a.is_square() {
        return Err(ParseError::new(
            la,
            format!("`A` must be square and non-empty, found {}x{}", a.nrows(), a.ncols()),
        ));
    }
    let (lb, b_d) = doc.require_matrix("B_d")?;
    if b_d.nrows() != nx || b_d.ncols() == 0 {
        return Err(ParseError::new(
            lb,
            format!("`B_d` must have {nx} rows and at least one column"),
        ));
    }
    let nd = b_d.ncols();
    let (lz, c_z) = doc.require_matrix("C_z")?;
    if c_z.ncols() != nx || c_z.nrows() == 0 {
        return Err(ParseError::new(
            lz,
            format!("`C_z` must have {nx} columns and at least one row"),
        ));
    }
    let (lc, c) = doc.require_matrix("C")?;
    if c.ncols() != nx || c.nrows() == 0 {
        return Err(ParseError::new(
            lc,
            format!("`C` must have {nx} columns and at least one row"),
        ));
    }
    let ns = c.nrows();
    let d = match doc.matrix("D")? {
        Some((ld, d)) => {
            check_shape(ld, "D", d, ns, nd)?;
            d.clone()
        }
        None => DMatrix::zeros(ns, nd),
    };
    let weights = match doc.f64_list("weights")? {
        Some(w) => {
            let line = doc.get("weights").map_or(0, |e| e.line);
            if w.len() != ns {
                return Err(ParseError::new(line, format!("{} weights for {ns} sensors", w.len())));
            }
            if let Some(bad) = w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(ParseError::new(line, format!("weight {bad} is not positive")));
            }
            w
        }
        None => vec![1.0; ns],
    };
    let labels = match doc.scalar("labels")? {
        Some((line, l)) => {
            if l.len() != ns {
                return Err(ParseError::new(line, format!("{} labels for {ns} sensors", l.len())));
            }
            Some(l.to_vec())
        }
        None => None,
    };
    let plant = LtiPlant::new(a.clone(), b_d.clone(), c_z.clone()).map_err(|e| ParseError::new(la, e.to_string()))?;
    let catalog =
        SensorCatalog::from_rows(&plant, c, &d, weights, labels).map_err(|e| ParseError::new(lc, e.to_string()))?;
    Ok((plant, catalog))
}

pub fn read_plant(path: &Path) -> Result<(LtiPlant, SensorCatalog)> {
    let text = read_text(path)?;
    with_path(path, parse_plant(&text))
}

pub fn format_plant(plant: &LtiPlant, catalog: &SensorCatalog) -> String {
    let mut w = DocumentWriter::new();
    w.matrix("A", plant.a())
        .matrix("B_d", plant.b_d())
        .matrix("C_z", plant.c_z())
        .matrix("C", &catalog.c_all())
        .matrix("D", &catalog.d_all())
        .floats("weights", catalog.weights())
        .list("labels", catalog.sensors().iter().map(|s| s.label.as_str()));
    w.finish()
}

pub fn framework_name(f: Framework) -> &'static str {
    match f {
        Framework::H2 => "h2",
        Framework::Hinf => "hinf",
    }
}

pub fn estimator_name(e: EstimatorKind) -> &'static str {
    match e {
        EstimatorKind::Observer => "observer",
        EstimatorKind::Filter => "filter",
    }
}

pub fn parse_framework(s: &str) -> Option<Framework> {
    match s.to_ascii_lowercase().as_str() {
        "h2" => Some(Framework::H2),
        "hinf" | "h-inf" | "hinfinity" => Some(Framework::Hinf),
        _ => None,
    }
}

pub fn parse_estimator(s: &str) -> Option<EstimatorKind> {
    match s.to_ascii_lowercase().as_str() {
        "observer" => Some(EstimatorKind::Observer),
        "filter" => Some(EstimatorKind::Filter),
        _ => None,
    }
}

/// 1-based display form of a subset.
pub fn user_ids(subset: &SensorSubset) -> Vec<usize> {
    subset.ids().iter().map(|i| i + 1).collect()
}

/// The parts of a design result that `verify` needs.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDesign {
    pub framework: Framework,
    pub estimator_kind: EstimatorKind,
    pub gamma: f64,
    pub subset: SensorSubset,
    pub p: Vec<f64>,
    pub estimator: Estimator,
    pub norm: f64,
}

pub fn format_result(r: &EstimatorResult) -> String {
    let d = &r.diagnostics;
    let mut w = DocumentWriter::new();
    w.scalar("framework", framework_name(r.spec.framework))
        .scalar("estimator", estimator_name(r.spec.estimator))
        .floats("gamma", &[r.spec.gamma])
        .list("subset", user_ids(&r.spec.subset))
        .floats("rho", &r.spec.rho)
        .floats("p", r.p.values())
        .floats("objective", &[r.objective])
        .floats("norm", &[r.norm])
        .scalar("certified", r.certified)
        .floats("delta", &[r.delta])
        .scalar(
            "gain",
            match r.gain {
                GainSource::Recovered => "recovered",
                GainSource::Riccati => "riccati",
            },
        )
        .scalar("status", format!("{:?}", d.status).to_ascii_lowercase())
        .scalar("iterations", d.iterations)
        .floats("primal_residual", &[d.primal])
        .floats("dual_residual", &[d.dual])
        .floats("raw_objective", &[d.raw_objective])
        .floats("lmi_margin", &[d.lmi_margin]);
    match &r.estimator {
        Estimator::Observer { l } => {
            w.matrix("L", l);
        }
        Estimator::Filter { a_f, b_f, c_f } => {
            w.matrix("A_F", a_f).matrix("B_F", b_f).matrix("C_F", c_f);
        }
    }
    w.finish()
}

pub fn parse_result(text: &str) -> std::result::Result<StoredDesign, ParseError> {
    let doc = Document::parse(text)?;
    let (lf, f) = doc.require_word("framework")?;
    let framework = parse_framework(f).ok_or_else(|| ParseError::new(lf, format!("unknown framework `{f}`")))?;
    let (le, e) = doc.require_word("estimator")?;
    let estimator_kind = parse_estimator(e).ok_or_else(|| ParseError::new(le, format!("unknown estimator `{e}`")))?;
    let gamma = doc.require_f64("gamma")?;
    let (ls, ids) = doc.require_scalar("subset")?;
    let mut members = Vec::with_capacity(ids.len());
    for t in ids {
        match t.parse::<usize>() {
            Ok(i) if i >= 1 => members.push(i - 1),
            _ => {
                return Err(ParseError::new(
                    ls,
                    format!("sensor id `{t}` is not a positive integer"),
                ))
            }
        }
    }
    let subset = SensorSubset::new(members);
    if subset.len() != ids.len() {
        return Err(ParseError::new(ls, "duplicate sensor id"));
    }
    let p = doc.require_f64_list("p")?;
    if p.len() != subset.len() {
        let line = doc.get("p").map_or(0, |e| e.line);
        return Err(ParseError::new(
            line,
            format!("{} precisions for {} sensors", p.len(), subset.len()),
        ));
    }
    let norm = doc.require_f64("norm")?;
    let estimator = match estimator_kind {
        EstimatorKind::Observer => Estimator::Observer {
            l: doc.require_matrix("L")?.1.clone(),
        },
        EstimatorKind::Filter => Estimator::Filter {
            a_f: doc.require_matrix("A_F")?.1.clone(),
            b_f: doc.require_matrix("B_F")?.1.clone(),
            c_f: doc.require_matrix("C_F")?.1.clone(),
        },
    };
    Ok(StoredDesign {
        framework,
        estimator_kind,
        gamma,
        subset,
        p,
        estimator,
        norm,
    })
}

pub fn read_result(path: &Path) -> Result<StoredDesign> {
    let text = read_text(path)?;
    with_path(path, parse_result(&text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use precis_core::model;

    #[test]
    fn plant_round_trip() {
        let (plant, catalog) = model::random_plant(3, 3, 2, 4).unwrap();
        let (p2, c2) = parse_plant(&format_plant(&plant, &catalog)).unwrap();
        assert_eq!(p2, plant);
        assert_eq!(c2, catalog);
    }

    #[test]
    fn plant_errors_name_the_line() {
        let text = "matrix A\n1 1\n-1\nmatrix B_d\n2 1\n1\n1\nmatrix C_z\n1 1\n1\nmatrix C\n1 1\n1\n";
        let err = parse_plant(text).unwrap_err();
        assert_eq!(err.line, 4);
        assert!(err.message.contains("B_d"));

        let text = "matrix A\n1 1\n-1\nmatrix B_d\n1 1\n1\nmatrix C_z\n1 1\n1\nmatrix C\n1 1\n1\nweights 1 2\n";
        assert_eq!(parse_plant(text).unwrap_err().line, 13);

        let text = "matrix A\n1 1\n-1\nmatrix B_d\n1 1\n1\nmatrix C_z\n1 1\n1\nmatrix Cy\n1 1\n1\n";
        assert!(parse_plant(text).unwrap_err().message.contains("unknown entry"));
    }

    #[test]
    fn missing_matrix_is_reported() {
        let err = parse_plant("matrix A\n1 1\n-1\n").unwrap_err();
        assert!(err.message.contains("B_d"));
    }

    #[test]
    fn framework_and_estimator_names_round_trip() {
        for f in [Framework::H2, Framework::Hinf] {
            assert_eq!(parse_framework(framework_name(f)), Some(f));
        }
        for e in [EstimatorKind::Observer, EstimatorKind::Filter] {
            assert_eq!(parse_estimator(estimator_name(e)), Some(e));
        }
        assert_eq!(parse_framework("h3"), None);
    }
}
