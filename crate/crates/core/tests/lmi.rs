mod support;

use nalgebra::{DMatrix, DVector};
use precis_core::admm::{self, AdmmConfig};
use precis_core::lmi::*;
use precis_core::model::*;
use precis_core::Error;
use proptest::prelude::*;
use support::matrix;

/// Symmetric matrix from its upper block triangle; missing blocks are zero.
fn assemble(sizes: &[usize], upper: &[(usize, usize, DMatrix<f64>)]) -> DMatrix<f64> {
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let n: usize = sizes.iter().sum();
    let mut m = DMatrix::zeros(n, n);
    for (r, c, b) in upper {
        assert_eq!(b.shape(), (sizes[*r], sizes[*c]), "block ({r}, {c})");
        m.view_mut((offsets[*r], offsets[*c]), b.shape()).copy_from(b);
        if r != c {
            m.view_mut((offsets[*c], offsets[*r]), (b.ncols(), b.nrows()))
                .copy_from(&b.transpose());
        }
    }
    m
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    m + m.transpose()
}

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

fn diag(p: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(p))
}

/// Plant with nonzero `D_d` so every feedthrough term is exercised.
fn plant_with_feedthrough() -> (LtiPlant, MeasurementModel) {
    let (plant, catalog) = random_plant(5, 3, 2, 4).unwrap();
    let d = DMatrix::from_fn(4, 2, |i, j| 0.1 * (i as f64 + 1.0) - 0.3 * j as f64);
    let catalog = SensorCatalog::from_rows(&plant, &catalog.c_all(), &d, vec![1.0; 4], None).unwrap();
    let meas = assemble_measurement(&plant, &catalog, &SensorSubset::new([0, 2, 3])).unwrap();
    (plant, meas)
}

#[derive(Debug, Clone)]
struct Vars {
    p: Vec<f64>,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    pp: DMatrix<f64>,
    qf: DMatrix<f64>,
    qt: DMatrix<f64>,
    r: DMatrix<f64>,
    n: DMatrix<f64>,
}

fn vars_strategy(nx: usize, ny: usize, nz: usize) -> impl Strategy<Value = Vars> {
    (
        prop::collection::vec(0.1f64..5.0, ny),
        support::symmetric(nx),
        matrix(nx, ny),
        matrix(nx, nx),
        matrix(nz, nx),
        support::symmetric(nz),
        support::symmetric(nx),
        matrix(nz, nx),
    )
        .prop_map(|(p, x, y, pp, qf, qt, r, n)| Vars {
            p,
            x,
            y,
            pp,
            qf,
            qt,
            r,
            n,
        })
}

fn assignment(v: &Vars, trace_q: bool) -> Assignment {
    Assignment::new(v.p.clone())
        .with("X", v.x.clone())
        .with("Y", v.y.clone())
        .with("P", v.pp.clone())
        .with("Q", if trace_q { v.qt.clone() } else { v.qf.clone() })
        .with("R", v.r.clone())
        .with("N", v.n.clone())
}

fn check_block(
    prog: &AffineLmiProgram,
    name: &str,
    a: &Assignment,
    expected: &DMatrix<f64>,
) -> Result<(), TestCaseError> {
    let block = prog.blocks.iter().find(|b| b.name == name).expect("block present");
    let got = evaluate_block(block, a).unwrap();
    let err = (&got - expected).amax();
    prop_assert!(
        err <= 1e-12 * (1.0 + expected.amax()),
        "block {name}: deviation {err:e}"
    );
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hinf_observer_matches_hand_assembly(v in vars_strategy(3, 3, 3), gamma in 0.1f64..3.0) {
        let (plant, meas) = plant_with_feedthrough();
        let prog = build_hinf_observer(&plant, &meas, &[1.0; 3], gamma).unwrap();
        let (a, bd, cz, cy, dd) = (plant.a(), plant.b_d(), plant.c_z(), &meas.c_y, &meas.d_d);
        let expected = assemble(&[3, 2, 3, 3], &[
            (0, 0, sym(&(&v.x * a + &v.y * cy))),
            (0, 1, &v.x * bd + &v.y * dd),
            (0, 2, cz.transpose()),
            (0, 3, v.y.clone()),
            (1, 1, -eye(2) * gamma),
            (2, 2, -eye(3) * gamma),
            (3, 3, -diag(&v.p) * gamma),
        ]);
        prop_assert_eq!(prog.blocks.len(), 1);
        check_block(&prog, "M", &assignment(&v, false), &expected)?;
    }

    #[test]
    fn h2_observer_matches_hand_assembly(v in vars_strategy(3, 3, 3), gamma in 0.1f64..3.0) {
        let (plant, meas) = plant_with_feedthrough();
        let prog = build_h2_observer(&plant, &meas, &[1.0; 3], gamma).unwrap();
        let (a, bd, cz, cy, dd) = (plant.a(), plant.b_d(), plant.c_z(), &meas.c_y, &meas.d_d);
        let asg = assignment(&v, true);
        let m = assemble(&[3, 2, 3], &[
            (0, 0, sym(&(&v.x * a + &v.y * cy))),
            (0, 1, &v.x * bd + &v.y * dd),
            (0, 2, v.y.clone()),
            (1, 1, -eye(2)),
            (2, 2, -diag(&v.p)),
        ]);
        check_block(&prog, "M", &asg, &m)?;
        let qx = assemble(&[3, 3], &[(0, 0, -v.qt.clone()), (0, 1, cz.clone()), (1, 1, -v.x.clone())]);
        check_block(&prog, "QX", &asg, &qx)?;
        let tr = DMatrix::from_element(1, 1, v.qt.trace() - gamma * gamma);
        check_block(&prog, "trace", &asg, &tr)?;
        prop_assert_eq!(prog.blocks.len(), 3);
    }

    #[test]
    fn hinf_filter_matches_hand_assembly(v in vars_strategy(3, 3, 3), gamma in 0.1f64..3.0) {
        let (plant, meas) = plant_with_feedthrough();
        let prog = build_hinf_filter(&plant, &meas, &[1.0; 3], gamma).unwrap();
        let (a, bd, cz, cy, dd) = (plant.a(), plant.b_d(), plant.c_z(), &meas.c_y, &meas.d_d);
        let asg = assignment(&v, false);
        let m = assemble(&[3, 3, 3, 2, 3], &[
            (0, 0, sym(&(&v.r * a + &v.y * cy))),
            (0, 1, &v.pp + (&v.x * a + &v.y * cy).transpose()),
            (0, 2, cz.transpose()),
            (0, 3, &v.r * bd + &v.y * dd),
            (0, 4, v.y.clone()),
            (1, 1, sym(&v.pp)),
            (1, 2, -v.qf.transpose()),
            (1, 3, &v.x * bd + &v.y * dd),
            (1, 4, v.y.clone()),
            (2, 2, -eye(3) * gamma),
            (3, 3, -eye(2) * gamma),
            (4, 4, -diag(&v.p) * gamma),
        ]);
        check_block(&prog, "M", &asg, &m)?;
        check_block(&prog, "X-R", &asg, &(&v.x - &v.r))?;
        prop_assert_eq!(prog.blocks.len(), 2);
    }

    #[test]
    fn h2_filter_matches_hand_assembly(v in vars_strategy(3, 3, 3), gamma in 0.1f64..3.0) {
        let (plant, meas) = plant_with_feedthrough();
        let prog = build_h2_filter(&plant, &meas, &[1.0; 3], gamma).unwrap();
        let (a, bd, cz, cy, dd) = (plant.a(), plant.b_d(), plant.c_z(), &meas.c_y, &meas.d_d);
        let asg = assignment(&v, true);
        let m = assemble(&[3, 3, 2, 3], &[
            (0, 0, sym(&(&v.r * a + &v.y * cy))),
            (0, 1, &v.pp + (&v.x * a + &v.y * cy).transpose()),
            (0, 2, &v.r * bd + &v.y * dd),
            (0, 3, v.y.clone()),
            (1, 1, sym(&v.pp)),
            (1, 2, &v.x * bd + &v.y * dd),
            (1, 3, v.y.clone()),
            (2, 2, -eye(2)),
            (3, 3, -diag(&v.p)),
        ]);
        check_block(&prog, "M", &asg, &m)?;
        check_block(&prog, "X-R", &asg, &(&v.x - &v.r))?;
        let tr = DMatrix::from_element(1, 1, v.qt.trace() - gamma * gamma);
        check_block(&prog, "trace", &asg, &tr)?;
        let qn = assemble(&[3, 3, 3], &[
            (0, 0, -v.qt.clone()),
            (0, 1, cz.clone()),
            (0, 2, v.n.clone()),
            (1, 1, -v.r.clone()),
            (1, 2, -v.x.clone()),
            (2, 2, -v.x.clone()),
        ]);
        check_block(&prog, "QN", &asg, &qn)?;
        prop_assert_eq!(prog.blocks.len(), 4);
    }

    #[test]
    fn blocks_are_affine_and_symmetric(
        v1 in vars_strategy(3, 3, 3),
        v2 in vars_strategy(3, 3, 3),
        kind in 0usize..4,
    ) {
        let (plant, meas) = plant_with_feedthrough();
        let (framework, estimator) = [
            (Framework::Hinf, EstimatorKind::Observer),
            (Framework::H2, EstimatorKind::Observer),
            (Framework::Hinf, EstimatorKind::Filter),
            (Framework::H2, EstimatorKind::Filter),
        ][kind];
        let prog = build_program(framework, estimator, &plant, &meas, &[1.0; 3], 0.7).unwrap();
        let trace_q = framework == Framework::H2;
        let (a1, a2) = (assignment(&v1, trace_q), assignment(&v2, trace_q));
        let mut sum = Assignment::new(v1.p.iter().zip(&v2.p).map(|(a, b)| a + b).collect());
        let mut zero = Assignment::new(vec![0.0; 3]);
        for name in a1.names().map(str::to_owned).collect::<Vec<_>>() {
            if let Some(spec) = prog.var(&name) {
                sum.set(&name, a1.get(&name).unwrap() + a2.get(&name).unwrap());
                zero.set(&name, DMatrix::zeros(spec.rows, spec.cols));
            }
        }
        for b in &prog.blocks {
            let e0 = evaluate_block(b, &zero).unwrap();
            let e1 = evaluate_block(b, &a1).unwrap();
            let e2 = evaluate_block(b, &a2).unwrap();
            let es = evaluate_block(b, &sum).unwrap();
            let lhs = &es - &e0;
            let rhs = (&e1 - &e0) + (&e2 - &e0);
            prop_assert!((&lhs - &rhs).amax() <= 1e-11 * (1.0 + lhs.amax()));
            for e in [&e1, &e2, &es] {
                prop_assert!((e - e.transpose()).amax() <= 1e-12 * (1.0 + e.amax()));
            }
        }
    }
}

fn example1_program(ids: &[usize]) -> (AffineLmiProgram, LtiPlant) {
    let (plant, catalog) = example1_plant();
    let meas = assemble_measurement(&plant, &catalog, &SensorSubset::new(ids.iter().copied())).unwrap();
    (
        build_hinf_observer(&plant, &meas, &vec![1.0; ids.len()], 0.5).unwrap(),
        plant,
    )
}

#[test]
fn zero_assignment_is_constant_part() {
    let (prog, _) = example1_program(&[0, 1, 2, 3]);
    let zero = Assignment::zeros(&prog);
    let m = evaluate_block(&prog.blocks[0], &zero).unwrap();
    let mut expected = DMatrix::zeros(14, 14);
    expected.view_mut((0, 6), (4, 4)).copy_from(&eye(4));
    expected.view_mut((6, 0), (4, 4)).copy_from(&eye(4));
    expected.view_mut((4, 4), (6, 6)).copy_from(&(-eye(6) * 0.5));
    assert_eq!(m, expected);
}

#[test]
fn missing_variable_is_reported() {
    let (prog, _) = example1_program(&[0, 3]);
    let a = Assignment::new(vec![1.0, 1.0]).with("X", eye(4));
    assert_eq!(evaluate_block(&prog.blocks[0], &a), Err(Error::Assignment("Y".into())));
}

#[test]
fn certify_rejects_floor_precisions() {
    let (prog, _) = example1_program(&[0, 1, 2, 3]);
    let a = Assignment::new(vec![1e-6; 4])
        .with("X", eye(4))
        .with("Y", DMatrix::zeros(4, 4));
    let cert = certify(&prog, &a, MARGIN_TOL);
    assert!(!cert.feasible);
    // The (x, z) coupling C_zᵀ = I against −γI makes the block indefinite.
    let m = evaluate_block(&prog.blocks[0], &a).unwrap();
    let top = nalgebra::SymmetricEigen::new(m).eigenvalues.max();
    assert!(cert.block_lambda_max[0] > 0.0);
    assert!((cert.block_lambda_max[0] - top).abs() < 1e-10);
}

#[test]
fn certify_is_strict() {
    // Block value exactly −margin: rejected at that margin, accepted below it.
    let mut b = LmiBlock::new("c", vec![1]);
    b.constant[(0, 0)] = -1e-3;
    let prog = AffineLmiProgram::new(
        vec![1.0],
        vec![MatrixVarSpec::new("X", 1, 1, Structure::SymmetricPd)],
        vec![b],
        ProgramMeta {
            framework: Framework::Hinf,
            estimator: EstimatorKind::Observer,
            gamma: 1.0,
        },
    )
    .unwrap();
    let a = Assignment::new(vec![1.0]).with("X", eye(1));
    assert!(!certify(&prog, &a, 1e-3).feasible);
    assert!(certify(&prog, &a, 0.0).feasible);
    let mut boundary = prog.clone();
    boundary.blocks[0].constant[(0, 0)] = 0.0;
    assert!(!certify(&boundary, &a, 0.0).feasible);
    let low = Assignment::new(vec![1.0]).with("X", eye(1) * 1e-9);
    assert!(!certify(&prog, &low, 0.0).feasible);
}

#[test]
fn certify_after_first_tighten_step_on_example1() {
    let (prog, _) = example1_program(&[0, 1, 2, 3]);
    let solved = admm::solve(&prog, &AdmmConfig::default()).unwrap();
    let mut a = solved.assignment.clone();
    for p in a.p.iter_mut() {
        *p *= 1.0 + precis_core::estimator::DELTA_START;
    }
    let cert = certify(&prog, &a, MARGIN_TOL);
    assert!(cert.feasible, "margin {:e}", cert.margin);
    assert!(cert.block_lambda_max[0] < 0.0);
    assert!((prog.objective(&a.p) - 14.0).abs() <= 0.03 * 14.0);
}

#[test]
fn builder_rejects_bad_inputs() {
    let (plant, catalog) = example1_plant();
    let meas = assemble_measurement(&plant, &catalog, &SensorSubset::new([0, 1])).unwrap();
    assert!(matches!(
        build_hinf_observer(&plant, &meas, &[1.0], 0.5),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        build_h2_filter(&plant, &meas, &[1.0, 1.0], 0.0),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        build_h2_observer(&plant, &meas, &[1.0, -1.0], 1.0),
        Err(Error::InvalidArgument(_))
    ));
}
