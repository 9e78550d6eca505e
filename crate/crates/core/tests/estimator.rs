mod support;

use nalgebra::{dmatrix, DMatrix};
use precis_core::admm::AdmmConfig;
use precis_core::estimator::*;
use precis_core::lmi::{Assignment, EstimatorKind, Framework};
use precis_core::model::*;
use precis_core::Error;
use proptest::prelude::*;
use support::{gain_at, golden_min, h2_oracle, hinf_oracle, is_hurwitz};

fn scalar_plant() -> (LtiPlant, SensorCatalog) {
    let plant = LtiPlant::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
    let catalog = SensorCatalog::from_rows(&plant, &dmatrix![1.0], &dmatrix![0.0], vec![1.0], None).unwrap();
    (plant, catalog)
}

fn spec(catalog: &SensorCatalog, framework: Framework, kind: EstimatorKind, gamma: f64, ids: &[usize]) -> DesignSpec {
    DesignSpec::from_catalog(catalog, framework, kind, gamma, SensorSubset::new(ids.iter().copied()))
}

fn gain(est: &Estimator) -> &DMatrix<f64> {
    match est {
        Estimator::Observer { l } => l,
        Estimator::Filter { .. } => panic!("expected an observer"),
    }
}

#[test]
fn first_order_norms() {
    let sys = ErrorSystem {
        a: dmatrix![-1.0],
        b: dmatrix![1.0],
        c: dmatrix![1.0],
    };
    assert!((hinf_norm(&sys, 1e-9).unwrap() - 1.0).abs() < 1e-8);
    assert!((h2_norm(&sys).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    let mute = ErrorSystem {
        c: dmatrix![0.0],
        ..sys.clone()
    };
    assert_eq!(hinf_norm(&mute, 1e-9).unwrap(), 0.0);
    assert_eq!(h2_norm(&mute).unwrap(), 0.0);
    let unstable = ErrorSystem {
        a: dmatrix![0.5],
        ..sys
    };
    assert!(matches!(hinf_norm(&unstable, 1e-9), Err(Error::Unstable { .. })));
}

/// `‖G‖₂² = (1/π)∫₀^∞ |G(jω)|² dω`, integrated with Simpson's rule after `ω = tan θ`.
#[test]
fn h2_norm_matches_quadrature() {
    let a = dmatrix![-0.7, 1.3, 0.0; -1.3, -0.7, 0.4; 0.2, 0.0, -2.1];
    let b = dmatrix![1.0; 0.5; -1.0];
    let c = dmatrix![0.3, -1.0, 2.0];
    let n = 20_000;
    let h = std::f64::consts::FRAC_PI_2 / n as f64;
    let f = |k: usize| {
        if k == n {
            return 0.0;
        }
        let theta = k as f64 * h;
        gain_at(&a, &b, &c, theta.tan()).powi(2) / theta.cos().powi(2)
    };
    let mut sum = f(0) + f(n);
    for k in 1..n {
        sum += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k);
    }
    let quad = (sum * h / 3.0 / std::f64::consts::PI).sqrt();
    let got = h2_norm(&ErrorSystem { a, b, c }).unwrap();
    assert!((got - quad).abs() <= 5e-3 * quad, "{got} vs {quad}");
}

#[test]
fn recover_examples() {
    let (_, catalog) = example1_plant();
    let s = spec(&catalog, Framework::Hinf, EstimatorKind::Observer, 0.5, &[0, 1]);
    let y = DMatrix::from_fn(4, 2, |i, j| (i + 2 * j) as f64 - 1.5);
    let a = Assignment::new(vec![1.0, 1.0])
        .with("X", DMatrix::identity(4, 4))
        .with("Y", y.clone());
    assert_eq!(gain(&recover(&a, &s).unwrap()), &y);
    let a = Assignment::new(vec![1.0, 1.0])
        .with("X", DMatrix::identity(4, 4) * 2.0)
        .with("Y", DMatrix::identity(4, 2));
    assert!((gain(&recover(&a, &s).unwrap()) - DMatrix::identity(4, 2) * 0.5).amax() < 1e-15);
    let x = DMatrix::from_diagonal(&nalgebra::dvector![1.0, 1.0, 1.0, 1e-13]);
    let a = Assignment::new(vec![1.0, 1.0]).with("X", x).with("Y", y);
    assert!(matches!(recover(&a, &s), Err(Error::Recovery(_))));
}

#[test]
fn error_system_layouts() {
    let (plant, catalog) = example1_plant();
    let meas = assemble_measurement(&plant, &catalog, &SensorSubset::new([0, 2])).unwrap();
    let zero = Estimator::Observer {
        l: DMatrix::zeros(4, 2),
    };
    let sys = error_system(&plant, &meas, &zero, &[4.0, 1.0]).unwrap();
    assert_eq!(&sys.a, plant.a());
    assert_eq!(sys.b.columns(0, 2).into_owned(), plant.b_d().clone());
    assert_eq!(sys.b.ncols(), 4);
    assert_eq!(&sys.c, plant.c_z());

    let l = DMatrix::from_fn(4, 2, |i, j| 0.1 * (i as f64 - j as f64));
    let sys = error_system(&plant, &meas, &Estimator::Observer { l: l.clone() }, &[4.0, 1.0]).unwrap();
    assert_eq!(sys.a, plant.a() + &l * &meas.c_y);
    // Noise columns scaled by σ = 1/√p.
    assert!((sys.b.column(2) - l.column(0) * 0.5).amax() < 1e-15);
    assert!((sys.b.column(3) - l.column(1)).amax() < 1e-15);

    let filter = Estimator::Filter {
        a_f: -DMatrix::identity(3, 3),
        b_f: DMatrix::from_element(3, 2, 1.0),
        c_f: DMatrix::from_element(4, 3, 0.5),
    };
    let sys = error_system(&plant, &meas, &filter, &[1.0, 1.0]).unwrap();
    assert_eq!(sys.a.shape(), (7, 7));
    assert!(sys.a.view((0, 4), (4, 3)).iter().all(|&x| x == 0.0));
    assert_eq!(
        sys.c.view((0, 4), (4, 3)).into_owned(),
        DMatrix::from_element(4, 3, -0.5)
    );
    assert!(error_system(&plant, &meas, &zero, &[1.0, 0.0]).is_err());
}

/// `‖e‖₂² = (1 + L²/p) / (2(1 − L))`; the least `p` with norm `γ` is
/// minimised over `L` by golden section.
#[test]
fn scalar_h2_observer() {
    let (plant, catalog) = scalar_plant();
    let gamma = 0.6;
    let s = spec(&catalog, Framework::H2, EstimatorKind::Observer, gamma, &[0]);
    let res = design(&plant, &catalog, &s, &AdmmConfig::default()).unwrap();
    assert!(res.certified);
    let l = gain(&res.estimator)[(0, 0)];
    let p = res.p.values()[0];
    let sys = error_system(
        &plant,
        &assemble_measurement(&plant, &catalog, &SensorSubset::full(1)).unwrap(),
        &res.estimator,
        &[p],
    )
    .unwrap();
    let oracle_norm = h2_oracle(&sys.a, &sys.b, &sys.c);
    assert!((oracle_norm - res.norm).abs() < 1e-9);
    assert!(oracle_norm <= gamma * (1.0 + 1e-9));
    assert!(((1.0 + l * l / p) / (2.0 * (1.0 - l))).sqrt() <= gamma * (1.0 + 1e-9));
    let g2 = gamma * gamma;
    let least_p = |l: f64| l * l / (2.0 * g2 * (1.0 - l) - 1.0);
    let l_lo = 1.0 - 1.0 / (2.0 * g2);
    let l_star = golden_min(least_p, -20.0, l_lo - 1e-9, 1e-12);
    let p_star = least_p(l_star);
    assert!((p - p_star).abs() <= 0.02 * p_star, "{p} vs {p_star}");
}

#[test]
fn example1_full_design() {
    let (plant, catalog) = example1_plant();
    let s = spec(&catalog, Framework::Hinf, EstimatorKind::Observer, 0.5, &[0, 1, 2, 3]);
    let res = design(&plant, &catalog, &s, &AdmmConfig::default()).unwrap();
    assert!(res.certified && res.norm <= 0.5);
    assert!((res.objective - 14.0).abs() <= 0.03 * 14.0, "{}", res.objective);
    let meas = assemble_measurement(&plant, &catalog, &s.subset).unwrap();
    let sys = error_system(&plant, &meas, &res.estimator, res.p.values()).unwrap();
    assert!(is_hurwitz(&sys.a));
    assert_eq!(sys.a, plant.a() + gain(&res.estimator) * &meas.c_y);
    assert!(hinf_oracle(&sys.a, &sys.b, &sys.c) <= 0.5 * (1.0 + 1e-6));

    // Certified results pass through unchanged.
    let again = tighten(res.clone(), &plant, &meas).unwrap();
    assert_eq!(again.p, res.p);
    assert_eq!(again.objective, res.objective);

    // Slightly weaker precisions need a uniform increment.
    let mut weak = res.clone();
    let reduced: Vec<f64> = res.p.values().iter().map(|p| 0.95 * p).collect();
    weak.p = PrecisionVector::new(reduced.clone(), 0.0).unwrap();
    weak.delta = 0.0;
    assert!(achieved_norm(&plant, &meas, Framework::Hinf, &weak.estimator, &reduced).unwrap_or(f64::INFINITY) > 0.5);
    let fixed = tighten(weak.clone(), &plant, &meas).unwrap();
    assert!(fixed.certified && fixed.norm <= 0.5 && fixed.delta > 0.0);
    let base: f64 = reduced.iter().sum();
    assert!((fixed.objective - base * (1.0 + fixed.delta)).abs() < 1e-9 * fixed.objective);
    // Halving is beyond the largest increment.
    let halved: Vec<f64> = res.p.values().iter().map(|p| 0.5 * p).collect();
    weak.p = PrecisionVector::new(halved, 0.0).unwrap();
    assert!(matches!(tighten(weak, &plant, &meas), Err(Error::InfeasibleDesign(_))));

    // The norm does not grow with the precisions.
    let doubled: Vec<f64> = res.p.values().iter().map(|p| 2.0 * p).collect();
    assert!(achieved_norm(&plant, &meas, Framework::Hinf, &res.estimator, &doubled).unwrap() <= res.norm + 1e-12);
}

#[test]
fn example1_symmetric_pairs_agree() {
    let (plant, catalog) = example1_plant();
    let cost = |ids: &[usize]| {
        let s = spec(&catalog, Framework::Hinf, EstimatorKind::Observer, 0.5, ids);
        let r = design(&plant, &catalog, &s, &AdmmConfig::default()).unwrap();
        assert!(r.certified);
        r.objective
    };
    let (a, b) = (cost(&[0, 3]), cost(&[1, 2]));
    assert!((a - b).abs() <= 0.03 * a.min(b), "{a} vs {b}");
}

#[test]
fn riccati_gains() {
    let (plant, catalog) = example1_plant();
    let subset = SensorSubset::full(4);
    let meas = assemble_measurement(&plant, &catalog, &subset).unwrap();
    let p = [5.0, 5.0, 5.0, 5.0];
    // The Kalman gain beats any other stabilizing gain in H2.
    let kalman = riccati_estimator(&plant, &meas, Framework::H2, EstimatorKind::Observer, 1.0, &p).unwrap();
    let best = achieved_norm(&plant, &meas, Framework::H2, &kalman, &p).unwrap();
    for scale in [0.0, 0.5, 0.9, 1.1, 2.0] {
        let other = Estimator::Observer {
            l: gain(&kalman) * scale,
        };
        let n = achieved_norm(&plant, &meas, Framework::H2, &other, &p).unwrap();
        assert!(best <= n + 1e-10, "scale {scale}");
    }
    // Central H∞ gain at precisions a certified design reached, scaled up.
    let s = spec(&catalog, Framework::Hinf, EstimatorKind::Observer, 0.5, &[0, 1, 2, 3]);
    let res = design(&plant, &catalog, &s, &AdmmConfig::default()).unwrap();
    let loose: Vec<f64> = res.p.values().iter().map(|v| 1.1 * v).collect();
    let central = riccati_estimator(&plant, &meas, Framework::Hinf, EstimatorKind::Observer, 0.5, &loose).unwrap();
    let sys = error_system(&plant, &meas, &central, &loose).unwrap();
    assert!(hinf_oracle(&sys.a, &sys.b, &sys.c) <= 0.5);
    assert!(riccati_estimator(
        &plant,
        &meas,
        Framework::H2,
        EstimatorKind::Observer,
        1.0,
        &[1.0, 0.0, 1.0, 1.0]
    )
    .is_err());
}

#[test]
fn delta_schedule_doubles() {
    let s = delta_schedule();
    assert_eq!(s[0], 0.0);
    assert_eq!(s[1], DELTA_START);
    assert!(s.windows(2).skip(1).all(|w| w[1] == 2.0 * w[0]));
    assert!(*s.last().unwrap() <= DELTA_MAX && 2.0 * s.last().unwrap() > DELTA_MAX);
}

#[test]
fn precheck_rejects() {
    let plant = LtiPlant::new(
        dmatrix![1.0, 0.0; 0.0, -1.0],
        dmatrix![1.0; 1.0],
        DMatrix::identity(2, 2),
    )
    .unwrap();
    let catalog = SensorCatalog::from_rows(
        &plant,
        &dmatrix![0.0, 1.0; 1.0, 0.0],
        &DMatrix::zeros(2, 1),
        vec![1.0, 1.0],
        None,
    )
    .unwrap();
    let blind = spec(&catalog, Framework::Hinf, EstimatorKind::Observer, 1.0, &[0]);
    let meas = assemble_measurement(&plant, &catalog, &blind.subset).unwrap();
    assert!(matches!(
        precheck(&plant, &meas, &blind),
        Err(Error::InfeasibleDesign(_))
    ));
    assert!(matches!(
        design(&plant, &catalog, &blind, &AdmmConfig::default()),
        Err(Error::InfeasibleDesign(_))
    ));
    let filter = spec(&catalog, Framework::H2, EstimatorKind::Filter, 1.0, &[1]);
    let meas = assemble_measurement(&plant, &catalog, &filter.subset).unwrap();
    assert!(matches!(
        precheck(&plant, &meas, &filter),
        Err(Error::InfeasibleDesign(_))
    ));
    let bad = spec(&catalog, Framework::Hinf, EstimatorKind::Observer, -1.0, &[1]);
    assert!(matches!(precheck(&plant, &meas, &bad), Err(Error::InvalidArgument(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn certified_designs_are_sound(
        seed in 0u64..1000,
        framework in prop_oneof![Just(Framework::Hinf), Just(Framework::H2)],
        kind in prop_oneof![Just(EstimatorKind::Observer), Just(EstimatorKind::Filter)],
    ) {
        let (plant, catalog) = random_plant(seed, 3, 2, 4).unwrap();
        let gamma = match framework { Framework::Hinf => 0.8, Framework::H2 => 1.0 };
        let s = spec(&catalog, framework, kind, gamma, &[0, 1, 2, 3]);
        let cfg = AdmmConfig { max_iter: 3000, ..AdmmConfig::default() };
        match design(&plant, &catalog, &s, &cfg) {
            Ok(res) => {
                prop_assert!(res.certified);
                let meas = assemble_measurement(&plant, &catalog, &s.subset).unwrap();
                let sys = error_system(&plant, &meas, &res.estimator, res.p.values()).unwrap();
                prop_assert!(is_hurwitz(&sys.a));
                let oracle = match framework {
                    Framework::Hinf => hinf_oracle(&sys.a, &sys.b, &sys.c),
                    Framework::H2 => h2_oracle(&sys.a, &sys.b, &sys.c),
                };
                prop_assert!(oracle <= gamma * (1.0 + 1e-6), "oracle {} > {}", oracle, gamma);
                prop_assert!(res.p.values().iter().all(|&p| p > 0.0));
            }
            Err(e) => prop_assert!(matches!(e, Error::InfeasibleDesign(_)), "{e}"),
        }
    }

    #[test]
    fn hinf_norm_upper_bounds_samples(a in support::hurwitz(3), b in support::matrix(3, 2), c in support::matrix(2, 3), w in 0.0f64..50.0) {
        let sys = ErrorSystem { a, b, c };
        let n = hinf_norm(&sys, 1e-9).unwrap();
        prop_assert!(sigma_max_at(&sys, w) <= n * (1.0 + 1e-9) + 1e-12);
    }
}
