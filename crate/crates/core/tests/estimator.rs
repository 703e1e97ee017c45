use nalgebra::{DMatrix, DVector};
use pmucal::datagen::{generate, preset, ScenarioSpec};
use pmucal::estimator::{
    build_residuals, build_residuals_channels, gauss_newton, reference_error_sweep, solve_lse, solve_lse_multi, Axis,
    LeastSquares, LinearModel, SolveMethod,
};
use pmucal::sensitivity::assemble_h;
use pmucal::{BiasVector, Channel, Error, LineParams, MeasurementSnapshot, ResidualRows};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clean() -> (Vec<MeasurementSnapshot>, LineParams) {
    let d = generate(&ScenarioSpec::default()).unwrap();
    (d.snapshots, d.truth.line)
}

fn channels(snaps: &[MeasurementSnapshot]) -> Vec<[f64; 7]> {
    snaps.iter().map(|s| s.channels()).collect()
}

#[test]
fn residuals_zero_at_truth() {
    let (s, lp) = clean();
    for rows in [ResidualRows::Impedance, ResidualRows::ImpedanceAndConductance] {
        let e = build_residuals(&s, &lp, rows).unwrap();
        assert_eq!(e.len(), s.len() * rows.count());
        assert!(e.amax() < 1e-12);
    }
}

#[test]
fn residuals_track_reference_shift() {
    let (s, lp) = clean();
    let c = LineParams { r: lp.r * 1.02, ..lp };
    let e = build_residuals(&s, &c, ResidualRows::Impedance).unwrap();
    for t in e.as_slice().chunks(3) {
        assert!((t[0] - 0.02 * lp.r).abs() < 1e-12);
        assert!(t[1].abs() < 1e-12 && t[2].abs() < 1e-12);
    }
}

#[test]
fn biased_residuals_vary_with_loading() {
    let d = generate(&preset("case2").unwrap()).unwrap();
    let e = build_residuals(&d.snapshots, &d.truth.line, ResidualRows::Impedance).unwrap();
    let r: Vec<f64> = e.iter().step_by(3).copied().collect();
    let spread = r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread > 1e-4, "spread {spread}");
}

#[test]
fn zero_residual_zero_bias() {
    let (s, _) = clean();
    let h = assemble_h(&s, ResidualRows::Impedance).unwrap();
    let f = solve_lse(&h, &DVector::zeros(h.h.nrows())).unwrap();
    assert_eq!(f, BiasVector::zero());
}

#[test]
fn single_current_bias_recovered() {
    let spec = ScenarioSpec { injected: BiasVector::zero().with(Channel::Is, 0.01), ..ScenarioSpec::default() };
    let d = generate(&spec).unwrap();
    for rows in [ResidualRows::Impedance, ResidualRows::ImpedanceAndConductance] {
        let h = assemble_h(&d.snapshots, rows).unwrap();
        let e = build_residuals(&d.snapshots, &d.truth.line, rows).unwrap();
        let f = solve_lse(&h, &e).unwrap().to_array();
        assert!((f[2] - 0.01).abs() < 1e-3, "{f:?}");
        for (k, v) in f.iter().enumerate() {
            if k != 2 {
                assert!(v.abs() < 1e-3, "{k}: {v}");
            }
        }
    }
}

#[test]
fn two_distinct_snapshots_rank_deficient() {
    let (s, _) = clean();
    let two = vec![s[1], s[8], s[1], s[8]];
    let h = assemble_h(&two, ResidualRows::Impedance).unwrap();
    match solve_lse(&h, &DVector::zeros(12)) {
        Err(Error::RankDeficient { rank, .. }) => assert!(rank < 7),
        other => panic!("{other:?}"),
    }
}

fn random_candidates(lp: &LineParams, m: usize, seed: u64) -> Vec<LineParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| LineParams {
            r: lp.r * (1.0 + rng.random_range(-0.2..0.2)),
            x: lp.x * (1.0 + rng.random_range(-0.2..0.2)),
            bc: lp.bc * (1.0 + rng.random_range(-0.2..0.2)),
            g: 0.0,
        })
        .collect()
}

#[test]
fn multi_matches_single_solves() {
    let d = generate(&preset("case3").unwrap()).unwrap();
    let rows = ResidualRows::Impedance;
    let h = assemble_h(&d.snapshots, rows).unwrap();
    let cands = random_candidates(&d.truth.line, 1000, 11);
    let cols: Vec<DVector<f64>> = cands.iter().map(|c| build_residuals(&d.snapshots, c, rows).unwrap()).collect();
    let e = DMatrix::from_columns(&cols);
    let multi = solve_lse_multi(&h, &e).unwrap();
    assert_eq!(multi.shape(), (7, 1000));
    for (m, col) in cols.iter().enumerate() {
        let f = solve_lse(&h, col).unwrap().to_array();
        for k in 0..7 {
            assert!((multi[(k, m)] - f[k]).abs() < 1e-12);
        }
    }
    let one = solve_lse_multi(&h, &DMatrix::from_columns(&cols[..1])).unwrap();
    let f0 = solve_lse(&h, &cols[0]).unwrap().to_array();
    for k in 0..7 {
        assert_eq!(one[(k, 0)], f0[k]);
    }
}

#[test]
fn linear_model_matches_multi() {
    let d = generate(&preset("case4").unwrap()).unwrap();
    let rows = ResidualRows::ImpedanceAndConductance;
    let h = assemble_h(&d.snapshots, rows).unwrap();
    let model = LinearModel::build(&channels(&d.snapshots), &BiasVector::zero(), rows, None, SolveMethod::Qr).unwrap();
    for c in random_candidates(&d.truth.line, 200, 5) {
        let e = build_residuals(&d.snapshots, &c, rows).unwrap();
        let f = solve_lse(&h, &e).unwrap().to_array();
        let g = model.eval(c.as_array());
        for k in 0..7 {
            assert!((f[k] - g[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn reference_step_is_linear() {
    let (s, lp) = clean();
    let rows = ResidualRows::Impedance;
    let h = assemble_h(&s, rows).unwrap();
    let ls = LeastSquares::new(&h, None, SolveMethod::Qr).unwrap();
    let delta = 1e-4;
    let mut step = DVector::zeros(h.h.nrows());
    for i in (0..step.len()).step_by(3) {
        step[i] = delta;
    }
    let unit = ls.solve(&step).unwrap().to_array();
    for c in random_candidates(&lp, 20, 3) {
        let a = ls.solve(&build_residuals(&s, &c, rows).unwrap()).unwrap().to_array();
        let b = ls.solve(&build_residuals(&s, &LineParams { r: c.r + delta, ..c }, rows).unwrap()).unwrap().to_array();
        for k in 0..7 {
            assert!((b[k] - a[k] - unit[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn estimates_collinear_along_each_axis() {
    let (s, lp) = clean();
    for axis in Axis::ALL {
        let f = reference_error_sweep(&s, &lp, axis, &[-0.1, -0.05, 0.0], ResidualRows::Impedance).unwrap();
        let (a, b, c) = (f[0].to_array(), f[1].to_array(), f[2].to_array());
        for k in 0..7 {
            let mid = 0.5 * (a[k] + c[k]);
            assert!((b[k] - mid).abs() <= 1e-12 * (1.0 + a[k].abs()), "{} {k}", axis.name());
        }
    }
}

#[test]
fn reference_error_scaling() {
    let (s, lp) = clean();
    for rows in [ResidualRows::Impedance, ResidualRows::ImpedanceAndConductance] {
        let f = reference_error_sweep(&s, &lp, Axis::X, &[-0.1, -0.05], rows).unwrap();
        let (a, b) = (f[0].to_array(), f[1].to_array());
        for k in 0..7 {
            if b[k].abs() > 1e-6 {
                let ratio = a[k] / b[k];
                assert!((ratio - 2.0).abs() < 0.05, "{k}: {ratio}");
            }
        }
        // the dominant entries at -5% X
        assert!(b[Channel::Ir.index()].abs() > 1e-3);
        assert!(b[Channel::ThVs.index()].abs() > 1e-3);
    }
}

#[test]
fn resistance_error_leaves_current_angle_nearly_untouched() {
    let (s, lp) = clean();
    let f = reference_error_sweep(&s, &lp, Axis::R, &[-0.1], ResidualRows::Impedance).unwrap()[0].to_array();
    let (vs, is_) = (f[Channel::ThVs.index()], f[Channel::ThIs.index()]);
    assert!(is_.abs() < 0.02 * vs.abs(), "{is_} vs {vs}");
}

#[test]
fn qr_and_normal_equations_agree() {
    for name in ["case1_a", "case1_f", "case2", "case3", "case4", "table1_realistic"] {
        let d = generate(&preset(name).unwrap()).unwrap();
        for rows in [ResidualRows::Impedance, ResidualRows::ImpedanceAndConductance] {
            let h = assemble_h(&d.snapshots, rows).unwrap();
            let e = build_residuals(&d.snapshots, &d.truth.ems, rows).unwrap();
            let q = LeastSquares::new(&h, None, SolveMethod::Qr).unwrap().solve(&e).unwrap().to_array();
            let n = LeastSquares::new(&h, None, SolveMethod::NormalEquations).unwrap().solve(&e).unwrap().to_array();
            for k in 0..7 {
                assert!((q[k] - n[k]).abs() < 1e-9, "{name} {k}: {} {}", q[k], n[k]);
            }
        }
    }
}

#[test]
fn unit_weights_change_nothing() {
    let d = generate(&preset("case3").unwrap()).unwrap();
    let h = assemble_h(&d.snapshots, ResidualRows::Impedance).unwrap();
    let e = build_residuals(&d.snapshots, &d.truth.ems, ResidualRows::Impedance).unwrap();
    let a = LeastSquares::new(&h, None, SolveMethod::Qr).unwrap().solve(&e).unwrap();
    let b = LeastSquares::new(&h, Some(&[1.0; 3]), SolveMethod::Qr).unwrap().solve(&e).unwrap();
    for k in 0..7 {
        assert!((a.to_array()[k] - b.to_array()[k]).abs() < 1e-12);
    }
}

#[test]
fn iterated_solve_recovers_case_one() {
    for name in ["case1_a", "case1_c", "case1_f"] {
        let d = generate(&preset(name).unwrap()).unwrap();
        let f = gauss_newton(&channels(&d.snapshots), &d.truth.ems, ResidualRows::ImpedanceAndConductance, 20)
            .unwrap()
            .to_array();
        let want = d.truth.injected.to_array();
        for k in 0..7 {
            assert!((f[k] - want[k]).abs() < 1e-6, "{name} {k}: {} vs {}", f[k], want[k]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solution_is_optimal(seed in any::<u64>(), k in 0usize..7, sign in prop::bool::ANY) {
        let d = generate(&preset("case4").unwrap()).unwrap();
        let rows = ResidualRows::Impedance;
        let h = assemble_h(&d.snapshots, rows).unwrap();
        let c = random_candidates(&d.truth.line, 1, seed)[0];
        let e = build_residuals_channels(&channels(&d.snapshots), &c, rows).unwrap();
        let f = DVector::from_row_slice(&solve_lse(&h, &e).unwrap().to_array());
        let base = (&h.h * &f - &e).norm();
        let mut g = f.clone();
        g[k] += if sign { 1e-6 } else { -1e-6 };
        prop_assert!((&h.h * &g - &e).norm() >= base);
    }
}
