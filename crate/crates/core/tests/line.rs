use std::f64::consts::PI;

use pmucal::line::{compute_line_params, forward_simulate, rebase_angles, solve_line, LineParams, TerminalConditions};
use pmucal::Phasor;
use proptest::prelude::*;

const TRUE: [f64; 3] = [0.0079998, 0.168158, 0.141386];

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn cube_params() -> impl Strategy<Value = LineParams> {
    (-0.2f64..0.2, -0.2f64..0.2, -0.2f64..0.2).prop_map(|(a, b, c)| LineParams {
        r: TRUE[0] * (1.0 + a),
        x: TRUE[1] * (1.0 + b),
        bc: TRUE[2] * (1.0 + c),
        g: 0.0,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn inversion_roundtrip(lp in cube_params(), mag in 0.1f64..1.2, ang in -PI..PI, vang in -PI..PI) {
        let tc = TerminalConditions { vr: Phasor::new(1.0, vang).unwrap(), ir: Phasor::new(mag, ang).unwrap() };
        let s = forward_simulate(&lp, &tc);
        let sol = solve_line(&s).unwrap();
        let got = sol.params();
        prop_assert!(rel(got.r, lp.r) < 1e-10, "r {} vs {}", got.r, lp.r);
        prop_assert!(rel(got.x, lp.x) < 1e-10);
        prop_assert!(rel(got.bc, lp.bc) < 1e-10);
        prop_assert!(sol.conductance().abs() < 1e-10);
    }

    #[test]
    fn rotation_invariance(lp in cube_params(), mag in 0.1f64..1.2, ang in -PI..PI, phi in -PI..PI) {
        let tc = TerminalConditions { vr: Phasor::new(1.0, 0.0).unwrap(), ir: Phasor::new(mag, ang).unwrap() };
        let s = forward_simulate(&lp, &tc);
        let a = compute_line_params(&s).unwrap();
        let b = compute_line_params(&s.rotate(phi)).unwrap();
        let c = compute_line_params(&rebase_angles(&s.rotate(phi))).unwrap();
        for (u, v) in [(a, b), (a, c)] {
            prop_assert!((u.r - v.r).abs() < 1e-12);
            prop_assert!((u.x - v.x).abs() < 1e-12);
            prop_assert!((u.bc - v.bc).abs() < 1e-12);
        }
    }

    #[test]
    fn rebase_zeroes_reference(lp in cube_params(), mag in 0.1f64..1.2, ang in -PI..PI) {
        let tc = TerminalConditions { vr: Phasor::new(1.0, 0.4).unwrap(), ir: Phasor::new(mag, ang).unwrap() };
        let s = rebase_angles(&forward_simulate(&lp, &tc));
        prop_assert_eq!(s.ir.angle(), 0.0);
        prop_assert_eq!(s.ir.magnitude(), mag);
    }
}
