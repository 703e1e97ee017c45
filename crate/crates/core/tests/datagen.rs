use std::f64::consts::PI;

use pmucal::datagen::{generate, line_for_length, physical_totals, preset, table8_line, ScenarioSpec, PRESETS};
use pmucal::phasor::{debias, normalize_angle};
use pmucal::{compute_line_params, BiasVector, Channel, Error, PerUnitBase};

#[test]
fn table8_physical_totals() {
    let (r, x, b) = physical_totals(150.0);
    assert!((r - 0.013333 * 150.0).abs() < 1e-12);
    assert!((x - 2.0 * PI * 60.0 * 7.4342e-4 * 150.0).abs() < 1e-9);
    assert!((b - 2.0 * PI * 60.0 * 1.0001e-8 * 150.0).abs() < 1e-15);
    assert!((r - 2.000).abs() < 5e-4 && (x - 42.039).abs() < 5e-4 && (b - 5.6554e-4).abs() < 5e-8);
}

#[test]
fn table8_per_unit() {
    let lp = table8_line(&PerUnitBase::default());
    assert!((lp.r - 0.00800).abs() < 5e-6);
    assert!((lp.x - 0.16816).abs() < 5e-6);
    assert!((lp.bc - 0.14139).abs() < 5e-6);
    let double = line_for_length(&PerUnitBase::default(), 300.0);
    assert!((double.r - 2.0 * lp.r).abs() < 1e-15);
    assert!((double.x - 2.0 * lp.x).abs() < 1e-15);
    assert!((double.bc - 2.0 * lp.bc).abs() < 1e-15);
}

#[test]
fn clean_generation_closes() {
    let d = generate(&ScenarioSpec::default()).unwrap();
    assert_eq!(d.snapshots.len(), 10);
    for s in &d.snapshots {
        let p = compute_line_params(s).unwrap();
        let t = d.truth.line;
        assert!((p.r - t.r).abs() < 1e-10 && (p.x - t.x).abs() < 1e-10 && (p.bc - t.bc).abs() < 1e-10);
        assert!((s.vr.magnitude() - 1.0).abs() < 1e-15);
    }
    assert!(d.snapshots.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
}

#[test]
fn bias_injection_closes() {
    for name in PRESETS {
        let d = generate(&preset(name).unwrap()).unwrap();
        let e = d.truth.injected.terminal_errors();
        for (m, t) in d.snapshots.iter().zip(&d.truth_snapshots) {
            for (k, (mp, tp)) in [(m.vs, t.vs), (m.vr, t.vr), (m.is_, t.is_), (m.ir, t.ir)].into_iter().enumerate() {
                let back = debias(mp, e[k]).unwrap();
                assert!((back.magnitude() - tp.magnitude()).abs() <= 4.0 * f64::EPSILON * tp.magnitude(), "{name}");
                assert!(normalize_angle(back.angle() - tp.angle()).abs() <= 16.0 * f64::EPSILON, "{name}");
            }
        }
    }
}

#[test]
fn seeded_generation_is_reproducible() {
    let spec = ScenarioSpec { noise_sigma: 1e-3, seed: 42, ..preset("case3").unwrap() };
    assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    let other = ScenarioSpec { seed: 43, ..spec.clone() };
    assert_ne!(generate(&spec).unwrap().snapshots, generate(&other).unwrap().snapshots);
}

#[test]
fn noise_has_requested_spread() {
    let sigma = 1e-3;
    let spec = ScenarioSpec { n_snapshots: 10_000, noise_sigma: sigma, seed: 7, ..ScenarioSpec::default() };
    let d = generate(&spec).unwrap();
    let mut sums = [[0.0f64; 2]; 8];
    for (m, t) in d.snapshots.iter().zip(&d.truth_snapshots) {
        let pairs = [(m.vs, t.vs), (m.vr, t.vr), (m.is_, t.is_), (m.ir, t.ir)];
        for (k, (a, b)) in pairs.into_iter().enumerate() {
            let dm = a.magnitude() - b.magnitude();
            let da = normalize_angle(a.angle() - b.angle());
            for (j, v) in [dm, da].into_iter().enumerate() {
                sums[2 * k + j][0] += v;
                sums[2 * k + j][1] += v * v;
            }
        }
    }
    let n = d.snapshots.len() as f64;
    for (i, [s, s2]) in sums.iter().enumerate() {
        let mean = s / n;
        let sd = (s2 / n - mean * mean).sqrt();
        assert!((sd / sigma - 1.0).abs() < 0.05, "component {i}: {sd}");
    }
}

#[test]
fn preset_contents() {
    let c2 = preset("case2").unwrap();
    assert_eq!(c2.injected, BiasVector::zero().with(Channel::Is, 0.01));
    assert_eq!(c2.ems_error, [-0.02, 0.0, 0.0]);
    let c3 = preset("case3").unwrap();
    assert_eq!(c3.injected, BiasVector::zero().with(Channel::Vs, 0.01).with(Channel::ThVr, 0.00175));
    assert_eq!(c3.ems_error, [-0.04, -0.06, 0.0]);
    assert_eq!(preset("case4").unwrap().ems_error, [-0.02, -0.05, 0.02]);
    assert_eq!(preset("case1_a").unwrap().ems_error, [0.0; 3]);
    let real = preset("table1_realistic").unwrap().injected;
    assert!(real.to_array().iter().all(|v| v.abs() <= 0.02568));
    assert!(matches!(preset("case5"), Err(Error::Usage(_))));
}

#[test]
fn ems_reference_relation() {
    let spec = preset("case4").unwrap();
    let ems = spec.ems();
    assert!((spec.line.r / ems.r - 0.98).abs() < 1e-15);
    assert!((spec.line.x / ems.x - 0.95).abs() < 1e-15);
    assert!((spec.line.bc / ems.bc - 1.02).abs() < 1e-15);
}

#[test]
fn invalid_specs_rejected() {
    let few = ScenarioSpec { n_snapshots: 2, ..ScenarioSpec::default() };
    assert!(matches!(generate(&few), Err(Error::Config(_))));
    let neg = ScenarioSpec { noise_sigma: -1.0, ..ScenarioSpec::default() };
    assert!(matches!(generate(&neg), Err(Error::Config(_))));
    let huge = ScenarioSpec { injected: BiasVector::zero().with(Channel::Vr, 2.0), ..ScenarioSpec::default() };
    assert!(generate(&huge).is_err());
}
