//! Synthetic scenarios on the 150 km, 500 kV test line.
//!
//! Measurements are produced as `measured = true - d` per channel, the
//! inverse of the bias model, followed by optional Gaussian noise.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{forward_simulate, LineParams, MeasurementSnapshot, TerminalConditions};
use crate::phasor::{bias, BiasVector, Channel, PerUnitBase, Phasor};

pub const R_PER_KM: f64 = 0.013333;
pub const L_PER_KM: f64 = 7.4342e-4;
pub const C_PER_KM: f64 = 1.0001e-8;
pub const LENGTH_KM: f64 = 150.0;
pub const FREQUENCY_HZ: f64 = 60.0;

/// Line totals in ohms and siemens: (R, X, Bc).
pub fn physical_totals(length_km: f64) -> (f64, f64, f64) {
    let w = TAU * FREQUENCY_HZ;
    (R_PER_KM * length_km, w * L_PER_KM * length_km, w * C_PER_KM * length_km)
}

pub fn line_for_length(base: &PerUnitBase, length_km: f64) -> LineParams {
    let (r, x, b) = physical_totals(length_km);
    LineParams { r: base.ohms_to_pu(r), x: base.ohms_to_pu(x), bc: base.siemens_to_pu(b), g: 0.0 }
}

pub fn table8_line(base: &PerUnitBase) -> LineParams {
    line_for_length(base, LENGTH_KM)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub line: LineParams,
    pub n_snapshots: usize,
    /// Receiving-end load current magnitudes (p.u.), swept evenly.
    pub load_min: f64,
    pub load_max: f64,
    /// Angle of the load current drawn at the receiving bus.
    pub load_angle: f64,
    pub injected: BiasVector,
    /// Fractional deviation of the truth from the EMS value per axis
    /// (r, x, bc): `true = ems * (1 + e)`.
    pub ems_error: [f64; 3],
    pub noise_sigma: f64,
    pub seed: u64,
    pub t0: f64,
    pub dt: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            line: table8_line(&PerUnitBase::default()),
            n_snapshots: 10,
            load_min: 0.2,
            load_max: 1.0,
            load_angle: -0.1,
            injected: BiasVector::zero(),
            ems_error: [0.0; 3],
            noise_sigma: 0.0,
            seed: 0,
            t0: 0.0,
            dt: 0.04,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.line.validate()?;
        if self.n_snapshots < 3 {
            return Err(Error::Config(format!("n_snapshots must be >= 3 (got {})", self.n_snapshots)));
        }
        if !(self.load_min > 0.0 && self.load_max > self.load_min) {
            return Err(Error::Config("load magnitudes must be positive and distinct".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise sigma must be >= 0".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be > 0".into()));
        }
        if self.ems_error.iter().any(|e| !(*e > -1.0)) {
            return Err(Error::Config("ems errors must exceed -100%".into()));
        }
        Ok(())
    }

    pub fn load_magnitudes(&self) -> Vec<f64> {
        let n = self.n_snapshots;
        (0..n)
            .map(|k| self.load_min + (self.load_max - self.load_min) * k as f64 / (n - 1) as f64)
            .collect()
    }

    /// EMS reference implied by `ems_error`.
    pub fn ems(&self) -> LineParams {
        LineParams {
            r: self.line.r / (1.0 + self.ems_error[0]),
            x: self.line.x / (1.0 + self.ems_error[1]),
            bc: self.line.bc / (1.0 + self.ems_error[2]),
            g: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub line: LineParams,
    pub ems: LineParams,
    pub ems_error: [f64; 3],
    pub injected: BiasVector,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub snapshots: Vec<MeasurementSnapshot>,
    pub truth_snapshots: Vec<MeasurementSnapshot>,
    pub truth: Truth,
}

pub fn generate(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let [evs, evr, eis, eir] = spec.injected.terminal_errors();
    let vr = Phasor::new(1.0, 0.0)?;
    let mut snapshots = Vec::with_capacity(spec.n_snapshots);
    let mut truth_snapshots = Vec::with_capacity(spec.n_snapshots);
    for (k, mag) in spec.load_magnitudes().into_iter().enumerate() {
        let ir = Phasor::new(mag, spec.load_angle + PI)?;
        let mut t = forward_simulate(&spec.line, &TerminalConditions { vr, ir });
        t.timestamp = spec.t0 + k as f64 * spec.dt;
        let mut m = MeasurementSnapshot {
            timestamp: t.timestamp,
            vs: bias(t.vs, evs)?,
            vr: bias(t.vr, evr)?,
            is_: bias(t.is_, eis)?,
            ir: bias(t.ir, eir)?,
        };
        if spec.noise_sigma > 0.0 {
            let mut jitter = |p: Phasor| -> Result<Phasor> {
                let dm = normal.sample(&mut rng);
                let da = normal.sample(&mut rng);
                Phasor::new(p.magnitude() + dm, p.angle() + da)
            };
            m.vs = jitter(m.vs)?;
            m.vr = jitter(m.vr)?;
            m.is_ = jitter(m.is_)?;
            m.ir = jitter(m.ir)?;
        }
        m.validate()?;
        snapshots.push(m);
        truth_snapshots.push(t);
    }
    Ok(Dataset {
        snapshots,
        truth_snapshots,
        truth: Truth {
            line: spec.line,
            ems: spec.ems(),
            ems_error: spec.ems_error,
            injected: spec.injected,
            noise_sigma: spec.noise_sigma,
            seed: spec.seed,
        },
    })
}

pub const PRESETS: [&str; 10] = [
    "case1_a",
    "case1_b",
    "case1_c",
    "case1_d",
    "case1_e",
    "case1_f",
    "case2",
    "case3",
    "case4",
    "table1_realistic",
];

fn biases(entries: &[(Channel, f64)]) -> BiasVector {
    entries.iter().fold(BiasVector::zero(), |b, &(c, v)| b.with(c, v))
}

pub fn preset(name: &str) -> Result<ScenarioSpec> {
    use Channel::*;
    const M: f64 = 0.01;
    const A: f64 = 0.00175;
    let (inj, ems_error): (Vec<(Channel, f64)>, [f64; 3]) = match name {
        "case1_a" => (vec![(Is, M), (ThVr, A)], [0.0; 3]),
        "case1_b" => (vec![(Vs, M), (Vr, M), (ThVs, A)], [0.0; 3]),
        "case1_c" => (vec![(Vs, M), (Vr, M), (Is, M), (ThVr, 0.0017)], [0.0; 3]),
        "case1_d" => (vec![(Vs, M), (Vr, M), (Is, M), (ThVr, A), (ThIs, A)], [0.0; 3]),
        "case1_e" => (vec![(Vs, M), (Vr, M), (Is, M), (Ir, M), (ThVr, A), (ThIs, A)], [0.0; 3]),
        "case1_f" => (
            vec![(Vs, M), (Vr, M), (Is, M), (Ir, M), (ThVs, 0.0017), (ThVr, 0.0017), (ThIs, 0.0017)],
            [0.0; 3],
        ),
        "case2" => (vec![(Is, M)], [-0.02, 0.0, 0.0]),
        "case3" => (vec![(Vs, M), (ThVr, A)], [-0.04, -0.06, 0.0]),
        "case4" => (vec![(Vs, M), (ThVr, A)], [-0.02, -0.05, 0.02]),
        "table1_realistic" => (
            vec![
                (Vs, 0.00709),
                (ThVs, 1.471f64.to_radians()),
                (Is, 0.01366),
                (ThIs, 0.63f64.to_radians()),
            ],
            [0.0; 3],
        ),
        other => {
            return Err(Error::Usage(format!(
                "unknown preset '{other}' (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(ScenarioSpec { injected: biases(&inj), ems_error, ..ScenarioSpec::default() })
}
