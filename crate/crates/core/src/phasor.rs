//! Polar phasors, per-unit bases and the additive bias model.
//!
//! A bias is what must be added to a measurement to recover the truth:
//! `true = measured + d` on magnitude and angle separately.

use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phasor {
    magnitude: f64,
    angle: f64,
}

impl Phasor {
    pub fn new(magnitude: f64, angle: f64) -> Result<Self> {
        if !magnitude.is_finite() || magnitude < 0.0 {
            return Err(Error::Domain(format!("phasor magnitude {magnitude} must be finite and >= 0")));
        }
        if !angle.is_finite() {
            return Err(Error::Domain(format!("phasor angle {angle} is not finite")));
        }
        Ok(Self { magnitude, angle: normalize_angle(angle) })
    }

    pub fn from_complex(z: Complex64) -> Self {
        let (m, a) = z.to_polar();
        Self { magnitude: m, angle: normalize_angle(a) }
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::from_polar(self.magnitude, self.angle)
    }

    pub fn to_rectangular(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (self.magnitude * c, self.magnitude * s)
    }

    pub fn rotate(&self, phi: f64) -> Self {
        Self { magnitude: self.magnitude, angle: normalize_angle(self.angle + phi) }
    }
}

impl fmt::Display for Phasor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}∠{}", self.magnitude, self.angle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasError {
    pub d_mag: f64,
    pub d_ang: f64,
}

impl BiasError {
    pub fn new(d_mag: f64, d_ang: f64) -> Self {
        Self { d_mag, d_ang }
    }
}

/// Returns the true phasor behind `measured`.
pub fn debias(measured: Phasor, e: BiasError) -> Result<Phasor> {
    let m = measured.magnitude + e.d_mag;
    if m < 0.0 {
        return Err(Error::Domain(format!(
            "bias {} drives magnitude {} negative",
            e.d_mag, measured.magnitude
        )));
    }
    Phasor::new(m, measured.angle + e.d_ang)
}

/// Inverse of [`debias`]: what a biased instrument would report.
pub fn bias(truth: Phasor, e: BiasError) -> Result<Phasor> {
    let m = truth.magnitude - e.d_mag;
    if m < 0.0 {
        return Err(Error::Domain(format!(
            "bias {} exceeds magnitude {}",
            e.d_mag, truth.magnitude
        )));
    }
    Phasor::new(m, truth.angle - e.d_ang)
}

/// Total vector error of `measured` against `truth`, as a fraction.
pub fn tve(measured: Phasor, truth: Phasor) -> Result<f64> {
    if truth.magnitude == 0.0 {
        return Err(Error::Domain("tve reference has zero magnitude".into()));
    }
    Ok((measured.to_complex() - truth.to_complex()).norm() / truth.magnitude)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    /// Line-to-line volts.
    pub voltage_base: f64,
    /// Three-phase volt-amperes.
    pub power_base: f64,
}

impl PerUnitBase {
    pub fn new(voltage_base: f64, power_base: f64) -> Result<Self> {
        if !(voltage_base.is_finite() && voltage_base > 0.0 && power_base.is_finite() && power_base > 0.0) {
            return Err(Error::Domain(format!(
                "per-unit bases must be positive (got {voltage_base} V, {power_base} VA)"
            )));
        }
        Ok(Self { voltage_base, power_base })
    }

    pub fn from_kv_mva(kv: f64, mva: f64) -> Result<Self> {
        Self::new(kv * 1e3, mva * 1e6)
    }

    pub fn impedance_base(&self) -> f64 {
        self.voltage_base * self.voltage_base / self.power_base
    }

    pub fn admittance_base(&self) -> f64 {
        self.power_base / (self.voltage_base * self.voltage_base)
    }

    pub fn current_base(&self) -> f64 {
        self.power_base / (3f64.sqrt() * self.voltage_base)
    }

    pub fn ohms_to_pu(&self, ohms: f64) -> f64 {
        ohms / self.impedance_base()
    }

    pub fn siemens_to_pu(&self, siemens: f64) -> f64 {
        siemens * self.impedance_base()
    }

    /// Phase (line-to-neutral) volts to per-unit.
    pub fn phase_volts_to_pu(&self, volts: f64) -> f64 {
        volts * 3f64.sqrt() / self.voltage_base
    }

    pub fn pu_to_phase_volts(&self, pu: f64) -> f64 {
        pu * self.voltage_base / 3f64.sqrt()
    }

    pub fn amperes_to_pu(&self, amps: f64) -> f64 {
        amps / self.current_base()
    }

    pub fn pu_to_amperes(&self, pu: f64) -> f64 {
        pu * self.current_base()
    }
}

impl Default for PerUnitBase {
    /// 500 kV, 1000 MVA.
    fn default() -> Self {
        Self { voltage_base: 500e3, power_base: 1000e6 }
    }
}

/// Largest bias magnitudes considered physically credible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plausibility {
    pub max_mag: f64,
    pub max_ang: f64,
}

impl Default for Plausibility {
    fn default() -> Self {
        Self { max_mag: 0.05, max_ang: 0.05 }
    }
}

impl Plausibility {
    pub fn admits(&self, e: BiasError) -> bool {
        e.d_mag.abs() <= self.max_mag && e.d_ang.abs() <= self.max_ang
    }

    pub fn admits_channel(&self, ch: Channel, value: f64) -> bool {
        let cap = if ch.is_angle() { self.max_ang } else { self.max_mag };
        value.abs() <= cap
    }
}

/// The seven estimable channels, in bias-vector order. The receiving-end
/// current angle is the phase reference and has no entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "dVs")]
    Vs,
    #[serde(rename = "dVr")]
    Vr,
    #[serde(rename = "dIs")]
    Is,
    #[serde(rename = "dIr")]
    Ir,
    #[serde(rename = "dThVs")]
    ThVs,
    #[serde(rename = "dThVr")]
    ThVr,
    #[serde(rename = "dThIs")]
    ThIs,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::Vs,
        Channel::Vr,
        Channel::Is,
        Channel::Ir,
        Channel::ThVs,
        Channel::ThVr,
        Channel::ThIs,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Channel> {
        Self::ALL.get(i).copied()
    }

    pub fn is_angle(self) -> bool {
        self.index() >= 4
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Vs => "dVs",
            Channel::Vr => "dVr",
            Channel::Is => "dIs",
            Channel::Ir => "dIr",
            Channel::ThVs => "dThVs",
            Channel::ThVr => "dThVr",
            Channel::ThIs => "dThIs",
        }
    }

    pub fn parse(s: &str) -> Option<Channel> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasVector {
    #[serde(rename = "dVs")]
    pub d_vs: f64,
    #[serde(rename = "dVr")]
    pub d_vr: f64,
    #[serde(rename = "dIs")]
    pub d_is: f64,
    #[serde(rename = "dIr")]
    pub d_ir: f64,
    #[serde(rename = "dThVs")]
    pub d_th_vs: f64,
    #[serde(rename = "dThVr")]
    pub d_th_vr: f64,
    #[serde(rename = "dThIs")]
    pub d_th_is: f64,
}

impl BiasVector {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            d_vs: a[0],
            d_vr: a[1],
            d_is: a[2],
            d_ir: a[3],
            d_th_vs: a[4],
            d_th_vr: a[5],
            d_th_is: a[6],
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.d_vs, self.d_vr, self.d_is, self.d_ir, self.d_th_vs, self.d_th_vr, self.d_th_is]
    }

    pub fn get(&self, ch: Channel) -> f64 {
        self.to_array()[ch.index()]
    }

    pub fn set(&mut self, ch: Channel, v: f64) {
        let mut a = self.to_array();
        a[ch.index()] = v;
        *self = Self::from_array(a);
    }

    pub fn with(mut self, ch: Channel, v: f64) -> Self {
        self.set(ch, v);
        self
    }

    /// Per-terminal view: (Vs, Vr, Is, Ir) magnitude and rebased angle biases.
    pub fn terminal_errors(&self) -> [BiasError; 4] {
        [
            BiasError::new(self.d_vs, self.d_th_vs),
            BiasError::new(self.d_vr, self.d_th_vr),
            BiasError::new(self.d_is, self.d_th_is),
            BiasError::new(self.d_ir, 0.0),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}
