//! Nominal PI line: forward simulation and closed-form inversion.
//!
//! Both terminal currents are taken as flowing into the line, so the load
//! current drawn at the receiving bus is `-Ir`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phasor::{normalize_angle, Phasor};

/// Default singularity tolerance, p.u.^2 on the impedance denominator.
pub const SINGULAR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LineParams {
    pub r: f64,
    pub x: f64,
    pub bc: f64,
    #[serde(default)]
    pub g: f64,
}

impl LineParams {
    pub fn new(r: f64, x: f64, bc: f64) -> Result<Self> {
        let lp = Self { r, x, bc, g: 0.0 };
        lp.validate()?;
        Ok(lp)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r.is_finite()
            && self.x.is_finite()
            && self.bc.is_finite()
            && self.r >= 0.0
            && self.x != 0.0
            && self.bc >= 0.0
            && self.g == 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "invalid line parameters r={} x={} bc={} g={}",
                self.r, self.x, self.bc, self.g
            )))
        }
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.r, self.x)
    }

    pub fn y(&self) -> Complex64 {
        Complex64::new(self.g, self.bc)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.r, self.x, self.bc]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalConditions {
    pub vr: Phasor,
    pub ir: Phasor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementSnapshot {
    pub timestamp: f64,
    pub vs: Phasor,
    pub vr: Phasor,
    pub is_: Phasor,
    pub ir: Phasor,
}

impl MeasurementSnapshot {
    pub fn new(timestamp: f64, vs: Phasor, vr: Phasor, is_: Phasor, ir: Phasor) -> Result<Self> {
        let s = Self { timestamp, vs, vr, is_, ir };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.timestamp.is_finite() {
            return Err(Error::Domain("timestamp is not finite".into()));
        }
        for (name, p) in [("vs", self.vs), ("vr", self.vr), ("is", self.is_), ("ir", self.ir)] {
            if p.magnitude() <= 0.0 {
                return Err(Error::Domain(format!("{name} magnitude must be > 0")));
            }
        }
        Ok(())
    }

    pub fn theta_vs(&self) -> f64 {
        normalize_angle(self.vs.angle() - self.ir.angle())
    }

    pub fn theta_vr(&self) -> f64 {
        normalize_angle(self.vr.angle() - self.ir.angle())
    }

    pub fn theta_is(&self) -> f64 {
        normalize_angle(self.is_.angle() - self.ir.angle())
    }

    /// Channel values in bias-vector order: four magnitudes, then the
    /// three angles relative to the receiving-end current.
    pub fn channels(&self) -> [f64; 7] {
        [
            self.vs.magnitude(),
            self.vr.magnitude(),
            self.is_.magnitude(),
            self.ir.magnitude(),
            self.theta_vs(),
            self.theta_vr(),
            self.theta_is(),
        ]
    }

    /// Builds an already-rebased snapshot from channel values.
    pub fn from_channels(timestamp: f64, c: [f64; 7]) -> Result<Self> {
        Self::new(
            timestamp,
            Phasor::new(c[0], c[4])?,
            Phasor::new(c[1], c[5])?,
            Phasor::new(c[2], c[6])?,
            Phasor::new(c[3], 0.0)?,
        )
    }

    pub fn rotate(&self, phi: f64) -> Self {
        Self {
            timestamp: self.timestamp,
            vs: self.vs.rotate(phi),
            vr: self.vr.rotate(phi),
            is_: self.is_.rotate(phi),
            ir: self.ir.rotate(phi),
        }
    }
}

/// Complex series impedance and shunt admittance from one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSolution {
    pub z: Complex64,
    pub y: Complex64,
}

impl LineSolution {
    pub fn params(&self) -> LineParams {
        LineParams { r: self.z.re, x: self.z.im, bc: self.y.im, g: 0.0 }
    }

    /// real(Y); should vanish on a lossless shunt.
    pub fn conductance(&self) -> f64 {
        self.y.re
    }
}

pub(crate) struct Rebased {
    pub vs: Complex64,
    pub vr: Complex64,
    pub is_: Complex64,
    pub ir: Complex64,
}

impl Rebased {
    pub fn from_channels(c: &[f64; 7]) -> Self {
        Self {
            vs: Complex64::from_polar(c[0], c[4]),
            vr: Complex64::from_polar(c[1], c[5]),
            is_: Complex64::from_polar(c[2], c[6]),
            ir: Complex64::new(c[3], 0.0),
        }
    }

    pub fn impedance_denominator(&self) -> Complex64 {
        self.is_ * self.vr - self.ir * self.vs
    }

    pub fn voltage_sum(&self) -> Complex64 {
        self.vs + self.vr
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        let d = self.impedance_denominator().norm();
        if !(d > tol) {
            return Err(Error::SingularOperatingPoint {
                index: None,
                reason: format!("|Is*Vr - Ir*Vs| = {d:.3e} below tolerance {tol:.1e}"),
            });
        }
        let w = self.voltage_sum().norm();
        if !(w > tol) {
            return Err(Error::SingularOperatingPoint {
                index: None,
                reason: format!("|Vs + Vr| = {w:.3e} below tolerance {tol:.1e}"),
            });
        }
        Ok(())
    }

    pub fn solve(&self) -> LineSolution {
        let z = (self.vs * self.vs - self.vr * self.vr) / self.impedance_denominator();
        let y = 2.0 * (self.is_ + self.ir) / self.voltage_sum();
        LineSolution { z, y }
    }
}

/// Inverts the PI model from rebased channel values.
pub fn solve_channels(c: &[f64; 7], tol: f64) -> Result<LineSolution> {
    let rb = Rebased::from_channels(c);
    rb.check(tol)?;
    Ok(rb.solve())
}

pub fn solve_line(snap: &MeasurementSnapshot) -> Result<LineSolution> {
    solve_channels(&snap.channels(), SINGULAR_TOL)
}

pub fn compute_line_params(snap: &MeasurementSnapshot) -> Result<LineParams> {
    solve_line(snap).map(|s| s.params())
}

/// Sending-end quantities implied by the receiving-end boundary values.
/// Timestamp is zero; zero-magnitude phasors are allowed here.
pub fn forward_simulate(lp: &LineParams, tc: &TerminalConditions) -> MeasurementSnapshot {
    let z = lp.z();
    let y = lp.y();
    let vr = tc.vr.to_complex();
    let ir = tc.ir.to_complex();
    let vs = vr * (1.0 + z * y / 2.0) - z * ir;
    let is_ = y / 2.0 * (vs + vr) - ir;
    MeasurementSnapshot {
        timestamp: 0.0,
        vs: Phasor::from_complex(vs),
        vr: tc.vr,
        is_: Phasor::from_complex(is_),
        ir: tc.ir,
    }
}

/// Nodal residuals (current balance, series voltage drop) of a snapshot
/// against a parameter set.
pub fn nodal_residuals(lp: &LineParams, snap: &MeasurementSnapshot) -> (Complex64, Complex64) {
    let (z, y) = (lp.z(), lp.y());
    let vs = snap.vs.to_complex();
    let vr = snap.vr.to_complex();
    let is_ = snap.is_.to_complex();
    let ir = snap.ir.to_complex();
    let kcl = is_ - vs * y / 2.0 + ir - vr * y / 2.0;
    let kvl = vs - z * (is_ - vs * y / 2.0) - vr;
    (kcl, kvl)
}

pub fn rebase_angles(snap: &MeasurementSnapshot) -> MeasurementSnapshot {
    let phi = snap.ir.angle();
    let mut out = snap.rotate(-phi);
    out.ir = Phasor::new(snap.ir.magnitude(), 0.0).expect("finite magnitude");
    out
}
