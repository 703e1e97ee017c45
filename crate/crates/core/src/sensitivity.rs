//! Analytic sensitivities of the inverted line parameters to the seven
//! measurement channels, and the stacked design matrix H.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::line::{solve_channels, MeasurementSnapshot, Rebased, SINGULAR_TOL};

/// Condition numbers above this produce a warning.
pub const CONDITION_WARN: f64 = 1e10;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Which residual rows each snapshot contributes.
///
/// `Impedance` is (R, X, Bc). `ImpedanceAndConductance` adds real(Y),
/// whose reference value is zero; that row breaks the near-degeneracy
/// between a common voltage-angle rotation and a rotation of Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualRows {
    Impedance,
    #[default]
    ImpedanceAndConductance,
}

impl ResidualRows {
    pub fn count(self) -> usize {
        match self {
            ResidualRows::Impedance => 3,
            ResidualRows::ImpedanceAndConductance => 4,
        }
    }
}

/// Derivatives of the four rebased complex phasors with respect to one channel.
fn phasor_tangent(rb: &Rebased, c: &[f64; 7], k: usize) -> [Complex64; 4] {
    let z = Complex64::new(0.0, 0.0);
    match k {
        0 => [Complex64::from_polar(1.0, c[4]), z, z, z],
        1 => [z, Complex64::from_polar(1.0, c[5]), z, z],
        2 => [z, z, Complex64::from_polar(1.0, c[6]), z],
        3 => [z, z, z, Complex64::new(1.0, 0.0)],
        4 => [I * rb.vs, z, z, z],
        5 => [z, I * rb.vr, z, z],
        6 => [z, z, I * rb.is_, z],
        _ => unreachable!("seven channels"),
    }
}

fn partials(c: &[f64; 7]) -> ([Complex64; 7], [Complex64; 7]) {
    let rb = Rebased::from_channels(c);
    let n = rb.vs * rb.vs - rb.vr * rb.vr;
    let d = rb.impedance_denominator();
    let w = rb.voltage_sum();
    let s = rb.is_ + rb.ir;
    let mut dz = [Complex64::default(); 7];
    let mut dy = [Complex64::default(); 7];
    for k in 0..7 {
        let [dvs, dvr, dis, dir] = phasor_tangent(&rb, c, k);
        let dn = 2.0 * (rb.vs * dvs - rb.vr * dvr);
        let dd = dis * rb.vr + rb.is_ * dvr - dir * rb.vs - rb.ir * dvs;
        dz[k] = (dn * d - n * dd) / (d * d);
        dy[k] = 2.0 * (dis + dir) / w - 2.0 * s * (dvs + dvr) / (w * w);
    }
    (dz, dy)
}

/// dZ/d(channel) in bias-vector order.
pub fn partials_z(snap: &MeasurementSnapshot) -> Result<[Complex64; 7]> {
    let c = snap.channels();
    let rb = Rebased::from_channels(&c);
    rb.check(SINGULAR_TOL)?;
    Ok(partials(&c).0)
}

/// dY/d(channel) in bias-vector order.
pub fn partials_y(snap: &MeasurementSnapshot) -> Result<[Complex64; 7]> {
    let c = snap.channels();
    let w = Rebased::from_channels(&c).voltage_sum().norm();
    if !(w > SINGULAR_TOL) {
        return Err(Error::SingularOperatingPoint {
            index: None,
            reason: format!("|Vs + Vr| = {w:.3e} below tolerance"),
        });
    }
    Ok(partials(&c).1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBlock {
    pub timestamp: f64,
    pub r: [f64; 7],
    pub x: [f64; 7],
    pub bc: [f64; 7],
    /// real(Y) row.
    pub g: [f64; 7],
}

impl SensitivityBlock {
    pub fn from_channels(timestamp: f64, c: &[f64; 7]) -> Result<Self> {
        Rebased::from_channels(c).check(SINGULAR_TOL)?;
        let (dz, dy) = partials(c);
        Ok(Self {
            timestamp,
            r: dz.map(|v| v.re),
            x: dz.map(|v| v.im),
            bc: dy.map(|v| v.im),
            g: dy.map(|v| v.re),
        })
    }

    /// The (R, X, Bc) coefficient matrix.
    pub fn coefficients(&self) -> [[f64; 7]; 3] {
        [self.r, self.x, self.bc]
    }

    pub fn rows(&self, rows: ResidualRows) -> Vec<[f64; 7]> {
        match rows {
            ResidualRows::Impedance => vec![self.r, self.x, self.bc],
            ResidualRows::ImpedanceAndConductance => vec![self.r, self.x, self.bc, self.g],
        }
    }
}

pub fn sensitivity_block(snap: &MeasurementSnapshot) -> Result<SensitivityBlock> {
    SensitivityBlock::from_channels(snap.timestamp, &snap.channels())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub h: DMatrix<f64>,
    pub n: usize,
    pub rows: ResidualRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub condition: f64,
}

impl Conditioning {
    pub fn warn(&self) -> bool {
        !(self.condition <= CONDITION_WARN)
    }
}

pub fn conditioning_of(h: &DMatrix<f64>) -> Conditioning {
    let mut sv: Vec<f64> = h.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv.first().copied().unwrap_or(0.0);
    let tol = smax * (h.nrows().max(h.ncols()) as f64) * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let smin = if sv.len() < h.ncols() { 0.0 } else { sv.last().copied().unwrap_or(0.0) };
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    Conditioning { singular_values: sv, rank, condition }
}

impl DesignMatrix {
    pub fn conditioning(&self) -> Conditioning {
        conditioning_of(&self.h)
    }
}

/// Stacks one block per channel vector. Block n occupies rows
/// `rows.count()*n ..`.
pub fn assemble_h_channels(points: &[[f64; 7]], timestamps: &[f64], rows: ResidualRows) -> Result<DesignMatrix> {
    if points.len() < 3 {
        return Err(Error::InsufficientSnapshots { required: 3, got: points.len() });
    }
    let blocks: Vec<SensitivityBlock> = points
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let t = timestamps.get(i).copied().unwrap_or(0.0);
            SensitivityBlock::from_channels(t, c).map_err(|e| with_index(e, i))
        })
        .collect::<Result<_>>()?;
    let nr = rows.count();
    let mut h = DMatrix::zeros(nr * points.len(), 7);
    for (n, b) in blocks.iter().enumerate() {
        for (j, row) in b.rows(rows).iter().enumerate() {
            for k in 0..7 {
                h[(nr * n + j, k)] = row[k];
            }
        }
    }
    Ok(DesignMatrix { h, n: points.len(), rows })
}

pub fn assemble_h(snaps: &[MeasurementSnapshot], rows: ResidualRows) -> Result<DesignMatrix> {
    let pts: Vec<[f64; 7]> = snaps.iter().map(|s| s.channels()).collect();
    let ts: Vec<f64> = snaps.iter().map(|s| s.timestamp).collect();
    assemble_h_channels(&pts, &ts, rows)
}

pub(crate) fn with_index(e: Error, i: usize) -> Error {
    match e {
        Error::SingularOperatingPoint { reason, .. } => Error::SingularOperatingPoint { index: Some(i), reason },
        other => other,
    }
}

pub const ROW_NAMES: [&str; 4] = ["R", "X", "Bc", "G"];

/// Analytic versus central-difference comparison for one operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub step: f64,
    /// Relative error per (row, channel), rows R, X, Bc, G.
    pub errors: [[f64; 7]; 4],
}

impl FdReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().flatten().fold(0.0, |m, &e| m.max(e))
    }

    pub fn worst(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, 0.0);
        for (r, row) in self.errors.iter().enumerate() {
            for (k, &e) in row.iter().enumerate() {
                if e > best.2 {
                    best = (r, k, e);
                }
            }
        }
        best
    }
}

/// Compares `block` against central differences of the inversion at `c`.
///
/// Errors are taken relative to the modulus of the complex derivative the
/// entry belongs to (|dZ| for R and X, |dY| for Bc and G), floored at 1e-9,
/// so entries whose real or imaginary part happens to vanish stay meaningful.
pub fn fd_check_block(c: &[f64; 7], step: f64, block: &SensitivityBlock) -> Result<FdReport> {
    if !(1e-8..=1e-3).contains(&step) {
        return Err(Error::Domain(format!("finite-difference step {step} outside [1e-8, 1e-3]")));
    }
    let mut errors = [[0.0; 7]; 4];
    for k in 0..7 {
        let mut plus = *c;
        let mut minus = *c;
        plus[k] += step;
        minus[k] -= step;
        let sp = solve_channels(&plus, 0.0)?;
        let sm = solve_channels(&minus, 0.0)?;
        let dz = (sp.z - sm.z) / (2.0 * step);
        let dy = (sp.y - sm.y) / (2.0 * step);
        let (az, ay) = (
            Complex64::new(block.r[k], block.x[k]),
            Complex64::new(block.g[k], block.bc[k]),
        );
        let sz = az.norm().max(dz.norm()).max(1e-9);
        let sy = ay.norm().max(dy.norm()).max(1e-9);
        errors[0][k] = (block.r[k] - dz.re).abs() / sz;
        errors[1][k] = (block.x[k] - dz.im).abs() / sz;
        errors[2][k] = (block.bc[k] - dy.im).abs() / sy;
        errors[3][k] = (block.g[k] - dy.re).abs() / sy;
    }
    Ok(FdReport { step, errors })
}

pub fn fd_check(snap: &MeasurementSnapshot, step: f64) -> Result<FdReport> {
    let block = sensitivity_block(snap)?;
    fd_check_block(&snap.channels(), step, &block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::Phasor;

    fn p(m: f64, a: f64) -> Phasor {
        Phasor::new(m, a).unwrap()
    }

    #[test]
    fn balanced_dy_dv() {
        let s = MeasurementSnapshot::new(0.0, p(1.0, 0.0), p(1.0, 0.0), p(0.5, 0.0), p(0.5, 0.0)).unwrap();
        let dy = partials_y(&s).unwrap();
        assert!((dy[0] - Complex64::new(-0.5, 0.0)).norm() < 1e-15);
        assert!((dy[1] - Complex64::new(-0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn shapes() {
        let snaps: Vec<_> = (0..3)
            .map(|k| {
                MeasurementSnapshot::new(k as f64, p(1.02, 0.05), p(1.0, 0.1), p(0.3 + 0.1 * k as f64, 3.0), p(0.3, 0.0))
                    .unwrap()
            })
            .collect();
        let h = assemble_h(&snaps, ResidualRows::Impedance).unwrap();
        assert_eq!(h.h.shape(), (9, 7));
        assert!(h.h.iter().all(|v| v.is_finite()));
        let h = assemble_h(&snaps, ResidualRows::ImpedanceAndConductance).unwrap();
        assert_eq!(h.h.shape(), (12, 7));
        assert!(matches!(
            assemble_h(&snaps[..2], ResidualRows::Impedance),
            Err(Error::InsufficientSnapshots { got: 2, .. })
        ));
    }

    #[test]
    fn singular_snapshot_reports_index() {
        let good = MeasurementSnapshot::new(0.0, p(1.02, 0.05), p(1.0, 0.1), p(0.3, 3.0), p(0.3, 0.0)).unwrap();
        let bad = MeasurementSnapshot::new(0.0, p(1.0, 0.2), p(1.0, 0.2), p(0.4, 0.0), p(0.4, 0.0)).unwrap();
        let err = assemble_h(&[good, good, bad, good], ResidualRows::Impedance).unwrap_err();
        assert!(matches!(err, Error::SingularOperatingPoint { index: Some(2), .. }));
    }

    #[test]
    fn fd_step_range() {
        let s = MeasurementSnapshot::new(0.0, p(1.02, 0.05), p(1.0, 0.1), p(0.3, 3.0), p(0.3, 0.0)).unwrap();
        assert!(fd_check(&s, 1e-2).is_err());
        assert!(fd_check(&s, 1e-9).is_err());
    }
}
