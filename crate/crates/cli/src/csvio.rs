//! Measurement CSV: `timestamp,vs_mag,vs_ang,vr_mag,vr_ang,is_mag,is_ang,ir_mag,ir_ang`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use pmucal::{MeasurementSnapshot, PerUnitBase, Phasor};

use crate::CliError;

pub const HEADER: &str = "timestamp,vs_mag,vs_ang,vr_mag,vr_ang,is_mag,is_ang,ir_mag,ir_ang";

/// Boundary conversions between file values and internal per-unit/radians.
#[derive(Debug, Clone, Copy, Default)]
pub struct Units {
    pub degrees: bool,
    /// Volts (line-to-neutral) and amperes, converted through this base.
    pub engineering: Option<PerUnitBase>,
    /// Receiving current in the file flows out of the line.
    pub flip_receiving_current: bool,
}

impl Units {
    fn angle_in(&self, a: f64) -> f64 {
        if self.degrees {
            a.to_radians()
        } else {
            a
        }
    }

    fn angle_out(&self, a: f64) -> f64 {
        if self.degrees {
            a.to_degrees()
        } else {
            a
        }
    }

    fn mag_in(&self, m: f64, voltage: bool) -> f64 {
        match (self.engineering, voltage) {
            (None, _) => m,
            (Some(b), true) => b.phase_volts_to_pu(m),
            (Some(b), false) => b.amperes_to_pu(m),
        }
    }

    fn mag_out(&self, m: f64, voltage: bool) -> f64 {
        match (self.engineering, voltage) {
            (None, _) => m,
            (Some(b), true) => b.pu_to_phase_volts(m),
            (Some(b), false) => b.pu_to_amperes(m),
        }
    }
}

pub fn parse(text: &str, units: &Units) -> Result<Vec<MeasurementSnapshot>, CliError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        Some((i, h)) => {
            return Err(CliError::Usage(format!(
                "line {}: expected header '{HEADER}', found '{}'",
                i + 1,
                h.trim()
            )))
        }
        None => return Err(CliError::Usage("measurement file is empty".into())),
    }
    let mut out: Vec<MeasurementSnapshot> = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 9 {
            return Err(CliError::Usage(format!("line {lineno}: expected 9 columns, found {}", fields.len())));
        }
        let mut v = [0.0; 9];
        for (k, f) in fields.iter().enumerate() {
            v[k] = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Usage(format!("line {lineno}, column {}: cannot parse '{f}'", k + 1)))?;
        }
        if let Some(prev) = out.last() {
            if !(v[0] > prev.timestamp) {
                return Err(CliError::Usage(format!("line {lineno}: timestamps must be strictly increasing")));
            }
        }
        let ph = |m: f64, a: f64, voltage: bool| {
            Phasor::new(units.mag_in(m, voltage), units.angle_in(a))
                .map_err(|e| CliError::Usage(format!("line {lineno}: {e}")))
        };
        let mut ir = ph(v[7], v[8], false)?;
        if units.flip_receiving_current {
            ir = ir.rotate(PI);
        }
        let snap = MeasurementSnapshot::new(v[0], ph(v[1], v[2], true)?, ph(v[3], v[4], true)?, ph(v[5], v[6], false)?, ir)
            .map_err(|e| CliError::Usage(format!("line {lineno}: {e}")))?;
        out.push(snap);
    }
    Ok(out)
}

pub fn render(snaps: &[MeasurementSnapshot], units: &Units, comments: &[String]) -> String {
    let mut s = String::new();
    for c in comments {
        let _ = writeln!(s, "# {c}");
    }
    s.push_str(HEADER);
    s.push('\n');
    for snap in snaps {
        let ir = if units.flip_receiving_current { snap.ir.rotate(PI) } else { snap.ir };
        let _ = write!(s, "{}", snap.timestamp);
        for (p, voltage) in [(snap.vs, true), (snap.vr, true), (snap.is_, false), (ir, false)] {
            let _ = write!(s, ",{},{}", units.mag_out(p.magnitude(), voltage), units.angle_out(p.angle()));
        }
        s.push('\n');
    }
    s
}
