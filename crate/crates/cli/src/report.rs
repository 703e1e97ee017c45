//! Report serialization and the tabular text summary.

use std::fmt::Write as _;

use pmucal::calibrator::SCHEMA_VERSION;
use pmucal::{CalibrationReport, Channel};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn to_json(r: &CalibrationReport) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("report serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<CalibrationReport, CliError> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("report is not valid JSON: {e}")))?;
    match v.get("schema_version").and_then(|s| s.as_u64()) {
        Some(n) if n == SCHEMA_VERSION as u64 => {}
        Some(n) => {
            return Err(CliError::Usage(format!(
                "report schema version {n} is not supported (expected {SCHEMA_VERSION})"
            )))
        }
        None => return Err(CliError::Usage("report has no schema_version".into())),
    }
    if v.get("status").is_some() {
        return Err(CliError::Usage("file is a failure diagnostic, not a calibration report".into()));
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("report does not match schema: {e}")))
}

/// Written in place of a report when no hypothesis survives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureReport {
    pub schema_version: u32,
    pub status: String,
    pub message: String,
    pub snapshots: usize,
    pub config: pmucal::ScanConfig,
    pub provenance: std::collections::BTreeMap<String, String>,
}

pub fn render_text(r: &CalibrationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Calibration report (schema {})", r.schema_version);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<30}{:>12}{:>12}{:>12}", "", "R", "X", "Bc");
    let _ = writeln!(s, "{:<30}{:>12.7}{:>12.7}{:>12.7}", "EMS reference (p.u.)", r.ems.r, r.ems.x, r.ems.bc);
    let _ = writeln!(
        s,
        "{:<30}{:>12.7}{:>12.7}{:>12.7}",
        "Selected (p.u.)", r.selected.r, r.selected.x, r.selected.bc
    );
    let _ = writeln!(
        s,
        "{:<30}{:>12.2}{:>12.2}{:>12.2}",
        "Calculated error in EMS (%)", r.ems_error_pct[0], r.ems_error_pct[1], r.ems_error_pct[2]
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "Bias errors (x1e-3; p.u. for magnitudes, rad for angles)");
    let mut head = format!("{:<12}", "");
    let mut vals = format!("{:<12}", "calculated");
    let mut flags = format!("{:<12}", "status");
    for c in &r.channels {
        let _ = write!(head, "{:>10}", c.channel.name());
        let _ = write!(vals, "{:>10.4}", c.estimate * 1e3);
        let _ = write!(flags, "{:>10}", if c.biased { "BIASED" } else { "-" });
    }
    let _ = writeln!(s, "{head}\n{vals}\n{flags}");
    let _ = writeln!(s);
    let biased: Vec<&str> = r.biased_channels().iter().map(|c| Channel::name(*c)).collect();
    if biased.is_empty() {
        let _ = writeln!(s, "No significant bias error identified.");
    } else {
        let _ = writeln!(s, "Biased channels: {}", biased.join(", "));
    }
    let _ = writeln!(s, "{}", r.reference_channel);
    let _ = writeln!(
        s,
        "Cluster: {} of 8 points, tightness {:.3e}, radius {:.3e}",
        r.cluster.cluster_size, r.cluster.tightness, r.cluster.eps
    );
    let _ = writeln!(
        s,
        "Scan: {} candidates over {} stage(s); {} of {} snapshots; cond(H) {:.3e}",
        r.scan.total_candidates,
        r.scan.stages.len(),
        r.scan.snapshots_used,
        r.scan.snapshots_total,
        r.scan.condition_number
    );
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}
