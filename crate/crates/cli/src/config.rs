//! Flat `key = value` configuration.

use std::collections::BTreeMap;

use pmucal::calibrator::Strategy;
use pmucal::{EmsReference, EpsMode, PerUnitBase, ResidualRows, ScanConfig};

use crate::CliError;

pub const KEYS: &[&str] = &[
    "ems.r",
    "ems.x",
    "ems.bc",
    "base.voltage_kv",
    "base.power_mva",
    "scan.alpha",
    "scan.coarse_step",
    "scan.refine_step",
    "scan.refine_radius",
    "scan.max_candidates",
    "scan.strategy",
    "scan.workers",
    "scan.relinearize_passes",
    "scan.rows",
    "scan.weights",
    "scan.max_snapshots",
    "cluster.min_pts",
    "cluster.eps_mode",
    "cluster.eps_fixed",
    "cluster.membership_bound",
    "noise.sigma",
    "seed",
    "snapshots",
    "flip_receiving_current",
];

#[derive(Debug, Clone, Default)]
pub struct Config {
    pub entries: BTreeMap<String, String>,
    pub ems: EmsReference,
    pub base: Option<PerUnitBase>,
    pub scan: ScanConfig,
    pub noise_sigma: Option<f64>,
    pub seed: Option<u64>,
    pub snapshots: Option<usize>,
    pub flip_receiving_current: bool,
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Usage(format!("config key {key}: cannot parse '{v}'")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(CliError::Usage(format!("config line {}: unknown key '{k}'", i + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::Usage(format!("config line {}: duplicate key '{k}'", i + 1)));
            }
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut c = Config { entries: entries.clone(), ..Default::default() };
        let mut kv = None;
        let mut mva = None;
        for (k, v) in &entries {
            let v = v.as_str();
            match k.as_str() {
                "ems.r" => c.ems.r = Some(num(k, v)?),
                "ems.x" => c.ems.x = Some(num(k, v)?),
                "ems.bc" => c.ems.bc = Some(num(k, v)?),
                "base.voltage_kv" => kv = Some(num::<f64>(k, v)?),
                "base.power_mva" => mva = Some(num::<f64>(k, v)?),
                "scan.alpha" => c.scan.alpha = num(k, v)?,
                "scan.coarse_step" => c.scan.coarse_step = num(k, v)?,
                "scan.refine_step" => c.scan.refine_step = num(k, v)?,
                "scan.refine_radius" => c.scan.refine_radius = num(k, v)?,
                "scan.max_candidates" => c.scan.max_candidates = num(k, v)?,
                "scan.workers" => c.scan.worker_count = num(k, v)?,
                "scan.relinearize_passes" => c.scan.relinearize_passes = num(k, v)?,
                "scan.max_snapshots" => c.scan.max_snapshots = num(k, v)?,
                "scan.strategy" => {
                    c.scan.strategy = match v {
                        "two_stage" => Strategy::TwoStage,
                        "flat" => Strategy::Flat,
                        _ => return Err(CliError::Usage(format!("scan.strategy must be two_stage or flat, got '{v}'"))),
                    }
                }
                "scan.rows" => {
                    c.scan.rows = match v {
                        "impedance" => ResidualRows::Impedance,
                        "impedance_and_conductance" => ResidualRows::ImpedanceAndConductance,
                        _ => {
                            return Err(CliError::Usage(format!(
                                "scan.rows must be impedance or impedance_and_conductance, got '{v}'"
                            )))
                        }
                    }
                }
                "scan.weights" => {
                    let w: Result<Vec<f64>, _> = v.split(',').map(|x| num::<f64>(k, x.trim())).collect();
                    c.scan.weights = Some(w?);
                }
                "cluster.min_pts" => c.scan.cluster.min_pts = num(k, v)?,
                "cluster.eps_mode" => {
                    c.scan.cluster.eps_mode = EpsMode::parse(v)
                        .ok_or_else(|| CliError::Usage(format!("cluster.eps_mode must be fixed, bound or gap, got '{v}'")))?
                }
                "cluster.eps_fixed" => c.scan.cluster.eps_fixed = num(k, v)?,
                "cluster.membership_bound" => c.scan.cluster.membership_bound = num(k, v)?,
                "noise.sigma" => c.noise_sigma = Some(num(k, v)?),
                "seed" => c.seed = Some(num(k, v)?),
                "snapshots" => c.snapshots = Some(num(k, v)?),
                "flip_receiving_current" => c.flip_receiving_current = num(k, v)?,
                _ => unreachable!("keys are checked on parse"),
            }
        }
        c.base = match (kv, mva) {
            (None, None) => None,
            (Some(kv), Some(mva)) => Some(PerUnitBase::from_kv_mva(kv, mva).map_err(|e| CliError::Usage(e.to_string()))?),
            _ => return Err(CliError::Usage("base.voltage_kv and base.power_mva must be given together".into())),
        };
        c.scan.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
