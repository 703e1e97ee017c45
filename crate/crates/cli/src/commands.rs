use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use pmucal::calibrator::SCHEMA_VERSION;
use pmucal::datagen::{self, ScenarioSpec};
use pmucal::estimator::{reference_error_sweep, Axis};
use pmucal::sensitivity::{fd_check_block, sensitivity_block, ROW_NAMES};
use pmucal::{apply_report, calibrate, Channel, LineParams, MeasurementSnapshot, ResidualRows};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::csvio::{self, Units};
use crate::report::{self, FailureReport};
use crate::CliError;

/// Threshold on the finite-difference check.
pub const DERIVATIVE_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Default, Args)]
pub struct UnitArgs {
    /// Angles in the CSV are degrees.
    #[arg(long)]
    pub degrees: bool,
    /// Magnitudes are volts (line-to-neutral) and amperes; needs base.* in the config.
    #[arg(long)]
    pub engineering_units: bool,
    /// The CSV's receiving-end current flows out of the line.
    #[arg(long)]
    pub flip_receiving_current: bool,
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read(path)?).map_err(|_| CliError::Usage(format!("{}: not UTF-8", path.display())))
}

fn write(path: &Path, data: &str) -> Result<(), CliError> {
    fs::write(path, data).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

fn load_config(path: Option<&Path>) -> Result<(Config, Option<String>), CliError> {
    match path {
        None => Ok((Config::from_entries(BTreeMap::new())?, None)),
        Some(p) => {
            let bytes = read(p)?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|_| CliError::Usage(format!("{}: not UTF-8", p.display())))?;
            Ok((Config::parse(&text)?, Some(sha256_hex(&bytes))))
        }
    }
}

fn units(args: &UnitArgs, cfg: &Config) -> Result<Units, CliError> {
    let engineering = if args.engineering_units {
        Some(cfg.base.ok_or_else(|| {
            CliError::Usage("--engineering-units needs base.voltage_kv and base.power_mva in the config".into())
        })?)
    } else {
        None
    };
    Ok(Units {
        degrees: args.degrees,
        engineering,
        flip_receiving_current: args.flip_receiving_current || cfg.flip_receiving_current,
    })
}

fn scenario(cfg: &Config, preset: Option<&str>) -> Result<ScenarioSpec, CliError> {
    let mut spec = match preset {
        Some(p) => datagen::preset(p)?,
        None => ScenarioSpec::default(),
    };
    if let Some(b) = cfg.base {
        spec.line = datagen::table8_line(&b);
    }
    if let Some(n) = cfg.snapshots {
        spec.n_snapshots = n;
    }
    if let Some(s) = cfg.noise_sigma {
        spec.noise_sigma = s;
    }
    if let Some(s) = cfg.seed {
        spec.seed = s;
    }
    Ok(spec)
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scenario preset (case1_a..case1_f, case2, case3, case4, table1_realistic).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write `<output>.truth.json`.
    #[arg(long)]
    pub with_truth: bool,
    /// Write a matching config (EMS references) to this path.
    #[arg(long)]
    pub write_config: Option<PathBuf>,
    #[arg(long)]
    pub snapshots: Option<usize>,
    /// Gaussian noise standard deviation (p.u. and rad).
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub units: UnitArgs,
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let (cfg, _) = load_config(a.config.as_deref())?;
    let mut spec = scenario(&cfg, a.preset.as_deref())?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.snapshots {
        spec.n_snapshots = n;
    }
    if let Some(s) = a.noise {
        spec.noise_sigma = s;
    }
    let data = datagen::generate(&spec)?;
    let u = units(&a.units, &cfg)?;
    let comment = format!(
        "pmucal simulate preset={} seed={} snapshots={} noise={}",
        a.preset.as_deref().unwrap_or("default"),
        spec.seed,
        spec.n_snapshots,
        spec.noise_sigma
    );
    write(&a.output, &csvio::render(&data.snapshots, &u, &[comment]))?;
    if a.with_truth {
        let mut p = a.output.clone().into_os_string();
        p.push(".truth.json");
        let doc = serde_json::json!({ "truth": data.truth, "scenario": spec });
        write(Path::new(&p), &(serde_json::to_string_pretty(&doc).expect("truth serializes") + "\n"))?;
    }
    if let Some(path) = &a.write_config {
        let mut s = String::new();
        let ems = data.truth.ems;
        let _ = writeln!(s, "ems.r = {}\nems.x = {}\nems.bc = {}", ems.r, ems.x, ems.bc);
        if let Some(b) = cfg.base {
            let _ = writeln!(s, "base.voltage_kv = {}\nbase.power_mva = {}", b.voltage_base / 1e3, b.power_base / 1e6);
        }
        write(path, &s)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub config: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also write the text summary here.
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Worker threads for the scan (overrides scan.workers).
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub units: UnitArgs,
}

pub fn calibrate_cmd(a: &CalibrateArgs) -> Result<String, CliError> {
    let (cfg, cfg_digest) = load_config(Some(&a.config))?;
    let u = units(&a.units, &cfg)?;
    let input = read(&a.input)?;
    let text = String::from_utf8(input.clone()).map_err(|_| CliError::Usage("input is not UTF-8".into()))?;
    let snaps = csvio::parse(&text, &u)?;
    let mut scan = cfg.scan.clone();
    if let Some(w) = a.workers {
        scan.worker_count = w;
    }
    let mut provenance = BTreeMap::new();
    provenance.insert("input_sha256".to_string(), sha256_hex(&input));
    provenance.insert("config_sha256".to_string(), cfg_digest.unwrap_or_default());
    provenance.insert("tool".to_string(), format!("pmucal {}", env!("CARGO_PKG_VERSION")));
    for (k, v) in &cfg.entries {
        provenance.insert(format!("config.{k}"), v.clone());
    }

    let started = Instant::now();
    let result = calibrate(&snaps, cfg.ems, &scan);
    eprintln!("calibration finished in {:.3} s", started.elapsed().as_secs_f64());
    match result {
        Ok(mut r) => {
            r.provenance = provenance;
            write(&a.output, &report::to_json(&r))?;
            let text = report::render_text(&r);
            if let Some(p) = &a.text {
                write(p, &text)?;
            }
            Ok(text)
        }
        Err(pmucal::Error::NoFeasibleHypothesis) => {
            let fail = FailureReport {
                schema_version: SCHEMA_VERSION,
                status: "no_feasible_hypothesis".into(),
                message: pmucal::Error::NoFeasibleHypothesis.to_string(),
                snapshots: snaps.len(),
                config: scan,
                provenance,
            };
            write(&a.output, &(serde_json::to_string_pretty(&fail).expect("serializes") + "\n"))?;
            Err(CliError::NoFeasible("every candidate produced a degenerate or implausible cluster".into()))
        }
        Err(e) => Err(e.into()),
    }
}

/// Snapshots from `--input` or, failing that, the scenario described by the config.
fn scenario_snapshots(
    cfg: &Config,
    input: Option<&Path>,
    u: &UnitArgs,
) -> Result<(Vec<MeasurementSnapshot>, LineParams), CliError> {
    match input {
        Some(p) => {
            let snaps = csvio::parse(&read_text(p)?, &units(u, cfg)?)?;
            let e = cfg.ems;
            let reference = match (e.r, e.x, e.bc) {
                (Some(r), Some(x), Some(bc)) => LineParams { r, x, bc, g: 0.0 },
                _ => return Err(CliError::Usage("ems.r, ems.x and ems.bc are required with --input".into())),
            };
            Ok((snaps, reference))
        }
        None => {
            let spec = scenario(cfg, None)?;
            let d = datagen::generate(&spec)?;
            Ok((d.snapshots, d.truth.line))
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SensitivityArgs {
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Measurements to analyse instead of the default scenario.
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Reference axis to perturb: r, x or bc.
    #[arg(long, default_value = "x")]
    pub axis: String,
    /// Reference errors in percent, comma separated.
    #[arg(long, default_value = "-10,-5,0", allow_hyphen_values = true)]
    pub levels: String,
    /// impedance (R, X, Bc rows) or impedance_and_conductance.
    #[arg(long, default_value = "impedance")]
    pub rows: String,
    /// Write a dense sweep (-20%..20% in 1% steps) as CSV.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    #[command(flatten)]
    pub units: UnitArgs,
}

fn parse_rows(s: &str) -> Result<ResidualRows, CliError> {
    match s {
        "impedance" => Ok(ResidualRows::Impedance),
        "impedance_and_conductance" => Ok(ResidualRows::ImpedanceAndConductance),
        _ => Err(CliError::Usage(format!("--rows must be impedance or impedance_and_conductance, got '{s}'"))),
    }
}

pub fn sensitivity_cmd(a: &SensitivityArgs) -> Result<String, CliError> {
    let axis = Axis::parse(&a.axis).ok_or_else(|| CliError::Usage(format!("unknown axis '{}' (use r, x or bc)", a.axis)))?;
    let levels: Vec<f64> = a
        .levels
        .split(',')
        .map(|s| s.trim().parse::<f64>().map(|v| v / 100.0))
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("cannot parse levels '{}'", a.levels)))?;
    let rows = parse_rows(&a.rows)?;
    let (cfg, _) = load_config(a.config.as_deref())?;
    let (snaps, reference) = scenario_snapshots(&cfg, a.input.as_deref(), &a.units)?;
    let est = reference_error_sweep(&snaps, &reference, axis, &levels, rows)?;
    let mut out = String::new();
    let _ = write!(out, "{:<6}{:>10}", "axis", "error(%)");
    for c in Channel::ALL {
        let _ = write!(out, "{:>11}", c.name());
    }
    out.push('\n');
    for (l, f) in levels.iter().zip(&est) {
        let _ = write!(out, "{:<6}{:>10.2}", axis.name(), l * 100.0);
        for v in f.to_array() {
            let _ = write!(out, "{v:>11.5}");
        }
        out.push('\n');
    }
    if let Some(p) = &a.plot_data {
        let dense: Vec<f64> = (-20..=20).map(|k| k as f64 / 100.0).collect();
        let est = reference_error_sweep(&snaps, &reference, axis, &dense, rows)?;
        let mut csv = String::from("error_pct,dVs,dVr,dIs,dIr,dThVs,dThVr,dThIs\n");
        for (l, f) in dense.iter().zip(&est) {
            let _ = write!(csv, "{}", l * 100.0);
            for v in f.to_array() {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
        write(p, &csv)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    /// Test hook: perturb one analytic coefficient before checking.
    #[arg(long, hide = true)]
    pub corrupt_derivative: bool,
    #[command(flatten)]
    pub units: UnitArgs,
}

pub fn check_derivatives(a: &CheckArgs) -> Result<String, CliError> {
    let (cfg, _) = load_config(a.config.as_deref())?;
    let snaps = match a.input.as_deref() {
        Some(p) => csvio::parse(&read_text(p)?, &units(&a.units, &cfg)?)?,
        None => scenario_snapshots(&cfg, None, &a.units)?.0,
    };
    let mut worst = [[0.0f64; 7]; 4];
    for (i, s) in snaps.iter().enumerate() {
        let mut block = sensitivity_block(s).map_err(|e| CliError::Usage(format!("snapshot {} (data row {}): {e}", i, i + 1)))?;
        if a.corrupt_derivative {
            block.r[2] *= 1.01;
        }
        let rep = fd_check_block(&s.channels(), a.step, &block)?;
        for r in 0..4 {
            for k in 0..7 {
                worst[r][k] = worst[r][k].max(rep.errors[r][k]);
            }
        }
    }
    let mut out = format!("max relative error over {} snapshots (step {:e})\n", snaps.len(), a.step);
    let _ = write!(out, "{:<4}", "");
    for c in Channel::ALL {
        let _ = write!(out, "{:>11}", c.name());
    }
    out.push('\n');
    let mut max: f64 = 0.0;
    for (r, row) in worst.iter().enumerate() {
        let _ = write!(out, "{:<4}", ROW_NAMES[r]);
        for v in row {
            let _ = write!(out, "{v:>11.2e}");
            max = max.max(*v);
        }
        out.push('\n');
    }
    let _ = writeln!(out, "overall max {max:.3e} (threshold {DERIVATIVE_TOL:e})");
    if max < DERIVATIVE_TOL {
        Ok(out)
    } else {
        Err(CliError::SelfCheck(format!("{out}derivative mismatch {max:.3e} exceeds {DERIVATIVE_TOL:e}")))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ApplyArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub report: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub units: UnitArgs,
}

pub fn apply(a: &ApplyArgs) -> Result<(), CliError> {
    let (cfg, _) = load_config(a.config.as_deref())?;
    let u = units(&a.units, &cfg)?;
    let snaps = csvio::parse(&read_text(&a.input)?, &u)?;
    let rep_bytes = read(&a.report)?;
    let rep = report::from_json(
        std::str::from_utf8(&rep_bytes).map_err(|_| CliError::Usage("report is not UTF-8".into()))?,
    )?;
    let fixed = apply_report(&snaps, &rep)?;
    let comment = format!(
        "corrected by pmucal apply; report sha256 {}; channels {}",
        sha256_hex(&rep_bytes),
        rep.biased_channels().iter().map(|c| c.name()).collect::<Vec<_>>().join(" ")
    );
    write(&a.output, &csvio::render(&fixed, &u, &[comment]))
}
