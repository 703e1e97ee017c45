//! The end-to-end pipeline: lattice over the EMS feasibility cube, affine
//! multi-hypothesis bias solve, zero-seeded clustering, ranking and a
//! refinement stage, followed by re-linearization at the debiased point.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{zero_seeded_cluster, CandidateScore, ClusterConfig, ClusterOutcome};
use crate::error::{Error, Result};
use crate::estimator::{computed_rows, LinearModel, SolveMethod};
use crate::line::{LineParams, MeasurementSnapshot};
use crate::phasor::{debias, BiasError, BiasVector, Channel, Plausibility};
use crate::sensitivity::{assemble_h_channels, ResidualRows, CONDITION_WARN};

pub const SCHEMA_VERSION: u32 = 1;
pub const REFERENCE_NOTE: &str = "thIr: phase reference, assumed unbiased (not observable)";
const FALLBACK_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    TwoStage,
    /// One lattice over the whole cube at `coarse_step`.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub alpha: f64,
    pub coarse_step: f64,
    pub refine_step: f64,
    pub refine_radius: f64,
    pub max_candidates: usize,
    pub cluster: ClusterConfig,
    /// Zero uses the global rayon pool. Not serialized: it never changes
    /// the result.
    #[serde(skip)]
    pub worker_count: usize,
    pub strategy: Strategy,
    /// Extra refine scans, each linearized at the previous winner's
    /// debiased operating point.
    pub relinearize_passes: usize,
    pub rows: ResidualRows,
    /// Per-row weights (length 3 or 4, matching `rows`).
    pub weights: Option<Vec<f64>>,
    pub max_snapshots: usize,
    pub plausibility: Plausibility,
    #[serde(skip)]
    pub method: SolveMethod,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            alpha: 0.20,
            coarse_step: 0.01,
            refine_step: 0.001,
            refine_radius: 0.015,
            max_candidates: 2_000_000,
            cluster: ClusterConfig::default(),
            worker_count: 0,
            strategy: Strategy::TwoStage,
            relinearize_passes: 1,
            rows: ResidualRows::default(),
            weights: None,
            max_snapshots: 200,
            plausibility: Plausibility::default(),
            method: SolveMethod::Qr,
        }
    }
}

impl ScanConfig {
    /// References taken as exact: a single candidate at the EMS point, and a
    /// zero seed allowed to stand alone so every channel may be flagged.
    pub fn exact_reference() -> Self {
        Self {
            alpha: 1e-9,
            coarse_step: 1.0,
            strategy: Strategy::Flat,
            cluster: ClusterConfig { min_pts: 1, ..ClusterConfig::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(Error::Config(format!("scan.alpha must be in (0, 0.5] (got {})", self.alpha)));
        }
        if !(self.refine_step > 0.0 && self.refine_step <= self.coarse_step && self.coarse_step <= self.alpha) {
            // a single-point lattice (step beyond the cube) is allowed for flat scans
            let flat_degenerate = self.strategy == Strategy::Flat && self.coarse_step > 0.0;
            if !flat_degenerate {
                return Err(Error::Config(format!(
                    "need 0 < refine_step <= coarse_step <= alpha (got {}, {}, {})",
                    self.refine_step, self.coarse_step, self.alpha
                )));
            }
        }
        if !(self.refine_radius >= 0.0) {
            return Err(Error::Config("scan.refine_radius must be >= 0".into()));
        }
        if self.max_snapshots < 3 {
            return Err(Error::Config("max_snapshots must be >= 3".into()));
        }
        self.cluster.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub params: LineParams,
    /// Offset from the EMS value as a fraction, per axis.
    pub frac: [f64; 3],
}

/// EMS references; a missing axis is estimated from the data.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmsReference {
    pub r: Option<f64>,
    pub x: Option<f64>,
    pub bc: Option<f64>,
}

impl From<LineParams> for EmsReference {
    fn from(p: LineParams) -> Self {
        Self { r: Some(p.r), x: Some(p.x), bc: Some(p.bc) }
    }
}

fn axis_offsets(center: f64, step: f64, radius: f64, alpha: f64) -> Vec<f64> {
    let k = (radius / step + 1e-9).floor() as i64;
    (-k..=k)
        .map(|i| center + i as f64 * step)
        .filter(|f| f.abs() <= alpha + 1e-12)
        .map(|f| f.clamp(-alpha, alpha))
        .collect()
}

fn lattice(
    ems: [f64; 3],
    center: [f64; 3],
    step: f64,
    radius: f64,
    alpha: [f64; 3],
    limit: usize,
) -> Result<Vec<Candidate>> {
    let axes: Vec<Vec<f64>> = (0..3).map(|a| axis_offsets(center[a], step, radius, alpha[a])).collect();
    let count = axes.iter().map(|a| a.len()).product::<usize>();
    if count > limit {
        return Err(Error::GridTooLarge { count, limit });
    }
    let mut out = Vec::with_capacity(count);
    for &fr in &axes[0] {
        for &fx in &axes[1] {
            for &fb in &axes[2] {
                let frac = [fr, fx, fb];
                out.push(Candidate {
                    index: out.len(),
                    params: LineParams {
                        r: ems[0] * (1.0 + fr),
                        x: ems[1] * (1.0 + fx),
                        bc: ems[2] * (1.0 + fb),
                        g: 0.0,
                    },
                    frac,
                });
            }
        }
    }
    Ok(out)
}

/// Full-cube lattice at `coarse_step`, r-major then x then bc.
pub fn build_grid(ems: &LineParams, cfg: &ScanConfig) -> Result<Vec<Candidate>> {
    if !(ems.r > 0.0 && ems.x > 0.0 && ems.bc > 0.0) {
        return Err(Error::Domain("EMS references must be positive".into()));
    }
    lattice(
        ems.as_array(),
        [0.0; 3],
        cfg.coarse_step,
        cfg.alpha,
        [cfg.alpha; 3],
        cfg.max_candidates,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanResult {
    pub candidate: Candidate,
    pub bias: BiasVector,
    pub outcome: ClusterOutcome,
    pub score: CandidateScore,
}

struct Evaluator<'a> {
    model: &'a LinearModel,
    cluster: &'a ClusterConfig,
    plausibility: &'a Plausibility,
}

impl Evaluator<'_> {
    fn eval(&self, c: &Candidate) -> ScanResult {
        let f = self.model.eval(c.params.as_array());
        let bias = BiasVector::from_array(f);
        let outcome = zero_seeded_cluster(&bias, self.cluster);
        let plausible = Channel::ALL.iter().all(|&ch| self.plausibility.admits_channel(ch, f[ch.index()]));
        let score = CandidateScore {
            index: c.index,
            cluster_size: outcome.cluster_size,
            tightness: outcome.tightness,
            ems_distance: (c.frac[0] * c.frac[0] + c.frac[1] * c.frac[1] + c.frac[2] * c.frac[2]).sqrt(),
            feasible: !outcome.degenerate && plausible && f.iter().all(|v| v.is_finite()),
        };
        ScanResult { candidate: *c, bias, outcome, score }
    }

    fn best(&self, candidates: &[Candidate]) -> Option<ScanResult> {
        candidates
            .par_iter()
            .map(|c| self.eval(c))
            .filter(|r| r.score.feasible)
            .min_by(|a, b| a.score.rank(&b.score))
    }
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn channel_points(snaps: &[MeasurementSnapshot]) -> Vec<[f64; 7]> {
    snaps.iter().map(|s| s.channels()).collect()
}

fn build_model(points: &[[f64; 7]], shift: &BiasVector, cfg: &ScanConfig) -> Result<LinearModel> {
    LinearModel::build(points, shift, cfg.rows, cfg.weights.as_deref(), cfg.method)
}

/// Evaluates every candidate, linearized at the measured operating points.
/// Output order follows `candidates`.
pub fn scan(snaps: &[MeasurementSnapshot], candidates: &[Candidate], cfg: &ScanConfig) -> Result<Vec<ScanResult>> {
    if candidates.is_empty() {
        return Err(Error::Domain("scan needs at least one candidate".into()));
    }
    let points = channel_points(snaps);
    let model = build_model(&points, &BiasVector::zero(), cfg)?;
    let ev = Evaluator { model: &model, cluster: &cfg.cluster, plausibility: &cfg.plausibility };
    with_pool(cfg.worker_count, || candidates.par_iter().map(|c| ev.eval(c)).collect())
}

/// Evaluates every candidate and keeps only the best feasible one.
pub fn scan_best(
    snaps: &[MeasurementSnapshot],
    candidates: &[Candidate],
    cfg: &ScanConfig,
) -> Result<Option<ScanResult>> {
    let points = channel_points(snaps);
    let model = build_model(&points, &BiasVector::zero(), cfg)?;
    let ev = Evaluator { model: &model, cluster: &cfg.cluster, plausibility: &cfg.plausibility };
    with_pool(cfg.worker_count, || ev.best(candidates))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub name: String,
    pub candidates: usize,
    pub step: f64,
    pub radius: f64,
    pub center_pct: [f64; 3],
    pub winner_pct: [f64; 3],
    pub cluster_size: usize,
    pub tightness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFinding {
    pub channel: Channel,
    pub estimate: f64,
    pub biased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_size: usize,
    pub tightness: f64,
    pub eps: f64,
    pub outliers: Vec<Channel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMetadata {
    pub stages: Vec<StageSummary>,
    pub total_candidates: usize,
    pub condition_number: f64,
    pub snapshots_total: usize,
    pub snapshots_used: usize,
    /// Present when the input was decimated.
    pub selected_snapshots: Option<Vec<usize>>,
    /// Largest |real(Y)| over the corrected snapshots.
    pub conductance_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub schema_version: u32,
    pub selected: LineParams,
    pub ems: LineParams,
    /// (selected - EMS) / EMS, percent, per axis.
    pub ems_error_pct: [f64; 3],
    pub biases: BiasVector,
    pub channels: Vec<ChannelFinding>,
    pub reference_channel: String,
    pub cluster: ClusterSummary,
    pub scan: ScanMetadata,
    pub warnings: Vec<String>,
    pub config: ScanConfig,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl CalibrationReport {
    pub fn biased_channels(&self) -> Vec<Channel> {
        self.channels.iter().filter(|c| c.biased).map(|c| c.channel).collect()
    }

    /// Bias vector with unflagged channels zeroed.
    pub fn correction(&self) -> BiasVector {
        self.channels
            .iter()
            .filter(|c| c.biased)
            .fold(BiasVector::zero(), |b, c| b.with(c.channel, c.estimate))
    }
}

fn decimate(n: usize, keep: usize) -> Vec<usize> {
    if n <= keep {
        return (0..n).collect();
    }
    (0..keep).map(|i| ((i * (n - 1)) as f64 / (keep - 1) as f64).round() as usize).collect()
}

fn pct(a: [f64; 3]) -> [f64; 3] {
    a.map(|v| v * 100.0)
}

fn stage_summary(name: &str, n: usize, step: f64, radius: f64, center: [f64; 3], best: &ScanResult) -> StageSummary {
    StageSummary {
        name: name.into(),
        candidates: n,
        step,
        radius,
        center_pct: pct(center),
        winner_pct: pct(best.candidate.frac),
        cluster_size: best.outcome.cluster_size,
        tightness: best.outcome.tightness,
    }
}

pub fn calibrate(snaps: &[MeasurementSnapshot], ems: EmsReference, cfg: &ScanConfig) -> Result<CalibrationReport> {
    cfg.validate()?;
    if snaps.len() < 3 {
        return Err(Error::InsufficientSnapshots { required: 3, got: snaps.len() });
    }
    let mut warnings = Vec::new();
    let selected = decimate(snaps.len(), cfg.max_snapshots);
    let decimated = selected.len() < snaps.len();
    if decimated {
        warnings.push(format!(
            "input decimated from {} to {} snapshots",
            snaps.len(),
            selected.len()
        ));
    }
    let points: Vec<[f64; 7]> = selected.iter().map(|&i| snaps[i].channels()).collect();
    let computed = computed_rows(&points, ResidualRows::Impedance).map_err(|e| match e {
        Error::SingularOperatingPoint { index: Some(i), reason } => {
            Error::SingularOperatingPoint { index: Some(selected[i]), reason }
        }
        other => other,
    })?;

    let mut center_ems = [0.0; 3];
    let mut alpha = [cfg.alpha; 3];
    for (a, given) in [ems.r, ems.x, ems.bc].into_iter().enumerate() {
        match given {
            Some(v) if v > 0.0 && v.is_finite() => center_ems[a] = v,
            Some(v) => return Err(Error::Config(format!("EMS reference {v} must be positive"))),
            None => {
                let mean = computed.iter().skip(a).step_by(3).sum::<f64>() / points.len() as f64;
                if !(mean > 0.0) {
                    return Err(Error::Config(format!(
                        "EMS axis {} missing and the data mean {mean} is not positive",
                        ["r", "x", "bc"][a]
                    )));
                }
                center_ems[a] = mean;
                alpha[a] = FALLBACK_ALPHA;
                warnings.push(format!(
                    "EMS {} missing: using data mean {mean:.6} with band widened to {}",
                    ["r", "x", "bc"][a],
                    FALLBACK_ALPHA
                ));
            }
        }
    }
    let ems_params = LineParams { r: center_ems[0], x: center_ems[1], bc: center_ems[2], g: 0.0 };

    let model = build_model(&points, &BiasVector::zero(), cfg)?;
    if model.condition > CONDITION_WARN {
        warnings.push(format!("design matrix condition number {:.3e} exceeds {CONDITION_WARN:.0e}", model.condition));
    }

    let limit = cfg.max_candidates;
    let max_alpha = alpha.iter().fold(0.0f64, |m, &a| m.max(a));
    let mut stages = Vec::new();
    let mut total = 0;

    let run = |model: &LinearModel, cands: &[Candidate]| -> Result<Option<ScanResult>> {
        let ev = Evaluator { model, cluster: &cfg.cluster, plausibility: &cfg.plausibility };
        with_pool(cfg.worker_count, || ev.best(cands))
    };

    let coarse = lattice(center_ems, [0.0; 3], cfg.coarse_step, max_alpha, alpha, limit)?;
    total += coarse.len();
    let name = if cfg.strategy == Strategy::Flat { "flat" } else { "coarse" };
    let mut best = run(&model, &coarse)?.ok_or(Error::NoFeasibleHypothesis)?;
    stages.push(stage_summary(name, coarse.len(), cfg.coarse_step, max_alpha, [0.0; 3], &best));
    let step = if cfg.strategy == Strategy::Flat { cfg.coarse_step } else { cfg.refine_step };

    if cfg.strategy == Strategy::TwoStage {
        let center = best.candidate.frac;
        let fine = lattice(center_ems, center, cfg.refine_step, cfg.refine_radius, alpha, limit)?;
        total += fine.len();
        if let Some(b) = run(&model, &fine)? {
            best = b;
        }
        stages.push(stage_summary("refine", fine.len(), cfg.refine_step, cfg.refine_radius, center, &best));
    }

    for pass in 0..cfg.relinearize_passes {
        let center = best.candidate.frac;
        let relin = build_model(&points, &best.bias, cfg)?;
        let radius = if cfg.strategy == Strategy::Flat { cfg.coarse_step } else { cfg.refine_radius };
        let cands = lattice(center_ems, center, step, radius, alpha, limit)?;
        total += cands.len();
        match run(&relin, &cands)? {
            Some(b) => {
                best = b;
            }
            None => warnings.push(format!("re-linearization pass {} found no feasible candidate", pass + 1)),
        }
        stages.push(stage_summary(&format!("relinearize-{}", pass + 1), cands.len(), step, radius, center, &best));
    }

    let outcome = best.outcome;
    let channels: Vec<ChannelFinding> = Channel::ALL
        .iter()
        .map(|&c| ChannelFinding { channel: c, estimate: best.bias.get(c), biased: outcome.is_outlier(c) })
        .collect();

    let correction = channels
        .iter()
        .filter(|c| c.biased)
        .fold(BiasVector::zero(), |b, c| b.with(c.channel, c.estimate))
        .to_array();
    let corrected: Vec<[f64; 7]> = points.iter().map(|p| std::array::from_fn(|k| p[k] + correction[k])).collect();
    let conductance_residual = computed_rows(&corrected, ResidualRows::ImpedanceAndConductance)
        .ok()
        .map(|rows| rows.iter().skip(3).step_by(4).fold(0.0f64, |m, v| m.max(v.abs())));

    let sel = best.candidate.params;
    let condition = assemble_h_channels(&points, &[], cfg.rows)?.conditioning().condition;
    Ok(CalibrationReport {
        schema_version: SCHEMA_VERSION,
        selected: sel,
        ems: ems_params,
        ems_error_pct: [
            (sel.r - center_ems[0]) / center_ems[0] * 100.0,
            (sel.x - center_ems[1]) / center_ems[1] * 100.0,
            (sel.bc - center_ems[2]) / center_ems[2] * 100.0,
        ],
        biases: best.bias,
        channels,
        reference_channel: REFERENCE_NOTE.into(),
        cluster: ClusterSummary {
            cluster_size: outcome.cluster_size,
            tightness: outcome.tightness,
            eps: outcome.eps,
            outliers: outcome.outliers(),
        },
        scan: ScanMetadata {
            stages,
            total_candidates: total,
            condition_number: condition,
            snapshots_total: snaps.len(),
            snapshots_used: points.len(),
            selected_snapshots: decimated.then_some(selected),
            conductance_residual,
        },
        warnings,
        config: cfg.clone(),
        provenance: BTreeMap::new(),
    })
}

/// Removes the report's flagged biases from every snapshot.
pub fn apply_report(snaps: &[MeasurementSnapshot], report: &CalibrationReport) -> Result<Vec<MeasurementSnapshot>> {
    if report.schema_version != SCHEMA_VERSION {
        return Err(Error::Usage(format!(
            "report schema version {} is not supported (expected {SCHEMA_VERSION})",
            report.schema_version
        )));
    }
    if report.channels.len() != 7 {
        return Err(Error::Usage(format!("report lists {} channels, expected 7", report.channels.len())));
    }
    let c = report.correction();
    let terms = c.terminal_errors();
    let names = [("Vs", Channel::ThVs), ("Vr", Channel::ThVr), ("Is", Channel::ThIs), ("Ir", Channel::Ir)];
    snaps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let fix = |p, e: BiasError, k: usize| {
                if e == BiasError::default() {
                    return Ok(p);
                }
                debias(p, e).map_err(|err| Error::Domain(format!("snapshot {i}, {} channel: {err}", names[k].0)))
            };
            Ok(MeasurementSnapshot {
                timestamp: s.timestamp,
                vs: fix(s.vs, terms[0], 0)?,
                vr: fix(s.vr, terms[1], 1)?,
                is_: fix(s.is_, terms[2], 2)?,
                ir: fix(s.ir, terms[3], 3)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        let ems = LineParams::new(0.008, 0.168, 0.141).unwrap();
        let g = build_grid(&ems, &ScanConfig::default()).unwrap();
        assert_eq!(g.len(), 68_921);
        let flat = ScanConfig { coarse_step: 0.004, strategy: Strategy::Flat, ..Default::default() };
        assert_eq!(build_grid(&ems, &flat).unwrap().len(), 1_030_301);
        let one = ScanConfig { coarse_step: 0.5, strategy: Strategy::Flat, ..Default::default() };
        let g = build_grid(&ems, &one).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].params, ems);
        let small = ScanConfig { max_candidates: 1000, ..Default::default() };
        assert!(matches!(build_grid(&ems, &small), Err(Error::GridTooLarge { count: 68_921, .. })));
    }

    #[test]
    fn grid_order_is_r_major() {
        let ems = LineParams::new(1.0, 1.0, 1.0).unwrap();
        let cfg = ScanConfig { alpha: 0.2, coarse_step: 0.1, ..Default::default() };
        let g = build_grid(&ems, &cfg).unwrap();
        assert_eq!(g.len(), 125);
        assert!(g[0].params.r < g[25].params.r);
        assert_eq!(g[0].params.r, g[24].params.r);
        assert!(g[0].params.bc < g[1].params.bc);
        assert!(g.iter().enumerate().all(|(i, c)| c.index == i));
    }

    #[test]
    fn decimation_even() {
        assert_eq!(decimate(5, 10), vec![0, 1, 2, 3, 4]);
        let d = decimate(1000, 200);
        assert_eq!(d.len(), 200);
        assert_eq!(d[0], 0);
        assert_eq!(d[199], 999);
        assert!(d.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn config_validation() {
        assert!(ScanConfig::default().validate().is_ok());
        assert!(ScanConfig { alpha: 0.6, ..Default::default() }.validate().is_err());
        assert!(ScanConfig { refine_step: 0.02, ..Default::default() }.validate().is_err());
    }
}
