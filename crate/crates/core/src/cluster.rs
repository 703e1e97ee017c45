//! Density clustering: a generic DBSCAN and the zero-seeded variant used to
//! split bias estimates into "unbiased" and "biased" channels.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phasor::{BiasVector, Channel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Core(usize),
    Reachable(usize),
    Outlier,
}

impl Label {
    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Core(c) | Label::Reachable(c) => Some(c),
            Label::Outlier => None,
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Standard DBSCAN with a Euclidean metric.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Clusters are the connected components of core points and
/// are numbered in order of their lowest-index core point. A non-core point
/// within `eps` of some core point joins the cluster of its nearest one.
pub fn dbscan<P: AsRef<[f64]>>(points: &[P], eps: f64, min_pts: usize) -> Result<Vec<Label>> {
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::Config(format!("dbscan needs eps > 0 and min_pts >= 1 (got {eps}, {min_pts})")));
    }
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist(points[i].as_ref(), points[j].as_ref()) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut cluster_of: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || cluster_of[start].is_some() {
            continue;
        }
        cluster_of[start] = Some(next);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if core[q] && cluster_of[q].is_none() {
                    cluster_of[q] = Some(next);
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }

    Ok((0..n)
        .map(|i| {
            if core[i] {
                return Label::Core(cluster_of[i].expect("core points are assigned"));
            }
            let nearest = neighbors[i]
                .iter()
                .filter(|&&j| core[j])
                .min_by(|&&a, &&b| {
                    dist(points[i].as_ref(), points[a].as_ref())
                        .total_cmp(&dist(points[i].as_ref(), points[b].as_ref()))
                        .then(a.cmp(&b))
                });
            match nearest {
                Some(&j) => Label::Reachable(cluster_of[j].expect("core points are assigned")),
                None => Label::Outlier,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsMode {
    /// Seeded 1-D DBSCAN with radius `eps_fixed`.
    Fixed,
    /// Every channel with |f| <= `membership_bound` joins the seed.
    Bound,
    /// Split at the widest gap in the sorted |f| such that all members stay
    /// within `membership_bound`.
    #[default]
    Gap,
}

impl EpsMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fixed" => Some(EpsMode::Fixed),
            "bound" => Some(EpsMode::Bound),
            "gap" => Some(EpsMode::Gap),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EpsMode::Fixed => "fixed",
            EpsMode::Bound => "bound",
            EpsMode::Gap => "gap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub min_pts: usize,
    pub eps_mode: EpsMode,
    pub eps_fixed: f64,
    pub membership_bound: f64,
    /// Per-channel multiplier applied before clustering.
    pub scale: [f64; 7],
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            min_pts: 3,
            eps_mode: EpsMode::Gap,
            eps_fixed: 8e-4,
            membership_bound: 8e-4,
            scale: [1.0; 7],
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_pts == 0 || self.min_pts > 8 {
            return Err(Error::Config(format!("cluster.min_pts must be in 1..=8 (got {})", self.min_pts)));
        }
        if self.eps_mode == EpsMode::Fixed && !(self.eps_fixed > 0.0) {
            return Err(Error::Config("cluster.eps_fixed must be > 0 in fixed mode".into()));
        }
        if !(self.membership_bound > 0.0) {
            return Err(Error::Config("cluster.membership_bound must be > 0".into()));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("cluster scale entries must be positive".into()));
        }
        Ok(())
    }
}

/// Result of clustering {0, f1..f7}. Index 0 of `labels` is the zero seed;
/// index k+1 is channel k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterOutcome {
    pub labels: [Label; 8],
    pub cluster_size: usize,
    pub tightness: f64,
    pub eps: f64,
    pub degenerate: bool,
}

impl ClusterOutcome {
    pub fn is_outlier(&self, ch: Channel) -> bool {
        self.labels[ch.index() + 1] == Label::Outlier
    }

    pub fn outliers(&self) -> Vec<Channel> {
        Channel::ALL.into_iter().filter(|&c| self.is_outlier(c)).collect()
    }

    pub fn outlier_count(&self) -> usize {
        8 - self.cluster_size
    }
}

fn label_members(v: &[f64; 8], member: &[bool; 8], eps: f64, min_pts: usize) -> [Label; 8] {
    std::array::from_fn(|i| {
        if !member[i] {
            Label::Outlier
        } else if i == 0 {
            Label::Core(0)
        } else {
            let count = (0..8).filter(|&j| member[j] && (v[i] - v[j]).abs() <= eps).count();
            if count >= min_pts {
                Label::Core(0)
            } else {
                Label::Reachable(0)
            }
        }
    })
}

/// Largest nearest-neighbour distance among members.
fn tightness(v: &[f64; 8], member: &[bool; 8]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut any_pair = false;
    for i in 0..8 {
        if !member[i] {
            continue;
        }
        let mut nn = f64::INFINITY;
        for j in 0..8 {
            if j != i && member[j] {
                nn = nn.min((v[i] - v[j]).abs());
            }
        }
        if nn.is_finite() {
            any_pair = true;
            worst = worst.max(nn);
        }
    }
    if any_pair {
        worst
    } else {
        0.0
    }
}

fn seeded_fixed(v: &[f64; 8], eps: f64, min_pts: usize) -> ([bool; 8], [Label; 8]) {
    let nb = |i: usize| (0..8).filter(move |&j| (v[i] - v[j]).abs() <= eps);
    let core: [bool; 8] = std::array::from_fn(|i| i == 0 || nb(i).count() >= min_pts);
    let mut member = [false; 8];
    let mut is_core_member = [false; 8];
    member[0] = true;
    is_core_member[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(p) = queue.pop_front() {
        for q in nb(p) {
            if member[q] {
                continue;
            }
            member[q] = true;
            if core[q] {
                is_core_member[q] = true;
                queue.push_back(q);
            }
        }
    }
    let labels = std::array::from_fn(|i| match (member[i], is_core_member[i]) {
        (false, _) => Label::Outlier,
        (true, true) => Label::Core(0),
        (true, false) => Label::Reachable(0),
    });
    (member, labels)
}

pub fn zero_seeded_cluster(f: &BiasVector, cfg: &ClusterConfig) -> ClusterOutcome {
    let raw = f.to_array();
    let mut v = [0.0; 8];
    for k in 0..7 {
        v[k + 1] = raw[k] * cfg.scale[k];
    }
    let min_pts = cfg.min_pts;
    let (member, labels, eps) = match cfg.eps_mode {
        EpsMode::Fixed => {
            let (m, l) = seeded_fixed(&v, cfg.eps_fixed, min_pts);
            (m, l, cfg.eps_fixed)
        }
        EpsMode::Bound => {
            let b = cfg.membership_bound;
            let m: [bool; 8] = std::array::from_fn(|i| v[i].abs() <= b);
            (m, label_members(&v, &m, b, min_pts), b)
        }
        EpsMode::Gap => {
            let mut order: [usize; 7] = std::array::from_fn(|k| k + 1);
            order.sort_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(a.cmp(&b)));
            // s[0] is the seed, s[k] the k-th smallest |f|
            let mut s = [0.0; 8];
            for k in 0..7 {
                s[k + 1] = v[order[k]].abs();
            }
            let mut best: Option<(usize, f64)> = None;
            for size in (min_pts.max(1)..=8).rev() {
                if s[size - 1] > cfg.membership_bound {
                    continue;
                }
                let sep = if size == 8 { f64::INFINITY } else { s[size] - s[size - 1] };
                if best.is_none_or(|(_, b)| sep > b) {
                    best = Some((size, sep));
                }
            }
            let size = best.map_or(1, |(k, _)| k);
            let mut m = [false; 8];
            m[0] = true;
            for &i in order.iter().take(size - 1) {
                m[i] = true;
            }
            let radius = s[size - 1];
            (m, label_members(&v, &m, radius, min_pts), radius)
        }
    };
    let cluster_size = member.iter().filter(|&&b| b).count();
    // bound and gap modes separate by distance from the seed, so compactness
    // is measured on the folded values they actually split
    let folded = v.map(f64::abs);
    let space = if cfg.eps_mode == EpsMode::Fixed { &v } else { &folded };
    ClusterOutcome {
        labels,
        cluster_size,
        tightness: tightness(space, &member),
        eps,
        degenerate: cluster_size < min_pts,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    pub cluster_size: usize,
    pub tightness: f64,
    pub ems_distance: f64,
    /// False for degenerate clusters or implausible outlier values.
    pub feasible: bool,
}

impl CandidateScore {
    /// Best first: larger cluster, then tighter, then closer to EMS, then
    /// lower index.
    pub fn rank(&self, other: &Self) -> Ordering {
        other
            .cluster_size
            .cmp(&self.cluster_size)
            .then(self.tightness.total_cmp(&other.tightness))
            .then(self.ems_distance.total_cmp(&other.ems_distance))
            .then(self.index.cmp(&other.index))
    }
}

/// Position in `scores` of the best feasible candidate.
pub fn score_candidates(scores: &[CandidateScore]) -> Result<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.feasible)
        .min_by(|a, b| a.1.rank(b.1))
        .map(|(i, _)| i)
        .ok_or(Error::NoFeasibleHypothesis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_one_cluster() {
        let pts = vec![vec![1.0, 2.0]; 5];
        let l = dbscan(&pts, 0.1, 5).unwrap();
        assert!(l.iter().all(|x| *x == Label::Core(0)));
        assert!(dbscan::<Vec<f64>>(&[], 0.1, 3).unwrap().is_empty());
        assert!(dbscan(&pts, 0.0, 3).is_err());
    }

    #[test]
    fn all_zero_bias() {
        let o = zero_seeded_cluster(&BiasVector::zero(), &ClusterConfig::default());
        assert_eq!(o.cluster_size, 8);
        assert_eq!(o.tightness, 0.0);
        assert!(o.outliers().is_empty());
        assert!(!o.degenerate);
    }

    #[test]
    fn zero_isolated_is_degenerate() {
        let f = BiasVector::from_array([0.02; 7]);
        for mode in [EpsMode::Gap, EpsMode::Bound, EpsMode::Fixed] {
            let o = zero_seeded_cluster(&f, &ClusterConfig { eps_mode: mode, ..Default::default() });
            assert!(o.degenerate, "{mode:?}");
            assert_eq!(o.cluster_size, 1);
            assert_eq!(o.outliers().len(), 7);
        }
    }

    #[test]
    fn ranking_rules() {
        let a = CandidateScore { index: 0, cluster_size: 7, tightness: 1.0, ems_distance: 1.0, feasible: true };
        let b = CandidateScore { index: 1, cluster_size: 6, tightness: 0.0, ems_distance: 0.0, feasible: true };
        assert_eq!(score_candidates(&[a]).unwrap(), 0);
        assert_eq!(score_candidates(&[b, a]).unwrap(), 1);
        let dead = CandidateScore { feasible: false, ..a };
        assert!(matches!(score_candidates(&[dead]), Err(Error::NoFeasibleHypothesis)));
    }

    #[test]
    fn config_validation() {
        assert!(ClusterConfig::default().validate().is_ok());
        assert!(ClusterConfig { min_pts: 0, ..Default::default() }.validate().is_err());
        assert!(ClusterConfig { eps_mode: EpsMode::Fixed, eps_fixed: 0.0, ..Default::default() }
            .validate()
            .is_err());
    }
}
