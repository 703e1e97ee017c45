//! Least-squares bias estimation, single and multi-hypothesis.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::line::{solve_channels, LineParams, MeasurementSnapshot, SINGULAR_TOL};
use crate::phasor::BiasVector;
use crate::sensitivity::{assemble_h_channels, conditioning_of, with_index, Conditioning, DesignMatrix, ResidualRows};

/// Per-snapshot parameter rows (R, X, Bc[, G]) computed from channel values.
pub fn computed_rows(points: &[[f64; 7]], rows: ResidualRows) -> Result<Vec<f64>> {
    let nr = rows.count();
    let mut out = Vec::with_capacity(points.len() * nr);
    for (i, c) in points.iter().enumerate() {
        let s = solve_channels(c, SINGULAR_TOL).map_err(|e| with_index(e, i))?;
        out.extend_from_slice(&[s.z.re, s.z.im, s.y.im]);
        if nr == 4 {
            out.push(s.y.re);
        }
    }
    Ok(out)
}

/// Residuals `candidate - computed` per snapshot; the conductance row (when
/// present) has reference zero.
pub fn build_residuals_channels(points: &[[f64; 7]], candidate: &LineParams, rows: ResidualRows) -> Result<DVector<f64>> {
    let nr = rows.count();
    let reference = [candidate.r, candidate.x, candidate.bc, 0.0];
    let computed = computed_rows(points, rows)?;
    Ok(DVector::from_iterator(
        computed.len(),
        computed.iter().enumerate().map(|(i, v)| reference[i % nr] - v),
    ))
}

pub fn build_residuals(snaps: &[MeasurementSnapshot], candidate: &LineParams, rows: ResidualRows) -> Result<DVector<f64>> {
    let pts: Vec<[f64; 7]> = snaps.iter().map(|s| s.channels()).collect();
    build_residuals_channels(&pts, candidate, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMethod {
    #[default]
    Qr,
    NormalEquations,
}

/// A factorized least-squares problem `min || W^(1/2) (H F - E) ||`.
///
/// The 7 x 3N solution operator is formed once, so each right-hand side
/// costs one matrix-vector product.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pinv: DMatrix<f64>,
    conditioning: Conditioning,
    rows: ResidualRows,
}

impl LeastSquares {
    pub fn new(h: &DesignMatrix, weights: Option<&[f64]>, method: SolveMethod) -> Result<Self> {
        let nrow = h.h.nrows();
        let per = h.rows.count();
        let sqrt_w: Vec<f64> = match weights {
            None => vec![1.0; nrow],
            Some(w) if w.len() == per => (0..nrow).map(|i| w[i % per].sqrt()).collect(),
            Some(w) if w.len() == nrow => w.iter().map(|v| v.sqrt()).collect(),
            Some(w) => {
                return Err(Error::Config(format!(
                    "weight vector length {} matches neither {per} nor {nrow}",
                    w.len()
                )))
            }
        };
        if sqrt_w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("weights must be positive and finite".into()));
        }
        let wsq = DVector::from_vec(sqrt_w);
        let mut hw = h.h.clone();
        for (i, mut row) in hw.row_iter_mut().enumerate() {
            row *= wsq[i];
        }
        let conditioning = conditioning_of(&hw);
        if conditioning.rank < 7 {
            return Err(Error::RankDeficient { rank: conditioning.rank, condition: conditioning.condition });
        }
        let mut pinv = match method {
            SolveMethod::Qr => {
                let qr = hw.clone().qr();
                let r = qr.r();
                let qt = qr.q().transpose();
                r.solve_upper_triangular(&qt).ok_or(Error::RankDeficient {
                    rank: conditioning.rank,
                    condition: conditioning.condition,
                })?
            }
            SolveMethod::NormalEquations => {
                let hth = hw.transpose() * &hw;
                let chol = hth.cholesky().ok_or(Error::RankDeficient {
                    rank: conditioning.rank,
                    condition: conditioning.condition,
                })?;
                chol.solve(&hw.transpose())
            }
        };
        for (j, mut col) in pinv.column_iter_mut().enumerate() {
            col *= wsq[j];
        }
        Ok(Self { pinv, conditioning, rows: h.rows })
    }

    pub fn conditioning(&self) -> &Conditioning {
        &self.conditioning
    }

    pub fn rows(&self) -> ResidualRows {
        self.rows
    }

    /// The 7 x 3N operator mapping residuals to biases.
    pub fn operator(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    fn apply(&self, e: impl Fn(usize) -> f64) -> [f64; 7] {
        let mut f = [0.0; 7];
        for j in 0..self.pinv.ncols() {
            let v = e(j);
            for (k, fk) in f.iter_mut().enumerate() {
                *fk += self.pinv[(k, j)] * v;
            }
        }
        f
    }

    pub fn solve(&self, e: &DVector<f64>) -> Result<BiasVector> {
        self.check_len(e.len())?;
        Ok(BiasVector::from_array(self.apply(|j| e[j])))
    }

    /// Column m of the result solves column m of `e`. Columns are computed
    /// independently, so the split across workers never changes a bit.
    pub fn solve_multi(&self, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_len(e.nrows())?;
        if e.ncols() == 0 {
            return Err(Error::Domain("hypothesis matrix has no columns".into()));
        }
        let cols: Vec<[f64; 7]> = (0..e.ncols()).into_par_iter().map(|m| self.apply(|j| e[(j, m)])).collect();
        Ok(DMatrix::from_fn(7, cols.len(), |k, m| cols[m][k]))
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.pinv.ncols() {
            return Err(Error::Domain(format!(
                "residual length {n} does not match design matrix rows {}",
                self.pinv.ncols()
            )));
        }
        Ok(())
    }
}

pub fn solve_lse(h: &DesignMatrix, e: &DVector<f64>) -> Result<BiasVector> {
    LeastSquares::new(h, None, SolveMethod::Qr)?.solve(e)
}

pub fn solve_lse_multi(h: &DesignMatrix, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    LeastSquares::new(h, None, SolveMethod::Qr)?.solve_multi(e)
}

/// Bias estimate as an affine function of the candidate (r, x, bc), for a
/// fixed linearization point: `F(c) = offset + gain * c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub offset: [f64; 7],
    pub gain: [[f64; 3]; 7],
    pub condition: f64,
}

impl LinearModel {
    /// Linearizes at `points + shift` (shift in bias-vector order), so the
    /// returned estimates are total biases relative to `points`.
    pub fn build(
        points: &[[f64; 7]],
        shift: &BiasVector,
        rows: ResidualRows,
        weights: Option<&[f64]>,
        method: SolveMethod,
    ) -> Result<Self> {
        let s = shift.to_array();
        let lin: Vec<[f64; 7]> = points.iter().map(|c| std::array::from_fn(|k| c[k] + s[k])).collect();
        let h = assemble_h_channels(&lin, &[], rows)?;
        let ls = LeastSquares::new(&h, weights, method)?;
        let computed = computed_rows(&lin, rows)?;
        let p = ls.operator();
        let nr = rows.count();
        let mut offset = s;
        let mut gain = [[0.0; 3]; 7];
        for k in 0..7 {
            for (j, v) in computed.iter().enumerate() {
                offset[k] -= p[(k, j)] * v;
                if j % nr < 3 {
                    gain[k][j % nr] += p[(k, j)];
                }
            }
        }
        Ok(Self { offset, gain, condition: ls.conditioning().condition })
    }

    pub fn eval(&self, c: [f64; 3]) -> [f64; 7] {
        std::array::from_fn(|k| self.offset[k] + self.gain[k][0] * c[0] + self.gain[k][1] * c[1] + self.gain[k][2] * c[2])
    }
}

/// Iterated linearization: re-evaluates H and the residuals at the
/// debiased point until the update stalls.
pub fn gauss_newton(
    points: &[[f64; 7]],
    candidate: &LineParams,
    rows: ResidualRows,
    max_iter: usize,
) -> Result<BiasVector> {
    let mut f = [0.0; 7];
    for _ in 0..max_iter.max(1) {
        let lin: Vec<[f64; 7]> = points.iter().map(|c| std::array::from_fn(|k| c[k] + f[k])).collect();
        let h = assemble_h_channels(&lin, &[], rows)?;
        let e = build_residuals_channels(&lin, candidate, rows)?;
        let step = solve_lse(&h, &e)?.to_array();
        let mut size: f64 = 0.0;
        for k in 0..7 {
            f[k] += step[k];
            size = size.max(step[k].abs());
        }
        if size < 1e-14 {
            break;
        }
    }
    Ok(BiasVector::from_array(f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    R,
    X,
    Bc,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::R, Axis::X, Axis::Bc];

    pub fn parse(s: &str) -> Option<Axis> {
        match s.to_ascii_lowercase().as_str() {
            "r" => Some(Axis::R),
            "x" => Some(Axis::X),
            "bc" | "b" => Some(Axis::Bc),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::R => "R",
            Axis::X => "X",
            Axis::Bc => "Bc",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Bias estimates when the reference on one axis is off by each fractional
/// `level` (reference = truth * (1 + level)), everything else exact.
pub fn reference_error_sweep(
    snaps: &[MeasurementSnapshot],
    reference: &LineParams,
    axis: Axis,
    levels: &[f64],
    rows: ResidualRows,
) -> Result<Vec<BiasVector>> {
    let pts: Vec<[f64; 7]> = snaps.iter().map(|s| s.channels()).collect();
    let model = LinearModel::build(&pts, &BiasVector::zero(), rows, None, SolveMethod::Qr)?;
    Ok(levels
        .iter()
        .map(|&l| {
            let mut c = reference.as_array();
            c[axis.index()] *= 1.0 + l;
            BiasVector::from_array(model.eval(c))
        })
        .collect())
}
