//! Regression estimation of the conditional-expectation coefficients that
//! close the reduced-order PDF equations.
//!
//! Three estimators are provided, all fitted per time knot from Monte Carlo
//! samples of the QoI `u(t)` (regressors) and the drift responses
//! `mu^u(t)` (responses):
//!
//! * global affine least squares (1D or 2D regressors),
//! * Gaussian-kernel locally linear regression in 1D, with 10-fold
//!   cross-validated bandwidth selection over a 10-point logarithmic grid
//!   spanning `[0.1, 2] x std(x)` (ties resolved toward the larger, i.e.
//!   smoother, bandwidth; no kernel truncation),
//! * 2D Lowess: tricube-weighted local affine fits over the span-fraction
//!   nearest neighbours in standardized coordinates.
//!
//! Queries outside the sample range use the boundary local fit (constant
//! extrapolation of the nearest fitted value). A [`ClosureSet`] stacks one
//! fitted knot per recorded time and interpolates linearly in time.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClosureError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("regressor coordinate {coord} is degenerate (zero variance)")]
    DegenerateCoordinate { coord: usize },
    #[error("rank-deficient design matrix")]
    RankDeficient,
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("fewer samples ({m}) than folds ({folds})")]
    FewerSamplesThanFolds { m: usize, folds: usize },
    #[error("span {span} leaves only {k} local points (need >= 4)")]
    InsufficientLocalPoints { span: f64, k: usize },
    #[error("mismatched x/y lengths: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("query time {t} outside the knot range [{first}, {last}]")]
    TimeOutOfRange { t: f64, first: f64, last: f64 },
    #[error("no knots fitted")]
    Empty,
}

/// One fitted regression at a single time knot.
#[derive(Debug, Clone)]
pub enum ClosureKnot {
    /// `y = intercept + slope . x`, one or two regressors.
    GlobalLinear { intercept: f64, slope: Vec<f64> },
    /// Gaussian locally linear estimate carrying its sample.
    LocalLinear {
        x: Vec<f64>,
        y: Vec<f64>,
        bandwidth: f64,
    },
    /// Tricube k-nearest Lowess in standardized 2D coordinates.
    Lowess2d {
        pts: Vec<[f64; 2]>,
        y: Vec<f64>,
        span: f64,
        center: [f64; 2],
        scale: [f64; 2],
    },
}

impl ClosureKnot {
    /// Evaluates a 1D knot at `u`.
    pub fn eval1(&self, u: f64) -> f64 {
        match self {
            ClosureKnot::GlobalLinear { intercept, slope } => intercept + slope[0] * u,
            ClosureKnot::LocalLinear { x, y, bandwidth } => {
                local_linear_predict(x, y, *bandwidth, u)
            }
            ClosureKnot::Lowess2d { .. } => panic!("2D knot evaluated with a scalar query"),
        }
    }

    /// Evaluates a 2D knot at `(u1, u2)`.
    pub fn eval2(&self, u: [f64; 2]) -> f64 {
        match self {
            ClosureKnot::GlobalLinear { intercept, slope } => {
                intercept + slope[0] * u[0] + slope[1] * u[1]
            }
            ClosureKnot::Lowess2d {
                pts,
                y,
                span,
                center,
                scale,
            } => lowess2d_predict(pts, y, *span, *center, *scale, u),
            ClosureKnot::LocalLinear { .. } => panic!("1D knot evaluated with a 2D query"),
        }
    }
}

fn check_lengths(x_len: usize, y_len: usize) -> Result<(), ClosureError> {
    if x_len != y_len {
        return Err(ClosureError::LengthMismatch { x: x_len, y: y_len });
    }
    Ok(())
}

fn sample_std(x: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mean = x.iter().sum::<f64>() / m;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
}

/// Solves the small symmetric system `A w = b` by Gaussian elimination with
/// partial pivoting; `None` on a (near-)singular pivot.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
        .max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[piv][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut w = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in (row + 1)..n {
            s -= a[row][k] * w[k];
        }
        w[row] = s / a[row][row];
    }
    Some(w)
}

/// Ordinary least-squares affine fit, `x` given column-wise (`dim` in {1, 2}).
pub fn fit_global_linear(x: &[Vec<f64>], y: &[f64]) -> Result<ClosureKnot, ClosureError> {
    let dim = x.len();
    assert!(dim == 1 || dim == 2, "only 1 or 2 regressors supported");
    let m = y.len();
    for col in x {
        check_lengths(col.len(), m)?;
    }
    if m < dim + 1 {
        return Err(ClosureError::TooFewSamples { need: dim + 1, got: m });
    }
    for (c, col) in x.iter().enumerate() {
        if sample_std(col) == 0.0 {
            return Err(ClosureError::DegenerateCoordinate { coord: c + 1 });
        }
    }
    // Normal equations over [1, x1, (x2)].
    let p = dim + 1;
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for s in 0..m {
        let row = match dim {
            1 => vec![1.0, x[0][s]],
            _ => vec![1.0, x[0][s], x[1][s]],
        };
        for a in 0..p {
            for b in 0..p {
                xtx[a][b] += row[a] * row[b];
            }
            xty[a] += row[a] * y[s];
        }
    }
    let w = solve_dense(xtx, xty).ok_or(ClosureError::RankDeficient)?;
    Ok(ClosureKnot::GlobalLinear {
        intercept: w[0],
        slope: w[1..].to_vec(),
    })
}

/// Locally linear prediction at `q` using every sample (no truncation).
/// Queries outside the sample range are clamped to the nearest boundary,
/// which realizes constant extrapolation of the boundary fit.
fn local_linear_predict(x: &[f64], y: &[f64], h: f64, q: f64) -> f64 {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let q = q.clamp(lo, hi);
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let z = (xi - q) / h;
        let w = (-0.5 * z * z).exp();
        let dx = xi - q;
        s0 += w;
        s1 += w * dx;
        s2 += w * dx * dx;
        t0 += w * yi;
        t1 += w * dx * yi;
    }
    let det = s0 * s2 - s1 * s1;
    if det.abs() <= 1e-300 || s0 <= 1e-300 {
        // Degenerate neighbourhood: fall back to the weighted mean.
        return if s0 > 0.0 { t0 / s0 } else { 0.0 };
    }
    (s2 * t0 - s1 * t1) / det
}

const CV_FOLDS: usize = 10;
const CV_GRID: usize = 10;

/// Candidate bandwidth grid: 10 log-spaced points on `[0.1, 2] x std(x)`.
fn bandwidth_grid(x: &[f64]) -> Vec<f64> {
    let sd = sample_std(x);
    let (lo, hi) = (0.1 * sd, 2.0 * sd);
    (0..CV_GRID)
        .map(|k| lo * (hi / lo).powf(k as f64 / (CV_GRID - 1) as f64))
        .collect()
}

/// 10-fold cross-validated mean squared error for one bandwidth.
/// Folds are contiguous blocks of a seeded shuffle.
fn cv_mse(x: &[f64], y: &[f64], h: f64, order: &[usize]) -> f64 {
    let m = x.len();
    let mut total = 0.0;
    for fold in 0..CV_FOLDS {
        let lo = fold * m / CV_FOLDS;
        let hi = (fold + 1) * m / CV_FOLDS;
        let mut xt = Vec::with_capacity(m - (hi - lo));
        let mut yt = Vec::with_capacity(m - (hi - lo));
        for (k, &idx) in order.iter().enumerate() {
            if k < lo || k >= hi {
                xt.push(x[idx]);
                yt.push(y[idx]);
            }
        }
        for &idx in &order[lo..hi] {
            let pred = local_linear_predict(&xt, &yt, h, x[idx]);
            total += (pred - y[idx]).powi(2);
        }
    }
    total / m as f64
}

/// Fits a Gaussian locally linear knot. With `bandwidth = None` the width is
/// selected by 10-fold cross-validation; ties go to the larger bandwidth.
pub fn fit_local_linear(
    x: &[f64],
    y: &[f64],
    bandwidth: Option<f64>,
    fold_seed: u64,
) -> Result<ClosureKnot, ClosureError> {
    check_lengths(x.len(), y.len())?;
    let m = x.len();
    if m < 30 {
        return Err(ClosureError::TooFewSamples { need: 30, got: m });
    }
    if sample_std(x) == 0.0 {
        return Err(ClosureError::DegenerateCoordinate { coord: 1 });
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(ClosureError::BadBandwidth(h)),
        None => {
            if m < CV_FOLDS {
                return Err(ClosureError::FewerSamplesThanFolds { m, folds: CV_FOLDS });
            }
            let mut order: Vec<usize> = (0..m).collect();
            let mut rng = ChaCha12Rng::seed_from_u64(fold_seed);
            order.shuffle(&mut rng);
            let mut best = (f64::INFINITY, 0.0);
            for h in bandwidth_grid(x) {
                let mse = cv_mse(x, y, h, &order);
                if mse <= best.0 {
                    best = (mse, h); // <= keeps the larger bandwidth on ties
                }
            }
            best.1
        }
    };
    Ok(ClosureKnot::LocalLinear {
        x: x.to_vec(),
        y: y.to_vec(),
        bandwidth: h,
    })
}

fn lowess2d_predict(
    pts: &[[f64; 2]],
    y: &[f64],
    span: f64,
    center: [f64; 2],
    scale: [f64; 2],
    q: [f64; 2],
) -> f64 {
    let m = pts.len();
    let k = ((span * m as f64).ceil() as usize).clamp(4, m);
    let qs = [(q[0] - center[0]) / scale[0], (q[1] - center[1]) / scale[1]];
    let mut d2: Vec<(f64, usize)> = pts
        .iter()
        .enumerate()
        .map(|(s, p)| {
            let dx = p[0] - qs[0];
            let dy = p[1] - qs[1];
            (dx * dx + dy * dy, s)
        })
        .collect();
    d2.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    let dmax = d2[k - 1].0.sqrt().max(1e-12);
    // Tricube-weighted affine fit over the k nearest neighbours.
    let mut xtx = vec![vec![0.0; 3]; 3];
    let mut xty = vec![0.0; 3];
    for &(dist2, s) in &d2[..k] {
        let r = (dist2.sqrt() / dmax).min(1.0);
        let w = (1.0 - r * r * r).powi(3);
        let row = [1.0, pts[s][0] - qs[0], pts[s][1] - qs[1]];
        for a in 0..3 {
            for b in 0..3 {
                xtx[a][b] += w * row[a] * row[b];
            }
            xty[a] += w * row[a] * y[s];
        }
    }
    match solve_dense(xtx.clone(), xty.clone()) {
        Some(w) => w[0],
        // Collinear neighbourhood: weighted mean.
        None => {
            let sw: f64 = d2[..k]
                .iter()
                .map(|&(dist2, _)| {
                    let r = (dist2.sqrt() / dmax).min(1.0);
                    (1.0 - r * r * r).powi(3)
                })
                .sum();
            if sw > 0.0 {
                xty[0] / sw
            } else {
                0.0
            }
        }
    }
}

/// Fits a 2D Lowess knot with tricube weights over the `span`-fraction
/// nearest neighbours in standardized coordinates.
pub fn fit_lowess_2d(x: &[[f64; 2]], y: &[f64], span: f64) -> Result<ClosureKnot, ClosureError> {
    check_lengths(x.len(), y.len())?;
    let m = x.len();
    let k = (span * m as f64).ceil() as usize;
    if k < 4 {
        return Err(ClosureError::InsufficientLocalPoints { span, k });
    }
    if m < 50 {
        return Err(ClosureError::TooFewSamples { need: 50, got: m });
    }
    let mut center = [0.0; 2];
    let mut scale = [0.0; 2];
    for axis in 0..2 {
        let col: Vec<f64> = x.iter().map(|p| p[axis]).collect();
        center[axis] = col.iter().sum::<f64>() / m as f64;
        let sd = sample_std(&col);
        if sd == 0.0 {
            return Err(ClosureError::DegenerateCoordinate { coord: axis + 1 });
        }
        scale[axis] = sd;
    }
    let pts: Vec<[f64; 2]> = x
        .iter()
        .map(|p| [(p[0] - center[0]) / scale[0], (p[1] - center[1]) / scale[1]])
        .collect();
    Ok(ClosureKnot::Lowess2d {
        pts,
        y: y.to_vec(),
        span,
        center,
        scale,
    })
}

/// Time-stamped stack of fitted knots with linear interpolation in time.
#[derive(Debug, Clone)]
pub struct ClosureSet {
    knots: Vec<(f64, ClosureKnot)>,
}

impl ClosureSet {
    /// `knots` must be sorted by strictly increasing time.
    pub fn new(knots: Vec<(f64, ClosureKnot)>) -> Result<Self, ClosureError> {
        if knots.is_empty() {
            return Err(ClosureError::Empty);
        }
        assert!(
            knots.windows(2).all(|w| w[0].0 < w[1].0),
            "knot times must be strictly increasing"
        );
        Ok(ClosureSet { knots })
    }

    pub fn time_range(&self) -> (f64, f64) {
        (self.knots[0].0, self.knots[self.knots.len() - 1].0)
    }

    pub fn knots(&self) -> &[(f64, ClosureKnot)] {
        &self.knots
    }

    /// Index pair and weight for linear interpolation at `t`.
    fn bracket(&self, t: f64) -> Result<(usize, usize, f64), ClosureError> {
        let (first, last) = self.time_range();
        let eps = 1e-9 * (last - first).max(1.0);
        if t < first - eps || t > last + eps {
            return Err(ClosureError::TimeOutOfRange { t, first, last });
        }
        let t = t.clamp(first, last);
        let hi = self
            .knots
            .partition_point(|(tk, _)| *tk < t)
            .min(self.knots.len() - 1);
        if hi == 0 {
            return Ok((0, 0, 0.0));
        }
        let lo = hi - 1;
        let (t0, t1) = (self.knots[lo].0, self.knots[hi].0);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        Ok((lo, hi, w))
    }
}

/// Coefficient values on a set of 1D grid points at query time `t`,
/// linearly interpolated between the bracketing knots' evaluations.
pub fn coefficient_field(
    models: &ClosureSet,
    t: f64,
    points: &[f64],
) -> Result<Vec<f64>, ClosureError> {
    let (lo, hi, w) = models.bracket(t)?;
    Ok(points
        .iter()
        .map(|&p| {
            let a = models.knots[lo].1.eval1(p);
            if lo == hi || w == 0.0 {
                a
            } else {
                let b = models.knots[hi].1.eval1(p);
                (1.0 - w) * a + w * b
            }
        })
        .collect())
}

/// 2D counterpart of [`coefficient_field`].
pub fn coefficient_field_2d(
    models: &ClosureSet,
    t: f64,
    points: &[[f64; 2]],
) -> Result<Vec<f64>, ClosureError> {
    let (lo, hi, w) = models.bracket(t)?;
    Ok(points
        .iter()
        .map(|&p| {
            let a = models.knots[lo].1.eval2(p);
            if lo == hi || w == 0.0 {
                a
            } else {
                let b = models.knots[hi].1.eval2(p);
                (1.0 - w) * a + w * b
            }
        })
        .collect())
}
