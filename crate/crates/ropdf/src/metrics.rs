//! Density estimation and comparison metrics: kernel density estimates,
//! exceedance probabilities, space-time `L1` errors, mutual information,
//! and sample-complexity summaries.

use crate::grid::{Grid1D, Grid2D};
use crate::solver::DensityField1;
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("degenerate sample set (zero spread)")]
    DegenerateSamples,
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("no probability mass on the grid")]
    NoMass,
    #[error("density and grid shapes disagree: {got} vs {want}")]
    ShapeMismatch { got: usize, want: usize },
    #[error("fields compared on different grids")]
    GridMismatch,
    #[error("fields compared on different time stamps")]
    TimeMismatch,
    #[error("threshold {threshold} outside the grid [{lo}, {hi}]")]
    ThresholdOutsideGrid { threshold: f64, lo: f64, hi: f64 },
    #[error("marginal density vanishes at a cell carrying joint mass")]
    InconsistentMarginals,
    #[error("sample sizes and errors have different lengths")]
    CurveMismatch,
    #[error("need at least 2 points for a log-log slope, got {0}")]
    TooFewPoints(usize),
}

fn validate_samples(samples: &[f64], need: usize) -> Result<(), MetricsError> {
    if samples.len() < need {
        return Err(MetricsError::TooFewSamples {
            need,
            got: samples.len(),
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

fn sample_std(samples: &[f64]) -> f64 {
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
}

fn interquartile_range(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| -> f64 {
        let pos = p * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        if lo + 1 < s.len() {
            s[lo] * (1.0 - frac) + s[lo + 1] * frac
        } else {
            s[lo]
        }
    };
    q(0.75) - q(0.25)
}

/// Silverman's rule with the robust spread estimate:
/// `0.9 min(sd, IQR / 1.34) m^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64, MetricsError> {
    validate_samples(samples, 2)?;
    let sd = sample_std(samples);
    let iqr = interquartile_range(samples);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if spread == 0.0 {
        return Err(MetricsError::DegenerateSamples);
    }
    Ok(0.9 * spread * (samples.len() as f64).powf(-0.2))
}

const KERNEL_REACH: f64 = 6.0;

/// Gaussian kernel density estimate on the cell centers of `grid`,
/// renormalized to unit mass over the grid. Kernel deposits are truncated
/// at six bandwidths, which is below 1e-8 relative error.
pub fn kde_1d(samples: &[f64], grid: &Grid1D) -> Result<Vec<f64>, MetricsError> {
    let h = silverman_bandwidth(samples)?;
    let n = grid.n();
    let dx = grid.dx();
    let mut f = vec![0.0; n];
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    for &s in samples {
        let lo = ((s - KERNEL_REACH * h - grid.lo()) / dx).floor().max(0.0) as usize;
        let hi = (((s + KERNEL_REACH * h - grid.lo()) / dx).ceil() as usize).min(n);
        for (i, slot) in f.iter_mut().enumerate().take(hi).skip(lo) {
            let z = (grid.center(i) - s) / h;
            *slot += norm * (-0.5 * z * z).exp();
        }
    }
    let mass: f64 = f.iter().sum::<f64>() * dx;
    if mass <= 0.0 {
        return Err(MetricsError::NoMass);
    }
    for v in &mut f {
        *v /= mass;
    }
    Ok(f)
}

/// Product-Gaussian 2D kernel density estimate with per-axis bandwidths
/// `sd_k m^(-1/6)`, renormalized to unit grid mass. The separable kernel is
/// accumulated as an outer product per sample.
pub fn kde_2d(sx: &[f64], sy: &[f64], grid: &Grid2D) -> Result<Array2<f64>, MetricsError> {
    if sx.len() != sy.len() {
        return Err(MetricsError::ShapeMismatch {
            got: sy.len(),
            want: sx.len(),
        });
    }
    validate_samples(sx, 2)?;
    validate_samples(sy, 2)?;
    let m = sx.len() as f64;
    let hx = sample_std(sx) * m.powf(-1.0 / 6.0);
    let hy = sample_std(sy) * m.powf(-1.0 / 6.0);
    if hx == 0.0 || hy == 0.0 {
        return Err(MetricsError::DegenerateSamples);
    }
    let (nx, ny) = (grid.x.n(), grid.y.n());
    let (dx, dy) = (grid.x.dx(), grid.y.dx());
    let mut f = Array2::<f64>::zeros((nx, ny));
    let norm = 1.0 / (m * hx * hy * 2.0 * std::f64::consts::PI);
    let mut wx = vec![0.0; nx];
    let mut wy = vec![0.0; ny];
    for (&px, &py) in sx.iter().zip(sy) {
        let ilo = ((px - KERNEL_REACH * hx - grid.x.lo()) / dx).floor().max(0.0) as usize;
        let ihi = (((px + KERNEL_REACH * hx - grid.x.lo()) / dx).ceil() as usize).min(nx);
        let jlo = ((py - KERNEL_REACH * hy - grid.y.lo()) / dy).floor().max(0.0) as usize;
        let jhi = (((py + KERNEL_REACH * hy - grid.y.lo()) / dy).ceil() as usize).min(ny);
        for i in ilo..ihi {
            let z = (grid.x.center(i) - px) / hx;
            wx[i] = (-0.5 * z * z).exp();
        }
        for j in jlo..jhi {
            let z = (grid.y.center(j) - py) / hy;
            wy[j] = (-0.5 * z * z).exp();
        }
        for i in ilo..ihi {
            let wxn = norm * wx[i];
            for j in jlo..jhi {
                f[(i, j)] += wxn * wy[j];
            }
        }
    }
    let mass = f.sum() * dx * dy;
    if mass <= 0.0 {
        return Err(MetricsError::NoMass);
    }
    f.mapv_inplace(|v| v / mass);
    Ok(f)
}

/// Empirical fraction of samples strictly above `threshold`.
pub fn ecdf_exceedance(samples: &[f64], threshold: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&v| v > threshold).count() as f64 / samples.len() as f64
}

/// Fraction of a cell's width lying at or below `threshold`.
fn below_fraction(grid: &Grid1D, i: usize, threshold: f64) -> f64 {
    let (lo, hi) = (grid.face(i), grid.face(i + 1));
    ((threshold - lo) / (hi - lo)).clamp(0.0, 1.0)
}

fn check_threshold(grid: &Grid1D, threshold: f64) -> Result<(), MetricsError> {
    if threshold < grid.lo() || threshold > grid.hi() {
        return Err(MetricsError::ThresholdOutsideGrid {
            threshold,
            lo: grid.lo(),
            hi: grid.hi(),
        });
    }
    Ok(())
}

/// Integral of a cell-centered density over `(threshold, inf)`, counting the
/// boundary cell fractionally. The threshold must lie on the grid.
pub fn tail_probability(
    density: &[f64],
    grid: &Grid1D,
    threshold: f64,
) -> Result<f64, MetricsError> {
    if density.len() != grid.n() {
        return Err(MetricsError::ShapeMismatch {
            got: density.len(),
            want: grid.n(),
        });
    }
    check_threshold(grid, threshold)?;
    let dx = grid.dx();
    let p = density
        .iter()
        .enumerate()
        .map(|(i, f)| f * dx * (1.0 - below_fraction(grid, i, threshold)))
        .sum();
    Ok(p)
}

/// Probability that either coordinate exceeds its threshold:
/// `1 - F(t1, t2)` with fractional boundary cells in both directions.
pub fn joint_exceedance(
    density: &Array2<f64>,
    grid: &Grid2D,
    thresholds: [f64; 2],
) -> Result<f64, MetricsError> {
    let (nx, ny) = (grid.x.n(), grid.y.n());
    if density.dim() != (nx, ny) {
        return Err(MetricsError::ShapeMismatch {
            got: density.len(),
            want: nx * ny,
        });
    }
    check_threshold(&grid.x, thresholds[0])?;
    check_threshold(&grid.y, thresholds[1])?;
    let area = grid.cell_area();
    let wx: Vec<f64> = (0..nx).map(|i| below_fraction(&grid.x, i, thresholds[0])).collect();
    let wy: Vec<f64> = (0..ny).map(|j| below_fraction(&grid.y, j, thresholds[1])).collect();
    let mut below = 0.0;
    for i in 0..nx {
        if wx[i] == 0.0 {
            continue;
        }
        for j in 0..ny {
            below += density[(i, j)] * wx[i] * wy[j] * area;
        }
    }
    Ok(1.0 - below)
}

/// Union exceedance probability under an independence assumption, from the
/// two single-line non-exceedance probabilities: `1 - p1 p2`.
pub fn independence_joint(p1: f64, p2: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p2));
    1.0 - p1 * p2
}

/// Spatial `L1` distance between two cell-centered densities.
pub fn l1_distance(a: &[f64], b: &[f64], dx: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * dx
}

/// Space-time `L1` error of `a` against the benchmark `b` on the same grid,
/// integrated in time by the trapezoid rule over `a`'s frames. The benchmark
/// is interpolated linearly in time; `a`'s time stamps must lie inside the
/// benchmark's range.
pub fn l1_error(a: &DensityField1, b: &DensityField1) -> Result<f64, MetricsError> {
    if a.grid != b.grid {
        return Err(MetricsError::GridMismatch);
    }
    let (b0, b1) = (b.times[0], b.times[b.times.len() - 1]);
    let eps = 1e-9 * (b1 - b0).max(1.0);
    let dx = a.grid.dx();
    let mut dist = Vec::with_capacity(a.times.len());
    for (&t, fa) in a.times.iter().zip(&a.frames) {
        if t < b0 - eps || t > b1 + eps {
            return Err(MetricsError::TimeMismatch);
        }
        let t = t.clamp(b0, b1);
        let hi = b.times.partition_point(|&tk| tk < t).min(b.times.len() - 1);
        let d = if hi == 0 || (b.times[hi] - t).abs() < eps {
            l1_distance(fa, &b.frames[hi], dx)
        } else {
            let lo = hi - 1;
            let w = (t - b.times[lo]) / (b.times[hi] - b.times[lo]);
            let interp: Vec<f64> = b.frames[lo]
                .iter()
                .zip(&b.frames[hi])
                .map(|(&x, &y)| (1.0 - w) * x + w * y)
                .collect();
            l1_distance(fa, &interp, dx)
        };
        dist.push(d);
    }
    let mut total = 0.0;
    for k in 0..dist.len() - 1 {
        total += 0.5 * (dist[k] + dist[k + 1]) * (a.times[k + 1] - a.times[k]);
    }
    Ok(total)
}

const MI_FLOOR: f64 = 1e-12;

/// Axis marginals of a discretized joint density.
pub fn marginals(joint: &Array2<f64>, grid: &Grid2D) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = joint.dim();
    let fx = (0..nx).map(|i| joint.row(i).sum() * grid.y.dx()).collect();
    let fy = (0..ny).map(|j| joint.column(j).sum() * grid.x.dx()).collect();
    (fx, fy)
}

/// Mutual information of a discretized joint density against the supplied
/// marginals, in nats. Cells with joint density at or below 1e-12 contribute
/// nothing (the `0 log 0` convention). Cells whose marginal is non-positive
/// are skipped; if the joint mass stranded that way exceeds 1e-6 the
/// marginals are inconsistent with the joint and an error is returned. The
/// raw quadrature value can dip slightly negative; it is logged and floored
/// at 0.
pub fn mutual_information(
    joint: &Array2<f64>,
    marg1: &[f64],
    marg2: &[f64],
    grid: &Grid2D,
) -> Result<f64, MetricsError> {
    let (nx, ny) = (grid.x.n(), grid.y.n());
    if joint.dim() != (nx, ny) || marg1.len() != nx || marg2.len() != ny {
        return Err(MetricsError::ShapeMismatch {
            got: joint.len(),
            want: nx * ny,
        });
    }
    if joint.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (dx, dy) = (grid.x.dx(), grid.y.dx());
    let area = dx * dy;
    // Work with unit-mass versions of the joint and each marginal so that
    // truncation of off-grid tails cannot masquerade as dependence.
    let mass_j = joint.sum() * area;
    let mass_x: f64 = marg1.iter().sum::<f64>() * dx;
    let mass_y: f64 = marg2.iter().sum::<f64>() * dy;
    if mass_j <= 0.0 || mass_x <= 0.0 || mass_y <= 0.0 {
        return Err(MetricsError::InconsistentMarginals);
    }
    let mut mi = 0.0;
    let mut stranded = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            let fij = joint[(i, j)] / mass_j;
            if fij <= MI_FLOOR {
                continue;
            }
            if marg1[i] <= 0.0 || marg2[j] <= 0.0 {
                // Limiter undershoot can cancel a whole row or column of a
                // solved density to zero while individual cells stay tiny
                // but positive; only a macroscopic amount is a real
                // inconsistency between the joint and its marginals.
                stranded += fij * area;
                continue;
            }
            let denom = ((marg1[i] / mass_x) * (marg2[j] / mass_y)).max(MI_FLOOR);
            mi += fij * (fij / denom).ln() * area;
        }
    }
    if stranded > 1e-6 {
        return Err(MetricsError::InconsistentMarginals);
    }
    if mi < 0.0 {
        log::debug!("raw mutual-information quadrature {mi:.3e} floored at 0");
    }
    Ok(mi.max(0.0))
}

/// Benchmark error as a function of ensemble size for one estimator.
#[derive(Debug, Clone)]
pub struct ComplexityCurve {
    pub sizes: Vec<usize>,
    pub errors: Vec<f64>,
}

impl ComplexityCurve {
    pub fn new(sizes: Vec<usize>, errors: Vec<f64>) -> Result<Self, MetricsError> {
        if sizes.len() != errors.len() {
            return Err(MetricsError::CurveMismatch);
        }
        Ok(ComplexityCurve { sizes, errors })
    }

    /// Smallest ensemble size whose error is at most `gamma`, if any.
    pub fn required_samples(&self, gamma: f64) -> Option<usize> {
        self.sizes
            .iter()
            .zip(&self.errors)
            .filter(|(_, &e)| e <= gamma)
            .map(|(&m, _)| m)
            .min()
    }

    /// Least-squares slope of `log(error)` against `log(size)`.
    pub fn loglog_slope(&self) -> Result<f64, MetricsError> {
        if self.sizes.len() < 2 {
            return Err(MetricsError::TooFewPoints(self.sizes.len()));
        }
        let xs: Vec<f64> = self.sizes.iter().map(|&m| (m as f64).ln()).collect();
        let ys: Vec<f64> = self.errors.iter().map(|&e| e.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        Ok(sxy / sxx)
    }
}
