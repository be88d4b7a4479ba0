//! Monte Carlo simulation of the correlated-OU multimachine swing SDE.
//!
//! State layout per machine bus: voltage magnitude `v` (frozen, `dv = 0`),
//! speed `omega`, angle `delta`, and OU noise `eta`, stacked as
//! `z = [v, omega, delta, eta]` of dimension `4n`. The dynamics are
//!
//! ```text
//! dv      = 0
//! domega  = (omega_R / 2) h^-1 ⊙ [ -(omega - omega_R) ⊙ d + p_m - p_e(v, delta) + eta ] dt
//! ddelta  = (omega - omega_R) dt
//! deta    = -theta eta dt + alpha sqrt(2 theta) C dW
//! ```
//!
//! with `p_e,i = sum_j v_i v_j (g_ij cos(delta_i - delta_j) + b_ij sin(delta_i - delta_j))`.
//!
//! The diffusion is additive (state independent), so the Milstein correction
//! term vanishes identically and the implemented Euler–Maruyama step *is*
//! the Milstein scheme for this model; see [`milstein_correction`].
//!
//! Each ensemble sample owns a dedicated counter-based RNG stream derived
//! from the scenario seed, so results do not depend on evaluation order.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::case::{CaseError, EquilibriumPoint, LineId, PowerCase};
use crate::qoi::LineQoi;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("noise parameter out of range: {0}")]
    BadNoiseParameter(String),
    #[error("correlation matrix is not positive semi-definite (pivot {pivot} at row {row})")]
    FactorizationFailure { row: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite drift for sample {sample}")]
    NonFiniteDrift { sample: usize },
    #[error("{count} of {m} samples diverged (> {max_fraction:.1}% allowed)")]
    TooManyDiverged {
        count: usize,
        m: usize,
        max_fraction: f64,
    },
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("invalid scenario: {0}")]
    BadScenario(String),
}

/// OU noise parameters with correlation matrix `R` and factor `C C^T = R`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    theta: f64,
    alpha: f64,
    r: Array2<f64>,
    c: Array2<f64>,
}

impl NoiseModel {
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn r(&self) -> &Array2<f64> {
        &self.r
    }

    /// Lower-triangular factor of `R`.
    pub fn c(&self) -> &Array2<f64> {
        &self.c
    }

    pub fn n(&self) -> usize {
        self.r.nrows()
    }
}

/// Lower-triangular Cholesky factorization; fails on a nonpositive pivot.
fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>, SimError> {
    let n = a.nrows();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(SimError::FactorizationFailure { row: i + 1, pivot: s });
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Builds the constant-correlation noise model `R = (1 - r) I + r 11^T`.
pub fn build_noise(n: usize, r_offdiag: f64, theta: f64, alpha: f64) -> Result<NoiseModel, SimError> {
    if !(theta > 0.0) {
        return Err(SimError::BadNoiseParameter(format!("theta = {theta}, need > 0")));
    }
    if !(alpha >= 0.0) {
        return Err(SimError::BadNoiseParameter(format!("alpha = {alpha}, need >= 0")));
    }
    let mut r = Array2::from_elem((n, n), r_offdiag);
    for i in 0..n {
        r[[i, i]] = 1.0;
    }
    let c = cholesky_lower(&r)?;
    // Factorization residual is a structural invariant of the model.
    let mut max_resid: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += c[[i, k]] * c[[j, k]];
            }
            max_resid = max_resid.max((s - r[[i, j]]).abs());
        }
    }
    if max_resid > 1e-10 {
        return Err(SimError::BadNoiseParameter(format!(
            "factor residual {max_resid:e} exceeds 1e-10"
        )));
    }
    Ok(NoiseModel { theta, alpha, r, c })
}

/// Monte Carlo ensemble of `m` full states at a common time.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub t: f64,
    /// `m x n` voltage magnitudes.
    pub v: Array2<f64>,
    /// `m x n` machine speeds.
    pub omega: Array2<f64>,
    /// `m x n` machine angles.
    pub delta: Array2<f64>,
    /// `m x n` OU noise states.
    pub eta: Array2<f64>,
}

impl EnsembleState {
    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    pub fn n(&self) -> usize {
        self.v.ncols()
    }

    pub fn is_finite(&self, sample: usize) -> bool {
        let row_ok = |a: &Array2<f64>| a.row(sample).iter().all(|x| x.is_finite());
        row_ok(&self.v) && row_ok(&self.omega) && row_ok(&self.delta) && row_ok(&self.eta)
    }
}

/// Scenario description for [`run_scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub dt: f64,
    pub burn_in_t: f64,
    pub post_t: f64,
    pub tripped_line: Option<LineId>,
    pub m: usize,
    pub seed: u64,
    pub record_lines: Vec<LineId>,
    pub record_stride: usize,
}

impl ScenarioConfig {
    fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) {
            return Err(SimError::BadScenario(format!("dt = {}, need > 0", self.dt)));
        }
        if self.burn_in_t < 0.0 || self.post_t < 0.0 {
            return Err(SimError::BadScenario("durations must be >= 0".into()));
        }
        if self.record_stride == 0 {
            return Err(SimError::BadScenario("record_stride must be >= 1".into()));
        }
        if self.m == 0 {
            return Err(SimError::BadScenario("ensemble size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Recorded QoI / response time series for one scenario, times relative to
/// the trip instant.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub lines: Vec<LineId>,
    /// Per recorded line, an `m x N_t` array of line energies.
    pub u: Vec<Array2<f64>>,
    /// Per recorded line, an `m x N_t` array of drift responses `mu^u`.
    pub mu: Vec<Array2<f64>>,
    /// Samples that diverged during integration and were excluded.
    pub diverged: usize,
}

impl TrajectoryRecord {
    pub fn line_index(&self, l: LineId) -> Option<usize> {
        self.lines.iter().position(|&x| x == l)
    }
}

/// Pairwise couplings (upper triangle) plus self terms from the dense G/B
/// matrices, collected once per case so the per-step drift is O(edges).
struct Couplings {
    diag_g: Vec<f64>,
    pairs: Vec<(usize, usize, f64, f64)>,
}

impl Couplings {
    fn from_case(case: &PowerCase) -> Self {
        let n = case.n();
        let (g, b) = (case.g(), case.b());
        let diag_g = (0..n).map(|i| g[[i, i]]).collect();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if g[[i, j]] != 0.0 || b[[i, j]] != 0.0 {
                    pairs.push((i, j, g[[i, j]], b[[i, j]]));
                }
            }
        }
        Couplings { diag_g, pairs }
    }
}

/// Net active power injection `p_e` for one sample, written into `out`.
fn electrical_power(
    v: &[f64],
    delta: &[f64],
    coup: &Couplings,
    out: &mut [f64],
) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = coup.diag_g[i] * v[i] * v[i];
    }
    for &(i, j, g, b) in &coup.pairs {
        let (s, c) = (delta[i] - delta[j]).sin_cos();
        let vv = v[i] * v[j];
        out[i] += vv * (g * c + b * s);
        out[j] += vv * (g * c - b * s);
    }
}

fn drift_sample(
    v: &[f64],
    omega: &[f64],
    delta: &[f64],
    eta: &[f64],
    case: &PowerCase,
    coup: &Couplings,
    theta: f64,
    p_e: &mut [f64],
    d_omega: &mut [f64],
    d_delta: &mut [f64],
    d_eta: &mut [f64],
) {
    let omega_r = case.omega_r();
    electrical_power(v, delta, coup, p_e);
    for i in 0..v.len() {
        d_omega[i] = 0.5 * omega_r / case.h()[i]
            * (-(omega[i] - omega_r) * case.d()[i] + case.p_m()[i] - p_e[i] + eta[i]);
        d_delta[i] = omega[i] - omega_r;
        d_eta[i] = -theta * eta[i];
    }
}

/// Full drift array, `m x 4n`, blocks `[v | omega | delta | eta]`.
/// The `v` block is identically zero.
pub fn system_drift(
    state: &EnsembleState,
    case: &PowerCase,
    noise: &NoiseModel,
) -> Result<Array2<f64>, SimError> {
    let (m, n) = (state.m(), state.n());
    if n != case.n() || n != noise.n() {
        return Err(SimError::DimensionMismatch(format!(
            "state has n = {n}, case n = {}, noise n = {}",
            case.n(),
            noise.n()
        )));
    }
    let coup = Couplings::from_case(case);
    let mut out = Array2::zeros((m, 4 * n));
    let mut p_e = vec![0.0; n];
    let (mut dw, mut dd, mut de) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for s in 0..m {
        drift_sample(
            state.v.row(s).as_slice().unwrap(),
            state.omega.row(s).as_slice().unwrap(),
            state.delta.row(s).as_slice().unwrap(),
            state.eta.row(s).as_slice().unwrap(),
            case,
            &coup,
            noise.theta(),
            &mut p_e,
            &mut dw,
            &mut dd,
            &mut de,
        );
        let mut row = out.row_mut(s);
        for i in 0..n {
            row[n + i] = dw[i];
            row[2 * n + i] = dd[i];
            row[3 * n + i] = de[i];
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(SimError::NonFiniteDrift { sample: s });
        }
    }
    Ok(out)
}

/// One deterministic RNG stream per sample. Stream `s` is reserved for
/// sample `s`; initial-condition draws and Wiener increments share it.
pub fn sample_streams(seed: u64, m: usize) -> Vec<ChaCha12Rng> {
    (0..m)
        .map(|s| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            rng
        })
        .collect()
}

fn draw_initial(
    case: &PowerCase,
    eq: &EquilibriumPoint,
    noise: &NoiseModel,
    rngs: &mut [ChaCha12Rng],
) -> EnsembleState {
    let n = case.n();
    let m = rngs.len();
    // Standard deviation of the equilibrium voltages across machines.
    let mean_v = eq.v_star.mean().unwrap();
    let sigma_v_star = if n > 1 {
        (eq.v_star.iter().map(|v| (v - mean_v).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut v_sd = 0.1 * sigma_v_star;
    if v_sd == 0.0 {
        log::warn!("equilibrium voltages are all equal; falling back to 1e-4 perturbation floor");
        v_sd = 1e-4;
    }

    let mut v = Array2::zeros((m, n));
    let mut omega = Array2::zeros((m, n));
    let mut delta = Array2::zeros((m, n));
    let mut eta = Array2::zeros((m, n));
    let mut xi = vec![0.0; n];
    for (s, rng) in rngs.iter_mut().enumerate() {
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            v[[s, i]] = (eq.v_star[i] + v_sd * z).abs();
            omega[[s, i]] = case.omega_r();
            delta[[s, i]] = eq.delta_star[i];
        }
        for x in xi.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        // eta(0) ~ N(0, alpha^2 R) via the lower-triangular factor.
        for i in 0..n {
            let mut acc = 0.0;
            for k in 0..=i {
                acc += noise.c()[[i, k]] * xi[k];
            }
            eta[[s, i]] = noise.alpha() * acc;
        }
    }
    EnsembleState {
        t: 0.0,
        v,
        omega,
        delta,
        eta,
    }
}

/// Draws the initial ensemble: folded-Gaussian voltages around `v*`,
/// speeds at `omega_R`, angles at `delta*`, and `eta ~ N(0, alpha^2 R)`.
pub fn sample_initial(
    case: &PowerCase,
    eq: &EquilibriumPoint,
    noise: &NoiseModel,
    m: usize,
    seed: u64,
) -> Result<EnsembleState, SimError> {
    if m == 0 {
        return Err(SimError::BadScenario("ensemble size must be >= 1".into()));
    }
    if eq.v_star.len() != case.n() {
        return Err(SimError::DimensionMismatch("equilibrium length != n".into()));
    }
    let mut rngs = sample_streams(seed, m);
    Ok(draw_initial(case, eq, noise, &mut rngs))
}

/// Advances every sample one Euler–Maruyama step of size `dt`, drawing
/// Wiener increments from the per-sample streams. Because the diffusion is
/// additive this coincides with the Milstein scheme.
pub fn step(
    state: &mut EnsembleState,
    case: &PowerCase,
    noise: &NoiseModel,
    dt: f64,
    rngs: &mut [ChaCha12Rng],
) -> Result<(), SimError> {
    let coup = Couplings::from_case(case);
    step_inner(state, case, &coup, noise, dt, rngs, None)
}

fn step_inner(
    state: &mut EnsembleState,
    case: &PowerCase,
    coup: &Couplings,
    noise: &NoiseModel,
    dt: f64,
    rngs: &mut [ChaCha12Rng],
    mut skip: Option<&mut [bool]>,
) -> Result<(), SimError> {
    let n = case.n();
    let m = state.m();
    if rngs.len() != m {
        return Err(SimError::DimensionMismatch("one RNG stream per sample required".into()));
    }
    if n != case.n() || n != noise.n() {
        return Err(SimError::DimensionMismatch("state/case/noise dimension mismatch".into()));
    }
    let sqrt_dt = dt.sqrt();
    let noise_gain = noise.alpha() * (2.0 * noise.theta()).sqrt();
    let mut p_e = vec![0.0; n];
    let (mut dw, mut dd, mut de) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut xi = vec![0.0; n];
    for s in 0..m {
        // Diverged samples still consume their increments so the stream
        // positions of the healthy samples are unaffected.
        let frozen = skip.as_ref().map(|f| f[s]).unwrap_or(false);
        for x in xi.iter_mut() {
            *x = rngs[s].sample(StandardNormal);
        }
        if frozen {
            continue;
        }
        drift_sample(
            state.v.row(s).as_slice().unwrap(),
            state.omega.row(s).as_slice().unwrap(),
            state.delta.row(s).as_slice().unwrap(),
            state.eta.row(s).as_slice().unwrap(),
            case,
            coup,
            noise.theta(),
            &mut p_e,
            &mut dw,
            &mut dd,
            &mut de,
        );
        let mut finite = true;
        for i in 0..n {
            // v is frozen: dv = 0.
            state.omega[[s, i]] += dw[i] * dt;
            state.delta[[s, i]] += dd[i] * dt;
            let mut mix = 0.0;
            for k in 0..=i {
                mix += noise.c()[[i, k]] * xi[k];
            }
            state.eta[[s, i]] += de[i] * dt + noise_gain * mix * sqrt_dt;
            finite &= state.omega[[s, i]].is_finite()
                && state.delta[[s, i]].is_finite()
                && state.eta[[s, i]].is_finite();
        }
        if !finite {
            match skip.as_mut() {
                Some(f) => f[s] = true,
                None => return Err(SimError::NonFiniteDrift { sample: s }),
            }
        }
    }
    state.t += dt;
    Ok(())
}

/// Milstein correction term for this model.
///
/// The correction is `(1/2) sigma (d sigma / dz) ((dW)^2 - dt)`; the
/// diffusion matrix is constant in `z` (only the eta block is nonzero and it
/// equals `alpha sqrt(2 theta) C`), so the derivative factor — and with it
/// the whole correction — is identically zero. Adding it to the
/// Euler–Maruyama update therefore changes nothing, bitwise.
pub fn milstein_correction(state: &EnsembleState) -> Array2<f64> {
    // d sigma / dz == 0 for additive noise.
    Array2::zeros((state.m(), 4 * state.n()))
}

const MAX_DIVERGED_FRACTION: f64 = 0.001;

/// Runs burn-in, applies the optional line trip, then integrates the
/// post-trip phase recording line energies and drift responses every
/// `record_stride`-th step. Times in the record are relative to the trip
/// instant.
pub fn run_scenario(
    case: &PowerCase,
    eq: &EquilibriumPoint,
    noise: &NoiseModel,
    cfg: &ScenarioConfig,
) -> Result<TrajectoryRecord, SimError> {
    cfg.validate()?;
    let post_case = match cfg.tripped_line {
        Some(l) => case.remove_line(l)?,
        None => case.clone(),
    };
    for &l in &cfg.record_lines {
        if !post_case.has_edge(l) {
            return Err(SimError::BadScenario(format!(
                "record line {l} does not exist after the trip"
            )));
        }
    }
    let qois: Vec<LineQoi> = cfg
        .record_lines
        .iter()
        .map(|&l| LineQoi::new(&post_case, l))
        .collect::<Result<_, _>>()?;

    let mut rngs = sample_streams(cfg.seed, cfg.m);
    let mut state = draw_initial(case, eq, noise, &mut rngs);
    let mut frozen = vec![false; cfg.m];

    let burn_steps = (cfg.burn_in_t / cfg.dt).round() as usize;
    let pre_coup = Couplings::from_case(case);
    for _ in 0..burn_steps {
        step_inner(&mut state, case, &pre_coup, noise, cfg.dt, &mut rngs, Some(&mut frozen))?;
    }

    // Trip instant: reset the clock.
    state.t = 0.0;
    let post_steps = (cfg.post_t / cfg.dt).round() as usize;
    let n_frames = post_steps / cfg.record_stride + 1;
    let mut times = Vec::with_capacity(n_frames);
    let mut u = vec![Array2::zeros((cfg.m, n_frames)); qois.len()];
    let mut mu = vec![Array2::zeros((cfg.m, n_frames)); qois.len()];

    let post_coup = Couplings::from_case(&post_case);
    let mut frame = 0usize;
    for k in 0..=post_steps {
        if k % cfg.record_stride == 0 {
            times.push(k as f64 * cfg.dt);
            for (q, qoi) in qois.iter().enumerate() {
                for s in 0..cfg.m {
                    u[q][[s, frame]] = qoi.energy_sample(&state, s);
                    mu[q][[s, frame]] = qoi.drift_sample(&state, s);
                }
            }
            frame += 1;
        }
        if k < post_steps {
            step_inner(&mut state, &post_case, &post_coup, noise, cfg.dt, &mut rngs, Some(&mut frozen))?;
        }
    }

    let diverged = frozen.iter().filter(|&&f| f).count();
    if diverged as f64 > MAX_DIVERGED_FRACTION * cfg.m as f64 {
        return Err(SimError::TooManyDiverged {
            count: diverged,
            m: cfg.m,
            max_fraction: MAX_DIVERGED_FRACTION * 100.0,
        });
    }
    if diverged > 0 {
        log::warn!("{diverged} of {} samples diverged and were excluded", cfg.m);
        let keep: Vec<usize> = (0..cfg.m).filter(|&s| !frozen[s]).collect();
        let compact = |a: &Array2<f64>| {
            let mut out = Array2::zeros((keep.len(), a.ncols()));
            for (r, &s) in keep.iter().enumerate() {
                out.row_mut(r).assign(&a.row(s));
            }
            out
        };
        u = u.iter().map(compact).collect();
        mu = mu.iter().map(compact).collect();
    }

    Ok(TrajectoryRecord {
        times,
        lines: cfg.record_lines.clone(),
        u,
        mu,
        diverged,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use std::collections::BTreeMap;

    pub(crate) fn equilibrium_triangle() -> (PowerCase, EquilibriumPoint) {
        // 3-bus triangle with p_m chosen as p_e(v*, delta*), so the
        // deterministic system is exactly at rest at the equilibrium.
        let n = 3;
        let mut g = Array2::zeros((n, n));
        let mut b = Array2::zeros((n, n));
        let edges = vec![
            crate::case::LineId::new(1, 2),
            crate::case::LineId::new(1, 3),
            crate::case::LineId::new(2, 3),
        ];
        for l in &edges {
            let (i, j) = (l.i() - 1, l.j() - 1);
            g[[i, j]] = 0.2;
            g[[j, i]] = 0.2;
            b[[i, j]] = -4.0;
            b[[j, i]] = -4.0;
        }
        for i in 0..n {
            g[[i, i]] = 0.5;
            b[[i, i]] = 8.0;
        }
        let v_star = ndarray::array![1.0, 0.98, 1.02];
        let delta_star = ndarray::array![0.0, -0.06, 0.04];
        let mut p_m = ndarray::Array1::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let dd: f64 = delta_star[i] - delta_star[j];
                p_m[i] += v_star[i] * v_star[j] * (g[[i, j]] * dd.cos() + b[[i, j]] * dd.sin());
            }
        }
        let case = crate::case::test_support::make_case(
            n,
            edges,
            g,
            b,
            ndarray::Array1::from_elem(n, 1.5),
            ndarray::Array1::from_elem(n, 0.8),
            p_m,
            1.0,
            BTreeMap::new(),
        );
        (case, EquilibriumPoint { v_star, delta_star })
    }

    fn state_at_equilibrium(case: &PowerCase, eq: &EquilibriumPoint, m: usize) -> EnsembleState {
        let n = case.n();
        let mut v = Array2::zeros((m, n));
        let mut omega = Array2::zeros((m, n));
        let mut delta = Array2::zeros((m, n));
        for s in 0..m {
            for i in 0..n {
                v[[s, i]] = eq.v_star[i];
                omega[[s, i]] = case.omega_r();
                delta[[s, i]] = eq.delta_star[i];
            }
        }
        EnsembleState {
            t: 0.0,
            v,
            omega,
            delta,
            eta: Array2::zeros((m, n)),
        }
    }

    #[test]
    fn build_noise_constant_correlation() {
        let noise = build_noise(9, 0.44, 1.0, 0.05).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let want = if i == j { 1.0 } else { 0.44 };
                assert_eq!(noise.r()[[i, j]], want);
            }
        }
        // C C^T reproduces R tightly.
        let noise2 = build_noise(2, 0.36, 1.0, 0.05).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..2 {
                    s += noise2.c()[[i, k]] * noise2.c()[[j, k]];
                }
                assert_abs_diff_eq!(s, noise2.r()[[i, j]], epsilon = 1e-12);
            }
        }
        // r = 0 gives the identity factor.
        let id = build_noise(3, 0.0, 1.0, 0.05).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(id.c()[[i, j]], if i == j { 1.0 } else { 0.0 });
            }
        }
        // Out-of-range correlation fails to factorize.
        assert!(build_noise(4, 1.2, 1.0, 0.05).is_err());
    }

    #[test]
    fn drift_vanishes_at_equilibrium() {
        let (case, eq) = equilibrium_triangle();
        let noise = build_noise(3, 0.2, 1.0, 0.05).unwrap();
        let state = state_at_equilibrium(&case, &eq, 4);
        let mu = system_drift(&state, &case, &noise).unwrap();
        for x in mu.iter() {
            assert!(x.abs() <= 1e-8, "drift entry {x} at equilibrium");
        }
    }

    #[test]
    fn eta_block_is_linear_ou_drift_and_v_block_zero() {
        let (case, eq) = equilibrium_triangle();
        let noise = build_noise(3, 0.2, 1.0, 0.05).unwrap();
        let mut state = state_at_equilibrium(&case, &eq, 2);
        let c = 0.37;
        state.eta.fill(c);
        let mu = system_drift(&state, &case, &noise).unwrap();
        let n = case.n();
        for s in 0..2 {
            for i in 0..n {
                assert_eq!(mu[[s, i]], 0.0); // v block exactly zero
                assert_abs_diff_eq!(mu[[s, 3 * n + i]], -c, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn sample_initial_is_deterministic_and_well_distributed() {
        let (case, eq) = equilibrium_triangle();
        let noise = build_noise(3, 0.44, 1.0, 0.05).unwrap();
        let a = sample_initial(&case, &eq, &noise, 64, 7).unwrap();
        let b = sample_initial(&case, &eq, &noise, 64, 7).unwrap();
        assert_eq!(a.v, b.v);
        assert_eq!(a.eta, b.eta);
        // omega starts exactly at the reference speed.
        assert!(a.omega.iter().all(|&w| w == 1.0));

        // Statistical check of the sampling law at larger m.
        let m = 100_000;
        let big = sample_initial(&case, &eq, &noise, m, 3).unwrap();
        let n = case.n();
        let sigma_vstar = {
            let mean = eq.v_star.mean().unwrap();
            (eq.v_star.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        };
        let sd = 0.1 * sigma_vstar;
        for i in 0..n {
            let mean_i = big.v.column(i).mean().unwrap();
            let se = sd / (m as f64).sqrt();
            assert!(
                (mean_i - eq.v_star[i]).abs() <= 3.0 * se,
                "v(0) mean off: {} vs {}",
                mean_i,
                eq.v_star[i]
            );
        }
        // Covariance of eta within 5% of alpha^2 R (Frobenius).
        let mut cov = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..m {
                    s += big.eta[[k, i]] * big.eta[[k, j]];
                }
                cov[[i, j]] = s / m as f64;
            }
        }
        let target = noise.r() * (noise.alpha() * noise.alpha());
        let num = (&cov - &target).iter().map(|x| x * x).sum::<f64>().sqrt();
        let den = target.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(num / den < 0.05, "eta covariance off by {}", num / den);
    }

    #[test]
    fn zero_noise_step_fixes_equilibrium_and_freezes_v() {
        let (case, eq) = equilibrium_triangle();
        let noise = build_noise(3, 0.2, 1.0, 0.0).unwrap();
        let mut state = state_at_equilibrium(&case, &eq, 3);
        let before = state.clone();
        let mut rngs = sample_streams(0, 3);
        step(&mut state, &case, &noise, 1e-2, &mut rngs).unwrap();
        for (a, b) in state.omega.iter().zip(before.omega.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        for (a, b) in state.delta.iter().zip(before.delta.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert_eq!(state.v, before.v); // v block changes by exactly 0
    }

    #[test]
    fn ou_stationary_variance() {
        // Freeze everything except eta by using a case with zero couplings
        // and watching the eta block only.
        let (case, eq) = equilibrium_triangle();
        let noise = build_noise(3, 0.3, 1.0, 0.05).unwrap();
        let m = 10_000;
        let mut state = state_at_equilibrium(&case, &eq, m);
        let mut rngs = sample_streams(11, m);
        let dt = 1e-2;
        for _ in 0..((50.0 / dt) as usize) {
            step(&mut state, &case, &noise, dt, &mut rngs).unwrap();
        }
        let alpha2 = noise.alpha() * noise.alpha();
        for i in 0..3 {
            let col = state.eta.column(i);
            let mean = col.mean().unwrap();
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m as f64;
            let rel = (var - alpha2).abs() / alpha2;
            assert!(rel < 0.05, "eta_{i} variance off by {rel}");
        }
    }

    #[test]
    fn milstein_correction_is_identically_zero() {
        let (case, eq) = equilibrium_triangle();
        let noise = build_noise(3, 0.44, 1.0, 0.05).unwrap();
        let mut em = sample_initial(&case, &eq, &noise, 16, 5).unwrap();
        let mut rngs = sample_streams(5, 16);
        step(&mut em, &case, &noise, 1e-2, &mut rngs).unwrap();
        // "Milstein" = EM + correction; the correction is structurally zero,
        // so adding it must be a bitwise no-op.
        let corr = milstein_correction(&em);
        assert!(corr.iter().all(|&x| x == 0.0));
        let mut with_corr = em.clone();
        let n = case.n();
        for s in 0..16 {
            for i in 0..n {
                with_corr.eta[[s, i]] += corr[[s, 3 * n + i]];
            }
        }
        assert_eq!(with_corr.eta, em.eta);
    }

    #[test]
    fn run_scenario_shapes_and_determinism() {
        let (case, eq) = equilibrium_triangle();
        let noise = build_noise(3, 0.2, 1.0, 0.05).unwrap();
        let cfg = ScenarioConfig {
            dt: 1e-2,
            burn_in_t: 1.0,
            post_t: 0.5,
            tripped_line: Some(crate::case::LineId::new(2, 3)),
            m: 32,
            seed: 9,
            record_lines: vec![crate::case::LineId::new(1, 2), crate::case::LineId::new(1, 3)],
            record_stride: 1,
        };
        let rec = run_scenario(&case, &eq, &noise, &cfg).unwrap();
        assert_eq!(rec.times.len(), 51);
        assert_eq!(rec.times[0], 0.0);
        assert_eq!(rec.u.len(), 2);
        assert_eq!(rec.u[0].dim(), (32, 51));
        assert!(rec.u.iter().all(|a| a.iter().all(|&x| x >= 0.0)));

        let rec2 = run_scenario(&case, &eq, &noise, &cfg).unwrap();
        assert_eq!(rec.u[0], rec2.u[0]);
        assert_eq!(rec.mu[1], rec2.mu[1]);

        // Degenerate post duration: a single frame, no error.
        let cfg0 = ScenarioConfig {
            post_t: 0.0,
            ..cfg.clone()
        };
        let rec0 = run_scenario(&case, &eq, &noise, &cfg0).unwrap();
        assert_eq!(rec0.times.len(), 1);

        // Tripping a non-existent line fails before integration.
        let bad = ScenarioConfig {
            tripped_line: Some(crate::case::LineId::new(4, 5)),
            ..cfg
        };
        assert!(run_scenario(&case, &eq, &noise, &bad).is_err());
    }

    #[test]
    fn angle_gauge_invariance() {
        // Shifting all angles (state and equilibrium) by a constant leaves
        // every recorded u and mu^u unchanged.
        let (case, eq) = equilibrium_triangle();
        let noise = build_noise(3, 0.2, 1.0, 0.05).unwrap();
        let cfg = ScenarioConfig {
            dt: 1e-2,
            burn_in_t: 0.5,
            post_t: 0.3,
            tripped_line: None,
            m: 16,
            seed: 21,
            record_lines: vec![crate::case::LineId::new(1, 2)],
            record_stride: 1,
        };
        let rec = run_scenario(&case, &eq, &noise, &cfg).unwrap();
        let shifted = EquilibriumPoint {
            v_star: eq.v_star.clone(),
            delta_star: &eq.delta_star + 0.7,
        };
        let rec_shift = run_scenario(&case, &shifted, &noise, &cfg).unwrap();
        for (a, b) in rec.u[0].iter().zip(rec_shift.u[0].iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in rec.mu[0].iter().zip(rec_shift.mu[0].iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
