//! Line-energy quantities of interest, their Itô drift/diffusion responses,
//! and analytic derivatives.
//!
//! For a line `(i, j)` with susceptance `b` the energy is
//! `u = (1/2) b^2 [v_i^2 - 2 v_i v_j cos(delta_i - delta_j) + v_j^2]`
//! and the drift response reduces in closed form to
//! `mu^u = b^2 v_i v_j sin(delta_i - delta_j) (omega_i - omega_j)`,
//! with diffusion response identically zero: the gradient of `u` has no
//! eta components and the diffusion matrix has only an eta block.
//!
//! Angle differences are evaluated without wrapping; the studied scenarios
//! stay far from +-pi.

use ndarray::Array1;
use thiserror::Error;

use crate::case::{CaseError, LineId, PowerCase};
use crate::sim::{system_drift, EnsembleState, NoiseModel, SimError};

#[derive(Debug, Error)]
pub enum QoiError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("coordinate index {k} out of range 1..={max}")]
    CoordinateOutOfRange { k: usize, max: usize },
}

/// Line-energy QoI; captures the line's susceptance at construction.
#[derive(Debug, Clone, Copy)]
pub struct LineQoi {
    line: LineId,
    b_ij: f64,
}

/// Per-sample QoI values and Itô responses.
#[derive(Debug, Clone)]
pub struct ResponseSamples {
    pub u: Array1<f64>,
    pub mu_u: Array1<f64>,
    /// Diffusion response; identically zero for line energies.
    pub d_u: Array1<f64>,
}

/// Sparse gradient and Hessian of a line energy in the full `4n` state
/// space. Only the four coordinates `v_i, v_j, delta_i, delta_j`
/// participate; `idx` holds their flat positions.
#[derive(Debug, Clone)]
pub struct SparseDerivatives {
    /// Flat state indices of `[v_i, v_j, delta_i, delta_j]`.
    pub idx: [usize; 4],
    pub grad: [f64; 4],
    pub hess: [[f64; 4]; 4],
}

impl LineQoi {
    pub fn new(case: &PowerCase, line: LineId) -> Result<Self, CaseError> {
        let b_ij = case.line_susceptance(line)?;
        Ok(LineQoi { line, b_ij })
    }

    /// For analytic/synthetic studies where no case exists.
    pub fn from_parts(line: LineId, b_ij: f64) -> Self {
        LineQoi { line, b_ij }
    }

    pub fn line(&self) -> LineId {
        self.line
    }

    pub fn b_ij(&self) -> f64 {
        self.b_ij
    }

    #[inline]
    pub fn energy_sample(&self, state: &EnsembleState, s: usize) -> f64 {
        let (i, j) = (self.line.i() - 1, self.line.j() - 1);
        let (vi, vj) = (state.v[[s, i]], state.v[[s, j]]);
        let dd = state.delta[[s, i]] - state.delta[[s, j]];
        0.5 * self.b_ij * self.b_ij * (vi * vi - 2.0 * vi * vj * dd.cos() + vj * vj)
    }

    #[inline]
    pub fn drift_sample(&self, state: &EnsembleState, s: usize) -> f64 {
        let (i, j) = (self.line.i() - 1, self.line.j() - 1);
        let (vi, vj) = (state.v[[s, i]], state.v[[s, j]]);
        let dd = state.delta[[s, i]] - state.delta[[s, j]];
        let dw = state.omega[[s, i]] - state.omega[[s, j]];
        self.b_ij * self.b_ij * vi * vj * dd.sin() * dw
    }

    /// Analytic gradient and Hessian for one sample.
    pub fn derivatives_sample(&self, state: &EnsembleState, s: usize) -> SparseDerivatives {
        let n = state.n();
        let (i, j) = (self.line.i() - 1, self.line.j() - 1);
        let (vi, vj) = (state.v[[s, i]], state.v[[s, j]]);
        let dd = state.delta[[s, i]] - state.delta[[s, j]];
        let (sin_d, cos_d) = dd.sin_cos();
        let b2 = self.b_ij * self.b_ij;

        let du_dvi = b2 * (vi - vj * cos_d);
        let du_dvj = b2 * (vj - vi * cos_d);
        let du_ddi = b2 * vi * vj * sin_d;

        // Hessian in the (v_i, v_j, delta_i, delta_j) block.
        let h_vv = b2; // d2u/dvi2 = d2u/dvj2
        let h_vivj = -b2 * cos_d;
        let h_dd = b2 * vi * vj * cos_d; // d2u/ddi2 = d2u/ddj2 = -d2u/ddiddj
        let h_vidi = b2 * vj * sin_d; // d2u/(dvi ddelta_i)
        let h_vjdi = b2 * vi * sin_d; // d2u/(dvj ddelta_i)

        SparseDerivatives {
            idx: [i, j, 2 * n + i, 2 * n + j],
            grad: [du_dvi, du_dvj, du_ddi, -du_ddi],
            hess: [
                [h_vv, h_vivj, h_vidi, -h_vidi],
                [h_vivj, h_vv, h_vjdi, -h_vjdi],
                [h_vidi, h_vjdi, h_dd, -h_dd],
                [-h_vidi, -h_vjdi, -h_dd, h_dd],
            ],
        }
    }
}

/// Line energies for every sample.
pub fn line_energy(state: &EnsembleState, q: &LineQoi) -> Array1<f64> {
    Array1::from_iter((0..state.m()).map(|s| q.energy_sample(state, s)))
}

/// Closed-form drift responses `mu^u` for every sample.
pub fn line_energy_drift(state: &EnsembleState, q: &LineQoi) -> Array1<f64> {
    Array1::from_iter((0..state.m()).map(|s| q.drift_sample(state, s)))
}

/// Per-sample sparse gradients and Hessians.
pub fn qoi_derivatives(state: &EnsembleState, q: &LineQoi) -> Vec<SparseDerivatives> {
    (0..state.m()).map(|s| q.derivatives_sample(state, s)).collect()
}

/// Assembles the Itô responses from the sparse derivatives and the model's
/// actual drift vector and diffusion structure, rather than from the
/// closed forms. Used to cross-check the closed-form expressions.
pub fn ito_responses(
    state: &EnsembleState,
    case: &PowerCase,
    noise: &NoiseModel,
    q: &LineQoi,
) -> Result<ResponseSamples, QoiError> {
    let m = state.m();
    let n = state.n();
    let mu = system_drift(state, case, noise)?;
    let eta_lo = 3 * n;
    let two_theta_a2 = 2.0 * noise.theta() * noise.alpha() * noise.alpha();

    let mut out_u = Array1::zeros(m);
    let mut out_mu = Array1::zeros(m);
    let mut out_d = Array1::zeros(m);
    for s in 0..m {
        let der = q.derivatives_sample(state, s);
        // (grad u)^T mu_t
        let mut drift = 0.0;
        for (a, &idx) in der.idx.iter().enumerate() {
            drift += der.grad[a] * mu[[s, idx]];
        }
        // (1/2) tr(sigma^T H sigma) = (1/2) sum_{a,b} H_ab [sigma sigma^T]_ab;
        // sigma sigma^T is nonzero only in the eta block.
        let mut trace = 0.0;
        for (a, &ia) in der.idx.iter().enumerate() {
            for (b, &ib) in der.idx.iter().enumerate() {
                if ia >= eta_lo && ib >= eta_lo {
                    trace += der.hess[a][b] * two_theta_a2 * noise.r()[[ia - eta_lo, ib - eta_lo]];
                }
            }
        }
        // D^u = (grad u)^T D (grad u), D = (1/2) sigma sigma^T.
        let mut diff = 0.0;
        for (a, &ia) in der.idx.iter().enumerate() {
            for (b, &ib) in der.idx.iter().enumerate() {
                if ia >= eta_lo && ib >= eta_lo {
                    diff += der.grad[a]
                        * der.grad[b]
                        * 0.5
                        * two_theta_a2
                        * noise.r()[[ia - eta_lo, ib - eta_lo]];
                }
            }
        }
        out_u[s] = q.energy_sample(state, s);
        out_mu[s] = drift + 0.5 * trace;
        out_d[s] = diff;
    }
    Ok(ResponseSamples {
        u: out_u,
        mu_u: out_mu,
        d_u: out_d,
    })
}

/// Coordinate-projection QoI `u = z_k` (1-based `k` over the `4n` state):
/// per-sample drift coordinate and the constant diffusion response
/// `D_kk = theta alpha^2 R_k'k'` when `k` indexes an eta coordinate,
/// 0 otherwise.
pub fn coordinate_projection_coeffs(
    state: &EnsembleState,
    k: usize,
    case: &PowerCase,
    noise: &NoiseModel,
) -> Result<(Array1<f64>, f64), QoiError> {
    let n = state.n();
    if k == 0 || k > 4 * n {
        return Err(QoiError::CoordinateOutOfRange { k, max: 4 * n });
    }
    let mu = system_drift(state, case, noise)?;
    let col = mu.column(k - 1).to_owned();
    let d_kk = if k - 1 >= 3 * n {
        let kp = k - 1 - 3 * n;
        noise.theta() * noise.alpha() * noise.alpha() * noise.r()[[kp, kp]]
    } else {
        0.0
    };
    Ok((col, d_kk))
}
