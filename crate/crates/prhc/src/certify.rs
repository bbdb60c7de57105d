//! A posteriori bounds for reduced solutions of the time-discrete problem.
//!
//! All bounds follow from energy estimates of implicit Euler with the Garding inequality
//! `<A v, v> >= eta_V |v|_V^2 - eta_H |v|_H^2`. One step multiplies the pivot-norm error by
//! at most `q = 1 / (1 - 2 tau eta_H)`, the discrete counterpart of `exp(2 eta_H tau)`.
//! Residual norms are dual norms with respect to the energy space, one per step, and time
//! integrals are right-endpoint sums as in the cost.

use crate::fem::Discretization;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexVariant {
    /// Value bounds at the plant state reached by a full-order rollout.
    Mixed,
    /// Value bounds at the reduced prediction, with no full-order work.
    FullReduced,
}

/// Constants entering every bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub coercivity: f64,
    pub shift: f64,
    pub input_norm: f64,
    pub tau: f64,
    growth: f64,
}

impl Stability {
    pub fn new(coercivity: f64, shift: f64, input_norm: f64, tau: f64) -> Result<Self> {
        if !(coercivity > 0.0 && shift >= 0.0 && input_norm >= 0.0 && tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "stability constants ({coercivity}, {shift}, {input_norm}, {tau}) out of range"
            )));
        }
        let s = 2.0 * tau * shift;
        if s >= 1.0 {
            return Err(Error::StepTooLarge(s));
        }
        Ok(Self { coercivity, shift, input_norm, tau, growth: 1.0 / (1.0 - s) })
    }

    pub fn of(disc: &Discretization, tau: f64) -> Result<Self> {
        Self::new(disc.coercivity(), disc.shift(), disc.input_norm(), tau)
    }

    /// Per-step growth factor `q` of the squared pivot norm.
    pub fn growth(&self) -> f64 {
        self.growth
    }

    fn floor(&self) -> f64 {
        self.coercivity.min(1.0)
    }

    /// Coefficients `(C_1y, C_2y, C_p, C_u)` for a window of `steps` steps.
    pub fn constants(&self, steps: usize) -> Constants {
        let g = self.growth.powi(steps as i32);
        let (f, c) = (self.floor(), self.coercivity);
        Constants {
            state_residual: 2.0 * g / (f * c),
            state_initial: g / f,
            adjoint: 2.0 * g / (f * c),
            free_response: g / (2.0 * c),
        }
    }

    /// Bound on `|e_j|_H^2 + sum_{i<=j} tau |e_i|_V^2` for the state error at step `j`.
    ///
    /// `residuals[i-1]` is the state residual at step `i`; `control_gap` bounds the
    /// time-weighted distance of the controls and `initial_gap` the pivot-norm distance of
    /// the initial values.
    pub fn delta_state(&self, residuals: &[f64], j: usize, control_gap: f64, initial_gap: f64) -> f64 {
        let q = self.growth;
        let c = if control_gap > 0.0 { 2.0 } else { 1.0 };
        let mut weighted = 0.0;
        for (i, r) in residuals.iter().take(j).enumerate() {
            weighted += q.powi((j - i) as i32) * self.tau * r * r;
        }
        let qj = q.powi(j as i32);
        let b = self.input_norm;
        let sq = c / (self.floor() * self.coercivity) * (qj * b * b * control_gap * control_gap + weighted)
            + qj / self.floor() * initial_gap * initial_gap;
        sq.max(0.0).sqrt()
    }

    /// Bound on `max_k |e_k|_H^2 + sum_k tau |e_k|_V^2` for the adjoint error, and the sharper
    /// bound on `|e_0|_H`. `data_gap` bounds the time-weighted pivot-norm distance of the
    /// tracking data.
    pub fn delta_adjoint(&self, residuals: &[f64], data_gap: f64) -> AdjointBound {
        let q = self.growth;
        let n = residuals.len();
        let c = if data_gap > 0.0 { 2.0 } else { 1.0 };
        let weighted: f64 =
            residuals.iter().enumerate().map(|(k, r)| q.powi(k as i32 + 1) * self.tau * r * r).sum();
        let sq = c / (self.floor() * self.coercivity) * (q.powi(n as i32) * data_gap * data_gap + weighted);
        let total = sq.max(0.0).sqrt();
        AdjointBound { total, initial: (0.5 * self.floor()).sqrt() * total }
    }

    /// Coefficient of the initial-perturbation product term of the value and cost bounds.
    fn cross_coefficient(&self) -> f64 {
        0.25f64.max(0.5 * (0.5 * self.floor()).sqrt())
    }

    /// Bounds for a reduced optimal solution against the full-order optimum.
    pub fn certify_optimal(&self, lambda: f64, inputs: &CertificateInputs) -> Certificate {
        let n = inputs.state_residuals.len();
        let k = self.constants(n);
        let b = self.input_norm;
        let din = inputs.initial_gap;
        let y0 = self.delta_state(inputs.state_residuals, n, 0.0, inputs.projection_error);
        let p0 = self.delta_adjoint(inputs.adjoint_residuals, 0.0).total;
        let delta_u = ((b * b / (lambda * lambda)) * p0 * p0
            + y0 * y0 / lambda
            + k.free_response * din * din / lambda)
            .sqrt();
        let delta_y_l2h =
            ((b * b / (2.0 * lambda)) * p0 * p0 + 2.0 * y0 * y0 + 2.0 * k.free_response * din * din).sqrt();
        let delta_y = self.delta_state(inputs.state_residuals, n, delta_u, din + inputs.projection_error);
        let delta_p = self.delta_adjoint(inputs.adjoint_residuals, delta_y_l2h).total;
        let ry = l2(inputs.state_residuals, self.tau);
        let rp = l2(inputs.adjoint_residuals, self.tau);
        let delta_value = 0.5 * rp * delta_y
            + 0.5 * (ry * ry + inputs.projection_error.powi(2)).sqrt() * delta_p
            + 0.5 * b * delta_p * delta_u
            + din * inputs.adjoint_initial_norm
            + self.cross_coefficient() * din * delta_p;
        Certificate { delta_y, delta_y_l2h, delta_p, delta_u, delta_value, constants: k }
    }

    /// Bound on `|J(u) - J_r(u)|` for a fixed control with reduced state and adjoint.
    pub fn certify_cost(&self, inputs: &CertificateInputs) -> CostCertificate {
        let n = inputs.state_residuals.len();
        let din = inputs.initial_gap;
        let delta_y = self.delta_state(inputs.state_residuals, n, 0.0, din + inputs.projection_error);
        let delta_p = self.delta_adjoint(inputs.adjoint_residuals, delta_y).total;
        let ry = l2(inputs.state_residuals, self.tau);
        let rp = l2(inputs.adjoint_residuals, self.tau);
        let delta_cost = 0.5 * rp * delta_y
            + 0.5 * (ry * ry + inputs.projection_error.powi(2)).sqrt() * delta_p
            + din * inputs.adjoint_initial_norm
            + self.cross_coefficient() * din * delta_p;
        CostCertificate { delta_y, delta_p, delta_cost }
    }
}

/// Time-weighted l2 norm of per-step values.
pub fn l2(values: &[f64], tau: f64) -> f64 {
    (tau * values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub state_residual: f64,
    pub state_initial: f64,
    pub adjoint: f64,
    pub free_response: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointBound {
    pub total: f64,
    pub initial: f64,
}

/// Reduced quantities a certificate is computed from.
#[derive(Debug, Clone, Copy)]
pub struct CertificateInputs<'a> {
    /// State residual norms at steps `1..=N`.
    pub state_residuals: &'a [f64],
    /// Adjoint residual norms at steps `0..N`.
    pub adjoint_residuals: &'a [f64],
    /// `|y~_in - Pi y~_in|_H` for the reduced initial value.
    pub projection_error: f64,
    /// Bound on the distance between the true and the given initial value.
    pub initial_gap: f64,
    /// `|p_r(t_in)|_H`, the lifted reduced adjoint at the initial time.
    pub adjoint_initial_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    /// State error at the final time together with its energy norm over the window.
    pub delta_y: f64,
    /// Time-weighted pivot norm of the optimal state error.
    pub delta_y_l2h: f64,
    pub delta_p: f64,
    pub delta_u: f64,
    pub delta_value: f64,
    pub constants: Constants,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostCertificate {
    pub delta_y: f64,
    pub delta_p: f64,
    pub delta_cost: f64,
}
