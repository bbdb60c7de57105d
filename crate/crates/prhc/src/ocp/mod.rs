//! Finite-horizon optimal control with tracking cost, quadratic control cost and a squared
//! l1 sparsity term, solved by proximal gradient steps with Barzilai-Borwein step sizes.
//!
//! Discrete cost on a window of `N` steps:
//! `sum_{j=1}^N tau [ 1/2 |y_j|_H^2 + lambda/2 |u_j|^2 + beta/2 |u_j|_1^2 ]`
//! where `u_j` is the control on `(t_{j-1}, t_j]`.

mod prox;

use std::collections::VecDeque;

use nalgebra::DVector;

pub use prox::prox_squared_l1;

use crate::dynamics::{adjoint, simulate, ControlSignal, LinearModel, TimeGrid, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub lambda: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Length of the non-monotone line search memory; 1 gives monotone descent.
    pub memory: usize,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-13,
            abs_tol: 1e-13,
            max_iter: 5000,
            memory: 5,
            min_step: 1e-12,
            max_step: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolverStats {
    pub iterations: usize,
    /// Adjoint solves, one per gradient.
    pub gradient_evals: usize,
    /// Forward solves, including rejected line search trials.
    pub state_solves: usize,
    pub residual: f64,
    pub converged: bool,
    /// Last accepted step size, a good first trial for a warm-started neighbour problem.
    pub last_step: f64,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub control: ControlSignal,
    pub state: Trajectory,
    pub adjoint: Trajectory,
    pub value: f64,
    pub stats: SolverStats,
}

/// Running cost of one step.
pub fn stage_cost(
    model: &dyn LinearModel,
    weights: &CostWeights,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    0.5 * model.h_inner(y, y)
        + 0.5 * weights.lambda * u.norm_squared()
        + 0.5 * weights.beta * u.lp_norm(1).powi(2)
}

/// Cost of a control and its trajectory over the first `steps` steps.
pub fn cost_of_trajectory(
    model: &dyn LinearModel,
    grid: &TimeGrid,
    weights: &CostWeights,
    state: &Trajectory,
    control: &ControlSignal,
    steps: usize,
) -> f64 {
    (1..=steps.min(grid.steps))
        .map(|j| grid.tau * stage_cost(model, weights, &state.states[j], &control.values[j - 1]))
        .sum()
}

pub fn evaluate_cost(
    model: &dyn LinearModel,
    grid: &TimeGrid,
    weights: &CostWeights,
    y_in: &DVector<f64>,
    control: &ControlSignal,
) -> Result<(f64, Trajectory)> {
    let state = simulate(model, grid, y_in, control)?;
    let j = cost_of_trajectory(model, grid, weights, &state, control, grid.steps);
    Ok((j, state))
}

/// Euclidean gradient of the smooth part, `tau (lambda u_k + B^T p_k)`, with trajectories.
pub fn smooth_gradient(
    model: &dyn LinearModel,
    grid: &TimeGrid,
    weights: &CostWeights,
    y_in: &DVector<f64>,
    control: &ControlSignal,
) -> Result<(ControlSignal, Trajectory, Trajectory)> {
    let state = simulate(model, grid, y_in, control)?;
    let p = adjoint(model, grid, &state)?;
    let g = gradient_from_adjoint(model, grid, weights, control, &p);
    Ok((g, state, p))
}

fn gradient_from_adjoint(
    model: &dyn LinearModel,
    grid: &TimeGrid,
    weights: &CostWeights,
    control: &ControlSignal,
    p: &Trajectory,
) -> ControlSignal {
    ControlSignal {
        values: (0..grid.steps)
            .map(|k| {
                let mut g = model.apply_input_transpose(&p.states[k]);
                g.axpy(weights.lambda, &control.values[k], 1.0);
                g * grid.tau
            })
            .collect(),
    }
}

fn prox_signal(w: &ControlSignal, sigma: f64) -> ControlSignal {
    ControlSignal { values: w.values.iter().map(|v| prox_squared_l1(v, sigma)).collect() }
}

fn euclid_sq(x: &ControlSignal) -> f64 {
    x.values.iter().map(|v| v.norm_squared()).sum()
}

fn euclid_dot(x: &ControlSignal, y: &ControlSignal) -> f64 {
    x.values.iter().zip(&y.values).map(|(a, b)| a.dot(b)).sum()
}

/// Optimality residual `|u - prox(-B^T p / lambda)|` in the time-weighted norm; zero exactly
/// at the minimizer.
pub fn optimality_residual(
    model: &dyn LinearModel,
    grid: &TimeGrid,
    weights: &CostWeights,
    control: &ControlSignal,
    p: &Trajectory,
) -> f64 {
    let sigma = weights.beta / weights.lambda;
    let mut s = 0.0;
    for k in 0..grid.steps {
        let w = model.apply_input_transpose(&p.states[k]) * (-1.0 / weights.lambda);
        let v = prox_squared_l1(&w, sigma);
        s += grid.tau * (&control.values[k] - v).norm_squared();
    }
    s.sqrt()
}

/// Minimizes the discrete cost from `y_in` on `grid`.
///
/// Uses the Euclidean metric on the stacked controls, so the prox weight per slice is
/// `step * tau * beta`. A trial is accepted when it decreases the maximum of the last
/// `memory` accepted values by the usual sufficient-decrease margin.
pub fn solve(
    model: &dyn LinearModel,
    grid: &TimeGrid,
    weights: &CostWeights,
    y_in: &DVector<f64>,
    warm_start: Option<&ControlSignal>,
    initial_step: Option<f64>,
    options: &SolverOptions,
) -> Result<OcpSolution> {
    if !(weights.lambda > 0.0) || weights.beta < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "cost weights must satisfy lambda > 0, beta >= 0, got {weights:?}"
        )));
    }
    let mut stats = SolverStats::default();
    let mut u = match warm_start {
        Some(w) => w.clone(),
        None => ControlSignal::zeros(grid.steps, model.input_dim()),
    };
    let (mut value, mut state) = evaluate_cost(model, grid, weights, y_in, &u)?;
    stats.state_solves += 1;
    let mut p = adjoint(model, grid, &state)?;
    stats.gradient_evals += 1;
    let mut g = gradient_from_adjoint(model, grid, weights, &u, &p);
    let mut step = initial_step
        .unwrap_or(1.0 / (grid.tau * weights.lambda))
        .clamp(options.min_step, options.max_step);
    let mut history: VecDeque<f64> = VecDeque::from([value]);
    let memory = options.memory.max(1);

    let scale = |u: &ControlSignal| u.norm(grid.tau).max(1.0);
    stats.residual = optimality_residual(model, grid, weights, &u, &p);
    if stats.residual <= options.abs_tol || stats.residual <= options.rel_tol * scale(&u) {
        stats.converged = true;
    }
    let mut use_long_step = true;
    while !stats.converged && stats.iterations < options.max_iter {
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = 1e-14 * reference.abs();
        let (trial, trial_state, trial_value, d) = loop {
            let mut w = u.clone();
            w.axpy(-step, &g);
            let trial = prox_signal(&w, step * grid.tau * weights.beta);
            let d = trial.sub(&u);
            let (trial_value, trial_state) = evaluate_cost(model, grid, weights, y_in, &trial)?;
            stats.state_solves += 1;
            let decrease = 1e-4 / (2.0 * step) * euclid_sq(&d);
            if trial_value <= reference - decrease + slack || step <= options.min_step {
                break (trial, trial_state, trial_value, d);
            }
            step = (0.5 * step).max(options.min_step);
        };
        let p_new = adjoint(model, grid, &trial_state)?;
        stats.gradient_evals += 1;
        let g_new = gradient_from_adjoint(model, grid, weights, &trial, &p_new);
        let dg = g_new.sub(&g);
        let sy = euclid_dot(&d, &dg);
        stats.last_step = step;
        step = if sy > 0.0 {
            let bb = if use_long_step { euclid_sq(&d) / sy } else { sy / euclid_sq(&dg) };
            use_long_step = !use_long_step;
            bb
        } else {
            options.max_step
        }
        .clamp(options.min_step, options.max_step);

        u = trial;
        state = trial_state;
        value = trial_value;
        p = p_new;
        g = g_new;
        history.push_back(value);
        if history.len() > memory {
            history.pop_front();
        }
        stats.iterations += 1;
        stats.residual = optimality_residual(model, grid, weights, &u, &p);
        if stats.residual <= options.abs_tol || stats.residual <= options.rel_tol * scale(&u) {
            stats.converged = true;
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("optimal control iteration".into()));
        }
    }
    if stats.last_step == 0.0 {
        stats.last_step = step;
    }
    Ok(OcpSolution { control: u, state, adjoint: p, value, stats })
}
