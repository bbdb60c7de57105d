//! Receding horizon control with the full-order model and with a certified reduced model.
//!
//! Both loops act on the full-order plant: at the sampling instant `t_k` an open-loop
//! problem on `[t_k, t_k + T]` is solved from the current plant state and its first
//! `delta` of control is applied. The reduced loop commits a control only when a certified
//! lower bound on the performance index
//! `alpha_k = (V(t_k, y_k) - V(t_{k+1}, y_{k+1})) / J_delta` reaches the target; otherwise
//! it enriches the basis with full-order snapshots and retries the step.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::certify::{Certificate, CertificateInputs, IndexVariant, Stability};
use crate::dynamics::{adjoint, simulate, ControlSignal, FullModel, LinearModel, TimeGrid, Trajectory};
use crate::fem::Discretization;
use crate::ocp::{cost_of_trajectory, solve, CostWeights, OcpSolution, SolverOptions};
use crate::rom::{pod, PodOptions, ReducedModel, SnapshotKind, SnapshotSet, SnapshotTag};
use crate::{Error, Result};

/// Denominators below this are treated as a zero state and zero control.
const DENOMINATOR_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct RhcConfig {
    pub tau: f64,
    /// Steps on `[0, T_inf]`.
    pub total_steps: usize,
    pub sampling_steps: usize,
    pub horizon_steps: usize,
    pub weights: CostWeights,
    pub solver: SolverOptions,
    pub pod: PodOptions,
    /// Target performance `alpha~`.
    pub gate: f64,
    /// Model updates allowed at one closed-loop step, the bootstrap included.
    pub max_updates: usize,
    pub variant: IndexVariant,
    /// Also compute the full-order index at every evaluated step.
    pub validation: bool,
}

impl RhcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.tau > 0.0) || self.total_steps == 0 {
            return bad("closed loop needs a positive step and at least one step".into());
        }
        if self.sampling_steps == 0 || self.sampling_steps > self.horizon_steps {
            return bad(format!(
                "sampling steps {} must lie in 1..={}",
                self.sampling_steps, self.horizon_steps
            ));
        }
        if !(self.gate > 0.0 && self.gate <= 1.0) {
            return bad(format!("target performance must lie in (0, 1], got {}", self.gate));
        }
        if self.max_updates == 0 {
            return bad("at least one model update is needed to build the first basis".into());
        }
        Ok(())
    }

    pub fn cache_capacity(&self) -> usize {
        self.horizon_steps + 2 * self.sampling_steps + 4
    }

    fn window(&self, start: usize) -> TimeGrid {
        TimeGrid { tau: self.tau, start, steps: self.horizon_steps }
    }
}

/// One evaluated closed-loop step; rejected reduced trials are recorded too.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceRecord {
    pub step: usize,
    pub time: f64,
    /// Basis size, zero for the full-order loop.
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
    pub alpha_fom: Option<f64>,
    pub accepted: bool,
    /// Cost of the applied segment (reduced cost in the fully reduced variant).
    pub cost_delta: f64,
    /// Value of the open-loop problem at `t_k` (reduced value for the reduced loop).
    pub value: f64,
    pub delta_value: f64,
    pub updates: usize,
    /// Full-order gradient evaluations so far.
    pub fom_gradient_evals: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Counters {
    pub fom_gradient_evals: usize,
    pub rom_gradient_evals: usize,
    /// Full-order gradient evaluations spent only on validation indices.
    pub validation_gradient_evals: usize,
    pub model_updates: usize,
    pub wall: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    Aborted { step: usize, updates: usize },
}

#[derive(Debug, Clone)]
pub struct ClosedLoopResult {
    pub tau: f64,
    pub sampling_steps: usize,
    /// Applied control on the committed part of `[0, T_inf]`.
    pub control: ControlSignal,
    /// Plant states at every committed grid point, starting with the initial state.
    pub states: Trajectory,
    pub total_cost: f64,
    pub records: Vec<PerformanceRecord>,
    pub counters: Counters,
    pub outcome: Outcome,
    pub final_dim: usize,
}

impl ClosedLoopResult {
    pub fn is_complete(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    /// The result when the loop completed, the abort diagnostic otherwise.
    pub fn into_result(self) -> Result<Self> {
        match self.outcome {
            Outcome::Completed => Ok(self),
            Outcome::Aborted { step, updates } => Err(Error::UpdateBudgetExhausted { step, updates }),
        }
    }

    /// Accepted records, one per committed step.
    pub fn accepted(&self) -> impl Iterator<Item = &PerformanceRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    /// `(t_k, |y(t_k)|_H)` at the sampling instants and the final time.
    pub fn decay(&self, disc: &Discretization) -> Vec<(f64, f64)> {
        let n = self.states.len() - 1;
        let mut out: Vec<(f64, f64)> = (0..=n)
            .step_by(self.sampling_steps)
            .map(|j| (j as f64 * self.tau, disc.h_norm(&self.states.states[j])))
            .collect();
        if !n.is_multiple_of(self.sampling_steps) {
            out.push((n as f64 * self.tau, disc.h_norm(&self.states.states[n])));
        }
        out
    }

    /// Least-squares slope of `log |y(t_k)|_H` over the sampling instants.
    pub fn decay_rate(&self, disc: &Discretization) -> f64 {
        let pts: Vec<(f64, f64)> =
            self.decay(disc).into_iter().filter(|p| p.1 > 0.0).map(|(t, y)| (t, y.ln())).collect();
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        sxy / sxx
    }

    /// `(min, mean, max)` of the lower index over accepted steps.
    pub fn index_stats(&self) -> Option<(f64, f64, f64)> {
        let v: Vec<f64> = self.accepted().map(|r| r.lower).filter(|a| a.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((min, v.iter().sum::<f64>() / v.len() as f64, max))
    }
}

/// Relative differences of a reduced closed loop against a full-order one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub cost: f64,
    pub control: f64,
    pub state: f64,
    pub index: Option<f64>,
    pub speed_up: f64,
    pub gradient_ratio: f64,
}

pub fn compare(disc: &Discretization, reduced: &ClosedLoopResult, full: &ClosedLoopResult) -> Comparison {
    let tau = full.tau;
    let steps = reduced.control.steps().min(full.control.steps());
    let mut du = 0.0;
    let mut nu = 0.0;
    for j in 0..steps {
        du += tau * (&reduced.control.values[j] - &full.control.values[j]).norm_squared();
        nu += tau * full.control.values[j].norm_squared();
    }
    let mut dy = 0.0;
    let mut ny = 0.0;
    for j in 1..=steps {
        dy += tau * disc.h_norm(&(&reduced.states.states[j] - &full.states.states[j])).powi(2);
        ny += tau * disc.h_norm(&full.states.states[j]).powi(2);
    }
    let index = match (reduced.index_stats(), full.index_stats()) {
        (Some(a), Some(b)) => Some((a.0 - b.0).abs() / b.0.abs()),
        _ => None,
    };
    Comparison {
        cost: (reduced.total_cost - full.total_cost).abs() / full.total_cost,
        control: (du / nu).sqrt(),
        state: (dy / ny).sqrt(),
        index,
        speed_up: full.counters.wall.as_secs_f64() / reduced.counters.wall.as_secs_f64(),
        gradient_ratio: full.counters.fom_gradient_evals as f64
            / reduced.counters.fom_gradient_evals.max(1) as f64,
    }
}

fn converged(sol: OcpSolution, what: &str, step: usize) -> Result<OcpSolution> {
    if sol.stats.converged {
        Ok(sol)
    } else {
        Err(Error::NotConverged(format!(
            "{what} problem at closed-loop step {step} stopped at residual {:.3e}",
            sol.stats.residual
        )))
    }
}

/// Full-order receding horizon control. The index of step `k` uses the value of the
/// open-loop problem solved at step `k + 1`; the last index needs one extra solve at `T_inf`.
pub fn run_fom_rhc(cfg: &RhcConfig, disc: Arc<Discretization>, y0: &DVector<f64>) -> Result<ClosedLoopResult> {
    cfg.validate()?;
    let clock = Instant::now();
    let model = FullModel::new(disc, cfg.cache_capacity());
    let mut counters = Counters::default();
    let mut states = vec![y0.clone()];
    let mut applied = Vec::with_capacity(cfg.total_steps);
    let mut records: Vec<PerformanceRecord> = Vec::new();
    let mut total_cost = 0.0;
    let mut warm: Option<ControlSignal> = None;
    let mut first_step: Option<f64> = None;
    let mut start = 0;
    let mut k = 0;
    loop {
        let grid = cfg.window(start);
        let y = states.last().expect("plant state").clone();
        let sol = solve(&model, &grid, &cfg.weights, &y, warm.as_ref(), first_step, &cfg.solver)?;
        counters.fom_gradient_evals += sol.stats.gradient_evals;
        let sol = converged(sol, "full-order", k)?;
        if let Some(prev) = records.last_mut() {
            let alpha = index(prev.value - sol.value, prev.cost_delta);
            prev.lower = alpha;
            prev.upper = alpha;
            prev.alpha_fom = Some(alpha);
        }
        if start >= cfg.total_steps {
            break;
        }
        let apply = cfg.sampling_steps.min(cfg.total_steps - start);
        let cost_delta = cost_of_trajectory(&model, &grid, &cfg.weights, &sol.state, &sol.control, apply);
        total_cost += cost_delta;
        // the optimal trajectory is the plant response to the applied control
        states.extend(sol.state.states[1..=apply].iter().cloned());
        applied.extend(sol.control.values[..apply].iter().cloned());
        records.push(PerformanceRecord {
            step: k,
            time: grid.initial_time(),
            dim: 0,
            lower: f64::NAN,
            upper: f64::NAN,
            alpha_fom: None,
            accepted: true,
            cost_delta,
            value: sol.value,
            delta_value: 0.0,
            updates: 0,
            fom_gradient_evals: counters.fom_gradient_evals,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        warm = Some(sol.control.shifted(apply));
        first_step = Some(sol.stats.last_step);
        start += apply;
        k += 1;
    }
    counters.wall = clock.elapsed();
    Ok(ClosedLoopResult {
        tau: cfg.tau,
        sampling_steps: cfg.sampling_steps,
        control: ControlSignal { values: applied },
        states: Trajectory { states },
        total_cost,
        records,
        counters,
        outcome: Outcome::Completed,
        final_dim: 0,
    })
}

fn index(decrease: f64, cost: f64) -> f64 {
    if cost.abs() < DENOMINATOR_FLOOR {
        1.0
    } else {
        decrease / cost
    }
}

/// Reduced open-loop solution with its certificate.
#[derive(Debug, Clone)]
pub struct ReducedSolve {
    pub solution: OcpSolution,
    pub projection_error: f64,
    pub initial_gap: f64,
    pub state_residuals: Vec<f64>,
    pub adjoint_residuals: Vec<f64>,
    pub certificate: Certificate,
}

impl ReducedSolve {
    pub fn inputs(&self, rm: &ReducedModel) -> CertificateInputs<'_> {
        CertificateInputs {
            state_residuals: &self.state_residuals,
            adjoint_residuals: &self.adjoint_residuals,
            projection_error: self.projection_error,
            initial_gap: self.initial_gap,
            adjoint_initial_norm: rm.model().h_norm(self.solution.adjoint.first()),
        }
    }
}

/// Solves the reduced problem from reduced coordinates `a0` and certifies the solution.
/// `projection_error` is the pivot-norm distance of the given initial value to `Phi a0`;
/// `initial_gap` bounds the distance of the given initial value to the true one.
#[allow(clippy::too_many_arguments)]
pub fn solve_reduced(
    rm: &ReducedModel,
    stab: &Stability,
    grid: &TimeGrid,
    weights: &CostWeights,
    a0: &DVector<f64>,
    projection_error: f64,
    initial_gap: f64,
    warm: Option<&ControlSignal>,
    first_step: Option<f64>,
    options: &SolverOptions,
) -> Result<ReducedSolve> {
    let solution = solve(rm.model(), grid, weights, a0, warm, first_step, options)?;
    let state_residuals = rm.state_residual_norms(grid, &solution.state, &solution.control);
    let adjoint_residuals = rm.adjoint_residual_norms(grid, &solution.state, &solution.adjoint);
    let certificate = stab.certify_optimal(weights.lambda, &CertificateInputs {
        state_residuals: &state_residuals,
        adjoint_residuals: &adjoint_residuals,
        projection_error,
        initial_gap,
        adjoint_initial_norm: rm.model().h_norm(solution.adjoint.first()),
    });
    Ok(ReducedSolve { solution, projection_error, initial_gap, state_residuals, adjoint_residuals, certificate })
}

/// Lower and upper bounds of a ratio whose numerator and positive denominator lie in the
/// given intervals; a denominator interval reaching zero leaves the upper bound vacuous.
fn ratio_bounds(num: (f64, f64), den: (f64, f64)) -> (f64, f64) {
    if den.1 < DENOMINATOR_FLOOR {
        return (1.0, 1.0);
    }
    let lower = if num.0 >= 0.0 {
        num.0 / den.1
    } else if den.0 > 0.0 {
        num.0 / den.0
    } else {
        f64::NEG_INFINITY
    };
    let upper = if den.0 <= 0.0 {
        1.0
    } else if num.1 >= 0.0 {
        num.1 / den.0
    } else {
        num.1 / den.1
    };
    (lower, upper.min(1.0))
}

struct ReducedLoop<'a> {
    cfg: &'a RhcConfig,
    disc: Arc<Discretization>,
    plant: FullModel,
    stab: Stability,
    snapshots: SnapshotSet,
    rm: Option<ReducedModel>,
    counters: Counters,
    fom_step: Option<f64>,
}

/// Trial evaluation of one closed-loop step.
struct Trial {
    current: ReducedSolve,
    next: ReducedSolve,
    lower: f64,
    upper: f64,
    cost_delta: f64,
    /// Full-order rollout of the reduced control, when it was needed.
    rollout: Option<Trajectory>,
    alpha_fom: Option<f64>,
}

impl ReducedLoop<'_> {
    fn rm(&self) -> &ReducedModel {
        self.rm.as_ref().expect("reduced model built by the bootstrap update")
    }

    fn reduced_from_full(
        &self,
        grid: &TimeGrid,
        y: &DVector<f64>,
        warm: Option<&ControlSignal>,
        first_step: Option<f64>,
    ) -> Result<ReducedSolve> {
        let rm = self.rm();
        let a0 = rm.project_initial(y)?;
        let proj = rm.projection_error(y, &a0);
        solve_reduced(rm, &self.stab, grid, &self.cfg.weights, &a0, proj, 0.0, warm, first_step, &self.cfg.solver)
    }

    fn fom_value(&mut self, grid: &TimeGrid, y: &DVector<f64>, warm: &ControlSignal, step: usize) -> Result<f64> {
        let sol = solve(&self.plant, grid, &self.cfg.weights, y, Some(warm), None, &self.cfg.solver)?;
        self.counters.validation_gradient_evals += sol.stats.gradient_evals;
        Ok(converged(sol, "validation", step)?.value)
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate(
        &mut self,
        k: usize,
        start: usize,
        apply: usize,
        y: &DVector<f64>,
        cached: Option<ReducedSolve>,
        warm: Option<&ControlSignal>,
        first_step: Option<f64>,
    ) -> Result<Trial> {
        let cfg = self.cfg;
        let grid = cfg.window(start);
        let next_grid = cfg.window(start + apply);
        let current = match cached {
            Some(c) => c,
            None => {
                let c = self.reduced_from_full(&grid, y, warm, first_step)?;
                self.counters.rom_gradient_evals += c.solution.stats.gradient_evals;
                c
            }
        };
        let current_sol = &current.solution;
        let next_warm = current_sol.control.shifted(apply);
        let next_step = Some(current_sol.stats.last_step);
        let dv0 = current.certificate.delta_value;
        let v0 = current_sol.value;
        let need_rollout = cfg.variant == IndexVariant::Mixed || cfg.validation;
        let rollout = if need_rollout {
            let head = grid.head(apply);
            let u = ControlSignal { values: current_sol.control.values[..apply].to_vec() };
            Some(simulate(&self.plant, &head, y, &u)?)
        } else {
            None
        };
        let (next, lower, upper, cost_delta) = match cfg.variant {
            IndexVariant::Mixed => {
                let roll = rollout.as_ref().expect("rollout for the mixed index");
                let cost = cost_of_trajectory(&self.plant, &grid, &cfg.weights, roll, &current_sol.control, apply);
                let next = self.reduced_from_full(&next_grid, roll.last(), Some(&next_warm), next_step)?;
                let (v1, dv1) = (next.solution.value, next.certificate.delta_value);
                let (lo, hi) = ratio_bounds((v0 - dv0 - v1 - dv1, v0 + dv0 - v1 + dv1), (cost, cost));
                (next, lo, hi, cost)
            }
            IndexVariant::FullReduced => {
                let rm = self.rm();
                let a_next = current_sol.state.states[apply].clone();
                let gap = self.stab.delta_state(&current.state_residuals, apply, 0.0, current.projection_error);
                let next = solve_reduced(
                    rm,
                    &self.stab,
                    &next_grid,
                    &cfg.weights,
                    &a_next,
                    0.0,
                    gap,
                    Some(&next_warm),
                    next_step,
                    &cfg.solver,
                )?;
                let head = grid.head(apply);
                let state = Trajectory { states: current_sol.state.states[..=apply].to_vec() };
                let u = ControlSignal { values: current_sol.control.values[..apply].to_vec() };
                let p = adjoint(rm.model(), &head, &state)?;
                let ry = current.state_residuals[..apply].to_vec();
                let rp = rm.adjoint_residual_norms(&head, &state, &p);
                let jr = cost_of_trajectory(rm.model(), &head, &cfg.weights, &state, &u, apply);
                let dj = self
                    .stab
                    .certify_cost(&CertificateInputs {
                        state_residuals: &ry,
                        adjoint_residuals: &rp,
                        projection_error: current.projection_error,
                        initial_gap: 0.0,
                        adjoint_initial_norm: rm.model().h_norm(p.first()),
                    })
                    .delta_cost;
                let (v1, dv1) = (next.solution.value, next.certificate.delta_value);
                let (lo, hi) = ratio_bounds((v0 - dv0 - v1 - dv1, v0 + dv0 - v1 + dv1), (jr - dj, jr + dj));
                (next, lo, hi, jr)
            }
        };
        self.counters.rom_gradient_evals += next.solution.stats.gradient_evals;
        let alpha_fom = if cfg.validation {
            let roll = rollout.as_ref().expect("rollout in validation mode");
            let cost = cost_of_trajectory(&self.plant, &grid, &cfg.weights, roll, &current_sol.control, apply);
            let va = self.fom_value(&grid, y, &current_sol.control, k)?;
            let vb = self.fom_value(&next_grid, roll.last(), &next_warm, k)?;
            Some(index(va - vb, cost))
        } else {
            None
        };
        Ok(Trial { current, next, lower, upper, cost_delta, rollout, alpha_fom })
    }

    /// Two full-order solves, at `t_k` and at `t_{k+1}` from the optimal state, added to the
    /// snapshot set; the basis is rebuilt from all snapshots.
    fn update(&mut self, k: usize, start: usize, apply: usize, y: &DVector<f64>, warm: Option<&ControlSignal>) -> Result<()> {
        let cfg = self.cfg;
        let grid = cfg.window(start);
        let first = solve(&self.plant, &grid, &cfg.weights, y, warm, self.fom_step, &cfg.solver)?;
        self.counters.fom_gradient_evals += first.stats.gradient_evals;
        let first = converged(first, "full-order update", k)?;
        let shifted_warm = first.control.shifted(apply);
        let second = solve(
            &self.plant,
            &cfg.window(start + apply),
            &cfg.weights,
            &first.state.states[apply],
            Some(&shifted_warm),
            Some(first.stats.last_step),
            &cfg.solver,
        )?;
        self.counters.fom_gradient_evals += second.stats.gradient_evals;
        let second = converged(second, "full-order update", k)?;
        self.fom_step = Some(second.stats.last_step);
        let tag = |kind, step| SnapshotTag { kind, step };
        self.snapshots.extend(&[
            (tag(SnapshotKind::State, k), &first.state),
            (tag(SnapshotKind::Adjoint, k), &first.adjoint),
            (tag(SnapshotKind::State, k + 1), &second.state),
            (tag(SnapshotKind::Adjoint, k + 1), &second.adjoint),
        ])?;
        let (basis, eig) = pod(&self.snapshots, &cfg.pod)?;
        self.rm = Some(ReducedModel::new(self.disc.clone(), basis, eig, cfg.cache_capacity())?);
        self.counters.model_updates += 1;
        Ok(())
    }
}

/// Certified reduced-order receding horizon control.
///
/// Runs until `T_inf` or until a step stays below the target after `max_updates` model
/// updates; in the latter case the records evaluated so far are returned with an
/// [`Outcome::Aborted`] marker.
pub fn run_rom_rhc(cfg: &RhcConfig, disc: Arc<Discretization>, y0: &DVector<f64>) -> Result<ClosedLoopResult> {
    cfg.validate()?;
    let clock = Instant::now();
    let stab = Stability::of(&disc, cfg.tau)?;
    let mut lp = ReducedLoop {
        cfg,
        disc: disc.clone(),
        plant: FullModel::new(disc.clone(), cfg.cache_capacity()),
        stab,
        snapshots: SnapshotSet::new(disc.clone(), cfg.tau).with_noise_floor(cfg.pod.noise_floor),
        rm: None,
        counters: Counters::default(),
        fom_step: None,
    };
    let mut states = vec![y0.clone()];
    let mut applied = Vec::with_capacity(cfg.total_steps);
    let mut records = Vec::new();
    let mut total_cost = 0.0;
    let mut cached: Option<ReducedSolve> = None;
    let mut warm: Option<ControlSignal> = None;
    let mut first_step: Option<f64> = None;
    let mut start = 0;
    let mut k = 0;
    let mut outcome = Outcome::Completed;
    while start < cfg.total_steps {
        let apply = cfg.sampling_steps.min(cfg.total_steps - start);
        let y = states.last().expect("plant state").clone();
        let mut updates = 0;
        if lp.rm.is_none() {
            lp.update(k, start, apply, &y, warm.as_ref())?;
            updates += 1;
        }
        let trial = loop {
            let trial = lp.evaluate(k, start, apply, &y, cached.take(), warm.as_ref(), first_step)?;
            let accepted = trial.lower >= cfg.gate;
            records.push(PerformanceRecord {
                step: k,
                time: start as f64 * cfg.tau,
                dim: lp.rm().dim(),
                lower: trial.lower,
                upper: trial.upper,
                alpha_fom: trial.alpha_fom,
                accepted,
                cost_delta: trial.cost_delta,
                value: trial.current.solution.value,
                delta_value: trial.current.certificate.delta_value,
                updates,
                fom_gradient_evals: lp.counters.fom_gradient_evals,
                wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            });
            if accepted {
                break Some(trial);
            }
            if updates >= cfg.max_updates {
                break None;
            }
            lp.update(k, start, apply, &y, Some(&trial.current.solution.control))?;
            updates += 1;
        };
        let Some(trial) = trial else {
            outcome = Outcome::Aborted { step: k, updates };
            break;
        };
        let u = ControlSignal { values: trial.current.solution.control.values[..apply].to_vec() };
        let grid = cfg.window(start);
        let roll = match trial.rollout {
            Some(r) => r,
            None => simulate(&lp.plant, &grid.head(apply), &y, &u)?,
        };
        total_cost += cost_of_trajectory(&lp.plant, &grid, &cfg.weights, &roll, &u, apply);
        states.extend(roll.states[1..].iter().cloned());
        applied.extend(u.values);
        warm = Some(trial.current.solution.control.shifted(apply));
        first_step = Some(trial.current.solution.stats.last_step);
        // the next problem starts from the plant state; only the mixed index solved it there
        match cfg.variant {
            IndexVariant::Mixed => cached = Some(trial.next),
            IndexVariant::FullReduced => warm = Some(trial.next.solution.control),
        }
        start += apply;
        k += 1;
    }
    lp.counters.wall = clock.elapsed();
    Ok(ClosedLoopResult {
        tau: cfg.tau,
        sampling_steps: cfg.sampling_steps,
        control: ControlSignal { values: applied },
        states: Trajectory { states },
        total_cost,
        records,
        counters: lp.counters,
        outcome,
        final_dim: lp.rm.as_ref().map_or(0, |r| r.dim()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_bounds_cover_every_ratio_in_the_box() {
        let cases = [((0.2, 0.5), (0.9, 1.1)), ((-0.2, 0.5), (0.9, 1.1)), ((-0.5, -0.2), (0.9, 1.1))];
        for (num, den) in cases {
            let (lo, hi) = ratio_bounds(num, den);
            for a in [num.0, num.1, 0.5 * (num.0 + num.1)] {
                for b in [den.0, den.1, 0.5 * (den.0 + den.1)] {
                    let r = a / b;
                    assert!(lo <= r + 1e-15 && r.min(1.0) <= hi + 1e-15, "{r} outside [{lo}, {hi}]");
                }
            }
        }
        assert_eq!(ratio_bounds((0.1, 0.2), (-0.1, 0.3)).1, 1.0);
        assert_eq!(ratio_bounds((0.0, 0.0), (0.0, 0.0)), (1.0, 1.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = RhcConfig {
            tau: 0.1,
            total_steps: 10,
            sampling_steps: 3,
            horizon_steps: 2,
            weights: CostWeights { lambda: 1.0, beta: 0.0 },
            solver: SolverOptions::default(),
            pod: PodOptions::default(),
            gate: 0.5,
            max_updates: 3,
            variant: IndexVariant::Mixed,
            validation: false,
        };
        assert!(cfg.validate().is_err());
        assert!(RhcConfig { horizon_steps: 5, gate: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(RhcConfig { horizon_steps: 5, ..cfg }.validate().is_ok());
    }
}
