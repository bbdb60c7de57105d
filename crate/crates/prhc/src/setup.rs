//! Problem data of the benchmark: an unstable advection-reaction-diffusion equation on
//! the unit square, thirteen box actuators, and two standard resolutions.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::certify::IndexVariant;
use crate::fem::{ActuatorLayout, Bilinear, Discretization, PdeData, TimeProfile};
use crate::ocp::{CostWeights, SolverOptions};
use crate::rhc::RhcConfig;
use crate::rom::PodOptions;
use crate::{Error, Result};

/// `nu = 0.1`, `a(t,x) = -2 - 0.8 |sin t|`, `b(x) = (-0.01 (x1 + x2), 0.2 x1 x2)`.
pub fn benchmark_pde() -> PdeData {
    PdeData {
        diffusion: 0.1,
        reaction: Bilinear::constant(-2.0),
        reaction_varying: Bilinear::constant(-0.8),
        profile: TimeProfile::AbsSin,
        velocity: [
            Bilinear { c: 0.0, x: -0.01, y: -0.01, xy: 0.0 },
            Bilinear { c: 0.0, x: 0.0, y: 0.0, xy: 0.2 },
        ],
    }
}

/// Everything needed to build and run one closed-loop experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub nodes_per_side: usize,
    pub pde: PdeData,
    pub actuator_area: f64,
    /// Amplitude of the initial state `amp * sin(pi x1) sin(pi x2)`.
    pub initial_amplitude: f64,
    pub final_time: f64,
    /// Number of grid points on `[0, final_time]`, endpoints included.
    pub time_points: usize,
    pub horizon: f64,
    pub sampling: f64,
    pub cost: CostWeights,
    pub solver: SolverOptions,
    pub pod: PodOptions,
    pub gate: f64,
    pub max_updates: usize,
    pub variant: IndexVariant,
    pub validation: bool,
}

impl Scenario {
    pub fn full_scale() -> Self {
        Self {
            nodes_per_side: 61,
            pde: benchmark_pde(),
            actuator_area: 0.0106,
            initial_amplitude: 3.0,
            final_time: 10.0,
            time_points: 801,
            horizon: 0.8,
            sampling: 0.28,
            cost: CostWeights { lambda: 1e-3, beta: 1e-4 },
            solver: SolverOptions::default(),
            pod: PodOptions::default(),
            gate: 0.35,
            max_updates: 10,
            variant: IndexVariant::Mixed,
            validation: false,
        }
    }

    /// Coarser mesh and time grid on a shorter interval with the same step size ratio
    /// between horizon and sampling time.
    pub fn desk() -> Self {
        Self { nodes_per_side: 31, final_time: 5.0, time_points: 201, ..Self::full_scale() }
    }

    pub fn tau(&self) -> f64 {
        self.final_time / (self.time_points - 1) as f64
    }

    pub fn total_steps(&self) -> usize {
        self.time_points - 1
    }

    /// Sampling time rounded to a whole number of steps, at least one.
    pub fn sampling_steps(&self) -> usize {
        ((self.sampling / self.tau()).round() as usize).max(1)
    }

    pub fn horizon_steps(&self) -> usize {
        ((self.horizon / self.tau()).round() as usize).max(1)
    }

    pub fn snapped_sampling(&self) -> f64 {
        self.sampling_steps() as f64 * self.tau()
    }

    pub fn snapped_horizon(&self) -> f64 {
        self.horizon_steps() as f64 * self.tau()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.time_points < 2 {
            return bad(format!("need at least two time points, got {}", self.time_points));
        }
        if !(self.final_time > 0.0) {
            return bad(format!("final time must be positive, got {}", self.final_time));
        }
        if !(self.horizon > 0.0 && self.sampling > 0.0) {
            return bad("horizon and sampling time must be positive".into());
        }
        if self.sampling_steps() > self.horizon_steps() {
            return bad(format!(
                "sampling time {} exceeds the horizon {}",
                self.snapped_sampling(),
                self.snapped_horizon()
            ));
        }
        if !(self.cost.lambda > 0.0 && self.cost.beta >= 0.0) {
            return bad("control weight must be positive and sparsity weight non-negative".into());
        }
        if !(self.gate > 0.0 && self.gate <= 1.0) {
            return bad(format!("suboptimality threshold must lie in (0, 1], got {}", self.gate));
        }
        if !(self.actuator_area > 0.0) {
            return bad("actuator area must be positive".into());
        }
        Ok(())
    }

    pub fn rhc_config(&self) -> RhcConfig {
        RhcConfig {
            tau: self.tau(),
            total_steps: self.total_steps(),
            sampling_steps: self.sampling_steps(),
            horizon_steps: self.horizon_steps(),
            weights: self.cost,
            solver: self.solver,
            pod: self.pod,
            gate: self.gate,
            max_updates: self.max_updates,
            variant: self.variant,
            validation: self.validation,
        }
    }

    pub fn layout(&self) -> ActuatorLayout {
        ActuatorLayout::l_shape(self.actuator_area)
    }

    pub fn discretization(&self) -> Result<Discretization> {
        self.validate()?;
        Discretization::new(self.nodes_per_side, &self.pde, &self.layout())
    }

    pub fn initial_state(&self, disc: &Discretization) -> DVector<f64> {
        let amp = self.initial_amplitude;
        disc.interpolate(|p| amp * (PI * p[0]).sin() * (PI * p[1]).sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapping_to_the_time_grid() {
        let s = Scenario::full_scale();
        assert!((s.tau() - 0.0125).abs() < 1e-15);
        assert_eq!(s.sampling_steps(), 22);
        assert!((s.snapped_sampling() - 0.275).abs() < 1e-12);
        assert_eq!(s.horizon_steps(), 64);
        let d = Scenario::desk();
        assert!((d.tau() - 0.025).abs() < 1e-15);
        assert_eq!(d.sampling_steps(), 11);
        assert_eq!(d.horizon_steps(), 32);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = Scenario::desk();
        s.sampling = 2.0;
        assert!(s.validate().is_err());
        let mut s = Scenario::desk();
        s.gate = 1.5;
        assert!(s.validate().is_err());
    }
}
