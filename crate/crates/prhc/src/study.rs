//! Open-loop error study: value function error and its certificate against the basis size.

use std::sync::Arc;

use nalgebra::DVector;

use crate::certify::Stability;
use crate::dynamics::{FullModel, TimeGrid};
use crate::fem::Discretization;
use crate::ocp::{solve, CostWeights, SolverOptions};
use crate::rhc::solve_reduced;
use crate::rom::{pod, PodOptions, ReducedModel, SnapshotKind, SnapshotSet, SnapshotTag};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyRow {
    pub horizon: f64,
    pub lambda: f64,
    pub dim: usize,
    /// `|V - V^r|` from `(0, y0)`.
    pub error: f64,
    pub bound: f64,
    /// `error / bound`, at most one.
    pub effectivity: f64,
    pub full_value: f64,
}

/// Solves the full problem on `[0, horizon_steps * tau]`, builds one POD basis from its
/// optimal state and adjoint and evaluates nested truncations of sizes `dims`.
/// Sizes beyond the available modes are skipped.
#[allow(clippy::too_many_arguments)]
pub fn open_loop_errors(
    disc: Arc<Discretization>,
    y0: &DVector<f64>,
    tau: f64,
    horizon_steps: usize,
    weights: CostWeights,
    solver: &SolverOptions,
    dims: &[usize],
) -> Result<Vec<StudyRow>> {
    let grid = TimeGrid::new(tau, 0, horizon_steps)?;
    let model = FullModel::new(disc.clone(), horizon_steps + 2);
    let full = solve(&model, &grid, &weights, y0, None, None, solver)?;
    if !full.stats.converged {
        return Err(Error::NotConverged(format!(
            "full problem with horizon {} and lambda {} stopped at residual {:.3e}",
            grid.length(),
            weights.lambda,
            full.stats.residual
        )));
    }
    let mut set = SnapshotSet::new(disc.clone(), tau).with_noise_floor(0.0);
    set.extend(&[
        (SnapshotTag { kind: SnapshotKind::State, step: 0 }, &full.state),
        (SnapshotTag { kind: SnapshotKind::Adjoint, step: 0 }, &full.adjoint),
    ])?;
    let largest = dims.iter().copied().max().unwrap_or(0);
    let (basis, eig) = pod(&set, &PodOptions { max_dim: largest.max(1), energy: 1.0, ..Default::default() })?;
    let stab = Stability::of(&disc, tau)?;
    let mut rows = Vec::new();
    for &r in dims.iter().filter(|&&r| r >= 1 && r <= basis.ncols()) {
        let rm = ReducedModel::new(disc.clone(), basis.columns(0, r).into_owned(), eig[..r].to_vec(), horizon_steps + 2)?;
        let a0 = rm.project_initial(y0)?;
        let proj = rm.projection_error(y0, &a0);
        let red = solve_reduced(&rm, &stab, &grid, &weights, &a0, proj, 0.0, None, None, solver)?;
        if !red.solution.stats.converged {
            return Err(Error::NotConverged(format!("reduced problem of dimension {r}")));
        }
        let error = (full.value - red.solution.value).abs();
        let bound = red.certificate.delta_value;
        rows.push(StudyRow {
            horizon: grid.length(),
            lambda: weights.lambda,
            dim: r,
            error,
            bound,
            effectivity: if bound > 0.0 { error / bound } else { 0.0 },
            full_value: full.value,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validate::small_scenario;

    #[test]
    fn bound_dominates_error_for_every_size() {
        let s = small_scenario();
        let disc = Arc::new(s.discretization().unwrap());
        let y0 = s.initial_state(&disc);
        let rows = open_loop_errors(disc, &y0, s.tau(), 32, s.cost, &SolverOptions::default(), &[1, 2, 4, 8, 40])
            .unwrap();
        assert!(rows.len() >= 4);
        for row in &rows {
            assert!(row.error <= row.bound + 1e-12, "{row:?}");
            assert!(row.effectivity <= 1.0);
        }
        assert!(rows.last().unwrap().bound < rows[0].bound);
    }
}
