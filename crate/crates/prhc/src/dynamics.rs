//! Implicit Euler time stepping for full and reduced models.
//!
//! Times are integer multiples of a fixed step on a global grid, so a step matrix is
//! identified by its global index and factorizations can be reused across closed-loop steps.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::fem::{Discretization, TimeProfile};
use crate::linalg::{BandedLu, CsrMatrix};
use crate::{Error, Result};

/// Window `[start*tau, (start+steps)*tau]` of the global grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub tau: f64,
    pub start: usize,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(tau: f64, start: usize, steps: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {tau}")));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("time window needs at least one step".into()));
        }
        Ok(Self { tau, start, steps })
    }

    pub fn time(&self, j: usize) -> f64 {
        (self.start + j) as f64 * self.tau
    }

    pub fn initial_time(&self) -> f64 {
        self.time(0)
    }

    pub fn final_time(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn length(&self) -> f64 {
        self.steps as f64 * self.tau
    }

    /// Sub-window of the first `steps` steps.
    pub fn head(&self, steps: usize) -> Self {
        Self { steps: steps.min(self.steps), ..*self }
    }

    /// Window of the same length shifted forward by `steps`.
    pub fn shifted(&self, steps: usize) -> Self {
        Self { start: self.start + steps, ..*self }
    }
}

/// Piecewise constant control; `values[j]` acts on `(t_j, t_{j+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    pub values: Vec<DVector<f64>>,
}

impl ControlSignal {
    pub fn zeros(steps: usize, inputs: usize) -> Self {
        Self { values: vec![DVector::zeros(inputs); steps] }
    }

    pub fn steps(&self) -> usize {
        self.values.len()
    }

    pub fn inputs(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// Time-weighted Euclidean inner product.
    pub fn inner(&self, other: &Self, tau: f64) -> f64 {
        tau * self.values.iter().zip(&other.values).map(|(a, b)| a.dot(b)).sum::<f64>()
    }

    pub fn norm(&self, tau: f64) -> f64 {
        self.inner(self, tau).max(0.0).sqrt()
    }

    pub fn axpy(&mut self, a: f64, x: &Self) {
        for (v, w) in self.values.iter_mut().zip(&x.values) {
            v.axpy(a, w, 1.0);
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut d = self.clone();
        d.axpy(-1.0, other);
        d
    }

    /// Drops the first `steps` values and repeats the last one at the end.
    pub fn shifted(&self, steps: usize) -> Self {
        let n = self.values.len();
        let last = self.values[n - 1].clone();
        let mut values: Vec<_> = self.values.iter().skip(steps).cloned().collect();
        values.resize(n, last);
        Self { values }
    }
}

/// Nodal values at `t_0 .. t_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }
}

/// A linear system `M y' + A(t) y = B u` advanced by implicit Euler on the global grid.
pub trait LinearModel: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn apply_mass(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_operator(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;
    fn apply_operator_transpose(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;
    fn apply_input(&self, u: &DVector<f64>) -> DVector<f64>;
    fn apply_input_transpose(&self, p: &DVector<f64>) -> DVector<f64>;
    /// Solves `(M + tau A(t_index)) x = rhs`.
    fn step_solve(&self, grid: &TimeGrid, j: usize, rhs: &DVector<f64>) -> Result<DVector<f64>>;
    /// Solves `(M + tau A(t_index)^T) x = rhs`.
    fn step_solve_transpose(
        &self,
        grid: &TimeGrid,
        j: usize,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>>;

    fn h_inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&self.apply_mass(y))
    }

    fn h_norm(&self, x: &DVector<f64>) -> f64 {
        self.h_inner(x, x).max(0.0).sqrt()
    }
}

/// States `y_0 = y_in`, `(M + tau A(t_{j+1})) y_{j+1} = M y_j + tau B u_j`.
pub fn simulate(
    model: &dyn LinearModel,
    grid: &TimeGrid,
    y_in: &DVector<f64>,
    control: &ControlSignal,
) -> Result<Trajectory> {
    check_dims(model, grid, y_in, control)?;
    let mut states = Vec::with_capacity(grid.steps + 1);
    states.push(y_in.clone());
    for j in 0..grid.steps {
        let mut rhs = model.apply_mass(&states[j]);
        rhs.axpy(grid.tau, &model.apply_input(&control.values[j]), 1.0);
        let next = model.step_solve(grid, j + 1, &rhs)?;
        states.push(next);
    }
    if !states.last().is_some_and(|s| s.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("state trajectory".into()));
    }
    Ok(Trajectory { states })
}

/// Discrete adjoint of [`simulate`] for the tracking data `data`:
/// `p_N = 0`, `(M + tau A(t_{k+1})^T) p_k = M p_{k+1} + tau M data_{k+1}`.
///
/// `p_k` pairs with the control on `(t_k, t_{k+1}]`, so `p_0` is the sensitivity of the
/// cost with respect to the initial state.
pub fn adjoint(model: &dyn LinearModel, grid: &TimeGrid, data: &Trajectory) -> Result<Trajectory> {
    if data.len() != grid.steps + 1 {
        return Err(Error::DimensionMismatch(format!(
            "adjoint data has {} states for {} steps",
            data.len(),
            grid.steps
        )));
    }
    let n = model.state_dim();
    let mut states = vec![DVector::zeros(n); grid.steps + 1];
    for k in (0..grid.steps).rev() {
        let mut rhs = data.states[k + 1].scale(grid.tau);
        rhs += &states[k + 1];
        let rhs = model.apply_mass(&rhs);
        states[k] = model.step_solve_transpose(grid, k + 1, &rhs)?;
    }
    if !states[0].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("adjoint trajectory".into()));
    }
    Ok(Trajectory { states })
}

fn check_dims(
    model: &dyn LinearModel,
    grid: &TimeGrid,
    y_in: &DVector<f64>,
    control: &ControlSignal,
) -> Result<()> {
    if y_in.len() != model.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} entries, model has {}",
            y_in.len(),
            model.state_dim()
        )));
    }
    if control.steps() != grid.steps {
        return Err(Error::DimensionMismatch(format!(
            "control has {} steps, grid has {}",
            control.steps(),
            grid.steps
        )));
    }
    if control.values.iter().any(|u| u.len() != model.input_dim()) {
        return Err(Error::DimensionMismatch(format!(
            "control values must have {} entries",
            model.input_dim()
        )));
    }
    Ok(())
}

/// Bounded cache of step factorizations keyed by `(tau bits, global index)`.
///
/// Eviction drops the earliest index, which suits a closed loop moving forward in time.
#[derive(Debug)]
pub struct FactorCache<F> {
    capacity: usize,
    entries: Mutex<BTreeMap<(usize, u64), Arc<F>>>,
}

impl<F> FactorCache<F> {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), entries: Mutex::new(BTreeMap::new()) }
    }

    pub fn get_or_try_insert(
        &self,
        index: usize,
        tau: f64,
        build: impl FnOnce() -> Result<F>,
    ) -> Result<Arc<F>> {
        let key = (index, tau.to_bits());
        if let Some(f) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(f.clone());
        }
        let f = Arc::new(build()?);
        let mut entries = self.entries.lock().expect("cache lock");
        entries.insert(key, f.clone());
        while entries.len() > self.capacity {
            let first = *entries.keys().next().expect("non-empty");
            entries.remove(&first);
        }
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Full-order model on a finite element discretization.
#[derive(Debug)]
pub struct FullModel {
    disc: Arc<Discretization>,
    cache: FactorCache<BandedLu>,
}

impl FullModel {
    pub fn new(disc: Arc<Discretization>, cache_capacity: usize) -> Self {
        Self { disc, cache: FactorCache::new(cache_capacity) }
    }

    pub fn discretization(&self) -> &Arc<Discretization> {
        &self.disc
    }

    fn factor(&self, grid: &TimeGrid, j: usize) -> Result<Arc<BandedLu>> {
        let index = grid.start + j;
        self.cache.get_or_try_insert(index, grid.tau, || {
            let a = self.disc.operator_at(grid.time(j));
            let s = CsrMatrix::linear_combination(&[(1.0, self.disc.mass()), (grid.tau, &a)]);
            BandedLu::factor(&s)
        })
    }
}

impl LinearModel for FullModel {
    fn state_dim(&self) -> usize {
        self.disc.n_dofs()
    }

    fn input_dim(&self) -> usize {
        self.disc.n_inputs()
    }

    fn apply_mass(&self, x: &DVector<f64>) -> DVector<f64> {
        self.disc.mass().mul_vec(x)
    }

    fn apply_operator(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let th = self.disc.theta(t);
        let mut y = self.disc.components()[0].mul_vec(x);
        y.axpy(th[1], &self.disc.components()[1].mul_vec(x), th[0]);
        y
    }

    fn apply_operator_transpose(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let th = self.disc.theta(t);
        let mut y = self.disc.components()[0].transpose_mul_vec(x);
        y.axpy(th[1], &self.disc.components()[1].transpose_mul_vec(x), th[0]);
        y
    }

    fn apply_input(&self, u: &DVector<f64>) -> DVector<f64> {
        self.disc.input() * u
    }

    fn apply_input_transpose(&self, p: &DVector<f64>) -> DVector<f64> {
        self.disc.input().tr_mul(p)
    }

    fn step_solve(&self, grid: &TimeGrid, j: usize, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.factor(grid, j)?.solve(rhs))
    }

    fn step_solve_transpose(
        &self,
        grid: &TimeGrid,
        j: usize,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(self.factor(grid, j)?.solve_transpose(rhs))
    }
}

/// Dense model `M, A_q, B` with a scalar-profile affine operator; used for reduced models
/// and for small validation problems.
#[derive(Debug)]
pub struct DenseModel {
    pub mass: DMatrix<f64>,
    pub components: Vec<DMatrix<f64>>,
    pub input: DMatrix<f64>,
    pub profile: TimeProfile,
    cache: FactorCache<DenseLu>,
}

type Lu = nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

/// Factorizations of a step matrix and of its transpose.
#[derive(Debug)]
struct DenseLu {
    forward: Lu,
    transpose: Lu,
}

impl DenseModel {
    pub fn new(
        mass: DMatrix<f64>,
        components: Vec<DMatrix<f64>>,
        input: DMatrix<f64>,
        profile: TimeProfile,
        cache_capacity: usize,
    ) -> Self {
        Self { mass, components, input, profile, cache: FactorCache::new(cache_capacity) }
    }

    /// `A_0 + theta(t) (A_1 + ... )`.
    pub fn operator_at(&self, t: f64) -> DMatrix<f64> {
        let th = self.profile.eval(t);
        let mut a = self.components[0].clone();
        for c in &self.components[1..] {
            a += c * th;
        }
        a
    }

    fn factor(&self, grid: &TimeGrid, j: usize) -> Result<Arc<DenseLu>> {
        self.cache.get_or_try_insert(grid.start + j, grid.tau, || {
            let s = &self.mass + self.operator_at(grid.time(j)).scale(grid.tau);
            let forward = s.clone().lu();
            if !forward.is_invertible() {
                return Err(Error::Singular(format!("dense step matrix at index {}", grid.start + j)));
            }
            Ok(DenseLu { forward, transpose: s.transpose().lu() })
        })
    }
}

impl LinearModel for DenseModel {
    fn state_dim(&self) -> usize {
        self.mass.nrows()
    }

    fn input_dim(&self) -> usize {
        self.input.ncols()
    }

    fn apply_mass(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.mass * x
    }

    fn apply_operator(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self.operator_at(t) * x
    }

    fn apply_operator_transpose(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self.operator_at(t).tr_mul(x)
    }

    fn apply_input(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.input * u
    }

    fn apply_input_transpose(&self, p: &DVector<f64>) -> DVector<f64> {
        self.input.tr_mul(p)
    }

    fn step_solve(&self, grid: &TimeGrid, j: usize, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor(grid, j)?
            .forward
            .solve(rhs)
            .ok_or_else(|| Error::Singular("dense step solve".into()))
    }

    fn step_solve_transpose(
        &self,
        grid: &TimeGrid,
        j: usize,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.factor(grid, j)?
            .transpose
            .solve(rhs)
            .ok_or_else(|| Error::Singular("dense transpose step solve".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64) -> DenseModel {
        DenseModel::new(
            DMatrix::from_element(1, 1, 1.0),
            vec![DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, 0.5)],
            DMatrix::from_element(1, 1, b),
            TimeProfile::Sin,
            16,
        )
    }

    #[test]
    fn scalar_recursion_matches_closed_form() {
        let (a, b) = (-0.7, 2.0);
        let model = scalar(a, b);
        let grid = TimeGrid::new(0.1, 3, 20).unwrap();
        let u = ControlSignal { values: (0..20).map(|j| DVector::from_element(1, (j as f64).cos())).collect() };
        let traj = simulate(&model, &grid, &DVector::from_element(1, 1.5), &u).unwrap();
        let mut y = 1.5;
        for j in 0..20 {
            let t = grid.time(j + 1);
            y = (y + 0.1 * b * u.values[j][0]) / (1.0 + 0.1 * (a + 0.5 * t.sin()));
            assert!((traj.states[j + 1][0] - y).abs() < 1e-14);
        }
    }

    #[test]
    fn adjoint_is_the_transpose_of_the_input_to_state_map() {
        // sum_j tau <S u, z>_M over j = 1..N equals sum_k tau <u_k, B^T p_k(z)>
        let n = 4;
        let mass = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 } else { 0.3 / (1.0 + (i + j) as f64) });
        let a0 = DMatrix::from_fn(n, n, |i, j| if i == j { 3.0 } else { (i as f64 - j as f64) * 0.4 });
        let a1 = DMatrix::from_fn(n, n, |i, j| ((i * n + j) as f64 * 0.37).sin());
        let b = DMatrix::from_fn(n, 2, |i, j| (i + 2 * j) as f64 * 0.25 - 0.3);
        let model = DenseModel::new(mass, vec![a0, a1], b, TimeProfile::AbsSin, 64);
        let grid = TimeGrid::new(0.05, 7, 30).unwrap();
        let u = ControlSignal {
            values: (0..30).map(|j| DVector::from_fn(2, |i, _| ((i + j) as f64).sin())).collect(),
        };
        let y = simulate(&model, &grid, &DVector::zeros(n), &u).unwrap();
        let z = Trajectory {
            states: (0..=30).map(|j| DVector::from_fn(n, |i, _| ((i * j) as f64 * 0.1).cos())).collect(),
        };
        let p = adjoint(&model, &grid, &z).unwrap();
        let lhs: f64 = (1..=30).map(|j| grid.tau * model.h_inner(&y.states[j], &z.states[j])).sum();
        let rhs: f64 =
            (0..30).map(|k| grid.tau * u.values[k].dot(&model.apply_input_transpose(&p.states[k]))).sum();
        assert!((lhs - rhs).abs() < 1e-13 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn cache_evicts_earliest_index() {
        let cache: FactorCache<usize> = FactorCache::new(2);
        for i in 0..4 {
            cache.get_or_try_insert(i, 0.1, || Ok(i)).unwrap();
        }
        assert_eq!(cache.len(), 2);
        let again = cache.get_or_try_insert(3, 0.1, || Ok(99)).unwrap();
        assert_eq!(*again, 3);
        let rebuilt = cache.get_or_try_insert(0, 0.1, || Ok(42)).unwrap();
        assert_eq!(*rebuilt, 42);
    }

    #[test]
    fn dimension_errors_are_reported() {
        let model = scalar(1.0, 1.0);
        let grid = TimeGrid::new(0.1, 0, 3).unwrap();
        let u = ControlSignal::zeros(2, 1);
        assert!(matches!(
            simulate(&model, &grid, &DVector::zeros(1), &u),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(TimeGrid::new(0.0, 0, 3).is_err());
    }

    #[test]
    fn control_shift_repeats_last_value() {
        let u = ControlSignal { values: (0..4).map(|j| DVector::from_element(1, j as f64)).collect() };
        let s = u.shifted(3);
        let v: Vec<f64> = s.values.iter().map(|x| x[0]).collect();
        assert_eq!(v, vec![3.0, 3.0, 3.0, 3.0]);
    }
}
