//! POD-Galerkin reduced models and the offline-online evaluation of residual dual norms.
//!
//! A residual of the reduced dynamics is a linear combination of a fixed dictionary of
//! load vectors (input columns and full-order operators applied to the basis). With
//! `C C^T` the energy Gram matrix and `C^{-1} D = Q R`, the dual norm of `D c` equals
//! `|R c|`, so online evaluation never touches the full dimension.

mod pod;

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use pod::{pod, PodOptions, SnapshotKind, SnapshotSet, SnapshotTag};

use crate::dynamics::{ControlSignal, DenseModel, TimeGrid, Trajectory};
use crate::fem::Discretization;
use crate::linalg::qr_upper;
use crate::{Error, Result};

#[derive(Debug)]
pub struct ReducedModel {
    disc: Arc<Discretization>,
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    /// `M Phi`, used for H projections.
    mass_basis: DMatrix<f64>,
    dynamics: DenseModel,
    /// Triangular factor of the state residual dictionary `[B, A_1 Phi, .., A_Q Phi, M Phi]`.
    state_factor: DMatrix<f64>,
    /// Triangular factor of the adjoint residual dictionary `[A_1^T Phi, .., A_Q^T Phi, M Phi]`.
    adjoint_factor: DMatrix<f64>,
}

impl ReducedModel {
    pub fn new(
        disc: Arc<Discretization>,
        basis: DMatrix<f64>,
        eigenvalues: Vec<f64>,
        cache_capacity: usize,
    ) -> Result<Self> {
        let (state_factor, adjoint_factor) = residual_factors(&disc, &basis)?;
        Self::assemble(disc, basis, eigenvalues, cache_capacity, state_factor, adjoint_factor)
    }

    fn assemble(
        disc: Arc<Discretization>,
        basis: DMatrix<f64>,
        eigenvalues: Vec<f64>,
        cache_capacity: usize,
        state_factor: DMatrix<f64>,
        adjoint_factor: DMatrix<f64>,
    ) -> Result<Self> {
        if basis.nrows() != disc.n_dofs() || basis.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "basis is {}x{}, full model has {} unknowns",
                basis.nrows(),
                basis.ncols(),
                disc.n_dofs()
            )));
        }
        let mass_basis = disc.mass().mul_dense(&basis);
        let mass = basis.transpose() * &mass_basis;
        let components =
            disc.components().iter().map(|a| basis.transpose() * a.mul_dense(&basis)).collect();
        let input = basis.transpose() * disc.input();
        let dynamics =
            DenseModel::new(mass, components, input, disc.data().profile, cache_capacity);
        Ok(Self { disc, basis, eigenvalues, mass_basis, dynamics, state_factor, adjoint_factor })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn discretization(&self) -> &Arc<Discretization> {
        &self.disc
    }

    /// Reduced dynamics in basis coordinates.
    pub fn model(&self) -> &DenseModel {
        &self.dynamics
    }

    pub fn lift(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.basis * a
    }

    pub fn lift_trajectory(&self, t: &Trajectory) -> Trajectory {
        Trajectory { states: t.states.iter().map(|a| self.lift(a)).collect() }
    }

    /// Coordinates of the H-orthogonal projection: `(Phi^T M Phi) a = Phi^T M y`.
    pub fn project_initial(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = self.mass_basis.transpose() * y;
        self.dynamics
            .mass
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| Error::Singular("reduced mass matrix".into()))
    }

    /// `|y - Phi a|_H` for the projection coordinates `a` of `y`.
    pub fn projection_error(&self, y: &DVector<f64>, a: &DVector<f64>) -> f64 {
        self.disc.h_norm(&(y - self.lift(a)))
    }

    /// Dual norms of `R_j = B u_{j-1} - A(t_j) Phi a_j - M Phi (a_j - a_{j-1}) / tau` for
    /// `j = 1..=steps`, entry `j - 1`.
    pub fn state_residual_norms(
        &self,
        grid: &TimeGrid,
        states: &Trajectory,
        control: &ControlSignal,
    ) -> Vec<f64> {
        let r = self.dim();
        let m = self.disc.n_inputs();
        let q = self.disc.components().len();
        let mut c = DVector::zeros(m + (q + 1) * r);
        (1..=grid.steps.min(states.len() - 1))
            .map(|j| {
                let th = self.disc.theta(grid.time(j));
                let a = &states.states[j];
                c.rows_mut(0, m).copy_from(&control.values[j - 1]);
                for (k, t) in th.iter().enumerate() {
                    c.rows_mut(m + k * r, r).copy_from(&(a * -t));
                }
                let da = (a - &states.states[j - 1]) / -grid.tau;
                c.rows_mut(m + q * r, r).copy_from(&da);
                (&self.state_factor * &c).norm()
            })
            .collect()
    }

    /// Dual norms of `R_k = M Phi a_{k+1} - A(t_{k+1})^T Phi b_k + M Phi (b_{k+1} - b_k) / tau`
    /// for `k = 0..steps`, where `a` is the tracking data and `b` the reduced adjoint.
    pub fn adjoint_residual_norms(
        &self,
        grid: &TimeGrid,
        data: &Trajectory,
        adjoint: &Trajectory,
    ) -> Vec<f64> {
        let r = self.dim();
        let q = self.disc.components().len();
        let mut c = DVector::zeros((q + 1) * r);
        (0..grid.steps.min(adjoint.len() - 1))
            .map(|k| {
                let th = self.disc.theta(grid.time(k + 1));
                let b = &adjoint.states[k];
                for (i, t) in th.iter().enumerate() {
                    c.rows_mut(i * r, r).copy_from(&(b * -t));
                }
                let tail = &data.states[k + 1] + (&adjoint.states[k + 1] - b) / grid.tau;
                c.rows_mut(q * r, r).copy_from(&tail);
                (&self.adjoint_factor * &c).norm()
            })
            .collect()
    }

    /// Binary cache: basis, eigenvalues and both residual factors, little endian.
    pub fn write_cache(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        write_matrix(&mut w, &self.basis)?;
        write_matrix(&mut w, &DMatrix::from_column_slice(self.eigenvalues.len(), 1, &self.eigenvalues))?;
        write_matrix(&mut w, &self.state_factor)?;
        write_matrix(&mut w, &self.adjoint_factor)?;
        w.flush()
    }

    pub fn read_cache(disc: Arc<Discretization>, path: &Path, cache_capacity: usize) -> Result<Self> {
        let bad = |e: std::io::Error| Error::InvalidParameter(format!("basis cache {}: {e}", path.display()));
        let mut r = std::io::BufReader::new(std::fs::File::open(path).map_err(bad)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::InvalidParameter(format!("{} is not a basis cache", path.display())));
        }
        let basis = read_matrix(&mut r).map_err(bad)?;
        let eig = read_matrix(&mut r).map_err(bad)?;
        let state_factor = read_matrix(&mut r).map_err(bad)?;
        let adjoint_factor = read_matrix(&mut r).map_err(bad)?;
        let rdim = basis.ncols();
        let q = disc.components().len();
        if state_factor.ncols() != disc.n_inputs() + (q + 1) * rdim || adjoint_factor.ncols() != (q + 1) * rdim {
            return Err(Error::DimensionMismatch("basis cache does not match the model".into()));
        }
        Self::assemble(disc, basis, eig.as_slice().to_vec(), cache_capacity, state_factor, adjoint_factor)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"PRHCROM1";

fn write_matrix(w: &mut impl Write, m: &DMatrix<f64>) -> std::io::Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read) -> std::io::Result<DMatrix<f64>> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let rows = u64::from_le_bytes(b) as usize;
    r.read_exact(&mut b)?;
    let cols = u64::from_le_bytes(b) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

fn residual_factors(disc: &Discretization, basis: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = basis.ncols();
    let m = disc.n_inputs();
    let q = disc.components().len();
    let mass_basis = disc.mass().mul_dense(basis);
    let riesz = |d: &DMatrix<f64>| {
        let mut out = d.clone();
        for j in 0..d.ncols() {
            out.set_column(j, &disc.riesz_half(&d.column(j).into_owned()));
        }
        out
    };
    let mut state = DMatrix::zeros(disc.n_dofs(), m + (q + 1) * r);
    state.columns_mut(0, m).copy_from(disc.input());
    let mut adj = DMatrix::zeros(disc.n_dofs(), (q + 1) * r);
    for (k, a) in disc.components().iter().enumerate() {
        state.columns_mut(m + k * r, r).copy_from(&a.mul_dense(basis));
        adj.columns_mut(k * r, r).copy_from(&a.transpose().mul_dense(basis));
    }
    state.columns_mut(m + q * r, r).copy_from(&mass_basis);
    adj.columns_mut(q * r, r).copy_from(&mass_basis);
    let (s, a) = (qr_upper(&riesz(&state)), qr_upper(&riesz(&adj)));
    if s.iter().chain(a.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("residual dictionary".into()));
    }
    Ok((s, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{adjoint, simulate, FullModel, LinearModel};
    use crate::setup::Scenario;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disc(nodes: usize) -> Arc<Discretization> {
        let mut s = Scenario::desk();
        s.nodes_per_side = nodes;
        Arc::new(s.discretization().unwrap())
    }

    fn random_basis(d: &Discretization, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let n = d.n_dofs();
        let raw = DMatrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
        let mut set = SnapshotSet::new(Arc::new(d.clone()), 1.0);
        let t = Trajectory { states: raw.column_iter().map(|c| c.into_owned()).collect() };
        set.extend(&[(SnapshotTag { kind: SnapshotKind::State, step: 0 }, &t)]).unwrap();
        pod(&set, &PodOptions { max_dim: r, energy: 1.0, ..Default::default() }).unwrap().0
    }

    fn random_control(steps: usize, m: usize, rng: &mut ChaCha8Rng) -> ControlSignal {
        ControlSignal {
            values: (0..steps).map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-5.0..5.0))).collect(),
        }
    }

    #[test]
    fn projected_operators_match_their_full_counterparts() {
        let d = disc(7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let basis = random_basis(&d, 4, &mut rng);
        let rm = ReducedModel::new(d.clone(), basis.clone(), vec![1.0; 4], 8).unwrap();
        let gram = basis.transpose() * d.energy_gram().mul_dense(&basis);
        assert!((gram - DMatrix::identity(4, 4)).abs().max() < 1e-10);
        let full = d.components()[1].to_dense();
        let proj = basis.transpose() * full * &basis;
        assert!((proj - &rm.model().components[1]).abs().max() < 1e-12);
        let b = basis.transpose() * d.input();
        assert!((b - &rm.model().input).abs().max() < 1e-12);
    }

    #[test]
    fn projection_is_exact_on_the_span_and_zero_on_its_complement() {
        let d = disc(7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = random_basis(&d, 3, &mut rng);
        let rm = ReducedModel::new(d.clone(), basis.clone(), vec![1.0; 3], 8).unwrap();
        let coef = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let y = &basis * &coef;
        let a = rm.project_initial(&y).unwrap();
        assert!(rm.projection_error(&y, &a) <= 1e-12);
        // H-orthogonal complement: remove the H projection from a random vector
        let z = DVector::from_fn(d.n_dofs(), |_, _| rng.gen_range(-1.0..1.0));
        let az = rm.project_initial(&z).unwrap();
        let w = &z - rm.lift(&az);
        assert!(rm.project_initial(&w).unwrap().norm() < 1e-12);
        // local optimality of the projection
        let base = rm.projection_error(&z, &az);
        for i in 0..3 {
            for s in [1e-3, -1e-3] {
                let mut c = az.clone();
                c[i] += s;
                assert!(rm.projection_error(&z, &c) >= base);
            }
        }
    }

    /// Direct assembly of the residual load vector followed by the full dual norm.
    fn direct_state_residual(
        d: &Discretization,
        rm: &ReducedModel,
        grid: &TimeGrid,
        a: &Trajectory,
        u: &ControlSignal,
    ) -> Vec<f64> {
        (1..=grid.steps)
            .map(|j| {
                let y = rm.lift(&a.states[j]);
                let dy = rm.lift(&(&a.states[j] - &a.states[j - 1])) / grid.tau;
                let r = d.input() * &u.values[j - 1]
                    - d.operator_at(grid.time(j)).mul_vec(&y)
                    - d.mass().mul_vec(&dy);
                d.dual_norm(&r)
            })
            .collect()
    }

    fn direct_adjoint_residual(
        d: &Discretization,
        rm: &ReducedModel,
        grid: &TimeGrid,
        a: &Trajectory,
        b: &Trajectory,
    ) -> Vec<f64> {
        (0..grid.steps)
            .map(|k| {
                let y = rm.lift(&a.states[k + 1]);
                let p = rm.lift(&b.states[k]);
                let dp = rm.lift(&(&b.states[k + 1] - &b.states[k])) / grid.tau;
                let r = d.mass().mul_vec(&y) - d.operator_at(grid.time(k + 1)).transpose_mul_vec(&p)
                    + d.mass().mul_vec(&dp);
                d.dual_norm(&r)
            })
            .collect()
    }

    #[test]
    fn online_norms_match_direct_assembly() {
        let d = disc(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let basis = random_basis(&d, 3, &mut rng);
        let rm = ReducedModel::new(d.clone(), basis, vec![1.0; 3], 16).unwrap();
        let grid = TimeGrid::new(0.05, 3, 10).unwrap();
        let u = random_control(10, d.n_inputs(), &mut rng);
        let a0 = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let a = simulate(rm.model(), &grid, &a0, &u).unwrap();
        let b = adjoint(rm.model(), &grid, &a).unwrap();
        let online = rm.state_residual_norms(&grid, &a, &u);
        let direct = direct_state_residual(&d, &rm, &grid, &a, &u);
        for (x, y) in online.iter().zip(&direct) {
            assert!((x - y).abs() <= 1e-8 * y.max(1e-12), "{x} vs {y}");
        }
        let online = rm.adjoint_residual_norms(&grid, &a, &b);
        let direct = direct_adjoint_residual(&d, &rm, &grid, &a, &b);
        for (x, y) in online.iter().zip(&direct) {
            assert!((x - y).abs() <= 1e-8 * y.max(1e-12), "{x} vs {y}");
        }
    }

    #[test]
    fn full_basis_reproduces_the_full_model() {
        let d = disc(5);
        let n = d.n_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let basis = random_basis(&d, n, &mut rng);
        assert_eq!(basis.ncols(), n);
        let rm = ReducedModel::new(d.clone(), basis, vec![1.0; n], 16).unwrap();
        let grid = TimeGrid::new(0.05, 0, 8).unwrap();
        let u = random_control(8, d.n_inputs(), &mut rng);
        let y0 = d.interpolate(|p| (p[0] * 3.0).sin() * p[1]);
        let full = FullModel::new(d.clone(), 16);
        let y = simulate(&full, &grid, &y0, &u).unwrap();
        let a0 = rm.project_initial(&y0).unwrap();
        assert!(rm.projection_error(&y0, &a0) < 1e-12);
        let a = simulate(rm.model(), &grid, &a0, &u).unwrap();
        let b = adjoint(rm.model(), &grid, &a).unwrap();
        for j in 0..=8 {
            assert!((rm.lift(&a.states[j]) - &y.states[j]).norm() < 1e-10);
        }
        let scale = d.dual_norm(&(d.input() * &u.values[0]));
        assert!(rm.state_residual_norms(&grid, &a, &u).iter().all(|&x| x <= 1e-10 * scale.max(1.0)));
        assert!(rm.adjoint_residual_norms(&grid, &a, &b).iter().all(|&x| x <= 1e-10));
        assert!(full.state_dim() == n);
    }

    #[test]
    fn zero_trajectory_has_zero_residual() {
        let d = disc(6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rm = ReducedModel::new(d.clone(), random_basis(&d, 2, &mut rng), vec![1.0; 2], 4).unwrap();
        let grid = TimeGrid::new(0.1, 0, 5).unwrap();
        let zero = Trajectory { states: vec![DVector::zeros(2); 6] };
        let u = ControlSignal::zeros(5, d.n_inputs());
        assert!(rm.state_residual_norms(&grid, &zero, &u).iter().all(|&x| x == 0.0));
        assert!(rm.adjoint_residual_norms(&grid, &zero, &zero).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cache_round_trip() {
        let d = disc(6);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rm = ReducedModel::new(d.clone(), random_basis(&d, 3, &mut rng), vec![3.0, 2.0, 1.0], 4).unwrap();
        let dir = std::env::temp_dir().join(format!("prhc-cache-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("basis.bin");
        rm.write_cache(&path).unwrap();
        let back = ReducedModel::read_cache(d, &path, 4).unwrap();
        assert_eq!(back.basis(), rm.basis());
        assert_eq!(back.eigenvalues(), rm.eigenvalues());
        assert_eq!(back.state_factor, rm.state_factor);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
