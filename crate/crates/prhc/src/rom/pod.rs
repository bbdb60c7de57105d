use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::Trajectory;
use crate::fem::Discretization;
use crate::{Error, Result};

/// Modes whose eigenvalue falls below this fraction of the largest are rounding noise of
/// the eigensolver and are not carried to the next merge.
pub const NOISE_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PodOptions {
    pub max_dim: usize,
    /// Fraction of the snapshot energy the basis must capture.
    pub energy: f64,
    /// Relative eigenvalue floor of the snapshot merges feeding this basis.
    pub noise_floor: f64,
}

impl Default for PodOptions {
    fn default() -> Self {
        Self { max_dim: 100, energy: 1.0 - 1e-13, noise_floor: NOISE_FLOOR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotKind {
    State,
    Adjoint,
}

/// Origin of one snapshot trajectory: its kind and the closed-loop step that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotTag {
    pub kind: SnapshotKind,
    pub step: usize,
}

/// Cumulative snapshot set in the time-weighted energy inner product.
///
/// Trajectories are not stored. The set keeps the eigenpairs of its method-of-snapshots
/// problem as V-orthonormal modes `U` and eigenvalues `L`, and `U L U^T K` is exactly the
/// correlation operator `sum tau s s^T K` over all instances pushed so far. Adding a batch
/// solves the snapshot eigenproblem of the columns `[U L^{1/2}, sqrt(tau) S_new]`, which has
/// the same nonzero spectrum as the Gram matrix of all instances.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    disc: Arc<Discretization>,
    tau: f64,
    tags: Vec<SnapshotTag>,
    instances: usize,
    modes: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    noise_floor: f64,
}

impl SnapshotSet {
    pub fn new(disc: Arc<Discretization>, tau: f64) -> Self {
        let n = disc.n_dofs();
        Self {
            disc,
            tau,
            tags: Vec::new(),
            instances: 0,
            modes: DMatrix::zeros(n, 0),
            eigenvalues: Vec::new(),
            noise_floor: NOISE_FLOOR,
        }
    }

    /// Keeps every mode with eigenvalue above `floor` times the largest. Zero keeps all
    /// positive rounding-level modes too, which only nested-basis studies want.
    pub fn with_noise_floor(mut self, floor: f64) -> Self {
        self.noise_floor = floor;
        self
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn tags(&self) -> &[SnapshotTag] {
        &self.tags
    }

    /// Number of time instances pushed so far.
    pub fn instances(&self) -> usize {
        self.instances
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Eigenvalues of the cumulative snapshot problem, largest first.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Adds a batch of trajectories, all sampled with this set's step.
    pub fn extend(&mut self, batch: &[(SnapshotTag, &Trajectory)]) -> Result<()> {
        let n = self.disc.n_dofs();
        let count: usize = batch.iter().map(|(_, t)| t.len()).sum();
        if count == 0 {
            return Ok(());
        }
        let kept = self.modes.ncols();
        let mut x = DMatrix::zeros(n, kept + count);
        for (i, &l) in self.eigenvalues.iter().enumerate() {
            x.set_column(i, &(self.modes.column(i) * l.sqrt()));
        }
        let w = self.tau.sqrt();
        let mut c = kept;
        for (_, traj) in batch {
            for s in &traj.states {
                if s.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "snapshot has {} entries, expected {n}",
                        s.len()
                    )));
                }
                x.set_column(c, &(s * w));
                c += 1;
            }
        }
        let kx = self.disc.energy_gram().mul_dense(&x);
        let gram = {
            let g = x.transpose() * &kx;
            (&g + g.transpose()) * 0.5
        };
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut modes = Vec::new();
        let mut values = Vec::new();
        for &i in &order {
            let l = eig.eigenvalues[i];
            if !(l > self.noise_floor * top) || !(l > 0.0) {
                break;
            }
            modes.push(&x * eig.eigenvectors.column(i) / l.sqrt());
            values.push(l);
        }
        let (modes, values) = orthonormalize(&self.disc, modes, values);
        self.modes = if modes.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&modes) };
        self.eigenvalues = values;
        self.instances += count;
        self.tags.extend(batch.iter().map(|(t, _)| *t));
        Ok(())
    }
}

/// Two passes of modified Gram-Schmidt in the energy inner product; a mode that loses
/// almost all of its norm is dependent on the previous ones and is dropped with its value.
fn orthonormalize(
    disc: &Discretization,
    modes: Vec<DVector<f64>>,
    values: Vec<f64>,
) -> (Vec<DVector<f64>>, Vec<f64>) {
    let k = disc.energy_gram();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(modes.len());
    let mut kout: Vec<DVector<f64>> = Vec::with_capacity(modes.len());
    let mut kept = Vec::with_capacity(values.len());
    for (mut v, l) in modes.into_iter().zip(values) {
        let start = k.mul_vec(&v).dot(&v).max(0.0).sqrt();
        for _ in 0..2 {
            for (q, kq) in out.iter().zip(&kout) {
                let c = kq.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let kv = k.mul_vec(&v);
        let norm = kv.dot(&v).max(0.0).sqrt();
        if !(norm > 1e-8 * start) {
            continue;
        }
        v /= norm;
        let kv = kv / norm;
        let (imax, _) = v.iter().enumerate().fold((0, 0.0f64), |(bi, bv), (i, &x)| {
            if x.abs() > bv { (i, x.abs()) } else { (bi, bv) }
        });
        let (v, kv) = if v[imax] < 0.0 { (-v, -kv) } else { (v, kv) };
        out.push(v);
        kout.push(kv);
        kept.push(l);
    }
    (out, kept)
}

/// Leading modes of the snapshot set: `r = min(max_dim, smallest r capturing the energy
/// fraction)`. Returns the V-orthonormal basis and the retained eigenvalues.
pub fn pod(set: &SnapshotSet, options: &PodOptions) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if !(options.energy > 0.0 && options.energy <= 1.0) || options.max_dim == 0 {
        return Err(Error::InvalidParameter(format!("invalid POD options {options:?}")));
    }
    let total: f64 = set.eigenvalues.iter().sum();
    if set.eigenvalues.is_empty() || !(total > 0.0) {
        return Err(Error::EmptySnapshots);
    }
    let mut acc = 0.0;
    let mut r = set.eigenvalues.len();
    // a full fraction keeps everything; the running sum saturates in rounding long before
    for (i, l) in set.eigenvalues.iter().enumerate().filter(|_| options.energy < 1.0) {
        acc += l;
        if acc >= options.energy * total {
            r = i + 1;
            break;
        }
    }
    let r = r.min(options.max_dim);
    Ok((set.modes.columns(0, r).into_owned(), set.eigenvalues[..r].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setup::Scenario;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disc(nodes: usize) -> Arc<Discretization> {
        let mut s = Scenario::desk();
        s.nodes_per_side = nodes;
        Arc::new(s.discretization().unwrap())
    }

    fn tag() -> SnapshotTag {
        SnapshotTag { kind: SnapshotKind::State, step: 0 }
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn constant_snapshot_gives_its_normalized_direction() {
        let d = disc(7);
        let v = d.interpolate(|p| p[0] * (1.0 - p[0]) * p[1]);
        let traj = Trajectory { states: vec![v.clone(); 4] };
        let mut set = SnapshotSet::new(d.clone(), 0.1);
        set.extend(&[(tag(), &traj)]).unwrap();
        let (basis, values) = pod(&set, &PodOptions::default()).unwrap();
        assert_eq!(basis.ncols(), 1);
        let expected = &v / d.v_norm(&v);
        assert!((basis.column(0) - expected).norm() < 1e-12);
        assert!((values[0] - 0.4 * d.v_norm(&v).powi(2)).abs() < 1e-12 * values[0]);
    }

    #[test]
    fn three_mode_snapshots_give_three_modes() {
        let d = disc(9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = d.n_dofs();
        let modes: Vec<_> = (0..3).map(|_| random_vec(n, &mut rng)).collect();
        let states = (0..20)
            .map(|k| {
                let t = k as f64 * 0.1;
                &modes[0] * t.sin() + &modes[1] * (2.0 * t).cos() + &modes[2] * t * t
            })
            .collect();
        let mut set = SnapshotSet::new(d, 0.1);
        set.extend(&[(tag(), &Trajectory { states })]).unwrap();
        let (basis, values) = pod(&set, &PodOptions::default()).unwrap();
        assert_eq!(basis.ncols(), 3);
        let tail: f64 = set.eigenvalues()[3..].iter().sum();
        assert!(tail <= 1e-12 * values[0], "tail {tail}");
    }

    #[test]
    fn zero_snapshots_are_rejected() {
        let d = disc(5);
        let mut set = SnapshotSet::new(d.clone(), 0.1);
        set.extend(&[(tag(), &Trajectory { states: vec![DVector::zeros(d.n_dofs()); 3] })]).unwrap();
        assert!(matches!(pod(&set, &PodOptions::default()), Err(Error::EmptySnapshots)));
    }

    /// Energy-weighted snapshot matrix `sqrt(tau) K^{1/2} S` through the dense Cholesky factor.
    fn weighted(d: &Discretization, states: &[DVector<f64>], tau: f64) -> DMatrix<f64> {
        let chol = d.energy_gram().to_dense().cholesky().unwrap();
        let s = DMatrix::from_columns(states);
        chol.l().transpose() * s * tau.sqrt()
    }

    #[test]
    fn projection_error_is_the_svd_tail() {
        let d = disc(8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let states: Vec<_> = (0..5).map(|_| random_vec(d.n_dofs(), &mut rng)).collect();
        let tau = 0.05;
        let mut set = SnapshotSet::new(d.clone(), tau);
        set.extend(&[(tag(), &Trajectory { states: states.clone() })]).unwrap();
        let sv = weighted(&d, &states, tau).singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let k = d.energy_gram();
        for r in 1..=4 {
            let (basis, _) = pod(&set, &PodOptions { max_dim: r, energy: 1.0, ..Default::default() }).unwrap();
            let kb = k.mul_dense(&basis);
            let mut err = 0.0;
            for s in &states {
                let coef = kb.transpose() * s;
                let e = s - &basis * coef;
                err += tau * k.mul_vec(&e).dot(&e);
            }
            let best: f64 = sv[r..].iter().map(|x| x * x).sum();
            assert!((err - best).abs() <= 1e-10 * best.max(1e-300) + 1e-14, "r={r}: {err} vs {best}");
        }
    }

    #[test]
    fn merging_batches_matches_a_single_batch() {
        let d = disc(8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<_> = (0..6).map(|_| random_vec(d.n_dofs(), &mut rng)).collect();
        let b: Vec<_> = (0..7).map(|_| random_vec(d.n_dofs(), &mut rng)).collect();
        let mut once = SnapshotSet::new(d.clone(), 0.2);
        let ta = Trajectory { states: a };
        let tb = Trajectory { states: b };
        once.extend(&[(tag(), &ta), (tag(), &tb)]).unwrap();
        let mut twice = SnapshotSet::new(d.clone(), 0.2);
        twice.extend(&[(tag(), &ta)]).unwrap();
        twice.extend(&[(tag(), &tb)]).unwrap();
        assert_eq!(once.instances(), twice.instances());
        assert_eq!(twice.tags().len(), 2);
        for (x, y) in once.eigenvalues().iter().zip(twice.eigenvalues()) {
            assert!((x - y).abs() < 1e-12 * once.eigenvalues()[0]);
        }
        let (p, _) = pod(&once, &PodOptions { max_dim: 5, energy: 1.0, ..Default::default() }).unwrap();
        let (q, _) = pod(&twice, &PodOptions { max_dim: 5, energy: 1.0, ..Default::default() }).unwrap();
        assert!((p - q).abs().max() < 1e-9);
    }

    #[test]
    fn basis_is_energy_orthonormal_with_positive_peaks() {
        let d = disc(10);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let states: Vec<_> = (0..30).map(|_| random_vec(d.n_dofs(), &mut rng)).collect();
        let mut set = SnapshotSet::new(d.clone(), 0.01);
        set.extend(&[(tag(), &Trajectory { states })]).unwrap();
        let (basis, values) = pod(&set, &PodOptions::default()).unwrap();
        let gram = basis.transpose() * d.energy_gram().mul_dense(&basis);
        assert!((gram - DMatrix::identity(basis.ncols(), basis.ncols())).abs().max() < 1e-10);
        assert!(values.windows(2).all(|w| w[0] >= w[1]));
        for c in basis.column_iter() {
            let peak = c.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(peak > 0.0);
        }
    }
}
