//! P1 finite elements with homogeneous Dirichlet conditions on the unit square.
//!
//! The operator `A(t) = sum_q theta_q(t) A_q` is split into a time-independent part
//! (diffusion, stationary reaction, transport in divergence form) and a reaction part
//! scaled by a scalar time profile.

mod actuators;
mod mesh;

use std::io::Write;

use nalgebra::{DMatrix, DVector};

pub use actuators::{input_matrix, ActuatorLayout, BoxRegion};
pub use mesh::{signed_area, Mesh};

use crate::linalg::{BandedLu, CsrMatrix};
use crate::{Error, Result};

/// `c + x*X + y*Y + xy*X*Y`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Bilinear {
    pub c: f64,
    pub x: f64,
    pub y: f64,
    pub xy: f64,
}

impl Bilinear {
    pub const fn constant(c: f64) -> Self {
        Self { c, x: 0.0, y: 0.0, xy: 0.0 }
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.c + self.x * p[0] + self.y * p[1] + self.xy * p[0] * p[1]
    }
}

/// Scalar factor multiplying the time-varying reaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeProfile {
    Constant(f64),
    Sin,
    AbsSin,
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Sin => t.sin(),
            Self::AbsSin => t.sin().abs(),
        }
    }

    /// Closed interval containing every value of the profile.
    pub fn range(&self) -> (f64, f64) {
        match self {
            Self::Constant(c) => (*c, *c),
            Self::Sin => (-1.0, 1.0),
            Self::AbsSin => (0.0, 1.0),
        }
    }
}

/// Coefficients of `y_t - nu Lap y + (a0 + a1 theta(t)) y + div(b y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeData {
    pub diffusion: f64,
    pub reaction: Bilinear,
    pub reaction_varying: Bilinear,
    pub profile: TimeProfile,
    pub velocity: [Bilinear; 2],
}

impl PdeData {
    fn velocity_at(&self, p: [f64; 2]) -> [f64; 2] {
        [self.velocity[0].eval(p), self.velocity[1].eval(p)]
    }

    fn divergence_at(&self, p: [f64; 2]) -> f64 {
        let [b1, b2] = self.velocity;
        b1.x + b1.xy * p[1] + b2.y + b2.xy * p[0]
    }
}

// Degree-5 seven-point rule on the reference triangle, barycentric points, weights sum to 1.
fn quadrature() -> [([f64; 3], f64); 7] {
    let s = 15f64.sqrt();
    let (a1, b1) = ((6.0 - s) / 21.0, (9.0 + 2.0 * s) / 21.0);
    let (a2, b2) = ((6.0 + s) / 21.0, (9.0 - 2.0 * s) / 21.0);
    let (w1, w2) = ((155.0 - s) / 1200.0, (155.0 + s) / 1200.0);
    [
        ([1.0 / 3.0; 3], 9.0 / 40.0),
        ([a1, a1, b1], w1),
        ([a1, b1, a1], w1),
        ([b1, a1, a1], w1),
        ([a2, a2, b2], w2),
        ([a2, b2, a2], w2),
        ([b2, a2, a2], w2),
    ]
}

/// Assembled full-order model.
#[derive(Debug, Clone)]
pub struct Discretization {
    mesh: Mesh,
    data: PdeData,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    components: Vec<CsrMatrix>,
    input: DMatrix<f64>,
    layout: ActuatorLayout,
    stiffness_lu: BandedLu,
    coercivity: f64,
    shift: f64,
    input_norm: f64,
}

impl Discretization {
    pub fn new(nodes_per_side: usize, data: &PdeData, layout: &ActuatorLayout) -> Result<Self> {
        if !(data.diffusion > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "diffusion must be positive, got {}",
                data.diffusion
            )));
        }
        let mesh = Mesh::unit_square(nodes_per_side)?;
        let input = input_matrix(&mesh, layout)?;
        let n = mesh.n_dofs();
        let quad = quadrature();
        let mut t_mass = Vec::new();
        let mut t_stiff = Vec::new();
        let mut t_a1 = Vec::new();
        let mut t_a2 = Vec::new();
        let mut shift = 0.0f64;
        let (theta_lo, theta_hi) = data.profile.range();
        let mut sample = |p: [f64; 2]| {
            let div = 0.5 * data.divergence_at(p);
            for theta in [theta_lo, theta_hi] {
                let a = data.reaction.eval(p) + theta * data.reaction_varying.eval(p);
                shift = shift.max(-(a - div)).max(-(a + div));
            }
        };
        for &p in mesh.nodes() {
            sample(p);
        }
        for t in 0..mesh.triangles().len() {
            let v = mesh.triangle_vertices(t);
            let area = signed_area(&v);
            // gradients of the barycentric coordinates
            let grads = [
                [(v[1][1] - v[2][1]) / (2.0 * area), (v[2][0] - v[1][0]) / (2.0 * area)],
                [(v[2][1] - v[0][1]) / (2.0 * area), (v[0][0] - v[2][0]) / (2.0 * area)],
                [(v[0][1] - v[1][1]) / (2.0 * area), (v[1][0] - v[0][0]) / (2.0 * area)],
            ];
            let mut m = [[0.0; 3]; 3];
            let mut k = [[0.0; 3]; 3];
            let mut r1 = [[0.0; 3]; 3];
            let mut r2 = [[0.0; 3]; 3];
            for (bary, w) in quad.iter() {
                let p = [
                    bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
                    bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
                ];
                sample(p);
                let wa = w * area;
                let a0 = data.reaction.eval(p);
                let a1 = data.reaction_varying.eval(p);
                let b = data.velocity_at(p);
                let div = data.divergence_at(p);
                for i in 0..3 {
                    for j in 0..3 {
                        let phi = bary[i] * bary[j];
                        m[i][j] += wa * phi;
                        r2[i][j] += wa * a1 * phi;
                        let transport = (b[0] * grads[j][0] + b[1] * grads[j][1]) * bary[i];
                        r1[i][j] += wa * (a0 * phi + transport + div * phi);
                    }
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    k[i][j] = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                }
            }
            let nodes = mesh.triangles()[t];
            for i in 0..3 {
                let Some(di) = mesh.dof_of_node(nodes[i]) else { continue };
                for j in 0..3 {
                    let Some(dj) = mesh.dof_of_node(nodes[j]) else { continue };
                    t_mass.push((di, dj, m[i][j]));
                    t_stiff.push((di, dj, k[i][j]));
                    t_a1.push((di, dj, data.diffusion * k[i][j] + r1[i][j]));
                    t_a2.push((di, dj, r2[i][j]));
                }
            }
        }
        let mass = CsrMatrix::from_triplets(n, n, &t_mass);
        let stiffness = CsrMatrix::from_triplets(n, n, &t_stiff);
        let components =
            vec![CsrMatrix::from_triplets(n, n, &t_a1), CsrMatrix::from_triplets(n, n, &t_a2)];
        let stiffness_lu = BandedLu::factor(&stiffness)?;
        let mut disc = Self {
            mesh,
            data: data.clone(),
            mass,
            stiffness,
            components,
            input,
            layout: layout.clone(),
            stiffness_lu,
            coercivity: data.diffusion,
            shift,
            input_norm: 0.0,
        };
        disc.input_norm = disc.operator_norm_input();
        Ok(disc)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn data(&self) -> &PdeData {
        &self.data
    }

    pub fn layout(&self) -> &ActuatorLayout {
        &self.layout
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn n_inputs(&self) -> usize {
        self.input.ncols()
    }

    /// Mass matrix, the Gram matrix of the pivot space.
    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// Gram matrix of the energy space (the H1 seminorm).
    pub fn energy_gram(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn components(&self) -> &[CsrMatrix] {
        &self.components
    }

    pub fn input(&self) -> &DMatrix<f64> {
        &self.input
    }

    /// Coefficients multiplying each component at time `t`.
    pub fn theta(&self, t: f64) -> [f64; 2] {
        [1.0, self.data.profile.eval(t)]
    }

    pub fn operator_at(&self, t: f64) -> CsrMatrix {
        let th = self.theta(t);
        CsrMatrix::linear_combination(&[(th[0], &self.components[0]), (th[1], &self.components[1])])
    }

    /// Lower bound of the energy term in the Garding inequality
    /// `<A(t) v, v> >= coercivity |v|_V^2 - shift |v|_H^2`.
    pub fn coercivity(&self) -> f64 {
        self.coercivity
    }

    /// Shift of the Garding inequality, valid for both the divergence and the
    /// convective form of the transport term.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Norm of the input operator from R^m into the dual of the energy space.
    pub fn input_norm(&self) -> f64 {
        self.input_norm
    }

    /// `C^{-1} r` with `C C^T` the energy Gram matrix; its Euclidean norm is the dual norm of `r`.
    pub fn riesz_half(&self, r: &DVector<f64>) -> DVector<f64> {
        self.stiffness_lu.cholesky_half_solve(r)
    }

    /// Dual norm of a functional given by its nodal load vector.
    pub fn dual_norm(&self, r: &DVector<f64>) -> f64 {
        self.riesz_half(r).norm()
    }

    pub fn h_norm(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.mass.mul_vec(v)).max(0.0).sqrt()
    }

    pub fn v_norm(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.stiffness.mul_vec(v)).max(0.0).sqrt()
    }

    /// Nodal interpolant of `f` at the interior nodes.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> DVector<f64> {
        DVector::from_fn(self.n_dofs(), |d, _| f(self.mesh.dof_coordinates(d)))
    }

    fn operator_norm_input(&self) -> f64 {
        let m = self.n_inputs();
        let mut z = DMatrix::zeros(self.n_dofs(), m);
        for i in 0..m {
            z.set_column(i, &self.riesz_half(&self.input.column(i).into_owned()));
        }
        z.singular_values().iter().fold(0.0f64, |a, &s| a.max(s))
    }

    /// Writes mass, energy Gram, operator components and input matrix in MatrixMarket format.
    pub fn export_matrix_market(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let write = |name: &str, m: &CsrMatrix| -> std::io::Result<()> {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            m.write_matrix_market(&mut f)
        };
        write("mass.mtx", &self.mass)?;
        write("energy.mtx", &self.stiffness)?;
        for (q, a) in self.components.iter().enumerate() {
            write(&format!("operator_{}.mtx", q + 1), a)?;
        }
        let b: Vec<_> = (0..self.n_dofs())
            .flat_map(|i| (0..self.n_inputs()).map(move |j| (i, j)))
            .filter(|&(i, j)| self.input[(i, j)] != 0.0)
            .map(|(i, j)| (i, j, self.input[(i, j)]))
            .collect();
        write("input.mtx", &CsrMatrix::from_triplets(self.n_dofs(), self.n_inputs(), &b))?;
        Ok(())
    }
}

impl CsrMatrix {
    pub fn write_matrix_market(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows(), self.ncols(), self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setup::benchmark_pde;

    fn disc(n: usize) -> Discretization {
        Discretization::new(n, &benchmark_pde(), &ActuatorLayout::l_shape(0.0106)).unwrap()
    }

    #[test]
    fn quadrature_integrates_quintics() {
        // int_T l0^a l1^b l2^c = 2|T| a! b! c! / (a+b+c+2)!
        let fact = |n: u32| (1..=n).product::<u32>() as f64;
        for (a, b, c) in [(5, 0, 0), (2, 2, 1), (3, 1, 1), (1, 1, 1), (4, 1, 0)] {
            let q: f64 = quadrature()
                .iter()
                .map(|(l, w)| w * l[0].powi(a) * l[1].powi(b) * l[2].powi(c))
                .sum();
            let exact = 2.0 * fact(a as u32) * fact(b as u32) * fact(c as u32)
                / fact((a + b + c + 2) as u32);
            assert!((q - exact).abs() < 1e-15, "{a}{b}{c}: {q} vs {exact}");
        }
    }

    #[test]
    fn mass_rows_integrate_hats() {
        // away from the boundary every hat integrates to h^2 on this triangulation
        let d = disc(11);
        let h = d.mesh().width();
        let ones = DVector::from_element(d.n_dofs(), 1.0);
        let rows = d.mass().mul_vec(&ones);
        for dof in 0..d.n_dofs() {
            let [x, y] = d.mesh().dof_coordinates(dof);
            if x > 1.5 * h && y > 1.5 * h && x < 1.0 - 1.5 * h && y < 1.0 - 1.5 * h {
                assert!((rows[dof] - h * h).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_matches_five_point_stencil() {
        let d = disc(6);
        let k = d.energy_gram().to_dense();
        for i in 0..d.n_dofs() {
            assert!((k[(i, i)] - 4.0).abs() < 1e-13);
            let off: f64 = (0..d.n_dofs()).filter(|&j| j != i).map(|j| k[(i, j)]).sum();
            assert!(off <= 0.0);
        }
        assert!((d.energy_gram().to_dense() - d.energy_gram().to_dense().transpose()).norm() < 1e-14);
    }

    #[test]
    fn sine_mode_energy_matches_continuum() {
        let d = disc(41);
        let v = d.interpolate(|p| (std::f64::consts::PI * p[0]).sin() * (std::f64::consts::PI * p[1]).sin());
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((d.h_norm(&v).powi(2) - 0.25).abs() < 2e-3);
        assert!((d.v_norm(&v).powi(2) - 0.5 * pi2).abs() < 2e-2);
    }

    #[test]
    fn garding_inequality_holds_on_random_vectors() {
        use rand::{Rng, SeedableRng};
        let d = disc(9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..200 {
            let v = DVector::from_fn(d.n_dofs(), |_, _| rng.gen_range(-1.0..1.0));
            let t = trial as f64 * 0.37;
            let a = d.operator_at(t);
            let form = v.dot(&a.mul_vec(&v));
            let bound = d.coercivity() * d.v_norm(&v).powi(2) - d.shift() * d.h_norm(&v).powi(2);
            assert!(form >= bound - 1e-12 * form.abs().max(1.0), "{form} < {bound}");
        }
    }

    #[test]
    fn transport_skew_part_is_exact() {
        // <(b.grad + div b) v, v> = 1/2 int div b v^2 for the exactly integrated form
        let mut data = benchmark_pde();
        data.reaction = Bilinear::default();
        data.reaction_varying = Bilinear::default();
        let d = Discretization::new(7, &data, &ActuatorLayout::l_shape(0.0106)).unwrap();
        let mut half_div = data.clone();
        half_div.velocity = [Bilinear::default(); 2];
        half_div.diffusion = 1.0;
        half_div.reaction = Bilinear { c: 0.5 * -0.01, x: 0.5 * 0.2, y: 0.0, xy: 0.0 };
        let e = Discretization::new(7, &half_div, &ActuatorLayout::l_shape(0.0106)).unwrap();
        let v = DVector::from_fn(d.n_dofs(), |i, _| ((i * 7 % 5) as f64) - 2.0);
        let transport = v.dot(&d.components()[0].mul_vec(&v)) - 0.1 * d.v_norm(&v).powi(2);
        let reaction = v.dot(&e.components()[0].mul_vec(&v)) - d.v_norm(&v).powi(2);
        assert!((transport - reaction).abs() < 1e-13);
    }

    #[test]
    fn benchmark_data_constants() {
        let d = disc(11);
        assert!((d.coercivity() - 0.1).abs() < 1e-15);
        assert!((d.shift() - 2.895).abs() < 1e-12);
    }

    #[test]
    fn input_norm_matches_dense_dual_form() {
        let d = disc(9);
        let kinv = d.energy_gram().to_dense().try_inverse().unwrap();
        let g = d.input().transpose() * kinv * d.input();
        let lmax = g.symmetric_eigenvalues().max();
        assert!((d.input_norm() - lmax.sqrt()).abs() < 1e-12 * lmax.sqrt());
    }

    #[test]
    fn dual_norm_matches_dense_inverse() {
        let d = disc(8);
        let kinv = d.energy_gram().to_dense().try_inverse().unwrap();
        let r = DVector::from_fn(d.n_dofs(), |i, _| (i as f64 * 0.3).cos());
        let dense = r.dot(&(kinv * &r)).sqrt();
        assert!((d.dual_norm(&r) - dense).abs() < 1e-12 * dense);
    }

    #[test]
    fn discrete_poincare_constant_is_below_one() {
        // |v|_H <= |v|_V on every finite element function
        let d = disc(9);
        let m = d.mass().to_dense();
        let k = d.energy_gram().to_dense();
        let chol = k.cholesky().unwrap();
        let li = chol.l().try_inverse().unwrap();
        let s = &li * m * li.transpose();
        assert!(s.symmetric_eigenvalues().max() < 1.0 / (2.0 * std::f64::consts::PI.powi(2)) + 1e-3);
    }

    #[test]
    fn matrix_market_round_trip_header() {
        let d = disc(4);
        let mut buf = Vec::new();
        d.mass().write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("%%MatrixMarket"));
        assert_eq!(lines.next().unwrap(), format!("4 4 {}", d.mass().nnz()));
    }
}
