use nalgebra::DMatrix;

use super::mesh::{signed_area, Mesh};
use crate::{Error, Result};

/// Axis-aligned closed rectangle `[lo.x, hi.x] x [lo.y, hi.y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRegion {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl BoxRegion {
    pub fn square(center: [f64; 2], side: f64) -> Self {
        let h = 0.5 * side;
        Self { lo: [center[0] - h, center[1] - h], hi: [center[0] + h, center[1] + h] }
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]).max(0.0) * (self.hi[1] - self.lo[1]).max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.lo[0] + self.hi[0]), 0.5 * (self.lo[1] + self.hi[1])]
    }

    fn overlap_area(&self, other: &BoxRegion) -> f64 {
        let w = self.hi[0].min(other.hi[0]) - self.lo[0].max(other.lo[0]);
        let h = self.hi[1].min(other.hi[1]) - self.lo[1].max(other.lo[1]);
        w.max(0.0) * h.max(0.0)
    }
}

/// Ordered list of actuator regions; column `i` of the input matrix belongs to `regions[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorLayout {
    pub regions: Vec<BoxRegion>,
}

impl ActuatorLayout {
    /// Thirteen equal squares of the given area forming an L: a column of six below the
    /// corner square, then the corner, then a row of six to its left.
    ///
    /// Neighbouring squares share edges, so the interiors are disjoint for any area whose
    /// side keeps the shape inside the domain.
    pub fn l_shape(area: f64) -> Self {
        let side = area.sqrt();
        let corner = [0.74, 0.75];
        let mut regions = Vec::with_capacity(13);
        for k in (1..=6).rev() {
            regions.push(BoxRegion::square([corner[0], corner[1] - k as f64 * side], side));
        }
        regions.push(BoxRegion::square(corner, side));
        for k in 1..=6 {
            regions.push(BoxRegion::square([corner[0] - k as f64 * side, corner[1]], side));
        }
        Self { regions }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::InvalidLayout("no actuators".into()));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if !(r.area() > 0.0) {
                return Err(Error::InvalidLayout(format!("actuator {} has no area", i + 1)));
            }
            if r.lo[0] < 0.0 || r.lo[1] < 0.0 || r.hi[0] > 1.0 || r.hi[1] > 1.0 {
                return Err(Error::InvalidLayout(format!("actuator {} leaves the domain", i + 1)));
            }
            for (j, s) in self.regions.iter().enumerate().skip(i + 1) {
                if r.overlap_area(s) > 1e-12 * r.area().min(s.area()) {
                    return Err(Error::InvalidLayout(format!(
                        "actuators {} and {} overlap",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Input matrix with entries `B[j, i] = integral of phi_j over region i`, integrated exactly.
pub fn input_matrix(mesh: &Mesh, layout: &ActuatorLayout) -> Result<DMatrix<f64>> {
    layout.validate()?;
    let mut b = DMatrix::zeros(mesh.n_dofs(), layout.len());
    for t in 0..mesh.triangles().len() {
        let verts = mesh.triangle_vertices(t);
        let area = signed_area(&verts);
        let nodes = mesh.triangles()[t];
        for (i, region) in layout.regions.iter().enumerate() {
            let poly = clip_triangle(&verts, region);
            if poly.len() < 3 {
                continue;
            }
            // fan triangulation; each piece integrates the linear hats exactly at its centroid
            for k in 1..poly.len() - 1 {
                let piece = [poly[0], poly[k], poly[k + 1]];
                let a = signed_area(&piece);
                if a <= 0.0 {
                    continue;
                }
                let c = [
                    (piece[0][0] + piece[1][0] + piece[2][0]) / 3.0,
                    (piece[0][1] + piece[1][1] + piece[2][1]) / 3.0,
                ];
                let bary = barycentric(&verts, area, c);
                for (local, node) in nodes.iter().enumerate() {
                    if let Some(dof) = mesh.dof_of_node(*node) {
                        b[(dof, i)] += a * bary[local];
                    }
                }
            }
        }
    }
    Ok(b)
}

fn barycentric(v: &[[f64; 2]; 3], area: f64, p: [f64; 2]) -> [f64; 3] {
    let l1 = signed_area(&[v[0], p, v[2]]) / area;
    let l2 = signed_area(&[v[0], v[1], p]) / area;
    [1.0 - l1 - l2, l1, l2]
}

fn clip_triangle(tri: &[[f64; 2]; 3], region: &BoxRegion) -> Vec<[f64; 2]> {
    let mut poly: Vec<[f64; 2]> = tri.to_vec();
    // (axis, bound, keep_greater)
    let planes = [
        (0, region.lo[0], true),
        (0, region.hi[0], false),
        (1, region.lo[1], true),
        (1, region.hi[1], false),
    ];
    for (axis, bound, keep_greater) in planes {
        if poly.is_empty() {
            break;
        }
        let inside = |p: &[f64; 2]| if keep_greater { p[axis] >= bound } else { p[axis] <= bound };
        let mut out = Vec::with_capacity(poly.len() + 2);
        for k in 0..poly.len() {
            let cur = poly[k];
            let prev = poly[(k + poly.len() - 1) % poly.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let s = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut x = [prev[0] + s * (cur[0] - prev[0]), prev[1] + s * (cur[1] - prev[1])];
                x[axis] = bound;
                out.push(x);
            }
            if ci {
                out.push(cur);
            }
        }
        poly = out;
    }
    poly
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l_shape_is_valid_and_ordered() {
        let layout = ActuatorLayout::l_shape(0.0106);
        layout.validate().unwrap();
        assert_eq!(layout.len(), 13);
        for r in &layout.regions {
            assert!((r.area() - 0.0106).abs() < 1e-15);
        }
        // first actuator is the bottom of the column, last the left end of the row
        let c0 = layout.regions[0].center();
        let c12 = layout.regions[12].center();
        assert!(c0[1] < 0.2 && (c0[0] - 0.74).abs() < 1e-12);
        assert!(c12[0] < 0.2 && (c12[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn overlapping_or_outside_layouts_are_rejected() {
        let a = BoxRegion::square([0.5, 0.5], 0.2);
        let b = BoxRegion::square([0.55, 0.5], 0.2);
        let bad = ActuatorLayout { regions: vec![a, b] };
        assert!(matches!(bad.validate(), Err(Error::InvalidLayout(_))));
        let outside = ActuatorLayout { regions: vec![BoxRegion::square([0.02, 0.5], 0.1)] };
        assert!(outside.validate().is_err());
    }

    #[test]
    fn interior_columns_sum_to_region_area() {
        let mesh = Mesh::unit_square(21).unwrap();
        let layout = ActuatorLayout::l_shape(0.0106);
        let b = input_matrix(&mesh, &layout).unwrap();
        for i in 0..layout.len() {
            let s: f64 = b.column(i).sum();
            assert!((s - 0.0106).abs() < 1e-13, "column {i}: {s}");
        }
    }

    #[test]
    fn box_aligned_with_mesh_matches_hat_integrals() {
        // one full cell [0.25,0.5]^2 on a 5x5 mesh: each of its 4 corner hats integrates
        // to h^2/6 or h^2/3 depending on which diagonal half touches it
        let mesh = Mesh::unit_square(5).unwrap();
        let layout = ActuatorLayout { regions: vec![BoxRegion { lo: [0.25, 0.25], hi: [0.5, 0.5] }] };
        let b = input_matrix(&mesh, &layout).unwrap();
        let h2 = 0.0625;
        let dof = |x: f64, y: f64| {
            (0..mesh.n_dofs())
                .find(|&d| {
                    let c = mesh.dof_coordinates(d);
                    (c[0] - x).abs() < 1e-12 && (c[1] - y).abs() < 1e-12
                })
                .unwrap()
        };
        assert!((b[(dof(0.25, 0.25), 0)] - h2 / 3.0).abs() < 1e-15);
        assert!((b[(dof(0.5, 0.5), 0)] - h2 / 3.0).abs() < 1e-15);
        assert!((b[(dof(0.5, 0.25), 0)] - h2 / 6.0).abs() < 1e-15);
        assert!((b[(dof(0.25, 0.5), 0)] - h2 / 6.0).abs() < 1e-15);
    }
}
