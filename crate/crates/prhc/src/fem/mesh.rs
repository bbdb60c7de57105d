use crate::{Error, Result};

/// Uniform triangulation of the unit square; every cell is split along its rising diagonal.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes_per_side: usize,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    dof_of_node: Vec<Option<usize>>,
    node_of_dof: Vec<usize>,
}

impl Mesh {
    /// `nodes_per_side` counts boundary nodes, so the mesh width is `1 / (nodes_per_side - 1)`.
    pub fn unit_square(nodes_per_side: usize) -> Result<Self> {
        if nodes_per_side < 3 {
            return Err(Error::InvalidMesh(format!(
                "need at least 3 nodes per side for an interior node, got {nodes_per_side}"
            )));
        }
        let n = nodes_per_side;
        let h = 1.0 / (n - 1) as f64;
        let id = |ix: usize, iy: usize| iy * n + ix;
        let mut nodes = Vec::with_capacity(n * n);
        let mut dof_of_node = Vec::with_capacity(n * n);
        let mut node_of_dof = Vec::new();
        for iy in 0..n {
            for ix in 0..n {
                nodes.push([ix as f64 * h, iy as f64 * h]);
                if ix == 0 || iy == 0 || ix == n - 1 || iy == n - 1 {
                    dof_of_node.push(None);
                } else {
                    dof_of_node.push(Some(node_of_dof.len()));
                    node_of_dof.push(id(ix, iy));
                }
            }
        }
        let mut triangles = Vec::with_capacity(2 * (n - 1) * (n - 1));
        for iy in 0..n - 1 {
            for ix in 0..n - 1 {
                let (a, b, c, d) = (id(ix, iy), id(ix + 1, iy), id(ix + 1, iy + 1), id(ix, iy + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        Ok(Self { nodes_per_side, nodes, triangles, dof_of_node, node_of_dof })
    }

    pub fn nodes_per_side(&self) -> usize {
        self.nodes_per_side
    }

    pub fn width(&self) -> f64 {
        1.0 / (self.nodes_per_side - 1) as f64
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Number of interior (free) nodes.
    pub fn n_dofs(&self) -> usize {
        self.node_of_dof.len()
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.node_of_dof[dof]
    }

    pub fn dof_coordinates(&self, dof: usize) -> [f64; 2] {
        self.nodes[self.node_of_dof[dof]]
    }

    pub fn triangle_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }
}

/// Signed area of a triangle; positive for counter-clockwise orientation.
pub fn signed_area(p: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}
