//! Structured trilinear hexahedral mesh of the box `(0,L1)×(0,L2)×(0,L3)`.

use crate::error::{ElasticityError, Result};

/// Reference coordinates of the eight element corners, counter-clockwise on
/// the bottom face then the top face.
pub const CORNERS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Gauss points per element (2 × 2 × 2 rule).
pub const GAUSS_PER_ELEMENT: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    cells: [usize; 3],
    lengths: [f64; 3],
    /// Free-node index of every node, or `None` on the boundary.
    free_of_node: Vec<Option<usize>>,
    n_free_nodes: usize,
    /// Shape-function gradients `∂N_a/∂x_j` at each Gauss point, identical
    /// for every element of the uniform grid: `[gauss][corner][axis]`.
    grads: [[[f64; 3]; 8]; GAUSS_PER_ELEMENT],
    /// Gauss point positions in the reference cube.
    gauss_ref: [[f64; 3]; GAUSS_PER_ELEMENT],
    /// Quadrature weight times Jacobian determinant.
    weight: f64,
}

impl Mesh {
    pub fn new(cells: [usize; 3], lengths: [f64; 3]) -> Result<Self> {
        if cells.iter().any(|&n| n < 2) {
            return Err(ElasticityError::InvalidMesh(format!(
                "need at least 2 cells per axis to have interior nodes, got {cells:?}"
            )));
        }
        if lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(ElasticityError::InvalidMesh(format!(
                "box lengths must be positive, got {lengths:?}"
            )));
        }
        let [n1, n2, n3] = cells;
        let mut free_of_node = Vec::with_capacity((n1 + 1) * (n2 + 1) * (n3 + 1));
        let mut next = 0;
        for k in 0..=n3 {
            for j in 0..=n2 {
                for i in 0..=n1 {
                    let boundary = i == 0 || i == n1 || j == 0 || j == n2 || k == 0 || k == n3;
                    if boundary {
                        free_of_node.push(None);
                    } else {
                        free_of_node.push(Some(next));
                        next += 1;
                    }
                }
            }
        }

        let h = [lengths[0] / n1 as f64, lengths[1] / n2 as f64, lengths[2] / n3 as f64];
        let g = 1.0 / 3f64.sqrt();
        let mut gauss_ref = [[0.0; 3]; GAUSS_PER_ELEMENT];
        let mut grads = [[[0.0; 3]; 8]; GAUSS_PER_ELEMENT];
        for (q, gp) in gauss_ref.iter_mut().enumerate() {
            *gp = [CORNERS[q][0] * g, CORNERS[q][1] * g, CORNERS[q][2] * g];
            for (a, c) in CORNERS.iter().enumerate() {
                let f = [1.0 + c[0] * gp[0], 1.0 + c[1] * gp[1], 1.0 + c[2] * gp[2]];
                grads[q][a] = [
                    0.125 * c[0] * f[1] * f[2] * 2.0 / h[0],
                    0.125 * f[0] * c[1] * f[2] * 2.0 / h[1],
                    0.125 * f[0] * f[1] * c[2] * 2.0 / h[2],
                ];
            }
        }
        Ok(Mesh {
            cells,
            lengths,
            free_of_node,
            n_free_nodes: next,
            grads,
            gauss_ref,
            weight: h[0] * h[1] * h[2] / 8.0,
        })
    }

    /// The 6 × 6 × 3 grid on `(0,1)×(0,1)×(0,0.1)`.
    pub fn reduced_default() -> Self {
        Self::new([6, 6, 3], [1.0, 1.0, 0.1]).expect("default mesh is valid")
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn n_elements(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn n_nodes(&self) -> usize {
        self.free_of_node.len()
    }

    /// Number of free (interior) displacement dofs, `n_y`.
    pub fn n_free_dofs(&self) -> usize {
        3 * self.n_free_nodes
    }

    /// Number of integration points, `n_p`.
    pub fn n_gauss(&self) -> usize {
        GAUSS_PER_ELEMENT * self.n_elements()
    }

    pub fn free_node(&self, node: usize) -> Option<usize> {
        self.free_of_node[node]
    }

    fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [n1, n2, _] = self.cells;
        i + (n1 + 1) * (j + (n2 + 1) * k)
    }

    pub fn node_coords(&self, node: usize) -> [f64; 3] {
        let [n1, n2, n3] = self.cells;
        let i = node % (n1 + 1);
        let j = (node / (n1 + 1)) % (n2 + 1);
        let k = node / ((n1 + 1) * (n2 + 1));
        [
            self.lengths[0] * i as f64 / n1 as f64,
            self.lengths[1] * j as f64 / n2 as f64,
            self.lengths[2] * k as f64 / n3 as f64,
        ]
    }

    /// Global node indices of element `e` in [`CORNERS`] order.
    pub fn element_nodes(&self, e: usize) -> [usize; 8] {
        let [n1, n2, _] = self.cells;
        let i = e % n1;
        let j = (e / n1) % n2;
        let k = e / (n1 * n2);
        let mut out = [0; 8];
        for (a, c) in CORNERS.iter().enumerate() {
            let di = usize::from(c[0] > 0.0);
            let dj = usize::from(c[1] > 0.0);
            let dk = usize::from(c[2] > 0.0);
            out[a] = self.node_index(i + di, j + dj, k + dk);
        }
        out
    }

    /// Physical position of Gauss point `q` of element `e`.
    pub fn gauss_point(&self, e: usize, q: usize) -> [f64; 3] {
        let nodes = self.element_nodes(e);
        let origin = self.node_coords(nodes[0]);
        let mut x = [0.0; 3];
        for ax in 0..3 {
            let h = self.lengths[ax] / self.cells[ax] as f64;
            x[ax] = origin[ax] + 0.5 * h * (1.0 + self.gauss_ref[q][ax]);
        }
        x
    }

    /// All Gauss point positions, element-major.
    pub fn gauss_points(&self) -> Vec<[f64; 3]> {
        (0..self.n_elements())
            .flat_map(|e| (0..GAUSS_PER_ELEMENT).map(move |q| (e, q)))
            .map(|(e, q)| self.gauss_point(e, q))
            .collect()
    }

    pub(crate) fn shape_grads(&self, q: usize) -> &[[f64; 3]; 8] {
        &self.grads[q]
    }

    pub(crate) fn quad_weight(&self) -> f64 {
        self.weight
    }

    /// Largest distance between two coupled free dofs.
    pub fn half_bandwidth(&self) -> usize {
        let mut bw = 0;
        for e in 0..self.n_elements() {
            let free: Vec<usize> = self
                .element_nodes(e)
                .iter()
                .filter_map(|&n| self.free_node(n))
                .collect();
            if let (Some(lo), Some(hi)) = (free.iter().min(), free.iter().max()) {
                bw = bw.max(3 * (hi - lo) + 2);
            }
        }
        bw
    }
}
