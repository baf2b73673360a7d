//! Structured quadrilateral and hexahedral meshes on axis-aligned boxes.
//!
//! Nodes are numbered lexicographically with x running fastest. Element
//! connectivity follows the parent-cell corner ordering used by
//! [`shape_functions`]: counterclockwise in 2D, and bottom face then top face
//! (each counterclockwise) in 3D.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of nodes per element (trilinear hexahedron).
pub const MAX_ELEMENT_NODES: usize = 8;

/// Parent-cell corner coordinates, in local node order.
const CORNERS_2D: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
const CORNERS_3D: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Parent coordinates of local node `a` for an element of dimension `dim`.
pub fn parent_corner(dim: usize, a: usize) -> [f64; 3] {
    match dim {
        2 => [CORNERS_2D[a][0], CORNERS_2D[a][1], 0.0],
        _ => CORNERS_3D[a],
    }
}

/// Nodes per element for a given dimension.
pub fn nodes_per_element(dim: usize) -> usize {
    1 << dim
}

/// A box domain discretized by a tensor-product grid of linear elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredMesh {
    dim: usize,
    extents: [f64; 3],
    nodes_per_axis: [usize; 3],
    coords: Vec<[f64; 3]>,
    elements: Vec<[usize; MAX_ELEMENT_NODES]>,
}

/// Grid specification used by configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub extents: Vec<f64>,
    pub nodes_per_axis: Vec<usize>,
}

impl MeshSpec {
    pub fn dim(&self) -> usize {
        self.nodes_per_axis.len()
    }

    pub fn build(&self) -> Result<StructuredMesh> {
        build_box_mesh(self.dim(), &self.extents, &self.nodes_per_axis)
    }
}

/// Builds a structured box mesh with `nodes_per_axis[i]` nodes along axis `i`.
pub fn build_box_mesh(dim: usize, extents: &[f64], nodes_per_axis: &[usize]) -> Result<StructuredMesh> {
    if dim != 2 && dim != 3 {
        return Err(Error::Config(format!("mesh dimension must be 2 or 3, got {dim}")));
    }
    if extents.len() != dim || nodes_per_axis.len() != dim {
        return Err(Error::Config(format!(
            "expected {dim} extents and node counts, got {} and {}",
            extents.len(),
            nodes_per_axis.len()
        )));
    }
    if let Some(n) = nodes_per_axis.iter().find(|&&n| n < 2) {
        return Err(Error::Config(format!("need at least 2 nodes per axis, got {n}")));
    }
    if let Some(l) = extents.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::Config(format!("box extents must be positive, got {l}")));
    }

    let mut ext = [0.0; 3];
    let mut npa = [1usize; 3];
    ext[..dim].copy_from_slice(extents);
    npa[..dim].copy_from_slice(nodes_per_axis);

    let axis_coord = |axis: usize, i: usize| -> f64 {
        // Pin the last node to the extent so the box is covered exactly.
        if i + 1 == npa[axis] {
            ext[axis]
        } else {
            ext[axis] * i as f64 / (npa[axis] - 1) as f64
        }
    };

    let n_nodes = npa.iter().product();
    let mut coords = Vec::with_capacity(n_nodes);
    for k in 0..npa[2] {
        for j in 0..npa[1] {
            for i in 0..npa[0] {
                let z = if dim == 3 { axis_coord(2, k) } else { 0.0 };
                coords.push([axis_coord(0, i), axis_coord(1, j), z]);
            }
        }
    }

    let node = |i: usize, j: usize, k: usize| i + npa[0] * (j + npa[1] * k);
    let mut elements = Vec::new();
    let nez = if dim == 3 { npa[2] - 1 } else { 1 };
    for k in 0..nez {
        for j in 0..npa[1] - 1 {
            for i in 0..npa[0] - 1 {
                let mut conn = [0usize; MAX_ELEMENT_NODES];
                conn[0] = node(i, j, k);
                conn[1] = node(i + 1, j, k);
                conn[2] = node(i + 1, j + 1, k);
                conn[3] = node(i, j + 1, k);
                if dim == 3 {
                    conn[4] = node(i, j, k + 1);
                    conn[5] = node(i + 1, j, k + 1);
                    conn[6] = node(i + 1, j + 1, k + 1);
                    conn[7] = node(i, j + 1, k + 1);
                }
                elements.push(conn);
            }
        }
    }

    Ok(StructuredMesh { dim, extents: ext, nodes_per_axis: npa, coords, elements })
}

impl StructuredMesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes_per_axis[..self.dim]
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        nodes_per_element(self.dim)
    }

    /// Node coordinates; the unused third component is zero in 2D.
    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn node(&self, id: usize) -> [f64; 3] {
        self.coords[id]
    }

    /// Node ids of element `e` in local order.
    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e][..self.nodes_per_element()]
    }

    pub fn spec(&self) -> MeshSpec {
        MeshSpec { extents: self.extents().to_vec(), nodes_per_axis: self.nodes_per_axis().to_vec() }
    }

    /// Lexicographic node id from grid indices.
    pub fn node_index(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.nodes_per_axis[0] * (idx[1] + self.nodes_per_axis[1] * idx[2])
    }

    /// Grid indices of a node id.
    pub fn grid_index(&self, id: usize) -> [usize; 3] {
        let nx = self.nodes_per_axis[0];
        let ny = self.nodes_per_axis[1];
        [id % nx, (id / nx) % ny, id / (nx * ny)]
    }

    /// Node ids on the face `axis = 0` (`upper = false`) or `axis = extent` (`upper = true`).
    pub fn face_nodes(&self, axis: usize, upper: bool) -> Vec<usize> {
        let target = if upper { self.nodes_per_axis[axis] - 1 } else { 0 };
        (0..self.n_nodes()).filter(|&n| self.grid_index(n)[axis] == target).collect()
    }

    /// Coordinates scaled by the box extents onto `[0, 1]^dim`, the input
    /// domain of the neural field.
    pub fn normalized_coords(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.n_nodes() * d);
        for x in &self.coords {
            for a in 0..d {
                out.push(x[a] / self.extents[a]);
            }
        }
        out
    }

    /// Element geometry at every point of `rule`.
    pub fn element_geometry(&self, e: usize, rule: &QuadratureRule) -> Result<ElementGeometry> {
        element_geometry(self, e, rule)
    }
}

/// Tensor-product Gauss–Legendre rule on the parent cell `[-1, 1]^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

fn gauss_legendre_1d(order: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let (x, w): (Vec<f64>, Vec<f64>) = match order {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let wa = (18.0 + 30f64.sqrt()) / 36.0;
            let wb = (18.0 - 30f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        _ => return None,
    };
    Some((x, w))
}

impl QuadratureRule {
    /// `order` points per axis; orders 1 through 4 are tabulated.
    pub fn gauss_legendre(dim: usize, order: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Config(format!("quadrature dimension must be 2 or 3, got {dim}")));
        }
        let (x, w) = gauss_legendre_1d(order)
            .ok_or_else(|| Error::Config(format!("unsupported Gauss order {order}")))?;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let nz = if dim == 3 { order } else { 1 };
        for k in 0..nz {
            for j in 0..order {
                for i in 0..order {
                    let (z, wz) = if dim == 3 { (x[k], w[k]) } else { (0.0, 1.0) };
                    points.push([x[i], x[j], z]);
                    weights.push(w[i] * w[j] * wz);
                }
            }
        }
        Ok(Self { dim, points, weights })
    }

    /// The 2-point-per-axis default.
    pub fn default_for(dim: usize) -> Result<Self> {
        Self::gauss_legendre(dim, 2)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points_per_axis(&self) -> usize {
        (self.points.len() as f64).powf(1.0 / self.dim as f64).round() as usize
    }
}

/// Shape function values and parent-space gradients of the bilinear quad or
/// trilinear hex at `xi`.
///
/// Returns fixed-size arrays; only the first `2^dim` entries are meaningful.
pub fn shape_functions(dim: usize, xi: &[f64]) -> ([f64; MAX_ELEMENT_NODES], [[f64; 3]; MAX_ELEMENT_NODES]) {
    let mut n = [0.0; MAX_ELEMENT_NODES];
    let mut dn = [[0.0; 3]; MAX_ELEMENT_NODES];
    let scale = 1.0 / (1u32 << dim) as f64;
    for a in 0..nodes_per_element(dim) {
        let c = parent_corner(dim, a);
        let mut f = [1.0; 3];
        for d in 0..dim {
            f[d] = 1.0 + c[d] * xi[d];
        }
        n[a] = scale * f[..dim].iter().product::<f64>();
        for d in 0..dim {
            let mut g = scale * c[d];
            for o in 0..dim {
                if o != d {
                    g *= f[o];
                }
            }
            dn[a][d] = g;
        }
    }
    (n, dn)
}

/// Isoparametric quantities at a single integration point.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussPointGeometry {
    pub n: [f64; MAX_ELEMENT_NODES],
    pub dn_dxi: [[f64; 3]; MAX_ELEMENT_NODES],
    /// `J[i][j] = ∂X_j/∂ξ_i`, embedded in 3×3 with unit padding in 2D.
    pub jacobian: Matrix3<f64>,
    pub det_j: f64,
    pub dn_dx: [[f64; 3]; MAX_ELEMENT_NODES],
    /// Quadrature weight times `det J`.
    pub weight: f64,
}

/// Geometry of one element at every point of a quadrature rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementGeometry {
    pub element: usize,
    pub dim: usize,
    pub points: Vec<GaussPointGeometry>,
}

impl ElementGeometry {
    pub fn n_nodes(&self) -> usize {
        nodes_per_element(self.dim)
    }

    /// Sum of the integration weights, i.e. the element measure.
    pub fn measure(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }
}

pub fn element_geometry(mesh: &StructuredMesh, e: usize, rule: &QuadratureRule) -> Result<ElementGeometry> {
    if e >= mesh.n_elements() {
        return Err(Error::Config(format!("element {e} out of range ({} elements)", mesh.n_elements())));
    }
    if rule.dim() != mesh.dim() {
        return Err(Error::Config("quadrature and mesh dimension differ".into()));
    }
    if rule.points_per_axis() < 2 {
        return Err(Error::Config("quadrature order must be at least 2 per axis".into()));
    }
    let dim = mesh.dim();
    let nen = mesh.nodes_per_element();
    let conn = mesh.element(e);
    let mut points = Vec::with_capacity(rule.len());
    for (xi, &w) in rule.points().iter().zip(rule.weights()) {
        let (n, dn_dxi) = shape_functions(dim, xi);
        let mut jac = Matrix3::<f64>::identity();
        for i in 0..dim {
            for j in 0..dim {
                jac[(i, j)] = (0..nen).map(|a| dn_dxi[a][i] * mesh.coords[conn[a]][j]).sum();
            }
        }
        let det_j = jac.determinant();
        if det_j <= 0.0 || !det_j.is_finite() {
            return Err(Error::DegenerateElement { element: e, det_j });
        }
        let inv = jac.try_inverse().ok_or(Error::DegenerateElement { element: e, det_j })?;
        let mut dn_dx = [[0.0; 3]; MAX_ELEMENT_NODES];
        for a in 0..nen {
            for i in 0..dim {
                dn_dx[a][i] = (0..dim).map(|k| inv[(i, k)] * dn_dxi[a][k]).sum();
            }
        }
        points.push(GaussPointGeometry { n, dn_dxi, jacobian: jac, det_j, dn_dx, weight: w * det_j });
    }
    Ok(ElementGeometry { element: e, dim, points })
}
