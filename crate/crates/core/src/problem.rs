//! Face-based boundary tables, nodal phase fields, and construction of
//! [`FeProblem`]s from them.

use serde::{Deserialize, Serialize};

use crate::assembly::element::PointProps;
use crate::assembly::{DirichletSet, FeProblem, Physics};
use crate::error::{Error, Result};
use crate::material::{PhaseMapping, ThermoMechParams};
use crate::mesh::{QuadratureRule, StructuredMesh};

/// A box face, named by axis and side: `"x-"` is `x = 0`, `"x+"` is `x = L_x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Face {
    #[serde(rename = "x-")]
    XMin,
    #[serde(rename = "x+")]
    XMax,
    #[serde(rename = "y-")]
    YMin,
    #[serde(rename = "y+")]
    YMax,
    #[serde(rename = "z-")]
    ZMin,
    #[serde(rename = "z+")]
    ZMax,
}

impl Face {
    pub fn axis(self) -> usize {
        match self {
            Face::XMin | Face::XMax => 0,
            Face::YMin | Face::YMax => 1,
            Face::ZMin | Face::ZMax => 2,
        }
    }

    pub fn upper(self) -> bool {
        matches!(self, Face::XMax | Face::YMax | Face::ZMax)
    }
}

/// Prescribed value of one component on one face: a constant, or an entry of
/// a per-sample boundary tuple (BC→solution operator).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BcValue {
    Value(f64),
    Sample { sample: usize },
}

/// Per-component values on a face; `None` leaves the component free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceBc {
    pub face: Face,
    pub values: Vec<Option<BcValue>>,
}

/// Dirichlet data as a list of face rows. Rows are applied in order, so on
/// shared edges and corners a later row overrides an earlier one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BcTable {
    pub faces: Vec<FaceBc>,
}

impl BcTable {
    /// Left face clamped, right face pulled to `u_x = stretch` with `u_y = 0`.
    pub fn uniaxial_2d(stretch: f64) -> Self {
        let v = |x: f64| Some(BcValue::Value(x));
        Self {
            faces: vec![
                FaceBc { face: Face::XMin, values: vec![v(0.0), v(0.0)] },
                FaceBc { face: Face::XMax, values: vec![v(stretch), v(0.0)] },
            ],
        }
    }

    /// Same layout in 3D with the transverse components held at zero.
    pub fn uniaxial_3d(stretch: f64) -> Self {
        let v = |x: f64| Some(BcValue::Value(x));
        Self {
            faces: vec![
                FaceBc { face: Face::XMin, values: vec![v(0.0), v(0.0), v(0.0)] },
                FaceBc { face: Face::XMax, values: vec![v(stretch), v(0.0), v(0.0)] },
            ],
        }
    }

    /// Thermomechanical table: `T = 0` at `x = 0`, `T = 1` at `x = L_x`;
    /// each displacement component fixed to zero on the two faces normal to
    /// it; everything else free. Component order `(u_x, u_y[, u_z], T)`.
    pub fn thermomech(dim: usize) -> Self {
        let mut faces = Vec::new();
        let faces_of = [(Face::XMin, Face::XMax), (Face::YMin, Face::YMax), (Face::ZMin, Face::ZMax)];
        for (axis, &(lo, hi)) in faces_of.iter().enumerate().take(dim) {
            for (face, t) in [(lo, 0.0), (hi, 1.0)] {
                let mut values = vec![None; dim + 1];
                values[axis] = Some(BcValue::Value(0.0));
                if axis == 0 {
                    values[dim] = Some(BcValue::Value(t));
                }
                faces.push(FaceBc { face, values });
            }
        }
        Self { faces }
    }

    /// Conduction table: `T = 0` at `x = 0` and `T = 1` at `x = L_x`.
    pub fn thermal() -> Self {
        Self {
            faces: vec![
                FaceBc { face: Face::XMin, values: vec![Some(BcValue::Value(0.0))] },
                FaceBc { face: Face::XMax, values: vec![Some(BcValue::Value(1.0))] },
            ],
        }
    }

    /// Number of entries a boundary sample tuple must provide.
    pub fn n_sample_values(&self) -> usize {
        self.faces
            .iter()
            .flat_map(|f| f.values.iter())
            .filter_map(|v| match v {
                Some(BcValue::Sample { sample }) => Some(sample + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn build(&self, mesh: &StructuredMesh, dofs_per_node: usize, sample: &[f64]) -> Result<DirichletSet> {
        let mut d = DirichletSet::new(mesh.n_nodes() * dofs_per_node);
        for row in &self.faces {
            if row.face.axis() >= mesh.dim() {
                return Err(Error::Config(format!("face {:?} does not exist in {}D", row.face, mesh.dim())));
            }
            if row.values.len() != dofs_per_node {
                return Err(Error::Config(format!(
                    "face {:?} lists {} components, expected {dofs_per_node}",
                    row.face,
                    row.values.len()
                )));
            }
            for node in mesh.face_nodes(row.face.axis(), row.face.upper()) {
                for (k, v) in row.values.iter().enumerate() {
                    let value = match v {
                        None => continue,
                        Some(BcValue::Value(x)) => *x,
                        Some(BcValue::Sample { sample: i }) => *sample.get(*i).ok_or_else(|| {
                            Error::Config(format!("boundary sample has {} values, entry {i} requested", sample.len()))
                        })?,
                    };
                    d.set(node * dofs_per_node + k, value);
                }
            }
        }
        Ok(d)
    }
}

/// Nodal values of a scalar phase field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseField {
    pub values: Vec<f64>,
}

impl PhaseField {
    pub fn uniform(mesh: &StructuredMesh, phi: f64) -> Self {
        Self { values: vec![phi; mesh.n_nodes()] }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Interpolates the nodal values to every quadrature point of every
    /// element (element-major).
    pub fn at_points(&self, mesh: &StructuredMesh, rule: &QuadratureRule) -> Result<Vec<f64>> {
        if self.values.len() != mesh.n_nodes() {
            return Err(Error::Shape(format!("phase field has {} values for {} nodes", self.values.len(), mesh.n_nodes())));
        }
        let shapes: Vec<_> = rule.points().iter().map(|xi| crate::mesh::shape_functions(mesh.dim(), xi).0).collect();
        let mut out = Vec::with_capacity(mesh.n_elements() * rule.len());
        for e in 0..mesh.n_elements() {
            let conn = mesh.element(e);
            for n in &shapes {
                out.push(conn.iter().enumerate().map(|(a, &node)| n[a] * self.values[node]).sum());
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Hyperelastic2d,
    Hyperelastic3d,
    /// Thermomechanics in the dimension of the mesh.
    Thermomech,
    /// Nonlinear conduction alone, with `k = k₀ (1 + b T^c)` from `thermo`.
    Thermal,
}

/// Everything needed to turn a mesh, a phase field and a boundary tuple into
/// an [`FeProblem`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    #[serde(default)]
    pub mapping: PhaseMapping,
    #[serde(default)]
    pub thermo: ThermoMechParams,
    pub bcs: BcTable,
    /// Gauss points per axis.
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
}

fn default_order() -> usize {
    2
}

impl ProblemSpec {
    pub fn physics(&self) -> Physics {
        match self.kind {
            ProblemKind::Hyperelastic2d | ProblemKind::Hyperelastic3d => Physics::Hyperelastic,
            ProblemKind::Thermomech => Physics::ThermoMech(self.thermo),
            ProblemKind::Thermal => Physics::Thermal { b: self.thermo.b, c: self.thermo.c },
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match (self.kind, dim) {
            (ProblemKind::Hyperelastic2d, 2) | (ProblemKind::Hyperelastic3d, 3) | (ProblemKind::Thermomech | ProblemKind::Thermal, 2 | 3) => Ok(()),
            (k, d) => Err(Error::Config(format!("problem kind {k:?} cannot run on a {d}D mesh"))),
        }
    }

    /// Hyperelastic points carry `(μ, κ)` from the phase mapping;
    /// thermomechanical points carry `(E₀, k₀) = (φ, φ)`.
    pub fn point_props(&self, mesh: &StructuredMesh, rule: &QuadratureRule, phase: &PhaseField) -> Result<Vec<PointProps>> {
        let phi = phase.at_points(mesh, rule)?;
        match self.physics() {
            Physics::Hyperelastic => {
                phi.iter().map(|&p| self.mapping.moduli(p).map(|(mu, kappa)| [mu, kappa])).collect()
            }
            _ => {
                if let Some(bad) = phi.iter().find(|&&p| !(p > 0.0)) {
                    return Err(Error::Domain(format!("non-positive phase value {bad} used as modulus")));
                }
                Ok(phi.iter().map(|&p| [p, p]).collect())
            }
        }
    }

    pub fn build(&self, mesh: &StructuredMesh, phase: &PhaseField, bc_sample: &[f64]) -> Result<FeProblem> {
        self.check_dim(mesh.dim())?;
        let rule = QuadratureRule::gauss_legendre(mesh.dim(), self.quadrature_order)?;
        let props = self.point_props(mesh, &rule, phase)?;
        let physics = self.physics();
        let dirichlet = self.bcs.build(mesh, physics.dofs_per_node(mesh.dim()), bc_sample)?;
        FeProblem::new(mesh.clone(), rule, physics, props, dirichlet)
    }

    /// One problem per phase field, all sharing geometry and sparsity.
    pub fn build_many(&self, mesh: &StructuredMesh, phases: &[PhaseField], bc_sample: &[f64]) -> Result<Vec<FeProblem>> {
        let Some(first) = phases.first() else {
            return Ok(Vec::new());
        };
        let base = self.build(mesh, first, bc_sample)?;
        let mut out = Vec::with_capacity(phases.len());
        for phase in &phases[1..] {
            out.push(base.with_props(self.point_props(mesh, base.rule(), phase)?)?);
        }
        out.insert(0, base);
        Ok(out)
    }

    /// One problem per boundary tuple on a common phase field.
    pub fn build_for_bcs(&self, mesh: &StructuredMesh, phase: &PhaseField, bc_samples: &[Vec<f64>]) -> Result<Vec<FeProblem>> {
        let Some(first) = bc_samples.first() else {
            return Ok(Vec::new());
        };
        let base = self.build(mesh, phase, first)?;
        let dpn = base.dofs_per_node();
        let mut out = vec![base.clone()];
        for s in &bc_samples[1..] {
            out.push(base.clone().with_dirichlet(self.bcs.build(mesh, dpn, s)?)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_box_mesh;

    #[test]
    fn thermomech_table_layout() {
        let mesh = build_box_mesh(3, &[1.0; 3], &[3, 3, 3]).unwrap();
        let d = BcTable::thermomech(3).build(&mesh, 4, &[]).unwrap();
        for (a, x) in mesh.coords().iter().enumerate() {
            let t = 4 * a + 3;
            if x[0] == 0.0 || x[0] == 1.0 {
                assert!(d.mask[t]);
                assert_eq!(d.values[t], x[0]);
            } else {
                assert!(!d.mask[t]);
            }
            for k in 0..3 {
                assert_eq!(d.mask[4 * a + k], x[k] == 0.0 || x[k] == 1.0);
                assert_eq!(d.values[4 * a + k], 0.0);
            }
        }
    }

    #[test]
    fn sample_values_and_override_order() {
        let mesh = build_box_mesh(2, &[1.0, 1.0], &[3, 3]).unwrap();
        let table = BcTable {
            faces: vec![
                FaceBc { face: Face::XMin, values: vec![Some(BcValue::Value(1.0)), None] },
                FaceBc { face: Face::YMin, values: vec![Some(BcValue::Sample { sample: 1 }), None] },
            ],
        };
        assert_eq!(table.n_sample_values(), 2);
        assert!(table.build(&mesh, 2, &[0.0]).is_err());
        let d = table.build(&mesh, 2, &[0.0, 0.25]).unwrap();
        // corner (0, 0) belongs to both rows; the later one wins
        assert_eq!(d.values[0], 0.25);
        assert_eq!(d.values[2 * 3], 1.0);
        assert!(!d.mask[1]);
    }

    #[test]
    fn bc_table_json_round_trip() {
        let t = BcTable::thermomech(2);
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"x-\""));
        assert_eq!(serde_json::from_str::<BcTable>(&s).unwrap(), t);
    }

    #[test]
    fn phase_interpolation_reproduces_affine_field() {
        let mesh = build_box_mesh(2, &[2.0, 1.0], &[5, 4]).unwrap();
        let rule = QuadratureRule::default_for(2).unwrap();
        let field = PhaseField { values: mesh.coords().iter().map(|x| 0.3 + 0.1 * x[0] - 0.2 * x[1]).collect() };
        let at = field.at_points(&mesh, &rule).unwrap();
        for e in 0..mesh.n_elements() {
            let geom = mesh.element_geometry(e, &rule).unwrap();
            for (k, gp) in geom.points.iter().enumerate() {
                let x: [f64; 2] = std::array::from_fn(|d| mesh.element(e).iter().enumerate().map(|(a, &n)| gp.n[a] * mesh.node(n)[d]).sum());
                assert!((at[e * 4 + k] - (0.3 + 0.1 * x[0] - 0.2 * x[1])).abs() < 1e-14);
            }
        }
    }
}
