//! Global residual and tangent assembly with Dirichlet elimination.

pub mod element;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::ThermoMechParams;
use crate::mesh::{ElementGeometry, QuadratureRule, StructuredMesh};
use crate::sparse::CsrMatrix;
use element::{LocalMat, LocalVec, PointProps, MAX_LOCAL};

/// Which field equations an [`FeProblem`] carries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Physics {
    /// Finite-strain neo-Hookean solid; point data `(μ, κ)`.
    Hyperelastic,
    /// Nonlinear steady conduction `k = k₀ (1 + b T^c)`; point data `(_, k₀)`.
    Thermal { b: f64, c: f64 },
    /// Conduction plus small-strain thermoelasticity; point data `(E₀, k₀)`.
    ThermoMech(ThermoMechParams),
}

impl Physics {
    pub fn dofs_per_node(&self, dim: usize) -> usize {
        match self {
            Physics::Hyperelastic => dim,
            Physics::Thermal { .. } => 1,
            Physics::ThermoMech(_) => dim + 1,
        }
    }

    pub fn component_names(&self, dim: usize) -> Vec<&'static str> {
        let u = &["ux", "uy", "uz"][..dim];
        match self {
            Physics::Hyperelastic => u.to_vec(),
            Physics::Thermal { .. } => vec!["T"],
            Physics::ThermoMech(_) => u.iter().copied().chain(["T"]).collect(),
        }
    }
}

/// Prescribed DOFs at full load.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DirichletSet {
    pub mask: Vec<bool>,
    pub values: Vec<f64>,
}

impl DirichletSet {
    pub fn new(n_dofs: usize) -> Self {
        Self { mask: vec![false; n_dofs], values: vec![0.0; n_dofs] }
    }

    pub fn set(&mut self, dof: usize, value: f64) {
        self.mask[dof] = true;
        self.values[dof] = value;
    }

    pub fn n_fixed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Overwrites prescribed entries of `u` with `load_scale · ū`.
    pub fn apply(&self, u: &mut [f64], load_scale: f64) {
        for ((ui, &m), &v) in u.iter_mut().zip(&self.mask).zip(&self.values) {
            if m {
                *ui = load_scale * v;
            }
        }
    }
}

/// Global unknowns together with their Dirichlet data and current load scale.
#[derive(Clone, Debug, PartialEq)]
pub struct DofState {
    pub u: Vec<f64>,
    pub dirichlet_mask: Vec<bool>,
    pub dirichlet_values: Vec<f64>,
    pub load_scale: f64,
}

impl DofState {
    pub fn new(u: Vec<f64>, dirichlet: &DirichletSet, load_scale: f64) -> Result<Self> {
        if u.len() != dirichlet.mask.len() {
            return Err(Error::Shape(format!("state has {} entries, expected {}", u.len(), dirichlet.mask.len())));
        }
        Ok(Self { u, dirichlet_mask: dirichlet.mask.clone(), dirichlet_values: dirichlet.values.clone(), load_scale })
    }

    /// Sets prescribed DOFs to `load_scale · ū`. Idempotent.
    pub fn enforce_dirichlet(&mut self) {
        for i in 0..self.u.len() {
            if self.dirichlet_mask[i] {
                self.u[i] = self.load_scale * self.dirichlet_values[i];
            }
        }
    }

    pub fn satisfies_dirichlet(&self) -> bool {
        (0..self.u.len()).all(|i| !self.dirichlet_mask[i] || self.u[i] == self.load_scale * self.dirichlet_values[i])
    }
}

/// A discretized boundary value problem on a structured mesh.
#[derive(Clone, Debug)]
pub struct FeProblem {
    mesh: StructuredMesh,
    rule: QuadratureRule,
    geometry: Arc<Vec<ElementGeometry>>,
    physics: Physics,
    props: Vec<PointProps>,
    dirichlet: DirichletSet,
    external: Vec<f64>,
    body_force: [f64; 3],
    heat_source: f64,
    pattern: Arc<CsrMatrix>,
}

/// Flags controlling one assembly pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AssemblyOptions {
    pub tangent: bool,
    /// Evaluate the continued neo-Hookean law at folded or strongly
    /// compressed points instead of failing (training mode).
    pub guard: bool,
    /// Skip Dirichlet treatment: raw `A[r_e]` and `A[K_e]`.
    pub raw: bool,
}

#[derive(Clone, Debug)]
pub struct AssemblyOutput {
    pub residual: Vec<f64>,
    pub tangent: Option<CsrMatrix>,
    pub inverted_points: usize,
}

impl FeProblem {
    /// `props` holds one entry per element per quadrature point.
    pub fn new(
        mesh: StructuredMesh,
        rule: QuadratureRule,
        physics: Physics,
        props: Vec<PointProps>,
        dirichlet: DirichletSet,
    ) -> Result<Self> {
        if let Physics::ThermoMech(p) = &physics {
            p.validate()?;
        }
        let dpn = physics.dofs_per_node(mesh.dim());
        let n_dofs = mesh.n_nodes() * dpn;
        if dirichlet.mask.len() != n_dofs || dirichlet.values.len() != n_dofs {
            return Err(Error::Shape(format!("Dirichlet data sized {} for {n_dofs} DOFs", dirichlet.mask.len())));
        }
        if props.len() != mesh.n_elements() * rule.len() {
            return Err(Error::Shape(format!(
                "{} point properties for {} elements × {} points",
                props.len(),
                mesh.n_elements(),
                rule.len()
            )));
        }
        let geometry = (0..mesh.n_elements()).map(|e| mesh.element_geometry(e, &rule)).collect::<Result<Vec<_>>>()?;
        let mut rows = vec![Vec::new(); n_dofs];
        for e in 0..mesh.n_elements() {
            let conn = mesh.element(e);
            for &a in conn {
                for ka in 0..dpn {
                    let row = &mut rows[a * dpn + ka];
                    for &b in conn {
                        row.extend((0..dpn).map(|kb| b * dpn + kb));
                    }
                }
            }
        }
        let pattern = Arc::new(CsrMatrix::from_pattern(n_dofs, rows)?);
        Ok(Self {
            mesh,
            rule,
            geometry: Arc::new(geometry),
            physics,
            props,
            dirichlet,
            external: vec![0.0; n_dofs],
            body_force: [0.0; 3],
            heat_source: 0.0,
            pattern,
        })
    }

    pub fn with_body_force(mut self, f: [f64; 3]) -> Self {
        self.body_force = f;
        self
    }

    pub fn with_heat_source(mut self, q: f64) -> Self {
        self.heat_source = q;
        self
    }

    /// Nodal external loads at full load scale (Neumann data lumped to nodes).
    pub fn with_external_loads(mut self, f: Vec<f64>) -> Result<Self> {
        if f.len() != self.n_dofs() {
            return Err(Error::Shape("external load vector size".into()));
        }
        self.external = f;
        Ok(self)
    }

    /// Same mesh and Dirichlet data with new point properties; geometry and
    /// sparsity are shared, not recomputed.
    pub fn with_props(&self, props: Vec<PointProps>) -> Result<Self> {
        if props.len() != self.props.len() {
            return Err(Error::Shape(format!("{} point properties, expected {}", props.len(), self.props.len())));
        }
        Ok(Self { props, ..self.clone() })
    }

    pub fn with_dirichlet(mut self, dirichlet: DirichletSet) -> Result<Self> {
        if dirichlet.mask.len() != self.n_dofs() || dirichlet.values.len() != self.n_dofs() {
            return Err(Error::Shape("Dirichlet data size".into()));
        }
        self.dirichlet = dirichlet;
        Ok(self)
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn physics(&self) -> &Physics {
        &self.physics
    }

    pub fn props(&self) -> &[PointProps] {
        &self.props
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    pub fn dirichlet(&self) -> &DirichletSet {
        &self.dirichlet
    }

    pub fn dofs_per_node(&self) -> usize {
        self.physics.dofs_per_node(self.mesh.dim())
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_nodes() * self.dofs_per_node()
    }

    /// Zero-valued state at `load_scale` with Dirichlet values applied.
    pub fn zero_state(&self, load_scale: f64) -> DofState {
        let mut s = DofState::new(vec![0.0; self.n_dofs()], &self.dirichlet, load_scale).expect("sized by problem");
        s.enforce_dirichlet();
        s
    }

    pub fn state(&self, u: Vec<f64>, load_scale: f64) -> Result<DofState> {
        DofState::new(u, &self.dirichlet, load_scale)
    }

    fn element_dofs(&self, e: usize) -> ([usize; MAX_LOCAL], usize) {
        let dpn = self.dofs_per_node();
        let mut dofs = [0usize; MAX_LOCAL];
        let conn = self.mesh.element(e);
        for (a, &node) in conn.iter().enumerate() {
            for k in 0..dpn {
                dofs[a * dpn + k] = node * dpn + k;
            }
        }
        (dofs, conn.len() * dpn)
    }

    /// Local residual (and tangent) of element `e` at global state `u`.
    pub fn element_contribution(
        &self,
        e: usize,
        u: &[f64],
        opts: AssemblyOptions,
    ) -> Result<(LocalVec, Option<Box<LocalMat>>, usize)> {
        let (dofs, n) = self.element_dofs(e);
        let mut local = [0.0; MAX_LOCAL];
        for i in 0..n {
            local[i] = u[dofs[i]];
        }
        let geom = &self.geometry[e];
        let nq = self.rule.len();
        let props = &self.props[e * nq..(e + 1) * nq];
        let mut kmat = if opts.tangent { Some(Box::new([[0.0; MAX_LOCAL]; MAX_LOCAL])) } else { None };
        let mut inverted = 0;
        let r = match &self.physics {
            Physics::Hyperelastic => {
                let (r, flags) =
                    element::hyperelastic(geom, &local[..n], props, &self.body_force, opts.guard, kmat.as_deref_mut())?;
                inverted = flags.inverted_points;
                r
            }
            Physics::Thermal { b, c } => {
                let mut r = [0.0; MAX_LOCAL];
                element::thermal(geom, &local, 1, 0, props, *b, *c, self.heat_source, &mut r, kmat.as_deref_mut())?;
                r
            }
            Physics::ThermoMech(p) => {
                let dim = self.mesh.dim();
                let mut r = [0.0; MAX_LOCAL];
                element::thermal(geom, &local, dim + 1, dim, props, p.b, p.c, self.heat_source, &mut r, kmat.as_deref_mut())?;
                element::thermoelastic(
                    geom,
                    &local,
                    dim + 1,
                    Some(dim),
                    props,
                    p,
                    &self.body_force,
                    &mut r,
                    kmat.as_deref_mut(),
                )?;
                r
            }
        };
        Ok((r, kmat, inverted))
    }

    /// `r = A[r_e] − s f_ext`, and `K = A[K_e]` when requested.
    ///
    /// Unless `opts.raw`, Dirichlet rows become `r_i = U_i − s ū_i` and the
    /// corresponding rows and columns of `K` are replaced by the identity.
    /// Column elimination is exact when the state already satisfies the
    /// prescribed values, which the Newton driver guarantees.
    ///
    /// Element contributions are computed in parallel and reduced in element
    /// order, so the result does not depend on the thread count.
    pub fn assemble(&self, state: &DofState, opts: AssemblyOptions) -> Result<AssemblyOutput> {
        let u = &state.u;
        if u.len() != self.n_dofs() {
            return Err(Error::Shape(format!("state has {} DOFs, problem has {}", u.len(), self.n_dofs())));
        }
        let contributions: Vec<Result<_>> =
            (0..self.mesh.n_elements()).into_par_iter().map(|e| self.element_contribution(e, u, opts)).collect();
        let mut r: Vec<f64> = self.external.iter().map(|f| -state.load_scale * f).collect();
        let mut k = if opts.tangent { Some(CsrMatrix::clone(&self.pattern)) } else { None };
        let mut inverted = 0;
        for (e, c) in contributions.into_iter().enumerate() {
            let (re, ke, inv) = c?;
            inverted += inv;
            let (dofs, n) = self.element_dofs(e);
            for i in 0..n {
                r[dofs[i]] += re[i];
            }
            if let (Some(kg), Some(ke)) = (k.as_mut(), ke) {
                for i in 0..n {
                    for j in 0..n {
                        let v = ke[i][j];
                        if v != 0.0 {
                            kg.add(dofs[i], dofs[j], v);
                        }
                    }
                }
            }
        }
        if !opts.raw {
            for i in 0..r.len() {
                if self.dirichlet.mask[i] {
                    r[i] = u[i] - state.load_scale * self.dirichlet.values[i];
                }
            }
            if let Some(kg) = k.as_mut() {
                kg.apply_dirichlet(&self.dirichlet.mask);
            }
        }
        Ok(AssemblyOutput { residual: r, tangent: k, inverted_points: inverted })
    }

    pub fn residual(&self, state: &DofState) -> Result<Vec<f64>> {
        Ok(self.assemble(state, AssemblyOptions::default())?.residual)
    }

    pub fn residual_and_tangent(&self, state: &DofState) -> Result<(Vec<f64>, CsrMatrix)> {
        let out = self.assemble(state, AssemblyOptions { tangent: true, ..Default::default() })?;
        Ok((out.residual, out.tangent.expect("tangent requested")))
    }

    /// `‖r‖₂` over the free DOFs.
    pub fn free_norm(&self, r: &[f64]) -> f64 {
        r.iter().zip(&self.dirichlet.mask).filter(|(_, &m)| !m).map(|(v, _)| v * v).sum::<f64>().sqrt()
    }

    /// Splits an interleaved vector into per-component nodal fields.
    pub fn split_components(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let dpn = self.dofs_per_node();
        (0..dpn).map(|k| u.iter().skip(k).step_by(dpn).copied().collect()).collect()
    }

    /// Gauss-point stress (Cauchy for thermoelasticity, second Piola–Kirchhoff
    /// for hyperelasticity) or heat flux, averaged to nodes.
    pub fn nodal_flux(&self, u: &[f64]) -> Result<Vec<Vec<f64>>> {
        crate::postprocess::nodal_average(self, u)
    }
}
