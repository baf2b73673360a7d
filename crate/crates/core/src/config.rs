//! Run configuration shared by the command-line tool and the test suites.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ifol::{EncodeConfig, TrainConfig};
use crate::linear::{LinearSolver, Preconditioner};
use crate::mesh::{MeshSpec, StructuredMesh};
use crate::neural_field::SirenConfig;
use crate::newton::NewtonConfig;
use crate::nin::{BenchCase, Control};
use crate::problem::{BcTable, ProblemKind, ProblemSpec};
use crate::sampler::{draw, generate_bc_samples, FourierSpec};

/// Test sample ids start here so they never collide with training ids.
pub const TEST_ID_OFFSET: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Fourier specs; sample `id` uses `fourier[id % len]`. Empty selects
    /// the boundary-value operator instead.
    #[serde(default)]
    pub fourier: Vec<FourierSpec>,
    /// Remap every phase field onto `[1/pc, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_contrast: Option<f64>,
    /// Ranges of the boundary tuple entries.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boundary_ranges: Vec<(f64, f64)>,
    /// Uniform phase value used with boundary sampling.
    #[serde(default = "one")]
    pub boundary_phi: f64,
    pub n_train: usize,
    pub n_test: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub mesh: MeshSpec,
    /// Resolutions used by inference and benchmarking; the training mesh if empty.
    #[serde(default)]
    pub eval_meshes: Vec<MeshSpec>,
    pub sampler: SamplerConfig,
    pub network: SirenConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Encoding used at inference; training's `K_e` and `α` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<EncodeConfig>,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub seed: u64,
}

pub const PRESETS: [&str; 2] = ["paper-2d-hyper", "paper-3d-thermomech-desk"];

fn uniform_mesh(dim: usize, n: usize) -> MeshSpec {
    MeshSpec { extents: vec![1.0; dim], nodes_per_axis: vec![n; dim] }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-2d-hyper" => Ok(Self::hyper_2d()),
            "paper-3d-thermomech-desk" => Ok(Self::thermomech_3d_desk()),
            _ => Err(Error::Config(format!("unknown preset {name:?}; available: {}", PRESETS.join(", ")))),
        }
    }

    /// 2D neo-Hookean property-to-solution operator on a 21×21 grid, desk
    /// scale: 200 training samples, 3×32 synthesizer, latent 64.
    pub fn hyper_2d() -> Self {
        Self {
            problem: ProblemSpec {
                kind: ProblemKind::Hyperelastic2d,
                mapping: Default::default(),
                thermo: Default::default(),
                bcs: BcTable::uniaxial_2d(0.2),
                quadrature_order: 2,
            },
            mesh: uniform_mesh(2, 21),
            eval_meshes: vec![uniform_mesh(2, 21), uniform_mesh(2, 41)],
            sampler: SamplerConfig {
                fourier: vec![FourierSpec::standard_2d()],
                phase_contrast: None,
                boundary_ranges: Vec::new(),
                boundary_phi: 1.0,
                n_train: 200,
                n_test: 20,
            },
            network: SirenConfig { input_dim: 2, output_dim: 2, hidden: vec![32, 32, 32], omega0: 30.0, latent_dim: 64 },
            train: TrainConfig { epochs: 2000, batch_size: 10, ..Default::default() },
            inference: None,
            newton: NewtonConfig::default(),
            paths: Paths::default(),
            seed: 1,
        }
    }

    /// 3D thermomechanics with the standard heated-face boundary layout on an 11³ grid.
    pub fn thermomech_3d_desk() -> Self {
        Self {
            problem: ProblemSpec {
                kind: ProblemKind::Thermomech,
                mapping: Default::default(),
                thermo: Default::default(),
                bcs: BcTable::thermomech(3),
                quadrature_order: 2,
            },
            mesh: uniform_mesh(3, 11),
            eval_meshes: vec![uniform_mesh(3, 11)],
            sampler: SamplerConfig {
                fourier: FourierSpec::standard_3d(),
                phase_contrast: None,
                boundary_ranges: Vec::new(),
                boundary_phi: 1.0,
                n_train: 40,
                n_test: 5,
            },
            network: SirenConfig { input_dim: 3, output_dim: 4, hidden: vec![32, 32, 32], omega0: 30.0, latent_dim: 64 },
            train: TrainConfig { epochs: 100, batch_size: 10, ..Default::default() },
            inference: None,
            newton: NewtonConfig {
                linear_solver: LinearSolver::Bicgstab { rel_tol: 1e-10, max_it: 2000, preconditioner: Preconditioner::Ilu0 },
                ..Default::default()
            },
            paths: Paths::default(),
            seed: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.mesh.dim();
        self.problem.check_dim(dim)?;
        for m in &self.eval_meshes {
            if m.dim() != dim {
                return Err(Error::Config("evaluation meshes must match the training dimension".into()));
            }
        }
        self.network.validate()?;
        let dpn = self.problem.physics().dofs_per_node(dim);
        if self.network.input_dim != dim || self.network.output_dim != dpn {
            return Err(Error::Config(format!(
                "network maps {}D to {} outputs; the problem needs {dim}D to {dpn}",
                self.network.input_dim, self.network.output_dim
            )));
        }
        self.train.validate()?;
        self.newton.validate()?;
        for f in &self.sampler.fourier {
            f.validate()?;
            if f.dim() != dim {
                return Err(Error::Config(format!("Fourier spec is {}D, mesh is {dim}D", f.dim())));
            }
        }
        let needed = self.problem.bcs.n_sample_values();
        if self.sampler.fourier.is_empty() && self.sampler.boundary_ranges.len() != needed {
            return Err(Error::Config(format!(
                "boundary sampling needs {needed} ranges, {} given",
                self.sampler.boundary_ranges.len()
            )));
        }
        Ok(())
    }

    pub fn training_mesh(&self) -> Result<StructuredMesh> {
        self.mesh.build()
    }

    pub fn evaluation_meshes(&self) -> Result<Vec<StructuredMesh>> {
        if self.eval_meshes.is_empty() {
            return Ok(vec![self.mesh.build()?]);
        }
        self.eval_meshes.iter().map(|m| m.build()).collect()
    }

    pub fn encoding(&self) -> EncodeConfig {
        self.inference.unwrap_or_else(|| self.train.encoding())
    }

    fn cases(&self, first_id: u64, n: usize, seed: u64) -> Result<Vec<BenchCase>> {
        let s = &self.sampler;
        if s.fourier.is_empty() {
            let values = generate_bc_samples(n, &s.boundary_ranges, seed ^ first_id)?;
            return Ok(values
                .into_iter()
                .enumerate()
                .map(|(k, values)| BenchCase {
                    id: first_id + k as u64,
                    control: Control::Boundary { values, phi: s.boundary_phi },
                })
                .collect());
        }
        Ok((0..n as u64)
            .map(|k| {
                let id = first_id + k;
                let spec = &s.fourier[(id % s.fourier.len() as u64) as usize];
                BenchCase { id, control: Control::Fourier { sample: draw(spec, seed, id), contrast: s.phase_contrast } }
            })
            .collect())
    }

    /// Training instances, ids `0..n_train`.
    pub fn training_cases(&self) -> Result<Vec<BenchCase>> {
        self.cases(0, self.sampler.n_train, self.seed)
    }

    /// Unseen instances, ids from [`TEST_ID_OFFSET`].
    pub fn test_cases(&self) -> Result<Vec<BenchCase>> {
        self.cases(TEST_ID_OFFSET, self.sampler.n_test, self.seed)
    }
}
