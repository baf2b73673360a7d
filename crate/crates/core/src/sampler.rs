//! Fourier-based microstructure samples, phase-contrast remapping, and random
//! boundary tuples.
//!
//! A sample is `φ_f(X) = c + Σ D_m Π_d cos(2π f_{d,m} X_d / L_d)` over all
//! combinations of the non-zero frequencies per axis, projected to
//! `φ = (φ_max − φ_min) σ(β (φ_f − ½)) + φ_min`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;
use crate::problem::PhaseField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSpec {
    /// Frequency set per axis. A zero entry stands for the constant term and
    /// is skipped when forming products.
    pub frequencies: Vec<Vec<f64>>,
    pub beta: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    /// Coefficients `c` and `D_m` are drawn uniformly from this interval.
    #[serde(default = "default_coefficient_range")]
    pub coefficient_range: (f64, f64),
}

fn default_coefficient_range() -> (f64, f64) {
    (-1.0, 1.0)
}

impl FourierSpec {
    /// 2D training table: `f ∈ {0,1,2,3}` on both axes, `β = 20`, `PC = 1.0/0.1`.
    pub fn standard_2d() -> Self {
        Self {
            frequencies: vec![vec![0.0, 1.0, 2.0, 3.0]; 2],
            beta: 20.0,
            phi_min: 0.1,
            phi_max: 1.0,
            coefficient_range: default_coefficient_range(),
        }
    }

    /// The five 3D sets, each with `β = 10` and `PC = 1.0/0.3`.
    pub fn standard_3d() -> Vec<Self> {
        [vec![1.0, 2.0, 3.0], vec![1.0, 2.0], vec![1.0, 2.0, 4.0, 8.0], vec![2.0, 4.0, 6.0], vec![1.0, 3.0, 5.0, 7.0]]
            .into_iter()
            .map(|f| Self {
                frequencies: vec![f; 3],
                beta: 10.0,
                phi_min: 0.3,
                phi_max: 1.0,
                coefficient_range: default_coefficient_range(),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("β must be positive, got {}", self.beta)));
        }
        if !(self.phi_max > self.phi_min && self.phi_min > 0.0) {
            return Err(Error::Config(format!("need φ_max > φ_min > 0, got {} / {}", self.phi_max, self.phi_min)));
        }
        if !(2..=3).contains(&self.frequencies.len()) {
            return Err(Error::Config("frequency sets must be given for 2 or 3 axes".into()));
        }
        let (lo, hi) = self.coefficient_range;
        if !(hi > lo) {
            return Err(Error::Config("empty coefficient range".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.frequencies.len()
    }

    /// Frequency tuples of the product terms, first axis fastest.
    pub fn modes(&self) -> Vec<Vec<f64>> {
        let mut modes = vec![Vec::new()];
        for axis in &self.frequencies {
            let nonzero: Vec<f64> = axis.iter().copied().filter(|&f| f != 0.0).collect();
            modes = nonzero
                .iter()
                .flat_map(|&f| modes.iter().map(move |m| m.iter().copied().chain([f]).collect::<Vec<_>>()))
                .collect();
        }
        modes
    }

    /// Number of coefficients per sample: the constant plus one per mode.
    pub fn n_terms(&self) -> usize {
        1 + self.modes().len()
    }
}

/// Coefficients of one sample. Evaluating them on any mesh gives the same
/// continuous field, which is what resolution studies rely on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSample {
    pub id: u64,
    pub spec: FourierSpec,
    pub constant: f64,
    pub amplitudes: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl FourierSample {
    /// `φ_f` before projection at physical point `x`.
    pub fn raw(&self, x: &[f64; 3], extents: &[f64]) -> f64 {
        let modes = self.spec.modes();
        let mut v = self.constant;
        for (mode, &d) in modes.iter().zip(&self.amplitudes) {
            let mut prod = d;
            for (axis, &f) in mode.iter().enumerate() {
                prod *= (2.0 * std::f64::consts::PI * f * x[axis] / extents[axis]).cos();
            }
            v += prod;
        }
        v
    }

    pub fn value(&self, x: &[f64; 3], extents: &[f64]) -> f64 {
        let s = &self.spec;
        (s.phi_max - s.phi_min) * sigmoid(s.beta * (self.raw(x, extents) - 0.5)) + s.phi_min
    }

    pub fn field(&self, mesh: &StructuredMesh) -> Result<PhaseField> {
        if mesh.dim() != self.spec.dim() {
            return Err(Error::Shape(format!("{}D sample on a {}D mesh", self.spec.dim(), mesh.dim())));
        }
        let ext = mesh.extents();
        Ok(PhaseField { values: mesh.coords().iter().map(|x| self.value(x, ext)).collect() })
    }
}

/// Draws sample `id` of the stream identified by `seed`. Each sample has its
/// own ChaCha stream, so samples can be drawn independently and in parallel.
pub fn draw(spec: &FourierSpec, seed: u64, id: u64) -> FourierSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    let (lo, hi) = spec.coefficient_range;
    let constant = rng.gen_range(lo..hi);
    let amplitudes = (0..spec.modes().len()).map(|_| rng.gen_range(lo..hi)).collect();
    FourierSample { id, spec: spec.clone(), constant, amplitudes }
}

/// Samples `first_id .. first_id + n`.
pub fn generate(spec: &FourierSpec, n: usize, seed: u64, first_id: u64) -> Result<Vec<FourierSample>> {
    spec.validate()?;
    Ok((0..n as u64).into_par_iter().map(|k| draw(spec, seed, first_id + k)).collect())
}

/// Affine remap taking `[from.0, from.1]` onto `[1/pc, 1]`.
pub fn remap_phase_contrast(field: &PhaseField, from: (f64, f64), pc: f64) -> Result<PhaseField> {
    if !(pc > 1.0) {
        return Err(Error::Config(format!("phase contrast must exceed 1, got {pc}")));
    }
    let (lo, hi) = from;
    if !(hi > lo) {
        return Err(Error::Domain(format!("cannot remap a field with range [{lo}, {hi}]")));
    }
    let new_min = 1.0 / pc;
    let scale = (1.0 - new_min) / (hi - lo);
    let mut values: Vec<f64> = field.values.iter().map(|&v| new_min + (v - lo) * scale).collect();
    // pin the extremes so the ratio is exact
    for (v, &orig) in values.iter_mut().zip(&field.values) {
        if orig == hi {
            *v = 1.0;
        } else if orig == lo {
            *v = new_min;
        }
    }
    Ok(PhaseField { values })
}

/// [`remap_phase_contrast`] from the field's own extremes, so that the
/// result has `max / min = pc`.
pub fn remap_to_contrast(field: &PhaseField, pc: f64) -> Result<PhaseField> {
    remap_phase_contrast(field, (field.min(), field.max()), pc)
}

/// `n` tuples with one independent uniform draw per range.
pub fn generate_bc_samples(n: usize, ranges: &[(f64, f64)], seed: u64) -> Result<Vec<Vec<f64>>> {
    for &(lo, hi) in ranges {
        if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
            return Err(Error::Config(format!("invalid boundary range [{lo}, {hi}]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| ranges.iter().map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo }).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_box_mesh;
    use proptest::prelude::*;

    #[test]
    fn standard_2d_parameters() {
        let s = FourierSpec::standard_2d();
        assert_eq!(s.frequencies, vec![vec![0.0, 1.0, 2.0, 3.0]; 2]);
        assert_eq!(s.beta, 20.0);
        assert_eq!((s.phi_max, s.phi_min), (1.0, 0.1));
        assert_eq!(s.n_terms(), 10);
        let s3 = FourierSpec::standard_3d();
        assert_eq!(s3.len(), 5);
        assert_eq!(s3[2].frequencies[0], vec![1.0, 2.0, 4.0, 8.0]);
        assert!(s3.iter().all(|s| s.beta == 10.0 && s.phi_min == 0.3 && s.phi_max == 1.0));
        assert_eq!(s3[1].n_terms(), 9);
    }

    #[test]
    fn midpoint_constant_gives_mean_phase() {
        let mesh = build_box_mesh(2, &[1.0, 1.0], &[5, 5]).unwrap();
        let spec = FourierSpec::standard_2d();
        let sample = FourierSample { id: 0, constant: 0.5, amplitudes: vec![0.0; 9], spec };
        let f = sample.field(&mesh).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.55));
    }

    #[test]
    fn reproducible_and_bounded() {
        let mesh = build_box_mesh(2, &[1.0, 1.0], &[21, 21]).unwrap();
        let spec = FourierSpec::standard_2d();
        let a = generate(&spec, 5, 7, 0).unwrap();
        let b = generate(&spec, 5, 7, 0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_eq!(generate(&spec, 2, 7, 3).unwrap()[0], a[3]);
        for s in &a {
            let f = s.field(&mesh).unwrap();
            assert!(f.values.iter().all(|&v| v >= 0.1 && v <= 1.0));
        }
    }

    #[test]
    fn steep_projection_is_nearly_binary() {
        let mesh = build_box_mesh(2, &[1.0, 1.0], &[41, 41]).unwrap();
        let mut spec = FourierSpec::standard_2d();
        spec.beta = 1e6;
        for s in generate(&spec, 10, 3, 0).unwrap() {
            let f = s.field(&mesh).unwrap();
            let mid = f.values.iter().filter(|&&v| (v - 0.1).abs() > 1e-4 && (v - 1.0).abs() > 1e-4).count();
            assert!((mid as f64) < 0.05 * f.values.len() as f64);
        }
    }

    #[test]
    fn remap_examples() {
        let binary = PhaseField { values: vec![0.1, 1.0, 0.1, 1.0] };
        let r = remap_phase_contrast(&binary, (0.1, 1.0), 4.0).unwrap();
        assert_eq!(r.values, vec![0.25, 1.0, 0.25, 1.0]);
        let same = remap_phase_contrast(&binary, (0.1, 1.0), 10.0).unwrap();
        for (a, b) in same.values.iter().zip(&binary.values) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(remap_to_contrast(&binary, 1.0).is_err());
    }

    #[test]
    fn bc_samples() {
        assert!(generate_bc_samples(0, &[(0.0, 0.2)], 1).unwrap().is_empty());
        let s = generate_bc_samples(10_000, &[(0.0, 0.2)], 1).unwrap();
        let mean = s.iter().map(|v| v[0]).sum::<f64>() / s.len() as f64;
        assert!((mean - 0.1).abs() < 0.005);
        assert_eq!(s, generate_bc_samples(10_000, &[(0.0, 0.2)], 1).unwrap());
    }

    proptest! {
        #[test]
        fn cosine_fields_are_mirror_symmetric(seed in 0u64..1000) {
            let mesh = build_box_mesh(2, &[1.0, 1.0], &[13, 13]).unwrap();
            let s = draw(&FourierSpec::standard_2d(), seed, 0);
            let f = s.field(&mesh).unwrap();
            for (a, x) in mesh.coords().iter().enumerate() {
                let g = mesh.grid_index(a);
                let mx = mesh.node_index([12 - g[0], g[1], 0]);
                let my = mesh.node_index([g[0], 12 - g[1], 0]);
                let raw = s.raw(x, mesh.extents());
                prop_assert!((raw - s.raw(&mesh.node(mx), mesh.extents())).abs() < 1e-12);
                prop_assert!((raw - s.raw(&mesh.node(my), mesh.extents())).abs() < 1e-12);
                prop_assert!((f.values[a] - f.values[mx]).abs() < 1e-12);
            }
        }

        #[test]
        fn remap_hits_target_ratio(values in proptest::collection::vec(0.05f64..3.0, 2..50), pc in 1.01f64..100.0) {
            let field = PhaseField { values };
            prop_assume!(field.max() > field.min());
            let r = remap_to_contrast(&field, pc).unwrap();
            prop_assert!((r.max() / r.min() - pc).abs() < 1e-12 * pc);
            prop_assert_eq!(r.max(), 1.0);
        }
    }
}
