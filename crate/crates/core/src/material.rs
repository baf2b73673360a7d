//! Constitutive laws: compressible neo-Hookean hyperelasticity, isotropic
//! linear thermoelasticity, and temperature-dependent conductivity/stiffness.
//!
//! All tensors are 3×3. Plane problems embed the in-plane deformation
//! gradient with `F₃₃ = 1` (plane strain).

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voigt index pairs: 2D `(11, 22, 12)`, 3D `(11, 22, 33, 12, 23, 13)`.
pub const VOIGT_2D: [(usize, usize); 3] = [(0, 0), (1, 1), (0, 1)];
pub const VOIGT_3D: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)];

pub fn voigt_pairs(dim: usize) -> &'static [(usize, usize)] {
    if dim == 2 {
        &VOIGT_2D
    } else {
        &VOIGT_3D
    }
}

pub fn voigt_len(dim: usize) -> usize {
    voigt_pairs(dim).len()
}

/// Symmetric tensor to Voigt vector (stress-like, no shear factor).
pub fn to_voigt(t: &Matrix3<f64>, dim: usize) -> [f64; 6] {
    let mut v = [0.0; 6];
    for (a, &(i, j)) in voigt_pairs(dim).iter().enumerate() {
        v[a] = t[(i, j)];
    }
    v
}

/// Below this `J = det F` the guarded law continues `−ln J` and `J^{-2/3}`
/// by their quadratic Taylor expansions about `GUARD_J`. The continued energy
/// is C² across the switch, finite for folded states and still decreasing in
/// `J`, so gradients stay bounded and always push toward `J > 0`.
pub const GUARD_J: f64 = 0.25;

/// `1/J` floor inside the guarded branch; the stress is singular in `C` at
/// `J = 0` even though `P = F S` is not.
const J_FLOOR: f64 = 1e-9;

/// `(g, g′, g″)` for `g = J^{-2/3}` and `(h, h′, h″)` for `h = −ln J`,
/// continued below [`GUARD_J`].
fn barrier(j: f64) -> ([f64; 3], [f64; 3]) {
    let exact = |j: f64| {
        let p = j.powf(-2.0 / 3.0);
        ([p, -2.0 / 3.0 * p / j, 10.0 / 9.0 * p / (j * j)], [-j.ln(), -1.0 / j, 1.0 / (j * j)])
    };
    if j >= GUARD_J {
        return exact(j);
    }
    let ([g0, g1, g2], [h0, h1, h2]) = exact(GUARD_J);
    let d = j - GUARD_J;
    ([g0 + g1 * d + 0.5 * g2 * d * d, g1 + g2 * d, g2], [h0 + h1 * d + 0.5 * h2 * d * d, h1 + h2 * d, h2])
}

/// `F = I + ∇u`. In 2D only the upper-left 2×2 block of `grad_u` is used.
pub fn deformation_gradient(grad_u: &Matrix3<f64>, dim: usize) -> Result<Matrix3<f64>> {
    let mut f = Matrix3::<f64>::identity();
    for i in 0..dim {
        for j in 0..dim {
            f[(i, j)] += grad_u[(i, j)];
        }
    }
    if !f.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("non-finite displacement gradient".into()));
    }
    let det = f.determinant();
    if det <= 0.0 {
        return Err(Error::SingularDeformation(det));
    }
    Ok(f)
}

/// Kinematic quantities derived from a deformation gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct NeoHookeanState {
    pub f: Matrix3<f64>,
    pub j: f64,
    pub c: Matrix3<f64>,
    pub i1: f64,
    pub i1_bar: f64,
    pub mu: f64,
    pub kappa: f64,
}

impl NeoHookeanState {
    pub fn new(f: Matrix3<f64>, mu: f64, kappa: f64) -> Result<Self> {
        let j = f.determinant();
        if !(j > 0.0) {
            return Err(Error::SingularDeformation(j));
        }
        let c = f.transpose() * f;
        let i1 = c.trace();
        Ok(Self { f, j, c, i1, i1_bar: j.powf(-2.0 / 3.0) * i1, mu, kappa })
    }

    /// `W = μ/2 (Ī₁ − 3) + κ/4 (J² − 1 − 2 ln J)`.
    pub fn energy(&self) -> f64 {
        0.5 * self.mu * (self.i1_bar - 3.0) + 0.25 * self.kappa * (self.j * self.j - 1.0 - 2.0 * self.j.ln())
    }

    /// `P = ∂W/∂F = μ J^{-2/3} (F − I₁/3 F^{-T}) + κ/2 (J² − 1) F^{-T}`.
    pub fn first_pk(&self) -> Result<Matrix3<f64>> {
        let f_inv_t = self.f.try_inverse().ok_or(Error::SingularDeformation(self.j))?.transpose();
        let p_iso = self.mu * self.j.powf(-2.0 / 3.0) * (self.f - self.i1 / 3.0 * f_inv_t);
        let p_vol = 0.5 * self.kappa * (self.j * self.j - 1.0) * f_inv_t;
        Ok(p_iso + p_vol)
    }

    /// `S = F⁻¹ P`.
    pub fn second_pk(&self) -> Result<Matrix3<f64>> {
        let f_inv = self.f.try_inverse().ok_or(Error::SingularDeformation(self.j))?;
        Ok(f_inv * self.first_pk()?)
    }

    pub fn second_pk_voigt(&self, dim: usize) -> Result<[f64; 6]> {
        Ok(to_voigt(&self.second_pk()?, dim))
    }

    /// `∂Ŝ/∂Ê` in Voigt form (engineering shear strains).
    pub fn material_tangent(&self, dim: usize) -> Result<[[f64; 6]; 6]> {
        NeoHookean::new(self.mu, self.kappa).tangent_from_c(&self.c, dim, None)
    }
}

struct Coefficients {
    det: f64,
    s_iso: f64,
    s_ci: f64,
    a1: f64,
    a2: f64,
    a3: f64,
}

fn adjugate(c: &Matrix3<f64>) -> Matrix3<f64> {
    let m = |i: usize, j: usize| c[(i, j)];
    let mut a = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            a[(i, j)] = m(r0, c0) * m(r1, c1) - m(r0, c1) * m(r1, c0);
        }
    }
    a
}

/// Compressible neo-Hookean law evaluated directly on the right Cauchy–Green
/// tensor. This is the hot path used by assembly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeoHookean {
    pub mu: f64,
    pub kappa: f64,
}

impl NeoHookean {
    pub fn new(mu: f64, kappa: f64) -> Self {
        Self { mu, kappa }
    }

    fn det_c(c: &Matrix3<f64>) -> Result<f64> {
        let d = c.determinant();
        if d > 0.0 {
            Ok(d)
        } else {
            Err(Error::SingularDeformation(d.max(0.0).sqrt()))
        }
    }

    fn c_inverse(c: &Matrix3<f64>, det: f64) -> Result<Matrix3<f64>> {
        c.try_inverse().ok_or(Error::SingularDeformation(det.max(0.0).sqrt()))
    }

    /// Coefficients of `S = s_i I + s_c C⁻¹` and of the tangent (see
    /// [`Self::tangent_from_c`]).
    fn coefficients(&self, c: &Matrix3<f64>) -> Result<Coefficients> {
        let det = Self::det_c(c)?;
        let i1 = c.trace();
        let m = self.mu * det.powf(-1.0 / 3.0);
        Ok(Coefficients {
            det,
            s_iso: m,
            s_ci: -m * (i1 / 3.0) + 0.5 * self.kappa * (det - 1.0),
            a1: -2.0 / 3.0 * m,
            a2: 2.0 / 9.0 * m * i1 + self.kappa * det,
            a3: 2.0 / 3.0 * m * i1 - self.kappa * (det - 1.0),
        })
    }

    /// Guarded branch: `S = μ g(J) I + q adj(C)` with
    /// `q = [μ/2 I₁ g′ + κ/2 (J + h′)] / J`, using `∂J/∂C = adj(C) / 2J`.
    /// Returns `(μ g, q, q_J, μ g′/J)`.
    fn guarded_terms(&self, c: &Matrix3<f64>, j: f64) -> (f64, f64, f64, f64) {
        let j = if j.abs() < J_FLOOR { J_FLOOR.copysign(j) } else { j };
        let i1 = c.trace();
        let ([g0, g1, g2], [_, h1, h2]) = barrier(j);
        let q = (0.5 * self.mu * i1 * g1 + 0.5 * self.kappa * (j + h1)) / j;
        let q_j = (0.5 * self.mu * i1 * g2 + 0.5 * self.kappa * (1.0 + h2) - q) / j;
        (self.mu * g0, q, q_j, self.mu * g1 / j)
    }

    /// `S = 2 ∂W/∂C = μ J^{-2/3} (I − I₁/3 C⁻¹) + κ/2 (J² − 1) C⁻¹`.
    ///
    /// `guard` carries the signed `J = det F`; below [`GUARD_J`] the
    /// continued law applies (see [`Self::energy_guarded`]). Without it a
    /// non-positive `det C` is an error.
    pub fn stress_from_c(&self, c: &Matrix3<f64>, guard: Option<f64>) -> Result<Matrix3<f64>> {
        if let Some(j) = guard.filter(|&j| j < GUARD_J) {
            let (s_iso, q, _, _) = self.guarded_terms(c, j);
            return Ok(Matrix3::identity() * s_iso + adjugate(c) * q);
        }
        let k = self.coefficients(c)?;
        Ok(Matrix3::identity() * k.s_iso + Self::c_inverse(c, k.det)? * k.s_ci)
    }

    /// Energy density as a function of `C`, with `J = sqrt(det C)`.
    pub fn energy_from_c(&self, c: &Matrix3<f64>) -> Result<f64> {
        let det = Self::det_c(c)?;
        let j = det.sqrt();
        let i1_bar = det.powf(-1.0 / 3.0) * c.trace();
        Ok(0.5 * self.mu * (i1_bar - 3.0) + 0.25 * self.kappa * (det - 1.0 - 2.0 * j.ln()))
    }

    /// Guarded energy density for a deformation gradient of any sign:
    /// `W = μ/2 (g(J) I₁ − 3) + κ/4 (J² − 1 + 2 h(J))` with `g = J^{-2/3}`
    /// and `h = −ln J` above [`GUARD_J`] and their quadratic continuations
    /// below it.
    pub fn energy_guarded(&self, f: &Matrix3<f64>) -> f64 {
        let j = f.determinant();
        let i1 = (f.transpose() * f).trace();
        let ([g, ..], [h, ..]) = barrier(j);
        0.5 * self.mu * (g * i1 - 3.0) + 0.25 * self.kappa * (j * j - 1.0 + 2.0 * h)
    }

    /// Voigt form of `ℂ = 2 ∂S/∂C`:
    ///
    /// ```text
    /// ℂ = a₁ (I⊗C⁻¹ + C⁻¹⊗I) + a₂ C⁻¹⊗C⁻¹ + a₃ 𝕀(C⁻¹)
    /// a₁ = −2μ/3 p,  a₂ = 2μ/9 p I₁ + κ J²,  a₃ = 2μ/3 p I₁ − κ (J² − 1)
    /// ```
    ///
    /// with `p = J^{-2/3}` and `𝕀(A)ᵢⱼₖₗ = ½ (Aᵢₖ Aⱼₗ + Aᵢₗ Aⱼₖ)`. The guarded
    /// branch differentiates `μ g I + q adj(C)` instead:
    ///
    /// ```text
    /// ℂ = μ g′/J (I⊗adj + adj⊗I) + q_J/J adj⊗adj + 2q ∂adj/∂C
    /// ```
    pub fn tangent_from_c(&self, c: &Matrix3<f64>, dim: usize, guard: Option<f64>) -> Result<[[f64; 6]; 6]> {
        let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let pairs = voigt_pairs(dim);
        let mut d = [[0.0; 6]; 6];
        if let Some(j) = guard.filter(|&j| j < GUARD_J) {
            let (_, q, q_j, g_j) = self.guarded_terms(c, j);
            let j = if j.abs() < J_FLOOR { J_FLOOR.copysign(j) } else { j };
            let adj = adjugate(c);
            // adj is quadratic in C, so a central difference is exact up to
            // rounding.
            let h = 1e-3;
            for (b, &(kk, l)) in pairs.iter().enumerate() {
                let mut dc = Matrix3::zeros();
                if kk == l {
                    dc[(kk, kk)] = 2.0 * h;
                } else {
                    dc[(kk, l)] = h;
                    dc[(l, kk)] = h;
                }
                let da = (adjugate(&(c + dc)) - adjugate(&(c - dc))) / (2.0 * h);
                for (a, &(i, jj)) in pairs.iter().enumerate() {
                    d[a][b] = g_j * (delta(i, jj) * adj[(kk, l)] + adj[(i, jj)] * delta(kk, l))
                        + q_j / j * adj[(i, jj)] * adj[(kk, l)]
                        + q * da[(i, jj)];
                }
            }
            return Ok(d);
        }
        let k = self.coefficients(c)?;
        let ci = Self::c_inverse(c, k.det)?;
        for (a, &(i, j)) in pairs.iter().enumerate() {
            for (b, &(kk, l)) in pairs.iter().enumerate() {
                d[a][b] = k.a1 * (delta(i, j) * ci[(kk, l)] + ci[(i, j)] * delta(kk, l))
                    + k.a2 * ci[(i, j)] * ci[(kk, l)]
                    + k.a3 * 0.5 * (ci[(i, kk)] * ci[(j, l)] + ci[(i, l)] * ci[(j, kk)]);
            }
        }
        Ok(d)
    }

    /// Central-difference tangent of `Ŝ(Ê)` with `C = I + 2E`; fallback for
    /// checking or for laws without an analytic tangent.
    pub fn tangent_fd(&self, c: &Matrix3<f64>, dim: usize, h: f64) -> Result<[[f64; 6]; 6]> {
        let pairs = voigt_pairs(dim);
        let mut d = [[0.0; 6]; 6];
        for (b, &(k, l)) in pairs.iter().enumerate() {
            // Engineering shear: dÊ_b = 2 dE_kl for k ≠ l, shared by both
            // off-diagonal entries of C.
            let mut dc = Matrix3::zeros();
            if k == l {
                dc[(k, k)] = 2.0 * h;
            } else {
                dc[(k, l)] = h;
                dc[(l, k)] = h;
            }
            let sp = self.stress_from_c(&(c + dc), None)?;
            let sm = self.stress_from_c(&(c - dc), None)?;
            for (a, &(i, j)) in pairs.iter().enumerate() {
                d[a][b] = (sp[(i, j)] - sm[(i, j)]) / (2.0 * h);
            }
        }
        Ok(d)
    }
}

/// Shear/bulk moduli from a phase value via `μ = a_μ φ + b_μ`, `κ = a_κ φ + b_κ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMapping {
    pub a_mu: f64,
    pub b_mu: f64,
    pub a_kappa: f64,
    pub b_kappa: f64,
}

impl Default for PhaseMapping {
    fn default() -> Self {
        Self { a_mu: 1.0, b_mu: 0.0, a_kappa: 1.0, b_kappa: 0.0 }
    }
}

impl PhaseMapping {
    pub fn moduli(&self, phi: f64) -> Result<(f64, f64)> {
        let mu = self.a_mu * phi + self.b_mu;
        let kappa = self.a_kappa * phi + self.b_kappa;
        if !(mu > 0.0 && kappa > 0.0) {
            return Err(Error::Domain(format!("non-positive moduli μ={mu}, κ={kappa} at φ={phi}")));
        }
        Ok((mu, kappa))
    }
}

/// Thermomechanical constants. `E₀` and `k₀` come from the phase field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermoMechParams {
    pub nu: f64,
    pub alpha: f64,
    pub b: f64,
    pub c: f64,
    pub t0: f64,
}

impl Default for ThermoMechParams {
    fn default() -> Self {
        Self { nu: 0.3, alpha: 1.0, b: 2.0, c: 2.0, t0: 0.0 }
    }
}

impl ThermoMechParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.nu) {
            return Err(Error::Incompressible(self.nu));
        }
        if self.b < 0.0 || self.c < 0.0 {
            return Err(Error::Config(format!("b and c must be non-negative, got b={} c={}", self.b, self.c)));
        }
        Ok(())
    }
}

/// `(1 + b T^c)` and its derivative with respect to `T`.
pub fn temperature_factor(b: f64, c: f64, t: f64) -> Result<(f64, f64)> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("non-finite temperature {t}")));
    }
    let integer = c.fract() == 0.0 && c.abs() < i32::MAX as f64;
    if t < 0.0 && !integer {
        return Err(Error::Domain(format!("T^c undefined for T={t} with non-integer c={c}")));
    }
    if integer {
        let n = c as i32;
        let d = if n == 0 { 0.0 } else { b * c * t.powi(n - 1) };
        Ok((1.0 + b * t.powi(n), d))
    } else {
        let d = if t == 0.0 && c < 1.0 { f64::INFINITY } else { b * c * t.powf(c - 1.0) };
        Ok((1.0 + b * t.powf(c), d))
    }
}

/// `k = k₀ (1 + b T^c)`.
pub fn conductivity(k0: f64, b: f64, c: f64, t: f64) -> Result<f64> {
    Ok(k0 * temperature_factor(b, c, t)?.0)
}

/// `E = E₀ (1 + b T^c)`.
pub fn youngs_modulus(e0: f64, b: f64, c: f64, t: f64) -> Result<f64> {
    Ok(e0 * temperature_factor(b, c, t)?.0)
}

/// Isotropic linear elasticity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicElasticity {
    pub young: f64,
    pub poisson: f64,
}

impl IsotropicElasticity {
    pub fn new(young: f64, poisson: f64) -> Result<Self> {
        if !(poisson < 0.5 && poisson > -1.0) {
            return Err(Error::Incompressible(poisson));
        }
        Ok(Self { young, poisson })
    }

    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.young, self.poisson);
        (e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu)))
    }

    /// `ℂᵢⱼₖₗ = μ (δᵢₖ δⱼₗ + δᵢₗ δⱼₖ) + λ δᵢⱼ δₖₗ`.
    pub fn stiffness(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let (lambda, mu) = self.lame();
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k)) + lambda * d(i, j) * d(k, l)
    }

    /// `3λ + 2μ`: stress per unit isotropic strain, so a thermal strain
    /// `α ΔT I` gives `−(3λ + 2μ) α ΔT I` in 2D plane strain and in 3D.
    pub fn thermal_modulus(&self) -> f64 {
        let (lambda, mu) = self.lame();
        3.0 * lambda + 2.0 * mu
    }

    /// Voigt stiffness with engineering shear; plane strain in 2D.
    pub fn voigt_matrix(&self, dim: usize) -> [[f64; 6]; 6] {
        let pairs = voigt_pairs(dim);
        let mut d = [[0.0; 6]; 6];
        for (a, &(i, j)) in pairs.iter().enumerate() {
            for (b, &(k, l)) in pairs.iter().enumerate() {
                d[a][b] = self.stiffness(i, j, k, l);
            }
        }
        d
    }

    /// `σ = ℂ : (ε − ε_t)`.
    pub fn stress(&self, eps: &Matrix3<f64>, eps_t: &Matrix3<f64>) -> Matrix3<f64> {
        let e = eps - eps_t;
        Matrix3::from_fn(|i, j| {
            let mut s = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    s += self.stiffness(i, j, k, l) * e[(k, l)];
                }
            }
            s
        })
    }
}

/// Hooke's law with thermal strain `ε_t = α (T − T₀) I`.
pub fn hooke_stress(young: f64, poisson: f64, eps: &Matrix3<f64>, alpha: f64, t: f64, t0: f64) -> Result<Matrix3<f64>> {
    let law = IsotropicElasticity::new(young, poisson)?;
    Ok(law.stress(eps, &(alpha * (t - t0) * Matrix3::identity())))
}
