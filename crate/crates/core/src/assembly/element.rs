//! Element residuals and tangents.
//!
//! Local DOFs are node-interleaved. For thermomechanics each node carries
//! `(u_x, u_y[, u_z], T)`.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::material::{temperature_factor, voigt_len, voigt_pairs, IsotropicElasticity, NeoHookean, ThermoMechParams};
use crate::mesh::{ElementGeometry, GaussPointGeometry};

/// Largest local DOF count: 8 nodes × 4 DOFs.
pub const MAX_LOCAL: usize = 32;

pub type LocalVec = [f64; MAX_LOCAL];
pub type LocalMat = [[f64; MAX_LOCAL]; MAX_LOCAL];

/// Strain–displacement rows for one integration point, stored Voigt-row major
/// over `dim × n_nodes` displacement columns.
#[derive(Clone, Debug)]
pub struct StrainDisplacement {
    pub rows: usize,
    pub cols: usize,
    pub b: [[f64; 24]; 6],
}

/// Small-strain `B_u` with engineering shear rows.
pub fn b_linear(gp: &GaussPointGeometry, dim: usize, n_nodes: usize) -> StrainDisplacement {
    b_nonlinear(gp, &Matrix3::identity(), dim, n_nodes)
}

/// `B^nl` mapping nodal displacement variations to Green–Lagrange strain
/// variations `δÊ`. Row `(i, j)` for node `a`, component `k`:
/// normal `F_ki N_a,i`, shear `F_ki N_a,j + F_kj N_a,i`.
pub fn b_nonlinear(gp: &GaussPointGeometry, f: &Matrix3<f64>, dim: usize, n_nodes: usize) -> StrainDisplacement {
    let mut b = [[0.0; 24]; 6];
    for (v, &(i, j)) in voigt_pairs(dim).iter().enumerate() {
        for a in 0..n_nodes {
            let dn = &gp.dn_dx[a];
            for k in 0..dim {
                b[v][a * dim + k] = if i == j { f[(k, i)] * dn[i] } else { f[(k, i)] * dn[j] + f[(k, j)] * dn[i] };
            }
        }
    }
    StrainDisplacement { rows: voigt_len(dim), cols: dim * n_nodes, b }
}

/// Per-point material data. Hyperelastic: `(μ, κ)`; thermal and
/// thermomechanical: `(E₀, k₀)`.
pub type PointProps = [f64; 2];

/// Outcome of a hyperelastic element evaluation in guarded mode.
#[derive(Clone, Copy, Debug, Default)]
pub struct ElementFlags {
    pub inverted_points: usize,
}

fn displacement_gradient(gp: &GaussPointGeometry, u: &[f64], dim: usize, n_nodes: usize, stride: usize) -> Matrix3<f64> {
    let mut h = Matrix3::zeros();
    for a in 0..n_nodes {
        for i in 0..dim {
            let ua = u[a * stride + i];
            for j in 0..dim {
                h[(i, j)] += ua * gp.dn_dx[a][j];
            }
        }
    }
    h
}

fn deformation(
    gp: &GaussPointGeometry,
    u: &[f64],
    dim: usize,
    n_nodes: usize,
    element: usize,
    guard: bool,
    flags: &mut ElementFlags,
) -> Result<Matrix3<f64>> {
    let mut f = displacement_gradient(gp, u, dim, n_nodes, dim);
    for i in 0..3 {
        f[(i, i)] += 1.0;
    }
    let det_f = f.determinant();
    if !(det_f > 0.0) {
        if guard && det_f.is_finite() {
            flags.inverted_points += 1;
        } else {
            return Err(Error::InvertedElement { element, det_f });
        }
    }
    Ok(f)
}

/// `r_e = Σ_k W_k B^nl(ξ_k, U_e)ᵀ Ŝ`, optionally with `K_e = ∂r_e/∂U_e`.
///
/// With `guard` set, inverted points are evaluated with the clamped law
/// (see [`NeoHookean::stress_from_c`]) and counted instead of failing.
pub fn hyperelastic(
    geom: &ElementGeometry,
    u: &[f64],
    props: &[PointProps],
    body_force: &[f64; 3],
    guard: bool,
    mut tangent: Option<&mut LocalMat>,
) -> Result<(LocalVec, ElementFlags)> {
    let dim = geom.dim;
    let nen = geom.n_nodes();
    let nv = voigt_len(dim);
    let ndof = dim * nen;
    let mut r = [0.0; MAX_LOCAL];
    let mut flags = ElementFlags::default();
    if let Some(k) = tangent.as_deref_mut() {
        for row in k.iter_mut().take(ndof) {
            row[..ndof].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    for (gp, &[mu, kappa]) in geom.points.iter().zip(props) {
        let f = deformation(gp, u, dim, nen, geom.element, guard, &mut flags)?;
        let c = f.transpose() * f;
        let law = NeoHookean::new(mu, kappa);
        let signed_j = guard.then(|| f.determinant());
        let s = law.stress_from_c(&c, signed_j)?;
        let mut s_hat = [0.0; 6];
        for (v, &(i, j)) in voigt_pairs(dim).iter().enumerate() {
            s_hat[v] = s[(i, j)];
        }
        let bnl = b_nonlinear(gp, &f, dim, nen);
        let w = gp.weight;
        for col in 0..ndof {
            let mut acc = 0.0;
            for v in 0..nv {
                acc += bnl.b[v][col] * s_hat[v];
            }
            r[col] += w * acc;
        }
        for a in 0..nen {
            for k in 0..dim {
                r[a * dim + k] -= w * gp.n[a] * body_force[k];
            }
        }
        if let Some(kmat) = tangent.as_deref_mut() {
            let d = law.tangent_from_c(&c, dim, signed_j)?;
            // DB = 𝔻 B^nl
            let mut db = [[0.0; 24]; 6];
            for v in 0..nv {
                for col in 0..ndof {
                    let mut acc = 0.0;
                    for q in 0..nv {
                        acc += d[v][q] * bnl.b[q][col];
                    }
                    db[v][col] = acc;
                }
            }
            for p in 0..ndof {
                for q in p..ndof {
                    let mut acc = 0.0;
                    for v in 0..nv {
                        acc += bnl.b[v][p] * db[v][q];
                    }
                    kmat[p][q] += w * acc;
                }
            }
            // geometric stiffness ∇N_a · S ∇N_b on each displacement component
            for a in 0..nen {
                for b in a..nen {
                    let mut g = 0.0;
                    for i in 0..dim {
                        for j in 0..dim {
                            g += gp.dn_dx[a][i] * s[(i, j)] * gp.dn_dx[b][j];
                        }
                    }
                    for k in 0..dim {
                        kmat[a * dim + k][b * dim + k] += w * g;
                    }
                }
            }
        }
    }
    if let Some(kmat) = tangent {
        // Upper triangle was accumulated; the hyperelastic tangent is symmetric.
        for p in 0..ndof {
            for q in 0..p {
                kmat[p][q] = kmat[q][p];
            }
        }
    }
    Ok((r, flags))
}

/// Heat conduction: `r_t = Σ_k W_k B_tᵀ k(T_k) B_t T_e − Σ_k W_k N_tᵀ f`.
///
/// `stride`/`offset` locate the temperature inside interleaved local vectors;
/// the tangent block is written at the same positions.
#[allow(clippy::too_many_arguments)]
pub fn thermal(
    geom: &ElementGeometry,
    local: &[f64],
    stride: usize,
    offset: usize,
    props: &[PointProps],
    b: f64,
    c: f64,
    source: f64,
    r: &mut LocalVec,
    mut tangent: Option<&mut LocalMat>,
) -> Result<()> {
    let dim = geom.dim;
    let nen = geom.n_nodes();
    for (gp, &[_, k0]) in geom.points.iter().zip(props) {
        let mut t_gp = 0.0;
        let mut grad = [0.0; 3];
        for a in 0..nen {
            let ta = local[a * stride + offset];
            t_gp += gp.n[a] * ta;
            for d in 0..dim {
                grad[d] += gp.dn_dx[a][d] * ta;
            }
        }
        let (fac, dfac) = temperature_factor(b, c, t_gp)?;
        let k = k0 * fac;
        let dk = k0 * dfac;
        let w = gp.weight;
        let mut flux_dot = [0.0; 8];
        for a in 0..nen {
            flux_dot[a] = (0..dim).map(|d| gp.dn_dx[a][d] * grad[d]).sum();
            r[a * stride + offset] += w * (k * flux_dot[a] - gp.n[a] * source);
        }
        if let Some(km) = tangent.as_deref_mut() {
            for a in 0..nen {
                for bn in 0..nen {
                    let lap: f64 = (0..dim).map(|d| gp.dn_dx[a][d] * gp.dn_dx[bn][d]).sum();
                    km[a * stride + offset][bn * stride + offset] += w * (k * lap + dk * flux_dot[a] * gp.n[bn]);
                }
            }
        }
    }
    Ok(())
}

/// Thermoelastic residual
/// `r_u = Σ_k W_k B_uᵀ D(T_k) (B_u U − α (T_k − T₀) s) − Σ_k W_k N_uᵀ f`
/// with `s` the Voigt identity selector. The tangent includes the `∂r_u/∂T`
/// coupling block. Without `t_offset` the temperature is taken as `T₀`.
#[allow(clippy::too_many_arguments)]
pub fn thermoelastic(
    geom: &ElementGeometry,
    local: &[f64],
    stride: usize,
    t_offset: Option<usize>,
    props: &[PointProps],
    params: &ThermoMechParams,
    body_force: &[f64; 3],
    r: &mut LocalVec,
    mut tangent: Option<&mut LocalMat>,
) -> Result<()> {
    let dim = geom.dim;
    let nen = geom.n_nodes();
    let nv = voigt_len(dim);
    let unit_law = IsotropicElasticity::new(1.0, params.nu)?;
    let unit = unit_law.voigt_matrix(dim);
    let thermal_modulus = unit_law.thermal_modulus();
    let mut diag = [0.0; 6];
    for (v, &(i, j)) in voigt_pairs(dim).iter().enumerate() {
        diag[v] = if i == j { 1.0 } else { 0.0 };
    }
    let temp = |a: usize| -> f64 { t_offset.map_or(params.t0, |o| local[a * stride + o]) };
    let udof = |a: usize, k: usize| a * stride + k;
    for (gp, &[e0, _]) in geom.points.iter().zip(props) {
        let t_gp: f64 = (0..nen).map(|a| gp.n[a] * temp(a)).sum();
        let (fac, dfac) = temperature_factor(params.b, params.c, t_gp)?;
        let e = e0 * fac;
        let de = e0 * dfac;
        let bu = b_linear(gp, dim, nen);
        let mut eps = [0.0; 6];
        for v in 0..nv {
            for a in 0..nen {
                for k in 0..dim {
                    eps[v] += bu.b[v][a * dim + k] * local[udof(a, k)];
                }
            }
        }
        let th = params.alpha * (t_gp - params.t0);
        // σ₁ = D(E = 1) ε − (3λ₁ + 2μ₁) α ΔT I; in 2D the out-of-plane
        // thermal strain is constrained too (plane strain)
        let mut sig1 = [0.0; 6];
        for v in 0..nv {
            sig1[v] = (0..nv).map(|q| unit[v][q] * eps[q]).sum::<f64>() - th * thermal_modulus * diag[v];
        }
        let w = gp.weight;
        for a in 0..nen {
            for k in 0..dim {
                let col = a * dim + k;
                let acc: f64 = (0..nv).map(|v| bu.b[v][col] * sig1[v]).sum();
                r[udof(a, k)] += w * (e * acc - gp.n[a] * body_force[k]);
            }
        }
        if let Some(km) = tangent.as_deref_mut() {
            for a in 0..nen {
                for k in 0..dim {
                    let p = a * dim + k;
                    for bn in 0..nen {
                        for l in 0..dim {
                            let q = bn * dim + l;
                            let mut acc = 0.0;
                            for v in 0..nv {
                                let dq: f64 = (0..nv).map(|x| unit[v][x] * bu.b[x][q]).sum();
                                acc += bu.b[v][p] * dq;
                            }
                            km[udof(a, k)][udof(bn, l)] += w * e * acc;
                        }
                    }
                }
            }
            if let Some(o) = t_offset {
                // ∂σ/∂T_b = N_b (dE σ₁ − E α D₁ s)
                let mut ds = [0.0; 6];
                for v in 0..nv {
                    ds[v] = de * sig1[v] - e * params.alpha * thermal_modulus * diag[v];
                }
                for a in 0..nen {
                    for k in 0..dim {
                        let p = a * dim + k;
                        let acc: f64 = (0..nv).map(|v| bu.b[v][p] * ds[v]).sum();
                        for bn in 0..nen {
                            km[udof(a, k)][bn * stride + o] += w * acc * gp.n[bn];
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Element strain energy `Σ_k W_k W(F_k)`, used as an oracle for residual checks.
pub fn hyperelastic_energy(geom: &ElementGeometry, u: &[f64], props: &[PointProps]) -> Result<f64> {
    let dim = geom.dim;
    let nen = geom.n_nodes();
    let mut total = 0.0;
    let mut flags = ElementFlags::default();
    for (gp, &[mu, kappa]) in geom.points.iter().zip(props) {
        let f = deformation(gp, u, dim, nen, geom.element, false, &mut flags)?;
        total += gp.weight * NeoHookean::new(mu, kappa).energy_from_c(&(f.transpose() * f))?;
    }
    Ok(total)
}
