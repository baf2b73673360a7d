//! Gauss-point stresses and fluxes recovered to nodes by simple averaging.

use nalgebra::Matrix3;

use crate::assembly::element::b_linear;
use crate::assembly::{FeProblem, Physics};
use crate::error::Result;
use crate::material::{temperature_factor, voigt_len, voigt_pairs, IsotropicElasticity, NeoHookean};

/// Returns one nodal field per quantity. Hyperelastic: Voigt components of
/// the second Piola–Kirchhoff stress. Thermomechanical: Voigt components of
/// the Cauchy stress followed by the heat flux components.
pub fn nodal_average(problem: &FeProblem, u: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mesh = problem.mesh();
    let dim = mesh.dim();
    let dpn = problem.dofs_per_node();
    let nq = problem.rule().len();
    let nv = voigt_len(dim);
    let n_out = match problem.physics() {
        Physics::Hyperelastic => nv,
        Physics::Thermal { .. } => dim,
        Physics::ThermoMech(_) => nv + dim,
    };
    let mut sums = vec![vec![0.0; mesh.n_nodes()]; n_out];
    let mut counts = vec![0usize; mesh.n_nodes()];
    for (e, geom) in problem.geometry().iter().enumerate() {
        let conn = mesh.element(e);
        let props = &problem.props()[e * nq..(e + 1) * nq];
        let mut avg = vec![0.0; n_out];
        for (gp, &[p0, p1]) in geom.points.iter().zip(props) {
            let nodal = |a: usize, k: usize| u[conn[a] * dpn + k];
            let mut vals = vec![0.0; n_out];
            match problem.physics() {
                Physics::Hyperelastic => {
                    let mut f = Matrix3::<f64>::identity();
                    for a in 0..conn.len() {
                        for i in 0..dim {
                            for j in 0..dim {
                                f[(i, j)] += nodal(a, i) * gp.dn_dx[a][j];
                            }
                        }
                    }
                    let s = NeoHookean::new(p0, p1).stress_from_c(&(f.transpose() * f), Some(f.determinant()))?;
                    for (v, &(i, j)) in voigt_pairs(dim).iter().enumerate() {
                        vals[v] = s[(i, j)];
                    }
                }
                Physics::Thermal { b, c } => {
                    let t: f64 = (0..conn.len()).map(|a| gp.n[a] * nodal(a, 0)).sum();
                    let k = p1 * temperature_factor(*b, *c, t)?.0;
                    for d in 0..dim {
                        vals[d] = -k * (0..conn.len()).map(|a| gp.dn_dx[a][d] * nodal(a, 0)).sum::<f64>();
                    }
                }
                Physics::ThermoMech(p) => {
                    let t: f64 = (0..conn.len()).map(|a| gp.n[a] * nodal(a, dim)).sum();
                    let fac = temperature_factor(p.b, p.c, t)?.0;
                    let law = IsotropicElasticity::new(p0 * fac, p.nu)?;
                    let d = law.voigt_matrix(dim);
                    let bu = b_linear(gp, dim, conn.len());
                    let mut eps = [0.0; 6];
                    for v in 0..nv {
                        for a in 0..conn.len() {
                            for k in 0..dim {
                                eps[v] += bu.b[v][a * dim + k] * nodal(a, k);
                            }
                        }
                    }
                    let th = law.thermal_modulus() * p.alpha * (t - p.t0);
                    for (v, &(i, j)) in voigt_pairs(dim).iter().enumerate() {
                        vals[v] = (0..nv).map(|q| d[v][q] * eps[q]).sum::<f64>() - if i == j { th } else { 0.0 };
                    }
                    let k = p1 * fac;
                    for dd in 0..dim {
                        vals[nv + dd] = -k * (0..conn.len()).map(|a| gp.dn_dx[a][dd] * nodal(a, dim)).sum::<f64>();
                    }
                }
            }
            for (acc, v) in avg.iter_mut().zip(vals) {
                *acc += v / nq as f64;
            }
        }
        for &node in conn {
            counts[node] += 1;
            for (s, v) in sums.iter_mut().zip(&avg) {
                s[node] += v;
            }
        }
    }
    for s in sums.iter_mut() {
        for (v, &c) in s.iter_mut().zip(&counts) {
            *v /= c.max(1) as f64;
        }
    }
    Ok(sums)
}
