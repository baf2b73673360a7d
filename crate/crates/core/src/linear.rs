//! Linear solvers for the Newton update: banded LU with partial pivoting and
//! preconditioned BiCGSTAB.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    None,
    #[default]
    Jacobi,
    Ilu0,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LinearSolver {
    /// Banded LU with partial pivoting. Structured lexicographic meshes give
    /// a bandwidth proportional to one grid line (2D) or plane (3D).
    Direct,
    Bicgstab {
        rel_tol: f64,
        max_it: usize,
        #[serde(default)]
        preconditioner: Preconditioner,
    },
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::Direct
    }
}

impl LinearSolver {
    pub fn bicgstab() -> Self {
        LinearSolver::Bicgstab { rel_tol: 1e-10, max_it: 5000, preconditioner: Preconditioner::Jacobi }
    }
}

/// Solves `K x = rhs`.
pub fn linear_solve(k: &CsrMatrix, rhs: &[f64], method: &LinearSolver) -> Result<Vec<f64>> {
    if rhs.len() != k.n() {
        return Err(Error::Shape(format!("rhs length {} for matrix of size {}", rhs.len(), k.n())));
    }
    match *method {
        LinearSolver::Direct => BandedLu::factor(k)?.solve(rhs),
        LinearSolver::Bicgstab { rel_tol, max_it, preconditioner } => {
            let pc = Precond::build(k, preconditioner)?;
            bicgstab(k, rhs, &pc, rel_tol, max_it)
        }
    }
}

/// LU factors of a banded matrix, row-pivoted.
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(k: &CsrMatrix) -> Result<Self> {
        let n = k.n();
        let bw = k.bandwidth();
        let (kl, ku) = (bw, bw);
        // Row i holds columns i-kl ..= i+ku+kl; pivoting fills up to ku+kl.
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            let (cols, vals) = k.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                band[i * width + j + kl - i] = v;
            }
        }
        let idx = |i: usize, j: usize| i * width + j + kl - i;
        let mut pivots = vec![0; n];
        let scale = k.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for col in 0..n {
            let last = (col + kl).min(n - 1);
            let mut p = col;
            let mut best = band[idx(col, col)].abs();
            for i in col + 1..=last {
                let v = band[idx(i, col)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * 1e-300 || !best.is_finite() {
                return Err(Error::LinearSolver(format!("singular matrix at column {col}")));
            }
            pivots[col] = p;
            let right = (col + ku + kl).min(n - 1);
            if p != col {
                for j in col..=right {
                    band.swap(idx(col, j), idx(p, j));
                }
            }
            let d = band[idx(col, col)];
            for i in col + 1..=last {
                let l = band[idx(i, col)] / d;
                if l == 0.0 {
                    continue;
                }
                band[idx(i, col)] = l;
                for j in col + 1..=right {
                    let u = band[idx(col, j)];
                    band[idx(i, j)] -= l * u;
                }
            }
        }
        Ok(Self { n, kl, ku, width, band, pivots })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.width);
        let idx = |i: usize, j: usize| i * w + j + kl - i;
        let mut x = rhs.to_vec();
        for col in 0..n {
            let p = self.pivots[col];
            if p != col {
                x.swap(col, p);
            }
            let xc = x[col];
            for i in col + 1..=(col + kl).min(n.saturating_sub(1)) {
                x[i] -= self.band[idx(i, col)] * xc;
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + ku + kl).min(n - 1) {
                s -= self.band[idx(i, j)] * x[j];
            }
            x[i] = s / self.band[idx(i, i)];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolver("non-finite solution from direct solve".into()));
        }
        Ok(x)
    }
}

enum Precond {
    Identity,
    Jacobi(Vec<f64>),
    Ilu0 { lu: CsrMatrix, diag_pos: Vec<usize> },
}

impl Precond {
    fn build(k: &CsrMatrix, kind: Preconditioner) -> Result<Self> {
        Ok(match kind {
            Preconditioner::None => Precond::Identity,
            Preconditioner::Jacobi => {
                let d = k.diagonal();
                if d.iter().any(|&v| v == 0.0) {
                    return Err(Error::LinearSolver("zero diagonal entry for Jacobi preconditioner".into()));
                }
                Precond::Jacobi(d.into_iter().map(|v| 1.0 / v).collect())
            }
            Preconditioner::Ilu0 => {
                let mut lu = k.clone();
                let n = k.n();
                let diag_pos: Vec<usize> = (0..n)
                    .map(|i| lu.position(i, i).ok_or_else(|| Error::LinearSolver(format!("missing diagonal {i}"))))
                    .collect::<Result<_>>()?;
                let (row_ptr, col_idx) = (lu.row_ptr().to_vec(), lu.col_idx().to_vec());
                let mut vals = lu.values().to_vec();
                for i in 1..n {
                    for p in row_ptr[i]..row_ptr[i + 1] {
                        let kcol = col_idx[p];
                        if kcol >= i {
                            break;
                        }
                        let piv = vals[diag_pos[kcol]];
                        if piv == 0.0 {
                            return Err(Error::LinearSolver("zero pivot in ILU(0)".into()));
                        }
                        vals[p] /= piv;
                        let lik = vals[p];
                        for q in p + 1..row_ptr[i + 1] {
                            let j = col_idx[q];
                            if let Some(pos) = lu.position(kcol, j) {
                                vals[q] -= lik * vals[pos];
                            }
                        }
                    }
                }
                lu.values_mut().copy_from_slice(&vals);
                Precond::Ilu0 { lu, diag_pos }
            }
        })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Precond::Identity => z.copy_from_slice(r),
            Precond::Jacobi(inv) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(inv) {
                    *zi = ri * di;
                }
            }
            Precond::Ilu0 { lu, diag_pos } => {
                let n = lu.n();
                for i in 0..n {
                    let (cols, vals) = lu.row(i);
                    let mut s = r[i];
                    for (&j, &v) in cols.iter().zip(vals) {
                        if j >= i {
                            break;
                        }
                        s -= v * z[j];
                    }
                    z[i] = s;
                }
                for i in (0..n).rev() {
                    let (cols, vals) = lu.row(i);
                    let mut s = z[i];
                    for (&j, &v) in cols.iter().zip(vals) {
                        if j > i {
                            s -= v * z[j];
                        }
                    }
                    z[i] = s / lu.values()[diag_pos[i]];
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB; stops when `‖b − A x‖ ≤ rel_tol ‖b‖`.
fn bicgstab(a: &CsrMatrix, b: &[f64], pc: &Precond, rel_tol: f64, max_it: usize) -> Result<Vec<f64>> {
    let n = a.n();
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let target = rel_tol * b_norm;
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut s = vec![0.0; n];
    for it in 0..max_it {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(Error::LinearSolver(format!("BiCGSTAB breakdown (rho = {rho_new:e}) at iteration {it}")));
        }
        if it == 0 {
            p.copy_from_slice(&r);
        } else {
            let beta = (rho_new / rho) * (alpha / omega);
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
        }
        rho = rho_new;
        pc.apply(&p, &mut p_hat);
        a.mul_vec_into(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            return Err(Error::LinearSolver("BiCGSTAB breakdown (r̂·v = 0)".into()));
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= target {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok(x);
        }
        pc.apply(&s, &mut s_hat);
        a.mul_vec_into(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(Error::LinearSolver("BiCGSTAB breakdown (t = 0)".into()));
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= target {
            return Ok(x);
        }
        if omega == 0.0 {
            return Err(Error::LinearSolver("BiCGSTAB breakdown (omega = 0)".into()));
        }
    }
    Err(Error::LinearSolver(format!(
        "BiCGSTAB did not reach relative tolerance {rel_tol:e} in {max_it} iterations"
    )))
}
