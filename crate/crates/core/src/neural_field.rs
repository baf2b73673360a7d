//! Shift-modulated SIREN with hand-written reverse mode.
//!
//! Sine layers compute `h_{i+1} = sin(ω₀ (W_i h_i + b_i + φ_i))` with the
//! FiLM shift `φ_i = V_i l + c_i`; the last layer is affine. Coordinates and
//! outputs are stored column-major (one column per point), so a batch of
//! `N` points in `d` dimensions is the flat interleaved array `[x₀, y₀, x₁, …]`.
//!
//! Parameters live in one flat vector: the synthesizer `θ` (for each layer
//! `W` column-major, then `b`) followed by the modulator `γ` (for each sine
//! layer `V` column-major, then `c`).

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirenConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Widths of the sine layers.
    pub hidden: Vec<usize>,
    pub omega0: f64,
    pub latent_dim: usize,
}

impl SirenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.input_dim) || self.output_dim == 0 {
            return Err(Error::Config(format!("bad network io dims {} -> {}", self.input_dim, self.output_dim)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("every sine layer needs a positive width".into()));
        }
        if !(self.omega0 > 0.0) {
            return Err(Error::Config(format!("ω₀ must be positive, got {}", self.omega0)));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct DenseBlock {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    synth: Vec<DenseBlock>,
    modul: Vec<DenseBlock>,
    n_theta: usize,
    n_total: usize,
}

impl Layout {
    fn new(cfg: &SirenConfig) -> Self {
        let mut off = 0;
        let mut block = |rows: usize, cols: usize| {
            let b = DenseBlock { w: off, b: off + rows * cols, rows, cols };
            off += rows * cols + rows;
            b
        };
        let synth: Vec<_> = cfg.layers().into_iter().map(|(r, c)| block(r, c)).collect();
        let n_theta = synth.last().map_or(0, |b| b.b + b.rows);
        let modul: Vec<_> = cfg.hidden.iter().map(|&w| block(w, cfg.latent_dim)).collect();
        let n_total = modul.last().map_or(n_theta, |b| b.b + b.rows);
        Self { synth, modul, n_theta, n_total }
    }
}

/// Synthesizer and modulator weights in one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: SirenConfig,
    layout: Layout,
    values: Vec<f64>,
}

/// Intermediate values of a forward pass needed by [`ModelParams::backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    /// Inputs to every layer; `inputs[0]` are the coordinates.
    inputs: Vec<DMatrix<f64>>,
    /// `cos(ω₀ z_i)` for each sine layer.
    cosines: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    /// Same layout as [`ModelParams::values`]; `None` if not requested.
    pub params: Option<Vec<f64>>,
    pub latent: Vec<f64>,
    /// `∂⟨g, y⟩/∂x`, column-major like the coordinates; only if requested.
    pub coords: Option<Vec<f64>>,
}

/// Which gradient groups a backward pass computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wants {
    pub params: bool,
    pub coords: bool,
}

impl ModelParams {
    /// SIREN initialization: first layer `U(−1/n, 1/n)`, later layers
    /// `U(−√(6/n)/ω₀, √(6/n)/ω₀)` for weights and biases alike; modulator
    /// weights on the hidden-layer scale over the latent width, modulator
    /// biases zero.
    pub fn init(config: &SirenConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut values = vec![0.0; layout.n_total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, blk) in layout.synth.iter().enumerate() {
            let n = blk.cols as f64;
            let bound = if i == 0 { 1.0 / n } else { (6.0 / n).sqrt() / config.omega0 };
            for v in &mut values[blk.w..blk.b + blk.rows] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        if config.latent_dim > 0 {
            let bound = (6.0 / config.latent_dim as f64).sqrt() / config.omega0;
            for blk in &layout.modul {
                for v in &mut values[blk.w..blk.b] {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
        Ok(Self { config: config.clone(), layout, values })
    }

    pub fn from_values(config: &SirenConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if values.len() != layout.n_total {
            return Err(Error::Shape(format!("{} parameters given, network has {}", values.len(), layout.n_total)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(Self { config: config.clone(), layout, values })
    }

    pub fn config(&self) -> &SirenConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of synthesizer entries; `values()[..n_theta()]` is `θ`.
    pub fn n_theta(&self) -> usize {
        self.layout.n_theta
    }

    fn mat(&self, blk: &DenseBlock) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.values[blk.w..blk.b], blk.rows, blk.cols)
    }

    fn vec(&self, blk: &DenseBlock) -> &[f64] {
        &self.values[blk.b..blk.b + blk.rows]
    }

    /// Per-layer shifts `φ_i = V_i l + c_i`.
    pub fn shifts(&self, latent: &[f64]) -> Result<Vec<DVector<f64>>> {
        if latent.len() != self.config.latent_dim {
            return Err(Error::Shape(format!("latent of size {}, expected {}", latent.len(), self.config.latent_dim)));
        }
        let l = DVector::from_column_slice(latent);
        Ok(self.layout.modul.iter().map(|blk| self.mat(blk) * &l + DVector::from_column_slice(self.vec(blk))).collect())
    }

    fn check_coords(&self, coords: &[f64]) -> Result<usize> {
        let d = self.config.input_dim;
        if coords.len() % d != 0 {
            return Err(Error::Shape(format!("{} coordinates not divisible by input dim {d}", coords.len())));
        }
        Ok(coords.len() / d)
    }

    pub fn forward_tape(&self, latent: &[f64], coords: &[f64]) -> Result<Tape> {
        let n = self.check_coords(coords)?;
        let shifts = self.shifts(latent)?;
        let w0 = self.config.omega0;
        let mut inputs = vec![DMatrix::from_column_slice(self.config.input_dim, n, coords)];
        let mut cosines = Vec::with_capacity(shifts.len());
        for (blk, phi) in self.layout.synth.iter().zip(&shifts) {
            let mut z = self.mat(blk) * inputs.last().expect("non-empty");
            let bias = self.vec(blk);
            let mut c = DMatrix::zeros(blk.rows, n);
            for (mut col, mut ccol) in z.column_iter_mut().zip(c.column_iter_mut()) {
                for (((zi, ci), &b), &p) in col.iter_mut().zip(ccol.iter_mut()).zip(bias).zip(phi.iter()) {
                    let (s, co) = (w0 * (*zi + b + p)).sin_cos();
                    *zi = s;
                    *ci = co;
                }
            }
            cosines.push(c);
            inputs.push(z);
        }
        let last = self.layout.synth.last().expect("output layer");
        let mut out = self.mat(last) * inputs.last().expect("non-empty");
        let bias = self.vec(last);
        for mut col in out.column_iter_mut() {
            for (o, &b) in col.iter_mut().zip(bias) {
                *o += b;
            }
        }
        Ok(Tape { inputs, cosines, output: out })
    }

    /// Field values at `coords`, flat and interleaved (`output_dim` per point).
    pub fn forward(&self, latent: &[f64], coords: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(latent, coords)?.output.as_slice().to_vec())
    }

    /// Reverse-mode gradients of `⟨cotangent, y⟩`.
    pub fn backward(&self, tape: &Tape, latent: &[f64], cotangent: &[f64], wants: Wants) -> Result<Gradients> {
        let n = tape.output.ncols();
        if cotangent.len() != tape.output.len() {
            return Err(Error::Shape(format!("cotangent of size {}, expected {}", cotangent.len(), tape.output.len())));
        }
        let w0 = self.config.omega0;
        let g = DMatrix::from_column_slice(self.config.output_dim, n, cotangent);
        let mut grad = if wants.params { Some(vec![0.0; self.values.len()]) } else { None };
        let mut dl = DVector::zeros(self.config.latent_dim);
        let n_layers = self.layout.synth.len();
        let last = &self.layout.synth[n_layers - 1];
        if let Some(gp) = grad.as_mut() {
            let dw = &g * tape.inputs[n_layers - 1].transpose();
            gp[last.w..last.b].copy_from_slice(dw.as_slice());
            for (r, row) in g.row_iter().enumerate() {
                gp[last.b + r] = row.sum();
            }
        }
        let mut d = self.mat(last).transpose() * &g;
        for i in (0..n_layers - 1).rev() {
            let blk = &self.layout.synth[i];
            d.component_mul_assign(&tape.cosines[i]);
            d *= w0;
            let s: DVector<f64> = d.column_sum();
            let mblk = &self.layout.modul[i];
            dl += self.mat(mblk).transpose() * &s;
            if let Some(gp) = grad.as_mut() {
                let dw = &d * tape.inputs[i].transpose();
                gp[blk.w..blk.b].copy_from_slice(dw.as_slice());
                gp[blk.b..blk.b + blk.rows].copy_from_slice(s.as_slice());
                for (c, &lc) in latent.iter().enumerate() {
                    for r in 0..mblk.rows {
                        gp[mblk.w + c * mblk.rows + r] = s[r] * lc;
                    }
                }
                gp[mblk.b..mblk.b + mblk.rows].copy_from_slice(s.as_slice());
            }
            if i > 0 || wants.coords {
                d = self.mat(blk).transpose() * &d;
            }
        }
        let coords = if wants.coords { Some(d.as_slice().to_vec()) } else { None };
        Ok(Gradients { params: grad, latent: dl.as_slice().to_vec(), coords })
    }
}
