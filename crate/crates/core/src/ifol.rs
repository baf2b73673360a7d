//! Physics-informed training of the conditional neural field.
//!
//! The field is its own test function: for a prediction `U` the loss is
//! `L = Σ_e (U^e)ᵀ r^e(U^e) = Uᵀ r(U)` with `r` the raw assembled residual.
//! Latent codes are found per sample by a few gradient steps on `L` from
//! zero (PDE encoding), and the network is updated with the gradient of `L`
//! at the encoded latent.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{AssemblyOptions, FeProblem};
use crate::error::{Error, Result};
use crate::neural_field::{ModelParams, Wants};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Pde,
    /// Mean squared error against stored reference solutions. Latent codes
    /// are still found by PDE encoding so that inference needs no data.
    Supervised,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Encoding steps `K_e`.
    pub inner_steps: usize,
    /// Encoding learning rate `α`.
    pub latent_lr: f64,
    /// Adam learning rate `λ`.
    pub outer_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Scale the full parameter gradient to unit ℓ₂ norm before Adam.
    pub grad_norm: bool,
    /// Treat the residual as constant when differentiating the loss.
    pub detach: bool,
    pub loss: LossMode,
    pub seed: u64,
    /// Abort once the epoch-mean `|L|` exceeds this multiple of the first.
    pub divergence_factor: f64,
    /// Record zero wall times so logs are byte-identical across runs.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            inner_steps: 3,
            latent_lr: 1e-2,
            outer_lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 10,
            epochs: 2000,
            grad_norm: true,
            detach: true,
            loss: LossMode::Pde,
            seed: 0,
            divergence_factor: 1e6,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps must be at least 1".into()));
        }
        if !(self.latent_lr > 0.0) || !(self.outer_lr >= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("invalid Adam constants".into()));
        }
        Ok(())
    }

    pub fn encoding(&self) -> EncodeConfig {
        EncodeConfig { steps: self.inner_steps, lr: self.latent_lr, detach: self.detach }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeConfig {
    pub steps: usize,
    pub lr: f64,
    pub detach: bool,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        TrainConfig::default().encoding()
    }
}

/// One training instance: a problem (properties and Dirichlet data) and an
/// optional reference solution for supervised training.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub problem: FeProblem,
    pub reference: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    /// `∂L/∂U`, zero at Dirichlet DOFs.
    pub grad: Vec<f64>,
    pub inverted_points: usize,
}

/// Overwrites the Dirichlet DOFs of a prediction with their prescribed values.
pub fn apply_hard_bc(problem: &FeProblem, u: &mut [f64]) {
    problem.dirichlet().apply(u, 1.0);
}

/// `L = Uᵀ r(U)` on the raw guarded residual. In detached mode the gradient
/// is `r`; otherwise it is `r + Kᵀ U`. Both are masked at Dirichlet DOFs,
/// which the hard constraint makes independent of the network.
pub fn pde_loss(problem: &FeProblem, u: &[f64], detach: bool) -> Result<LossEval> {
    let state = problem.state(u.to_vec(), 1.0)?;
    let out = problem.assemble(&state, AssemblyOptions { tangent: !detach, guard: true, raw: true })?;
    let loss: f64 = u.iter().zip(&out.residual).map(|(a, b)| a * b).sum();
    let mut grad = out.residual;
    if let Some(k) = &out.tangent {
        for (g, v) in grad.iter_mut().zip(k.mul_vec_transpose(u)) {
            *g += v;
        }
    }
    for (g, &m) in grad.iter_mut().zip(&problem.dirichlet().mask) {
        if m {
            *g = 0.0;
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence("non-finite physics loss".into()));
    }
    Ok(LossEval { loss, grad, inverted_points: out.inverted_points })
}

/// Mean squared nodal error and its gradient.
pub fn supervised_loss(u: &[f64], reference: &[f64]) -> Result<(f64, Vec<f64>)> {
    if u.len() != reference.len() {
        return Err(Error::Shape(format!("prediction has {} values, reference {}", u.len(), reference.len())));
    }
    let n = u.len().max(1) as f64;
    let loss = u.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let grad = u.iter().zip(reference).map(|(a, b)| 2.0 * (a - b) / n).collect();
    Ok((loss, grad))
}

fn check_layout(params: &ModelParams, problem: &FeProblem) -> Result<()> {
    let c = params.config();
    if c.input_dim != problem.mesh().dim() || c.output_dim != problem.dofs_per_node() {
        return Err(Error::Shape(format!(
            "network maps {}D to {} outputs, problem is {}D with {} DOFs per node",
            c.input_dim,
            c.output_dim,
            problem.mesh().dim(),
            problem.dofs_per_node()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub latent: Vec<f64>,
    /// `L` at `l = 0`, if at least one step ran.
    pub initial_loss: Option<f64>,
    pub assemblies: usize,
    pub inverted_points: usize,
}

/// PDE encoding: `cfg.steps` updates `l ← l − α ∇_l L` from `l = 0`. Each
/// step costs one residual assembly and no linear solves.
pub fn encode(params: &ModelParams, problem: &FeProblem, coords: &[f64], cfg: EncodeConfig) -> Result<Encoding> {
    check_layout(params, problem)?;
    let mut latent = vec![0.0; params.config().latent_dim];
    let mut initial_loss = None;
    let mut inverted = 0;
    for _ in 0..cfg.steps {
        let tape = params.forward_tape(&latent, coords)?;
        let mut u = tape.output.as_slice().to_vec();
        apply_hard_bc(problem, &mut u);
        let eval = pde_loss(problem, &u, cfg.detach)?;
        initial_loss.get_or_insert(eval.loss);
        inverted += eval.inverted_points;
        let g = params.backward(&tape, &latent, &eval.grad, Wants { params: false, coords: false })?;
        if g.latent.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite latent gradient (loss {})", eval.loss)));
        }
        for (l, d) in latent.iter_mut().zip(&g.latent) {
            *l -= cfg.lr * d;
        }
    }
    Ok(Encoding { latent, initial_loss, assemblies: cfg.steps, inverted_points: inverted })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub latent: Vec<f64>,
    /// Nodal DOFs with Dirichlet values imposed.
    pub u: Vec<f64>,
}

/// Encodes on the target problem's own mesh and evaluates the field at its
/// nodes. The mesh may differ from the one used in training.
pub fn infer(params: &ModelParams, problem: &FeProblem, cfg: EncodeConfig) -> Result<Prediction> {
    let coords = problem.mesh().normalized_coords();
    let enc = encode(params, problem, &coords, cfg)?;
    let mut u = params.forward(&enc.latent, &coords)?;
    apply_hard_bc(problem, &mut u);
    Ok(Prediction { latent: enc.latent, u })
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..x.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss at the encoded latents.
    pub mean_loss: f64,
    pub mean_abs_loss: f64,
    /// Mean ℓ₂ norm of the mini-batch gradient before normalization.
    pub grad_norm: f64,
    pub seconds: f64,
    /// Fraction of samples whose physics loss did not increase under encoding.
    pub descent_fraction: f64,
    pub inverted_points: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochStats>,
    pub optimizer: Adam,
}

struct SampleResult {
    loss: f64,
    grad: Vec<f64>,
    descended: bool,
    inverted: usize,
}

fn sample_step(params: &ModelParams, s: &TrainSample, coords: &[f64], cfg: &TrainConfig) -> Result<SampleResult> {
    let enc = encode(params, &s.problem, coords, cfg.encoding())?;
    let tape = params.forward_tape(&enc.latent, coords)?;
    let mut u = tape.output.as_slice().to_vec();
    apply_hard_bc(&s.problem, &mut u);
    let physics = pde_loss(&s.problem, &u, cfg.detach)?;
    let descended = enc.initial_loss.map_or(true, |l0| physics.loss <= l0);
    let (loss, cot) = match cfg.loss {
        LossMode::Pde => (physics.loss, physics.grad),
        LossMode::Supervised => {
            let reference =
                s.reference.as_ref().ok_or_else(|| Error::Config("supervised training needs reference solutions".into()))?;
            let (l, mut g) = supervised_loss(&u, reference)?;
            for (gi, &m) in g.iter_mut().zip(&s.problem.dirichlet().mask) {
                if m {
                    *gi = 0.0;
                }
            }
            (l, g)
        }
    };
    let grad = params.backward(&tape, &enc.latent, &cot, Wants { params: true, coords: false })?.params.expect("requested");
    Ok(SampleResult { loss, grad, descended, inverted: enc.inverted_points + physics.inverted_points })
}

/// Meta-training: every mini-batch re-encodes its samples from zero, then
/// takes one Adam step on the batch-mean gradient at the encoded latents.
/// `first_epoch` numbers the log when resuming; `on_epoch` sees each entry.
pub fn train(
    params: ModelParams,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    first_epoch: usize,
    optimizer: Option<Adam>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = params;
    let mut adam = optimizer.unwrap_or_else(|| Adam::new(params.len()));
    if adam.m.len() != params.len() {
        return Err(Error::Shape("optimizer state does not match the parameters".into()));
    }
    let Some(first) = samples.first() else {
        return Ok(TrainOutcome { params, log: Vec::new(), optimizer: adam });
    };
    let n_nodes = first.problem.mesh().n_nodes();
    if samples.iter().any(|s| s.problem.mesh().n_nodes() != n_nodes) {
        return Err(Error::Shape("all training samples must share one mesh".into()));
    }
    for s in samples {
        check_layout(&params, &s.problem)?;
    }
    let coords = first.problem.mesh().normalized_coords();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut reference_abs = None;
    for epoch in first_epoch..first_epoch + cfg.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let (mut sum, mut sum_abs, mut norm_sum, mut descended, mut inverted, mut batches) = (0.0, 0.0, 0.0, 0, 0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<SampleResult>> =
                batch.par_iter().map(|&i| sample_step(&params, &samples[i], &coords, cfg)).collect();
            let mut g = vec![0.0; params.len()];
            for r in results {
                let r = r?;
                sum += r.loss;
                sum_abs += r.loss.abs();
                descended += r.descended as usize;
                inverted += r.inverted;
                for (a, b) in g.iter_mut().zip(&r.grad) {
                    *a += b;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            g.iter_mut().for_each(|v| *v *= inv);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Divergence(format!("non-finite gradient in epoch {epoch}")));
            }
            norm_sum += norm;
            batches += 1;
            if cfg.grad_norm && norm > 0.0 {
                g.iter_mut().for_each(|v| *v /= norm);
            }
            adam.step(params.values_mut(), &g, cfg.outer_lr, cfg.beta1, cfg.beta2, cfg.eps);
        }
        let n = samples.len() as f64;
        let stats = EpochStats {
            epoch,
            mean_loss: sum / n,
            mean_abs_loss: sum_abs / n,
            grad_norm: norm_sum / batches as f64,
            seconds: if cfg.deterministic { 0.0 } else { start.elapsed().as_secs_f64() },
            descent_fraction: descended as f64 / n,
            inverted_points: inverted,
        };
        let base = *reference_abs.get_or_insert(stats.mean_abs_loss);
        if !stats.mean_abs_loss.is_finite() || stats.mean_abs_loss > cfg.divergence_factor * base.max(f64::MIN_POSITIVE) {
            return Err(Error::Divergence(format!(
                "epoch {epoch}: mean |L| = {:e} against {:e} initially",
                stats.mean_abs_loss, base
            )));
        }
        on_epoch(&stats);
        log.push(stats);
    }
    Ok(TrainOutcome { params, log, optimizer: adam })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{DirichletSet, Physics};
    use crate::mesh::{build_box_mesh, QuadratureRule};
    use crate::neural_field::SirenConfig;
    use crate::problem::{BcTable, PhaseField, ProblemKind, ProblemSpec};
    use rand::Rng;

    fn hyper_problem(n: usize, stretch: f64) -> FeProblem {
        let mesh = build_box_mesh(2, &[1.0, 1.0], &[n, n]).unwrap();
        let spec = ProblemSpec {
            kind: ProblemKind::Hyperelastic2d,
            mapping: Default::default(),
            thermo: Default::default(),
            bcs: BcTable::uniaxial_2d(stretch),
            quadrature_order: 2,
        };
        let mut phase = PhaseField::uniform(&mesh, 1.0);
        for (i, v) in phase.values.iter_mut().enumerate() {
            *v = 0.3 + 0.7 * ((i * 7) % 5) as f64 / 4.0;
        }
        spec.build(&mesh, &phase, &[]).unwrap()
    }

    fn net(latent: usize, seed: u64) -> ModelParams {
        let c = SirenConfig { input_dim: 2, output_dim: 2, hidden: vec![8, 8], omega0: 30.0, latent_dim: latent };
        ModelParams::init(&c, seed).unwrap()
    }

    #[test]
    fn detached_gradient_is_the_assembled_residual() {
        let p = hyper_problem(3, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut u: Vec<f64> = (0..p.n_dofs()).map(|_| rng.gen_range(-0.05..0.05)).collect();
        apply_hard_bc(&p, &mut u);
        let eval = pde_loss(&p, &u, true).unwrap();
        let raw = p.assemble(&p.state(u.clone(), 1.0).unwrap(), AssemblyOptions { raw: true, ..Default::default() }).unwrap();
        for i in 0..u.len() {
            let expect = if p.dirichlet().mask[i] { 0.0 } else { raw.residual[i] };
            assert!((eval.grad[i] - expect).abs() < 1e-12);
        }
        let dot: f64 = u.iter().zip(&raw.residual).map(|(a, b)| a * b).sum();
        assert!((eval.loss - dot).abs() < 1e-12 * dot.abs().max(1.0));
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let p = hyper_problem(3, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut u: Vec<f64> = (0..p.n_dofs()).map(|_| rng.gen_range(-0.05..0.05)).collect();
        apply_hard_bc(&p, &mut u);
        let eval = pde_loss(&p, &u, false).unwrap();
        let h = 1e-6;
        for i in (0..u.len()).filter(|&i| !p.dirichlet().mask[i]) {
            let (mut a, mut b) = (u.clone(), u.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (pde_loss(&p, &a, true).unwrap().loss - pde_loss(&p, &b, true).unwrap().loss) / (2.0 * h);
            assert!((fd - eval.grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", eval.grad[i]);
        }
    }

    #[test]
    fn zero_field_without_data_has_zero_loss() {
        let mesh = build_box_mesh(2, &[1.0, 1.0], &[3, 3]).unwrap();
        let rule = QuadratureRule::default_for(2).unwrap();
        let n_pts = mesh.n_elements() * rule.len();
        let mut d = DirichletSet::new(mesh.n_nodes() * 2);
        for n in mesh.face_nodes(0, false) {
            d.set(2 * n, 0.0);
            d.set(2 * n + 1, 0.0);
        }
        let p = FeProblem::new(mesh, rule, Physics::Hyperelastic, vec![[1.0, 1.0]; n_pts], d).unwrap();
        let eval = pde_loss(&p, &vec![0.0; p.n_dofs()], true).unwrap();
        assert_eq!(eval.loss, 0.0);
        assert!(eval.grad.iter().all(|&g| g == 0.0));
        let enc = encode(&net(4, 1), &p, &p.mesh().normalized_coords(), EncodeConfig::default()).unwrap();
        assert_eq!(enc.assemblies, 3);
    }

    #[test]
    fn encoding_is_deterministic_and_trivial_without_steps() {
        let p = hyper_problem(4, 0.1);
        let m = net(6, 3);
        let x = p.mesh().normalized_coords();
        let zero = encode(&m, &p, &x, EncodeConfig { steps: 0, ..Default::default() }).unwrap();
        assert!(zero.latent.iter().all(|&v| v == 0.0));
        assert_eq!(zero.assemblies, 0);
        let a = encode(&m, &p, &x, EncodeConfig::default()).unwrap();
        assert_eq!(a, encode(&m, &p, &x, EncodeConfig::default()).unwrap());
        assert!(a.latent.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn inference_carries_exact_dirichlet_values() {
        let p = hyper_problem(5, 0.2);
        let pred = infer(&net(4, 5), &p, EncodeConfig::default()).unwrap();
        let d = p.dirichlet();
        for i in 0..pred.u.len() {
            if d.mask[i] {
                assert_eq!(pred.u[i], d.values[i]);
            }
        }
        let mut again = pred.u.clone();
        apply_hard_bc(&p, &mut again);
        assert_eq!(again, pred.u);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let p = hyper_problem(4, 0.1);
        let samples = vec![TrainSample { problem: p, reference: None }];
        let m = net(4, 7);
        let cfg = TrainConfig { epochs: 1, outer_lr: 0.0, ..Default::default() };
        let out = train(m.clone(), &samples, &cfg, 0, None, |_| {}).unwrap();
        assert_eq!(out.params, m);
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let base = hyper_problem(5, 0.1);
        let samples: Vec<_> = (0..4)
            .map(|k| {
                let props = base.props().iter().map(|p| [p[0] * (1.0 + 0.2 * k as f64), p[1]]).collect();
                TrainSample { problem: base.with_props(props).unwrap(), reference: None }
            })
            .collect();
        let cfg = TrainConfig { epochs: 40, outer_lr: 1e-3, batch_size: 2, deterministic: true, ..Default::default() };
        let a = train(net(4, 9), &samples, &cfg, 0, None, |_| {}).unwrap();
        let b = train(net(4, 9), &samples, &cfg, 0, None, |_| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert!(a.log.last().unwrap().mean_abs_loss < a.log[0].mean_abs_loss);
    }

    #[test]
    fn supervised_loss_algebra_and_gradient() {
        let r = vec![0.5, -1.0, 2.0, 0.25];
        assert_eq!(supervised_loss(&r, &r).unwrap().0, 0.0);
        let shifted: Vec<f64> = r.iter().map(|v| v + 0.3).collect();
        assert!((supervised_loss(&shifted, &r).unwrap().0 - 0.09).abs() < 1e-15);
        let u = vec![0.1, 0.7, -0.4, 1.3];
        let (_, g) = supervised_loss(&u, &r).unwrap();
        let h = 1e-6;
        for i in 0..u.len() {
            let (mut a, mut b) = (u.clone(), u.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (supervised_loss(&a, &r).unwrap().0 - supervised_loss(&b, &r).unwrap().0) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
        assert!(supervised_loss(&u, &r[..3]).is_err());
    }

    #[test]
    fn supervised_mode_requires_references() {
        let samples = vec![TrainSample { problem: hyper_problem(3, 0.1), reference: None }];
        let cfg = TrainConfig { epochs: 1, loss: LossMode::Supervised, ..Default::default() };
        assert!(matches!(train(net(2, 1), &samples, &cfg, 0, None, |_| {}), Err(Error::Config(_))));
    }
}
