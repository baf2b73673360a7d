//! Newton–Raphson with load increments, bisection on failure, and a staggered
//! driver for one-way coupled thermomechanics.

use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::assembly::{AssemblyOptions, DirichletSet, DofState, FeProblem, Physics};
use crate::error::{Error, Result};
use crate::linear::{linear_solve, LinearSolver};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub n_increments: usize,
    pub linear_solver: LinearSolver,
    /// How many times a failed increment may be halved before giving up.
    pub max_bisections: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: 25, n_increments: 1, linear_solver: LinearSolver::Direct, max_bisections: 4 }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("Newton tolerance must be positive, got {}", self.tol)));
        }
        if self.n_increments == 0 {
            return Err(Error::Config("n_increments must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_increments(mut self, n: usize) -> Self {
        self.n_increments = n;
        self
    }
}

/// One attempted load increment. Failed attempts stay in the report so that
/// iteration totals reflect the work actually done.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementReport {
    pub load_scale: f64,
    pub iterations: usize,
    /// `‖r‖₂` over free DOFs at entry and after every correction.
    pub residual_norms: Vec<f64>,
    pub converged: bool,
    pub bisection_depth: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub increments: Vec<IncrementReport>,
    pub total_iterations: usize,
    pub converged: bool,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
}

impl NewtonReport {
    /// Number of accepted increments.
    pub fn accepted_increments(&self) -> usize {
        self.increments.iter().filter(|i| i.converged).count()
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.increments.last().and_then(|i| i.residual_norms.last().copied())
    }

    fn push(&mut self, inc: IncrementReport) {
        self.total_iterations += inc.iterations;
        self.increments.push(inc);
    }

    fn absorb(&mut self, other: NewtonReport) {
        for inc in other.increments {
            self.push(inc);
        }
    }

    /// `(increment, iteration, residual_norm)` rows for CSV export.
    pub fn rows(&self) -> Vec<(usize, usize, f64)> {
        self.increments
            .iter()
            .enumerate()
            .flat_map(|(n, inc)| inc.residual_norms.iter().enumerate().map(move |(k, &r)| (n, k, r)))
            .collect()
    }
}

enum StepOutcome {
    Converged(Vec<f64>),
    Failed(String),
}

fn newton_increment(
    problem: &FeProblem,
    start: &[f64],
    load_scale: f64,
    cfg: &NewtonConfig,
    depth: usize,
) -> Result<(StepOutcome, IncrementReport)> {
    let mut state = problem.state(start.to_vec(), load_scale)?;
    state.enforce_dirichlet();
    let mut report = IncrementReport {
        load_scale,
        iterations: 0,
        residual_norms: Vec::new(),
        converged: false,
        bisection_depth: depth,
        failure: None,
    };
    let opts = AssemblyOptions { tangent: true, ..Default::default() };
    loop {
        let out = match problem.assemble(&state, opts) {
            Ok(out) => out,
            Err(e @ (Error::InvertedElement { .. } | Error::SingularDeformation(_) | Error::Domain(_))) => {
                let msg = e.to_string();
                report.failure = Some(msg.clone());
                return Ok((StepOutcome::Failed(msg), report));
            }
            Err(e) => return Err(e),
        };
        let norm = problem.free_norm(&out.residual);
        report.residual_norms.push(norm);
        debug!("load {load_scale:.4} iter {} |r| = {norm:.3e}", report.iterations);
        if !norm.is_finite() {
            let msg = "non-finite residual".to_string();
            report.failure = Some(msg.clone());
            return Ok((StepOutcome::Failed(msg), report));
        }
        if norm < cfg.tol {
            report.converged = true;
            return Ok((StepOutcome::Converged(state.u), report));
        }
        if report.iterations >= cfg.max_iters {
            let msg = format!("no convergence in {} iterations (|r| = {norm:.3e})", cfg.max_iters);
            report.failure = Some(msg.clone());
            return Ok((StepOutcome::Failed(msg), report));
        }
        let rhs: Vec<f64> = out.residual.iter().map(|v| -v).collect();
        let k = out.tangent.expect("tangent requested");
        let du = match linear_solve(&k, &rhs, &cfg.linear_solver) {
            Ok(du) => du,
            Err(e @ Error::LinearSolver(_)) => {
                let msg = e.to_string();
                report.failure = Some(msg.clone());
                return Ok((StepOutcome::Failed(msg), report));
            }
            Err(e) => return Err(e),
        };
        for (u, d) in state.u.iter_mut().zip(&du) {
            *u += d;
        }
        report.iterations += 1;
    }
}

/// Algorithm: for load scales `n / N_inc`, iterate `K ΔU = −r` until
/// `‖r‖₂ < tol`. A failed increment is halved up to `max_bisections` times.
///
/// Returns the last accepted state together with the report. A run that does
/// not reach full load is reported with `converged = false`, not as an error;
/// errors are reserved for malformed input.
pub fn solve(problem: &FeProblem, initial: &[f64], cfg: &NewtonConfig) -> Result<(DofState, NewtonReport)> {
    cfg.validate()?;
    if initial.len() != problem.n_dofs() {
        return Err(Error::Shape(format!("initial guess has {} DOFs, problem has {}", initial.len(), problem.n_dofs())));
    }
    let timer = Instant::now();
    let mut report = NewtonReport::default();
    let mut u = initial.to_vec();
    let mut accepted = 0.0;
    // Pending targets, processed from the back.
    let mut targets: Vec<(f64, usize)> =
        (1..=cfg.n_increments).rev().map(|n| (n as f64 / cfg.n_increments as f64, 0)).collect();
    while let Some((target, depth)) = targets.pop() {
        let (outcome, inc) = newton_increment(problem, &u, target, cfg, depth)?;
        report.push(inc);
        match outcome {
            StepOutcome::Converged(next) => {
                u = next;
                accepted = target;
            }
            StepOutcome::Failed(msg) => {
                if depth >= cfg.max_bisections {
                    warn!("increment to load {target:.4} failed: {msg}");
                    report.failure = Some(format!("increment to load scale {target} failed: {msg}"));
                    break;
                }
                let mid = 0.5 * (accepted + target);
                targets.push((target, depth + 1));
                targets.push((mid, depth + 1));
            }
        }
    }
    report.converged = report.failure.is_none();
    report.wall_seconds = timer.elapsed().as_secs_f64();
    let mut state = problem.state(u, accepted)?;
    state.enforce_dirichlet();
    Ok((state, report))
}

/// Conduction-only problem sharing mesh, quadrature and `k₀` with `problem`.
pub fn thermal_subproblem(problem: &FeProblem) -> Result<FeProblem> {
    let Physics::ThermoMech(params) = *problem.physics() else {
        return Err(Error::Config("thermal subproblem requires thermomechanical physics".into()));
    };
    let dpn = problem.dofs_per_node();
    let dim = problem.mesh().dim();
    let n = problem.mesh().n_nodes();
    let mut d = DirichletSet::new(n);
    let full = problem.dirichlet();
    for a in 0..n {
        if full.mask[a * dpn + dim] {
            d.set(a, full.values[a * dpn + dim]);
        }
    }
    FeProblem::new(
        problem.mesh().clone(),
        problem.rule().clone(),
        Physics::Thermal { b: params.b, c: params.c },
        problem.props().to_vec(),
        d,
    )
}

/// Staggered solve exploiting the one-way `T → u` coupling: Newton on the
/// conduction residual, then one mechanical solve with every temperature
/// fixed at its converged value.
///
/// The mechanical stage runs on the full coupled residual with the
/// temperature DOFs constrained, so it is a single linear step.
pub fn solve_thermomech(problem: &FeProblem, initial: &[f64], cfg: &NewtonConfig) -> Result<(DofState, NewtonReport)> {
    let timer = Instant::now();
    let thermal = thermal_subproblem(problem)?;
    let dpn = problem.dofs_per_node();
    let dim = problem.mesh().dim();
    if initial.len() != problem.n_dofs() {
        return Err(Error::Shape(format!("initial guess has {} DOFs, problem has {}", initial.len(), problem.n_dofs())));
    }
    let t0: Vec<f64> = initial.iter().skip(dim).step_by(dpn).copied().collect();
    let (t_state, mut report) = solve(&thermal, &t0, cfg)?;
    if !report.converged {
        report.wall_seconds = timer.elapsed().as_secs_f64();
        let mut u = initial.to_vec();
        for (a, t) in t_state.u.iter().enumerate() {
            u[a * dpn + dim] = *t;
        }
        return Ok((problem.state(u, t_state.load_scale)?, report));
    }
    let mut d = problem.dirichlet().clone();
    let mut u = initial.to_vec();
    for (a, &t) in t_state.u.iter().enumerate() {
        d.set(a * dpn + dim, t);
        u[a * dpn + dim] = t;
    }
    let mech = problem.clone().with_dirichlet(d)?;
    let mech_cfg = NewtonConfig { n_increments: 1, ..cfg.clone() };
    let (state, mech_report) = solve(&mech, &u, &mech_cfg)?;
    report.absorb(mech_report);
    report.converged = report.failure.is_none() && state.load_scale == 1.0;
    report.wall_seconds = timer.elapsed().as_secs_f64();
    Ok((problem.state(state.u, state.load_scale)?, report))
}

/// Dispatches to [`solve_thermomech`] for thermomechanical problems.
pub fn solve_auto(problem: &FeProblem, initial: &[f64], cfg: &NewtonConfig) -> Result<(DofState, NewtonReport)> {
    match problem.physics() {
        Physics::ThermoMech(_) => solve_thermomech(problem, initial, cfg),
        _ => solve(problem, initial, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::ThermoMechParams;
    use crate::mesh::{build_box_mesh, QuadratureRule};
    use crate::problem::{BcTable, PhaseField, ProblemKind, ProblemSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hyper_problem(n: usize, stretch: f64) -> FeProblem {
        let mesh = build_box_mesh(2, &[1.0, 1.0], &[n, n]).unwrap();
        let spec = ProblemSpec {
            kind: ProblemKind::Hyperelastic2d,
            mapping: Default::default(),
            thermo: Default::default(),
            bcs: BcTable::uniaxial_2d(stretch),
            quadrature_order: 2,
        };
        spec.build(&mesh, &PhaseField::uniform(&mesh, 1.0), &[]).unwrap()
    }

    fn bar(nx: usize, b: f64) -> FeProblem {
        let mesh = build_box_mesh(2, &[1.0, 0.05], &[nx, 2]).unwrap();
        let rule = QuadratureRule::default_for(2).unwrap();
        let mut d = DirichletSet::new(mesh.n_nodes());
        for a in mesh.face_nodes(0, false) {
            d.set(a, 0.0);
        }
        for a in mesh.face_nodes(0, true) {
            d.set(a, 1.0);
        }
        let np = mesh.n_elements() * rule.len();
        FeProblem::new(mesh, rule, Physics::Thermal { b, c: 2.0 }, vec![[1.0, 1.0]; np], d).unwrap()
    }

    #[test]
    fn linear_problem_takes_one_iteration() {
        let p = bar(11, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let start: Vec<f64> = (0..p.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (state, report) = solve(&p, &start, &NewtonConfig::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.total_iterations, 1);
        let (again, r2) = solve(&p, &state.u, &NewtonConfig::default()).unwrap();
        assert_eq!(r2.total_iterations, 0);
        assert_eq!(again.u, state.u);
        for (x, t) in p.mesh().coords().iter().zip(&state.u) {
            assert!((t - x[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn hyperelastic_stretch_converges_with_increments() {
        let p = hyper_problem(11, 0.2);
        let zero = vec![0.0; p.n_dofs()];
        let (multi, r5) = solve(&p, &zero, &NewtonConfig::default().with_increments(5)).unwrap();
        assert!(r5.converged);
        assert_eq!(r5.increments.len(), 5);
        assert_eq!(r5.total_iterations, r5.rows().len() - r5.increments.len());
        let (single, r1) = solve(&p, &zero, &NewtonConfig { max_bisections: 0, ..Default::default() }).unwrap();
        if r1.converged {
            let scale = 1.0 + multi.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let diff = single.u.iter().zip(&multi.u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(diff / scale < 1e-6);
            assert!(r1.total_iterations > r5.total_iterations / 5);
        }
        // quadratic basin: once |r| < 1e-2, at most 3 further iterations
        for inc in r5.increments.iter().chain(&r1.increments).filter(|i| i.converged) {
            if let Some(k) = inc.residual_norms.iter().position(|&r| r < 1e-2) {
                assert!(inc.residual_norms.len() - 1 - k <= 3, "{:?}", inc.residual_norms);
            }
        }
    }

    #[test]
    fn failed_increment_is_bisected() {
        let p = hyper_problem(6, 0.3);
        let cfg = NewtonConfig { max_iters: 3, ..Default::default() };
        let (state, report) = solve(&p, &vec![0.0; p.n_dofs()], &cfg).unwrap();
        assert!(report.increments.iter().any(|i| !i.converged));
        assert!(report.increments.iter().any(|i| i.bisection_depth > 0));
        if report.converged {
            assert_eq!(state.load_scale, 1.0);
        }
        let strict = NewtonConfig { max_iters: 1, max_bisections: 0, ..Default::default() };
        let (state, report) = solve(&p, &vec![0.0; p.n_dofs()], &strict).unwrap();
        assert!(!report.converged);
        assert!(report.failure.is_some());
        assert_eq!(state.load_scale, 0.0);
        assert!(report.final_residual().unwrap() >= strict.tol);
    }

    #[test]
    fn nonlinear_bar_matches_kirchhoff_solution() {
        // q = k₀(1 + 2T²) T' is constant, so G(T) = T + 2T³/3 is linear in x.
        let p = bar(21, 2.0);
        let (state, report) = solve(&p, &vec![0.0; p.n_dofs()], &NewtonConfig::default()).unwrap();
        assert!(report.converged);
        for (x, &t) in p.mesh().coords().iter().zip(&state.u) {
            let target = x[0] * 5.0 / 3.0;
            let mut exact = x[0];
            for _ in 0..50 {
                exact -= (exact + 2.0 * exact.powi(3) / 3.0 - target) / (1.0 + 2.0 * exact * exact);
            }
            assert!((t - exact).abs() < 1e-3, "x = {} T = {t} exact = {exact}", x[0]);
        }
    }

    #[test]
    fn staggered_thermomech_reports_both_stages() {
        let mesh = build_box_mesh(2, &[1.0, 1.0], &[5, 5]).unwrap();
        let spec = ProblemSpec {
            kind: ProblemKind::Thermomech,
            mapping: Default::default(),
            thermo: ThermoMechParams { b: 0.0, ..Default::default() },
            bcs: BcTable::thermomech(2),
            quadrature_order: 2,
        };
        let p = spec.build(&mesh, &PhaseField::uniform(&mesh, 1.0), &[]).unwrap();
        let (state, report) = solve_auto(&p, &vec![0.0; p.n_dofs()], &NewtonConfig::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.increments.len(), 2);
        assert_eq!(report.total_iterations, 2);
        let r = p.residual(&state).unwrap();
        assert!(p.free_norm(&r) < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(NewtonConfig { tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(NewtonConfig::default().with_increments(0).validate().is_err());
        let json = serde_json::to_string(&NewtonConfig::default()).unwrap();
        assert_eq!(serde_json::from_str::<NewtonConfig>(&json).unwrap(), NewtonConfig::default());
    }
}
