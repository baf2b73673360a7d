//! Neural-initialized Newton: a single-increment Newton solve started from
//! the network prediction, plus error metrics and the benchmark driver.

use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{DofState, FeProblem};
use crate::error::{Error, Result};
use crate::ifol::{infer, EncodeConfig, Prediction};
use crate::mesh::StructuredMesh;
use crate::neural_field::ModelParams;
use crate::newton::{solve_auto, NewtonConfig, NewtonReport};
use crate::problem::{PhaseField, ProblemSpec};
use crate::sampler::{remap_phase_contrast, FourierSample};

/// Increment counts tried, in order, for the cold baseline.
pub const COLD_SWEEP: [usize; 5] = [1, 2, 5, 10, 20];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentMetrics {
    pub component: String,
    /// Mean of `|a − b|` over nodes.
    pub mae: f64,
    pub err_max: f64,
}

/// Per-component MAE and maximum error between two interleaved nodal fields.
pub fn compare_metrics(a: &[f64], b: &[f64], names: &[&str]) -> Result<Vec<ComponentMetrics>> {
    let k = names.len();
    if a.len() != b.len() || k == 0 || a.len() % k != 0 {
        return Err(Error::Shape(format!("cannot compare fields of {} and {} values with {k} components", a.len(), b.len())));
    }
    let n = a.len() / k;
    Ok(names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let (mut sum, mut max) = (0.0, 0.0f64);
            for i in 0..n {
                let d = (a[i * k + c] - b[i * k + c]).abs();
                sum += d;
                max = max.max(d);
            }
            ComponentMetrics { component: name.to_string(), mae: if n == 0 { 0.0 } else { sum / n as f64 }, err_max: max }
        })
        .collect())
}

/// `‖a − b‖_∞ / (1 + ‖b‖_∞)`.
pub fn relative_linf(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    diff / (1.0 + scale)
}

#[derive(Clone, Debug)]
pub struct ColdBaseline {
    /// Smallest converging increment count, or the last one tried.
    pub n_increments: usize,
    pub state: DofState,
    pub report: NewtonReport,
}

/// Cold NFEM from zero: the smallest `N_inc` in [`COLD_SWEEP`] that converges
/// without bisection. Only the accepted run's iterations are reported.
pub fn cold_baseline(problem: &FeProblem, cfg: &NewtonConfig) -> Result<ColdBaseline> {
    let zero = vec![0.0; problem.n_dofs()];
    let mut last = None;
    for n in COLD_SWEEP {
        let c = NewtonConfig { n_increments: n, max_bisections: 0, ..cfg.clone() };
        let (state, report) = solve_auto(problem, &zero, &c)?;
        let done = report.converged;
        last = Some(ColdBaseline { n_increments: n, state, report });
        if done {
            break;
        }
    }
    Ok(last.expect("sweep is non-empty"))
}

#[derive(Clone, Debug)]
pub struct NinResult {
    pub prediction: Prediction,
    pub state: DofState,
    pub report: NewtonReport,
    /// Set when the neural start failed and the cold sweep was used instead.
    pub fallback: Option<ColdBaseline>,
}

impl NinResult {
    /// Converged from the prediction in one increment.
    pub fn single_step(&self) -> bool {
        self.report.converged
    }

    /// Final state of whichever solve produced the answer.
    pub fn solution(&self) -> &DofState {
        self.fallback.as_ref().map_or(&self.state, |f| &f.state)
    }
}

/// Predict, then run Newton with one increment from the prediction.
pub fn nin_solve(params: &ModelParams, problem: &FeProblem, encode: EncodeConfig, cfg: &NewtonConfig) -> Result<NinResult> {
    let prediction = infer(params, problem, encode)?;
    let c = NewtonConfig { n_increments: 1, max_bisections: 0, ..cfg.clone() };
    let (state, report) = solve_auto(problem, &prediction.u, &c)?;
    let fallback = if report.converged {
        None
    } else {
        warn!("neural start did not converge ({}); falling back to cold increments", report.failure.as_deref().unwrap_or("?"));
        Some(cold_baseline(problem, cfg)?)
    };
    Ok(NinResult { prediction, state, report, fallback })
}

/// What defines one benchmark instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Control {
    /// Property field from a Fourier sample, evaluated on each mesh and
    /// optionally remapped to another phase contrast.
    Fourier {
        sample: FourierSample,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        contrast: Option<f64>,
    },
    /// Boundary tuple on a uniform phase field.
    Boundary { values: Vec<f64>, phi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCase {
    pub id: u64,
    pub control: Control,
}

impl BenchCase {
    pub fn phase(&self, mesh: &StructuredMesh) -> Result<PhaseField> {
        match &self.control {
            Control::Fourier { sample, contrast: None } => sample.field(mesh),
            Control::Fourier { sample, contrast: Some(pc) } => {
                remap_phase_contrast(&sample.field(mesh)?, (sample.spec.phi_min, sample.spec.phi_max), *pc)
            }
            Control::Boundary { phi, .. } => Ok(PhaseField::uniform(mesh, *phi)),
        }
    }

    pub fn boundary_values(&self) -> &[f64] {
        match &self.control {
            Control::Boundary { values, .. } => values,
            _ => &[],
        }
    }

    pub fn build(&self, spec: &ProblemSpec, mesh: &StructuredMesh) -> Result<FeProblem> {
        spec.build(mesh, &self.phase(mesh)?, self.boundary_values())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cold multi-increment NFEM reference.
    Nfem,
    /// Network prediction alone.
    Ifol,
    /// Single-increment Newton from the prediction.
    Nin,
    /// Cold sweep run after a failed neural start.
    NinFallback,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nfem => "nfem",
            Method::Ifol => "ifol",
            Method::Nin => "nin",
            Method::NinFallback => "nin_fallback",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub sample_id: u64,
    pub resolution: String,
    pub method: Method,
    pub iters_total: usize,
    pub increments: usize,
    pub wall_s: f64,
    pub components: Vec<String>,
    /// Against the NFEM reference, per component.
    pub mae: Vec<f64>,
    pub errmax: Vec<f64>,
    pub converged: bool,
    /// `‖u − u_NFEM‖_∞ / (1 + ‖u_NFEM‖_∞)`.
    pub rel_linf: f64,
}

pub fn resolution_label(mesh: &StructuredMesh) -> String {
    mesh.nodes_per_axis().iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x")
}

fn row(
    id: u64,
    res: &str,
    method: Method,
    report: Option<&NewtonReport>,
    wall: f64,
    u: &[f64],
    reference: &[f64],
    names: &[&str],
) -> Result<BenchRow> {
    let m = compare_metrics(u, reference, names)?;
    Ok(BenchRow {
        sample_id: id,
        resolution: res.to_string(),
        method,
        iters_total: report.map_or(0, |r| r.total_iterations),
        increments: report.map_or(0, |r| r.accepted_increments()),
        wall_s: wall,
        components: names.iter().map(|s| s.to_string()).collect(),
        mae: m.iter().map(|c| c.mae).collect(),
        errmax: m.iter().map(|c| c.err_max).collect(),
        converged: report.map_or(true, |r| r.converged),
        rel_linf: relative_linf(u, reference),
    })
}

fn bench_case(
    params: &ModelParams,
    spec: &ProblemSpec,
    case: &BenchCase,
    mesh: &StructuredMesh,
    encode: EncodeConfig,
    cfg: &NewtonConfig,
    deterministic: bool,
) -> Result<Vec<BenchRow>> {
    let problem = case.build(spec, mesh)?;
    let names = problem.physics().component_names(mesh.dim());
    let res = resolution_label(mesh);
    let wall = |s: f64| if deterministic { 0.0 } else { s };
    let cold = cold_baseline(&problem, cfg)?;
    let reference = &cold.state.u;
    let mut rows = vec![row(case.id, &res, Method::Nfem, Some(&cold.report), wall(cold.report.wall_seconds), reference, reference, &names)?];
    let t = Instant::now();
    let nin = nin_solve(params, &problem, encode, cfg)?;
    let predict_s = t.elapsed().as_secs_f64() - nin.report.wall_seconds - nin.fallback.as_ref().map_or(0.0, |f| f.report.wall_seconds);
    rows.push(row(case.id, &res, Method::Ifol, None, wall(predict_s), &nin.prediction.u, reference, &names)?);
    rows.push(row(
        case.id,
        &res,
        Method::Nin,
        Some(&nin.report),
        wall(predict_s + nin.report.wall_seconds),
        &nin.state.u,
        reference,
        &names,
    )?);
    if let Some(f) = &nin.fallback {
        rows.push(row(case.id, &res, Method::NinFallback, Some(&f.report), wall(f.report.wall_seconds), &f.state.u, reference, &names)?);
    }
    Ok(rows)
}

/// Every case at every resolution: the NFEM reference, the raw prediction,
/// and NiN. Cases run in parallel; rows come back ordered by case, then mesh.
/// A failing case is logged and skipped.
pub fn benchmark(
    params: &ModelParams,
    spec: &ProblemSpec,
    cases: &[BenchCase],
    meshes: &[StructuredMesh],
    encode: EncodeConfig,
    cfg: &NewtonConfig,
    deterministic: bool,
) -> Vec<BenchRow> {
    let jobs: Vec<(&BenchCase, &StructuredMesh)> = cases.iter().flat_map(|c| meshes.iter().map(move |m| (c, m))).collect();
    let results: Vec<_> =
        jobs.par_iter().map(|(c, m)| (c.id, bench_case(params, spec, c, m, encode, cfg, deterministic))).collect();
    let mut rows = Vec::new();
    for (id, r) in results {
        match r {
            Ok(mut v) => rows.append(&mut v),
            Err(e) => warn!("case {id} failed: {e}"),
        }
    }
    rows
}

/// Median and quartiles of a sample, by linear interpolation.
pub fn quartiles(values: &[f64]) -> Option<[f64; 3]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let x = p * (v.len() - 1) as f64;
        let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
        v[lo] + (x - lo as f64) * (v[hi] - v[lo])
    };
    Some([q(0.25), q(0.5), q(0.75)])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub resolution: String,
    pub method: Method,
    pub n: usize,
    pub n_converged: usize,
    /// Quartiles of total iterations over converged rows.
    pub iters: Option<[f64; 3]>,
    /// Quartiles of the component-mean MAE.
    pub mae: Option<[f64; 3]>,
    pub wall_s: Option<[f64; 3]>,
}

/// Box-plot statistics per resolution and method, in first-seen order.
pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, Method)> = Vec::new();
    for r in rows {
        let k = (r.resolution.clone(), r.method);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(res, method)| {
            let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.resolution == res && r.method == method).collect();
            let conv: Vec<&&BenchRow> = sel.iter().filter(|r| r.converged).collect();
            let iters: Vec<f64> = conv.iter().map(|r| r.iters_total as f64).collect();
            let mae: Vec<f64> = sel.iter().map(|r| r.mae.iter().sum::<f64>() / r.mae.len().max(1) as f64).collect();
            let wall: Vec<f64> = sel.iter().map(|r| r.wall_s).collect();
            SummaryRow {
                resolution: res,
                method,
                n: sel.len(),
                n_converged: conv.len(),
                iters: quartiles(&iters),
                mae: quartiles(&mae),
                wall_s: quartiles(&wall),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_box_mesh;
    use crate::neural_field::SirenConfig;
    use crate::newton::solve;
    use crate::problem::{BcTable, ProblemKind};
    use crate::sampler::{draw, FourierSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(stretch: f64) -> ProblemSpec {
        ProblemSpec {
            kind: ProblemKind::Hyperelastic2d,
            mapping: Default::default(),
            thermo: Default::default(),
            bcs: BcTable::uniaxial_2d(stretch),
            quadrature_order: 2,
        }
    }

    #[test]
    fn metrics_of_identical_and_shifted_fields() {
        let a = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        for m in compare_metrics(&a, &a, &["ux", "uy"]).unwrap() {
            assert_eq!((m.mae, m.err_max), (0.0, 0.0));
        }
        let b: Vec<f64> = a.iter().map(|v| v + 0.25).collect();
        for m in compare_metrics(&a, &b, &["ux", "uy"]).unwrap() {
            assert!((m.err_max - 0.25).abs() < 1e-15 && (m.mae - 0.25).abs() < 1e-15);
        }
        assert!(compare_metrics(&a, &b[..4], &["ux", "uy"]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_match_brute_force(seed in 0u64..1000, nodes in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..3 * nodes).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..3 * nodes).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = compare_metrics(&a, &b, &["ux", "uy", "T"]).unwrap();
            let m_rev = compare_metrics(&b, &a, &["ux", "uy", "T"]).unwrap();
            for c in 0..3 {
                let mut sum = 0.0;
                let mut max = 0.0f64;
                for i in 0..nodes {
                    let d = (a[3 * i + c] - b[3 * i + c]).abs();
                    sum += d;
                    if d > max { max = d; }
                }
                prop_assert_eq!(m[c].mae, sum / nodes as f64);
                prop_assert_eq!(m[c].err_max, max);
                prop_assert_eq!(&m[c], &m_rev[c]);
                prop_assert!(m[c].mae <= m[c].err_max);
            }
        }
    }

    #[test]
    fn quartiles_by_interpolation() {
        assert_eq!(quartiles(&[]), None);
        assert_eq!(quartiles(&[3.0]), Some([3.0; 3]));
        assert_eq!(quartiles(&[4.0, 1.0, 3.0, 2.0, 5.0]), Some([2.0, 3.0, 4.0]));
        assert_eq!(quartiles(&[1.0, 2.0]), Some([1.25, 1.5, 1.75]));
    }

    #[test]
    fn cold_baseline_picks_the_smallest_converging_count() {
        let mesh = build_box_mesh(2, &[1.0, 1.0], &[11, 11]).unwrap();
        let s = draw(&FourierSpec::standard_2d(), 4, 0);
        let p = spec(0.2).build(&mesh, &s.field(&mesh).unwrap(), &[]).unwrap();
        let cfg = NewtonConfig::default();
        let b = cold_baseline(&p, &cfg).unwrap();
        assert!(b.report.converged);
        for &n in COLD_SWEEP.iter().take_while(|&&n| n < b.n_increments) {
            let c = NewtonConfig { n_increments: n, max_bisections: 0, ..cfg.clone() };
            assert!(!solve(&p, &vec![0.0; p.n_dofs()], &c).unwrap().1.converged);
        }
        assert_eq!(b.report.accepted_increments(), b.n_increments);
    }

    #[test]
    fn newton_from_the_solution_and_near_it() {
        let mesh = build_box_mesh(2, &[1.0, 1.0], &[11, 11]).unwrap();
        let s = draw(&FourierSpec::standard_2d(), 4, 1);
        let p = spec(0.2).build(&mesh, &s.field(&mesh).unwrap(), &[]).unwrap();
        let cfg = NewtonConfig::default();
        let exact = cold_baseline(&p, &cfg).unwrap().state.u;
        let single = NewtonConfig { max_bisections: 0, ..cfg };
        let (_, r) = solve(&p, &exact, &single).unwrap();
        assert!(r.converged);
        assert_eq!(r.total_iterations, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let perturbed: Vec<f64> = exact.iter().map(|v| v + 1e-3 * rng.gen_range(-1.0..1.0)).collect();
        let (st, r) = solve(&p, &perturbed, &single).unwrap();
        assert!(r.converged && r.total_iterations <= 3, "{r:?}");
        assert!(relative_linf(&st.u, &exact) < 1e-6);
    }

    #[test]
    fn benchmark_rows_and_empty_set() {
        let mesh = build_box_mesh(2, &[1.0, 1.0], &[6, 6]).unwrap();
        let params = ModelParams::init(
            &SirenConfig { input_dim: 2, output_dim: 2, hidden: vec![8], omega0: 30.0, latent_dim: 2 },
            0,
        )
        .unwrap();
        let sp = spec(0.05);
        let cfg = NewtonConfig::default();
        assert!(benchmark(&params, &sp, &[], &[mesh.clone()], EncodeConfig::default(), &cfg, true).is_empty());
        let case = BenchCase { id: 7, control: Control::Fourier { sample: draw(&FourierSpec::standard_2d(), 2, 7), contrast: None } };
        let rows = benchmark(&params, &sp, &[case], &[mesh], EncodeConfig::default(), &cfg, true);
        assert!(rows.len() >= 3);
        assert_eq!(rows[0].method, Method::Nfem);
        assert!(rows.iter().all(|r| r.sample_id == 7 && r.resolution == "6x6" && r.wall_s == 0.0));
        let nin = rows.iter().find(|r| r.method == Method::Nin).unwrap();
        let solved = rows.iter().find(|r| r.converged && r.method != Method::Ifol && r.method != Method::Nfem).unwrap();
        assert!(solved.rel_linf < 1e-6);
        assert_eq!(nin.components, vec!["ux", "uy"]);
        let summary = summarize(&rows);
        assert_eq!(summary[0].method, Method::Nfem);
        assert_eq!(summary[0].n, 1);
    }
}
