use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use nin_core::config::RunConfig;
use nin_core::ifol::{infer, train, TrainSample};
use nin_core::io::{self, Checkpoint, SampleRecord, VtkField};
use nin_core::mesh::StructuredMesh;
use nin_core::neural_field::ModelParams;
use nin_core::newton::{solve_auto, NewtonReport};
use nin_core::nin::{benchmark, nin_solve, resolution_label, summarize, BenchCase};
use nin_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(name = "nin", version, about = "Nonlinear FEM with neural-initialized Newton solves")]
struct Cli {
    /// JSON run configuration, or the name of a preset.
    #[arg(long, global = true, default_value = "paper-2d-hyper")]
    config: String,
    /// Overrides the seed for sampling, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Zero all wall-clock fields so outputs are byte-identical across runs.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Draw training and test samples and write them with a manifest.
    Generate {
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
    },
    /// Meta-train the neural field on physics residuals.
    Train {
        /// Sample file; generated from the configuration if absent.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Continue from this checkpoint, appending to the training log.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict fields for the test samples at every evaluation mesh.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        vtk: bool,
    },
    /// Cold Newton solves of the test samples.
    Solve {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        vtk: bool,
    },
    /// Single-increment Newton solves started from the network prediction.
    Nin {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        vtk: bool,
    },
    /// NFEM, prediction and NiN for every test sample and evaluation mesh.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    NotConverged(usize),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::NotConverged(_) => EXIT_SOLVER,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Json(_) | Error::Shape(_) | Error::Incompressible(_) | Error::Domain(_) => {
                    EXIT_CONFIG
                }
                Error::Divergence(_) => EXIT_DIVERGED,
                Error::Io(_) | Error::Format(_) => EXIT_IO,
                Error::InvertedElement { .. }
                | Error::SingularDeformation(_)
                | Error::LinearSolver(_)
                | Error::IncrementFailure { .. }
                | Error::DegenerateElement { .. } => EXIT_SOLVER,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::NotConverged(n) => write!(f, "{n} solve(s) did not converge"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = if Path::new(&cli.config).is_file() {
        RunConfig::from_json(&fs::read_to_string(&cli.config)?)?
    } else if cli.config.ends_with(".json") {
        return Err(Error::Config(format!("configuration file {} not found", cli.config)).into());
    } else {
        RunConfig::preset(&cli.config)?
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.train.deterministic |= cli.deterministic;
    cfg.validate()?;
    Ok(cfg)
}

/// Creates the output directory itself but not missing parents, so a typo
/// in the path is reported instead of silently materialized.
fn out_dir(cli: &Cli) -> CliResult<&Path> {
    if !cli.out.is_dir() {
        fs::create_dir(&cli.out)
            .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", cli.out.display())))?;
    }
    Ok(&cli.out)
}

fn cases_from(path: Option<&Path>, fallback: impl FnOnce() -> nin_core::Result<Vec<BenchCase>>) -> CliResult<Vec<BenchCase>> {
    match path {
        Some(p) => Ok(io::read_samples(p)?.1.into_iter().map(|r| BenchCase { id: r.id, control: r.control }).collect()),
        None => Ok(fallback()?),
    }
}

fn tag(case: &BenchCase, mesh: &StructuredMesh) -> String {
    format!("{}_{}", case.id, resolution_label(mesh))
}

/// Node coordinates followed by the field components, 17 significant digits.
fn write_nodal_csv(path: &Path, mesh: &StructuredMesh, names: &[&str], u: &[f64]) -> CliResult<()> {
    let axes = ["x", "y", "z"];
    let mut text = axes[..mesh.dim()].iter().chain(names).copied().collect::<Vec<_>>().join(",");
    text.push('\n');
    let k = names.len();
    for n in 0..mesh.n_nodes() {
        let x = mesh.node(n);
        let row: Vec<String> =
            x[..mesh.dim()].iter().chain(&u[n * k..(n + 1) * k]).map(|v| format!("{v:.16e}")).collect();
        text += &row.join(",");
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_report(path: &Path, report: &NewtonReport, deterministic: bool) -> CliResult<()> {
    let mut r = report.clone();
    if deterministic {
        r.wall_seconds = 0.0;
    }
    fs::write(path, serde_json::to_string_pretty(&r).map_err(Error::from)?)?;
    Ok(())
}

fn cmd_generate(cli: &Cli, cfg: &RunConfig, split: Split) -> CliResult<()> {
    let out = out_dir(cli)?;
    let mesh = cfg.training_mesh()?;
    let mut sets = Vec::new();
    if split != Split::Test {
        sets.push(("train", cfg.training_cases()?));
    }
    if split != Split::Train {
        sets.push(("test", cfg.test_cases()?));
    }
    for (name, cases) in sets {
        let records = cases
            .iter()
            .map(|c| Ok(SampleRecord { id: c.id, phase: c.phase(&mesh)?.values, control: c.control.clone() }))
            .collect::<nin_core::Result<Vec<_>>>()?;
        let path = out.join(format!("{name}.nins"));
        io::write_samples(&path, &mesh, &records)?;
        info!("wrote {} {name} samples to {}", records.len(), path.display());
    }
    Ok(())
}

fn cmd_train(cli: &Cli, cfg: &RunConfig, samples: Option<&Path>, resume: Option<&Path>, epochs: Option<usize>) -> CliResult<()> {
    let out = out_dir(cli)?;
    let mesh = cfg.training_mesh()?;
    let cases = cases_from(samples, || cfg.training_cases())?;
    let phases = cases.iter().map(|c| c.phase(&mesh)).collect::<nin_core::Result<Vec<_>>>()?;
    let train_set: Vec<TrainSample> = if cases.iter().all(|c| c.boundary_values().is_empty()) {
        cfg.problem.build_many(&mesh, &phases, &[])?
    } else {
        cases.iter().map(|c| c.build(&cfg.problem, &mesh)).collect::<nin_core::Result<Vec<_>>>()?
    }
    .into_iter()
    .map(|problem| TrainSample { problem, reference: None })
    .collect();
    let (params, first_epoch, optimizer) = match resume {
        Some(p) => {
            let ck = io::read_checkpoint(p)?;
            if ck.params.config() != &cfg.network {
                return Err(Error::Config("checkpoint network does not match the configuration".into()).into());
            }
            (ck.params, ck.epoch, ck.optimizer)
        }
        None => (ModelParams::init(&cfg.network, cfg.seed)?, 0, None),
    };
    let mut tc = cfg.train.clone();
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    info!("training on {} samples for {} epochs from epoch {first_epoch}", train_set.len(), tc.epochs);
    let every = (tc.epochs / 20).max(1);
    let outcome = train(params, &train_set, &tc, first_epoch, optimizer, |s| {
        if (s.epoch - first_epoch) % every == 0 {
            info!("epoch {} loss {:.6e} |loss| {:.6e} grad {:.3e}", s.epoch, s.mean_loss, s.mean_abs_loss, s.grad_norm);
        }
    })?;
    let ckpt = Checkpoint { params: outcome.params, epoch: first_epoch + tc.epochs, optimizer: Some(outcome.optimizer) };
    io::write_checkpoint(&out.join("model.ninf"), &ckpt)?;
    io::write_training_log(&out.join("train_log.csv"), &outcome.log, resume.is_some())?;
    info!("wrote {}", out.join("model.ninf").display());
    Ok(())
}

fn cmd_infer(cli: &Cli, cfg: &RunConfig, ckpt: &Path, samples: Option<&Path>, vtk: bool) -> CliResult<()> {
    let dir = out_dir(cli)?.join("infer");
    fs::create_dir_all(&dir)?;
    let params = io::read_checkpoint(ckpt)?.params;
    for mesh in cfg.evaluation_meshes()? {
        for case in cases_from(samples, || cfg.test_cases())? {
            let problem = case.build(&cfg.problem, &mesh)?;
            let names = problem.physics().component_names(mesh.dim());
            let pred = infer(&params, &problem, cfg.encoding())?;
            write_nodal_csv(&dir.join(format!("{}.csv", tag(&case, &mesh))), &mesh, &names, &pred.u)?;
            if vtk {
                let fields = field_list(&problem, &pred.u, &case, &mesh)?;
                let refs: Vec<VtkField> =
                    fields.iter().map(|(n, k, v)| VtkField { name: n, components: *k, values: v }).collect();
                io::write_vtk(&dir.join(format!("{}.vtk", tag(&case, &mesh))), &mesh, "prediction", &refs)?;
            }
        }
    }
    Ok(())
}

/// Displacement vector, temperature scalar and phase, as present.
fn field_list(
    problem: &nin_core::assembly::FeProblem,
    u: &[f64],
    case: &BenchCase,
    mesh: &StructuredMesh,
) -> CliResult<Vec<(String, usize, Vec<f64>)>> {
    let comps = problem.split_components(u);
    let names = problem.physics().component_names(mesh.dim());
    let mut out = Vec::new();
    let disp: Vec<usize> = (0..names.len()).filter(|&i| names[i] != "T").collect();
    if !disp.is_empty() {
        let mut v = Vec::with_capacity(mesh.n_nodes() * disp.len());
        for n in 0..mesh.n_nodes() {
            v.extend(disp.iter().map(|&c| comps[c][n]));
        }
        out.push(("displacement".to_string(), disp.len(), v));
    }
    if let Some(t) = names.iter().position(|&n| n == "T") {
        out.push(("temperature".to_string(), 1, comps[t].clone()));
    }
    out.push(("phase".to_string(), 1, case.phase(mesh)?.values));
    Ok(out)
}

fn cmd_solve(cli: &Cli, cfg: &RunConfig, samples: Option<&Path>, neural: Option<&Path>, vtk: bool) -> CliResult<()> {
    let name = if neural.is_some() { "nin" } else { "solve" };
    let dir = out_dir(cli)?.join(name);
    fs::create_dir_all(&dir)?;
    let params = neural.map(io::read_checkpoint).transpose()?.map(|c| c.params);
    let mut summary = String::from("sample_id,resolution,iters_total,increments,converged,final_residual,wall_s\n");
    let mut failed = 0;
    for mesh in cfg.evaluation_meshes()? {
        for case in cases_from(samples, || cfg.test_cases())? {
            let problem = case.build(&cfg.problem, &mesh)?;
            let names = problem.physics().component_names(mesh.dim());
            // iterations spent on a failed neural start, charged to the fallback
            let mut wasted = 0;
            let (state, report) = match &params {
                Some(p) => {
                    let r = nin_solve(p, &problem, cfg.encoding(), &cfg.newton)?;
                    match r.fallback {
                        Some(f) => {
                            warn!("sample {}: neural start failed, fallback used", case.id);
                            let path = dir.join(format!("{}_neural_start.json", tag(&case, &mesh)));
                            write_report(&path, &r.report, cfg.train.deterministic)?;
                            wasted = r.report.total_iterations;
                            (f.state, f.report)
                        }
                        None => (r.state, r.report),
                    }
                }
                None => solve_auto(&problem, &vec![0.0; problem.n_dofs()], &cfg.newton)?,
            };
            if !report.converged {
                failed += 1;
            }
            let wall = if cfg.train.deterministic { 0.0 } else { report.wall_seconds };
            summary += &format!(
                "{},{},{},{},{},{},{}\n",
                case.id,
                resolution_label(&mesh),
                report.total_iterations + wasted,
                report.accepted_increments(),
                report.converged,
                report.final_residual().unwrap_or(f64::NAN),
                wall
            );
            write_report(&dir.join(format!("{}.json", tag(&case, &mesh))), &report, cfg.train.deterministic)?;
            write_nodal_csv(&dir.join(format!("{}.csv", tag(&case, &mesh))), &mesh, &names, &state.u)?;
            if vtk {
                let fields = field_list(&problem, &state.u, &case, &mesh)?;
                let refs: Vec<VtkField> =
                    fields.iter().map(|(n, k, v)| VtkField { name: n, components: *k, values: v }).collect();
                io::write_vtk(&dir.join(format!("{}.vtk", tag(&case, &mesh))), &mesh, name, &refs)?;
            }
        }
    }
    fs::write(dir.join("summary.csv"), summary)?;
    if failed > 0 {
        return Err(CliError::NotConverged(failed));
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, cfg: &RunConfig, ckpt: &Path, samples: Option<&Path>) -> CliResult<()> {
    let out = out_dir(cli)?;
    let params = io::read_checkpoint(ckpt)?.params;
    let cases = cases_from(samples, || cfg.test_cases())?;
    let meshes = cfg.evaluation_meshes()?;
    let rows = benchmark(&params, &cfg.problem, &cases, &meshes, cfg.encoding(), &cfg.newton, cfg.train.deterministic);
    let components: Vec<String> =
        cfg.problem.physics().component_names(cfg.mesh.dim()).iter().map(|s| s.to_string()).collect();
    io::write_bench_csv(&out.join("bench.csv"), &rows, &components)?;
    io::write_summary_csv(&out.join("bench_summary.csv"), &summarize(&rows))?;
    info!("wrote {} benchmark rows", rows.len());
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate { split } => cmd_generate(cli, &cfg, *split),
        Command::Train { samples, resume, epochs } => cmd_train(cli, &cfg, samples.as_deref(), resume.as_deref(), *epochs),
        Command::Infer { checkpoint, samples, vtk } => cmd_infer(cli, &cfg, checkpoint, samples.as_deref(), *vtk),
        Command::Solve { samples, vtk } => cmd_solve(cli, &cfg, samples.as_deref(), None, *vtk),
        Command::Nin { checkpoint, samples, vtk } => cmd_solve(cli, &cfg, samples.as_deref(), Some(checkpoint), *vtk),
        Command::Bench { checkpoint, samples } => cmd_bench(cli, &cfg, checkpoint, samples.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("NIN_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.code();
            ExitCode::from(if code == 0 { EXIT_FAILURE } else { code })
        }
    }
}
