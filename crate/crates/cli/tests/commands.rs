use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nin_core::config::RunConfig;
use nin_core::io::{read_checkpoint, read_samples};
use nin_core::mesh::MeshSpec;
use nin_core::neural_field::SirenConfig;
use nin_core::problem::{BcTable, ProblemKind};

fn nin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nin")).args(args).env("NIN_LOG", "warn").output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn small_hyper() -> RunConfig {
    let mut c = RunConfig::hyper_2d();
    c.problem.bcs = BcTable::uniaxial_2d(0.05);
    c.mesh = MeshSpec { extents: vec![1.0, 1.0], nodes_per_axis: vec![6, 6] };
    c.eval_meshes = vec![c.mesh.clone()];
    c.sampler.n_train = 4;
    c.sampler.n_test = 2;
    c.network = SirenConfig { input_dim: 2, output_dim: 2, hidden: vec![8, 8], omega0: 30.0, latent_dim: 4 };
    c.train.epochs = 2;
    c.train.batch_size = 2;
    c
}

fn linear_thermal() -> RunConfig {
    let mut c = small_hyper();
    c.problem.kind = ProblemKind::Thermal;
    c.problem.thermo.b = 0.0;
    c.problem.bcs = BcTable::thermal();
    c.network.output_dim = 1;
    c
}

fn write_config(dir: &Path, name: &str, c: &RunConfig) -> String {
    let p = dir.join(name);
    std::fs::write(&p, c.to_json().unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn read_nodal(p: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn generate_is_reproducible_and_reports_bad_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &small_hyper());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&nin(&["--config", &cfg, "--out", &s(out), "--seed", "5", "generate"]));
    }
    let (mesh, train) = read_samples(&a.join("train.nins")).unwrap();
    assert_eq!(mesh.nodes_per_axis, vec![6, 6]);
    assert_eq!(train.len(), 4);
    assert_eq!(read_samples(&a.join("test.nins")).unwrap().1.len(), 2);
    for f in ["train.nins", "test.nins", "train.nins.manifest.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let missing = dir.path().join("no/such/dir");
    let out = nin(&["--config", &cfg, "--out", &s(&missing), "generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("output directory"));
}

#[test]
fn train_smoke_resume_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &small_hyper());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&nin(&["--config", &cfg, "--out", &s(out), "--deterministic", "train"]));
    }
    for f in ["model.ninf", "train_log.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ck = read_checkpoint(&a.join("model.ninf")).unwrap();
    assert_eq!(ck.epoch, 2);
    assert!(ck.params.values().iter().all(|v| v.is_finite()));

    let model = s(&a.join("model.ninf"));
    ok(&nin(&["--config", &cfg, "--out", &s(&a), "--deterministic", "train", "--resume", &model, "--epochs", "1"]));
    let log = std::fs::read_to_string(a.join("train_log.csv")).unwrap();
    let epochs: Vec<usize> = log.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(epochs, vec![0, 1, 2]);
    assert_eq!(read_checkpoint(&a.join("model.ninf")).unwrap().epoch, 3);
}

#[test]
fn linear_thermal_solve_takes_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.json", &linear_thermal());
    let out = dir.path().join("o");
    ok(&nin(&["--config", &cfg, "--out", &s(&out), "--deterministic", "solve", "--vtk"]));
    let summary = std::fs::read_to_string(out.join("solve/summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = summary.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r[2], "1");
        assert_eq!(r[4], "true");
    }
    // uniform conductivity is not guaranteed by the Fourier sample, but the
    // boundary values are
    let id = nin_core::config::TEST_ID_OFFSET;
    let nodes = read_nodal(&out.join(format!("solve/{id}_6x6.csv")));
    for n in &nodes {
        if n[0] == 0.0 {
            assert_eq!(n[2], 0.0);
        }
        if n[0] == 1.0 {
            assert_eq!(n[2], 1.0);
        }
    }
    assert!(out.join(format!("solve/{id}_6x6.vtk")).is_file());
}

#[test]
fn nin_matches_solve_and_bench_writes_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &small_hyper());
    let out = dir.path().join("o");
    let o = s(&out);
    ok(&nin(&["--config", &cfg, "--out", &o, "--deterministic", "train"]));
    let model = s(&out.join("model.ninf"));
    ok(&nin(&["--config", &cfg, "--out", &o, "--deterministic", "solve"]));
    // the untrained network may need the fallback, which still converges
    ok(&nin(&["--config", &cfg, "--out", &o, "--deterministic", "nin", "--checkpoint", &model]));
    let id = nin_core::config::TEST_ID_OFFSET;
    for k in 0..2 {
        let a = read_nodal(&out.join(format!("solve/{}_6x6.csv", id + k)));
        let b_path = out.join(format!("nin/{}_6x6.csv", id + k));
        let b = read_nodal(&b_path);
        let scale = a.iter().flat_map(|r| r[2..].iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = a.iter().zip(&b).flat_map(|(x, y)| x[2..].iter().zip(&y[2..]).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max);
        assert!(diff / (1.0 + scale) < 1e-6, "{diff}");
    }
    ok(&nin(&["--config", &cfg, "--out", &o, "--deterministic", "infer", "--checkpoint", &model]));
    assert!(out.join(format!("infer/{id}_6x6.csv")).is_file());

    ok(&nin(&["--config", &cfg, "--out", &o, "--deterministic", "bench", "--checkpoint", &model]));
    let text = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sample_id,resolution,method,iters_total,increments,wall_s,mae_ux,mae_uy,errmax_ux,errmax_uy,converged,rel_linf"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.len() >= 6);
    for r in &rows {
        assert_eq!(r.len(), 12);
        r[0].parse::<u64>().unwrap();
        assert_eq!(r[1], "6x6");
        assert!(["nfem", "ifol", "nin", "nin_fallback"].contains(&r[2]));
        assert_eq!(r[5], "0");
        for v in &r[6..10] {
            assert!(v.parse::<f64>().unwrap() >= 0.0);
        }
        r[10].parse::<bool>().unwrap();
    }
    assert!(out.join("bench_summary.csv").is_file());
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("o"));
    assert_eq!(nin(&["--config", "no-such-preset", "--out", &out, "generate"]).status.code(), Some(2));
    assert_eq!(nin(&["--config", "missing.json", "--out", &out, "generate"]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(nin(&["--config", &s(&bad), "--out", &out, "generate"]).status.code(), Some(2));

    let mut inconsistent = small_hyper();
    inconsistent.network.output_dim = 3;
    std::fs::write(&bad, serde_json::to_string(&inconsistent).unwrap()).unwrap();
    assert_eq!(nin(&["--config", &s(&bad), "--out", &out, "generate"]).status.code(), Some(2));

    let garbage: PathBuf = dir.path().join("garbage.ninf");
    std::fs::write(&garbage, b"nonsense").unwrap();
    let cfg = write_config(dir.path(), "c.json", &small_hyper());
    assert_eq!(nin(&["--config", &cfg, "--out", &out, "nin", "--checkpoint", &s(&garbage)]).status.code(), Some(5));

    // Newton capped at one iteration cannot finish a nonlinear solve
    let mut strict = small_hyper();
    strict.problem.bcs = BcTable::uniaxial_2d(0.2);
    strict.newton.max_iters = 1;
    strict.newton.max_bisections = 0;
    let cfg = write_config(dir.path(), "strict.json", &strict);
    assert_eq!(nin(&["--config", &cfg, "--out", &out, "solve"]).status.code(), Some(3));

    // a huge outer step makes the loss blow up
    let mut wild = small_hyper();
    wild.train.outer_lr = 10.0;
    wild.train.grad_norm = false;
    wild.train.epochs = 30;
    wild.train.divergence_factor = 10.0;
    let cfg = write_config(dir.path(), "wild.json", &wild);
    assert_eq!(nin(&["--config", &cfg, "--out", &out, "train"]).status.code(), Some(4));
}
