//! Golden training curve for the desk preset. `NIN_BLESS=1` rewrites the
//! fixture after an intentional change to training.

use std::path::PathBuf;

use nin_core::config::RunConfig;
use nin_core::ifol::{train, TrainSample};
use nin_core::neural_field::ModelParams;

const EPOCHS: usize = 3;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/desk_loss_curve.csv")
}

fn run() -> Vec<(f64, f64)> {
    let mut cfg = RunConfig::preset("paper-2d-hyper").unwrap();
    cfg.train.epochs = EPOCHS;
    let mesh = cfg.training_mesh().unwrap();
    let samples: Vec<TrainSample> = cfg
        .training_cases()
        .unwrap()
        .iter()
        .map(|c| TrainSample { problem: c.build(&cfg.problem, &mesh).unwrap(), reference: None })
        .collect();
    let init = ModelParams::init(&cfg.network, cfg.seed).unwrap();
    let out = train(init, &samples, &cfg.train, 0, None, |_| {}).unwrap();
    out.log.iter().map(|s| (s.mean_loss, s.grad_norm)).collect()
}

#[test]
fn desk_preset_reproduces_the_stored_loss_curve() {
    let curve = run();
    assert_eq!(curve.len(), EPOCHS);
    if std::env::var("NIN_BLESS").is_ok_and(|v| v == "1") {
        let mut text = String::from("epoch,mean_loss,grad_norm\n");
        for (e, (l, g)) in curve.iter().enumerate() {
            text += &format!("{e},{l:.17e},{g:.17e}\n");
        }
        std::fs::write(fixture(), text).unwrap();
        return;
    }
    let text = std::fs::read_to_string(fixture()).expect("fixture present; run with NIN_BLESS=1 to create it");
    let stored: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
            (v[0], v[1])
        })
        .collect();
    assert_eq!(stored.len(), curve.len());
    for (e, (got, want)) in curve.iter().zip(&stored).enumerate() {
        for (a, b) in [(got.0, want.0), (got.1, want.1)] {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-300), "epoch {e}: {a:e} vs stored {b:e}");
        }
    }
}
