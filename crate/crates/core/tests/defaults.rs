//! Published hyperparameters and dataset statistics.

use std::path::Path;

use rosa::encoder::EncoderKind;
use rosa::eval::ProbeConfig;
use rosa::graph::{homophily_ratio, load_dataset, DEFAULT_HOP_CAP};
use rosa::trainer::{OptimizerKind, TrainConfig};

#[test]
fn train_defaults_are_the_cora_row() {
    let c = TrainConfig::default();
    assert_eq!(c.encoder, EncoderKind::Gcn);
    assert_eq!(c.hidden_size, 128);
    assert_eq!(c.batch_size, 128);
    assert_eq!(c.learning_rate, 1e-2);
    assert_eq!(c.weight_decay, 5e-4);
    assert_eq!(c.sampler.walk_length, 10);
    assert_eq!(c.epochs, 500);
    assert_eq!(c.patience, None);
    assert_eq!(c.optimizer, OptimizerKind::Sgd);
    assert_eq!(c.loss.temperature, 0.4);
    assert_eq!(c.augment.p_edge, [0.2, 0.2]);
    assert_eq!(c.augment.p_feat, [0.3, 0.3]);
}

#[test]
fn solver_sampler_and_adversary_defaults() {
    let c = TrainConfig::default();
    assert_eq!(c.sampler.restart_prob, 0.5);
    assert_eq!(c.loss.gemd.lambda, 20.0);
    assert_eq!(c.loss.gemd.iters, 5);
    assert_eq!(c.loss.gemd.tau_sig, 2.0);
    assert!(c.loss.gemd.rescale);
    assert!(!c.loss.gemd.unrolled);
    assert_eq!(c.loss.hop_cap, 6);
    assert_eq!(DEFAULT_HOP_CAP, 6);
    assert!(c.adv.enabled);
    assert_eq!(c.adv.ascent_steps, 3);
    assert_eq!(c.adv.step_size, 1e-3);
    assert!(c.validate().is_ok());
}

#[test]
fn probe_defaults() {
    let p = ProbeConfig::default();
    assert_eq!(p.l2_strength, 1.0);
    assert_eq!(p.epochs, 100);
    assert_eq!(p.lr, 0.01);
}

/// Run with `ROSA_CORA_DIR=<dir> cargo test --test defaults -- --ignored`.
#[test]
#[ignore = "needs the Cora dataset in ROSA_CORA_DIR"]
fn cora_edge_homophily() {
    let dir = std::env::var_os("ROSA_CORA_DIR").expect("ROSA_CORA_DIR must point at the Cora dataset");
    let g = load_dataset(Path::new(&dir)).unwrap();
    let h = homophily_ratio(&g).unwrap();
    assert!((h - 0.81).abs() <= 0.005, "homophily {h}");
}
