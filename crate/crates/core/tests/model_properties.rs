//! Property tests for the tape, encoders, contrastive loss, probe and config.

use std::path::Path;

use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rosa::autodiff::Tape;
use rosa::config::{render, Settings};
use rosa::contrastive::{batch_loss, LossConfig, PreparedBatch};
use rosa::encoder::{encode, EncoderKind, Model, ViewStack};
use rosa::eval::{train_probe, ProbeConfig};
use rosa::graph::{generate_sbm, induced_subgraph, Graph, HopCache};
use rosa::sampling::{sample_batch, SamplerConfig, ViewPair};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn kind() -> impl Strategy<Value = EncoderKind> {
    prop_oneof![Just(EncoderKind::Gcn), Just(EncoderKind::Sage), Just(EncoderKind::Mlp)]
}

fn embed(model: &Model, g: &Graph, nodes: &[usize]) -> Array2<f64> {
    let sg = induced_subgraph(g, nodes).unwrap();
    let stack = ViewStack::new(&[&sg]).unwrap();
    let mut tape = Tape::new();
    let bound = model.bind_frozen(&mut tape);
    let x = tape.constant(stack.features.clone());
    let h = encode(&mut tape, model, &bound, &stack, x).unwrap();
    tape.value(h).clone()
}

fn sbm() -> Graph {
    generate_sbm(2, 8, 0.5, 0.1, 4, 0.3, 3).unwrap()
}

fn pairs(g: &Graph, centrals: &[usize], seed: u64) -> Vec<ViewPair> {
    let cfg = SamplerConfig {
        walk_length: 5,
        restart_prob: 0.3,
        seed,
        ..Default::default()
    };
    sample_batch(g, centrals, &cfg, 0).unwrap()
}

fn loss_of(g: &Graph, model: &Model, pairs: &[ViewPair]) -> f64 {
    let cfg = LossConfig::default();
    let mut cache = HopCache::new(cfg.hop_cap);
    let batch = PreparedBatch::new(g, pairs, &cfg, &mut cache).unwrap();
    batch_loss(model, &batch, &cfg, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backward_is_linear(x in matrix(3, 4), w in matrix(4, 2), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let grad = |ka: f64, kb: f64| {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let wv = tape.constant(w.clone());
            let xw = tape.matmul(xv, wv).unwrap();
            let e = tape.exp(xw);
            let f = tape.sum(e);
            let r = tape.relu(xv);
            let sq = tape.mul(r, xv).unwrap();
            let gsum = tape.sum(sq);
            let fa = tape.scale(f, ka);
            let gb = tape.scale(gsum, kb);
            let loss = tape.add(fa, gb).unwrap();
            tape.backward(loss).unwrap().get(xv).unwrap().clone()
        };
        let combined = grad(a, b);
        let separate = grad(1.0, 0.0) * a + grad(0.0, 1.0) * b;
        for (p, q) in combined.iter().zip(&separate) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn encoders_are_permutation_equivariant(
        kind in kind(),
        seed in any::<u64>(),
        order in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let g = sbm();
        let model = Model::init(kind, 4, 6, 5, seed).unwrap();
        let base = embed(&model, &g, &(0..8).collect::<Vec<_>>());
        let permuted = embed(&model, &g, &order);
        let expected = base.select(Axis(0), &order);
        for (p, q) in permuted.iter().zip(&expected) {
            prop_assert!((p - q).abs() <= 1e-12, "{kind}: {p} vs {q}");
        }
    }

    #[test]
    fn isolated_node_depends_only_on_itself(kind in kind(), seed in any::<u64>(), other in matrix(2, 4)) {
        let mut feats = Array2::zeros((3, 4));
        feats.row_mut(0).fill(0.5);
        let g1 = Graph::new(&[(1, 2)], feats.clone(), None, None).unwrap();
        feats.slice_mut(ndarray::s![1.., ..]).assign(&other);
        let g2 = Graph::new(&[(1, 2)], feats, None, None).unwrap();
        let model = Model::init(kind, 4, 6, 5, seed).unwrap();
        let a = embed(&model, &g1, &[0, 1, 2]);
        let b = embed(&model, &g2, &[0, 1, 2]);
        prop_assert_eq!(a.row(0), b.row(0));
    }

    #[test]
    fn loss_ignores_node_order_within_views(
        seed in 0u64..1000,
        shuffle_seed in any::<u64>(),
    ) {
        let g = sbm();
        let model = Model::init(EncoderKind::Gcn, 4, 6, 5, seed).unwrap();
        let original = pairs(&g, &[0, 5, 10, 15], seed);
        let base = loss_of(&g, &model, &original);
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
        let mut shuffle = |nodes: &[usize]| {
            let mut out = nodes.to_vec();
            out[1..].shuffle(&mut rng);
            induced_subgraph(&g, &out).unwrap()
        };
        let reordered: Vec<ViewPair> = original
            .iter()
            .map(|p| ViewPair { first: shuffle(&p.first.nodes), second: shuffle(&p.second.nodes) })
            .collect();
        let permuted = loss_of(&g, &model, &reordered);
        prop_assert!((base - permuted).abs() <= 1e-9, "{base} vs {permuted}");
    }

    #[test]
    fn loss_ignores_batch_order(
        seed in 0u64..1000,
        order in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let g = sbm();
        let model = Model::init(EncoderKind::Sage, 4, 6, 5, seed).unwrap();
        let original = pairs(&g, &[1, 6, 11, 12], seed);
        let shuffled: Vec<ViewPair> = order.iter().map(|&k| original[k].clone()).collect();
        let a = loss_of(&g, &model, &original);
        let b = loss_of(&g, &model, &shuffled);
        prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }

    #[test]
    fn probe_invariant_to_joint_row_permutation(
        x in matrix(24, 3),
        classes in prop::collection::vec(0usize..3, 24),
        mask in prop::collection::vec(any::<bool>(), 24),
        order in Just((0..24).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let labels: Vec<Option<usize>> = classes.iter().map(|&c| Some(c)).collect();
        let trained: std::collections::HashSet<_> = classes.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
        prop_assume!(trained.len() >= 2);
        let cfg = ProbeConfig::default();
        let probe = train_probe(&x, &labels, &mask, 3, &cfg).unwrap();
        let xp = x.select(Axis(0), &order);
        let lp: Vec<_> = order.iter().map(|&i| labels[i]).collect();
        let mp: Vec<_> = order.iter().map(|&i| mask[i]).collect();
        let probe_p = train_probe(&xp, &lp, &mp, 3, &cfg).unwrap();
        for (a, b) in probe.w.iter().zip(&probe_p.w) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let pred = probe.predict(&x);
        let pred_p = probe_p.predict(&xp);
        let expected: Vec<_> = order.iter().map(|&i| pred[i]).collect();
        prop_assert_eq!(pred_p, expected);
    }

    #[test]
    fn probe_never_reads_labels_outside_training_rows(
        x in matrix(20, 3),
        classes in prop::collection::vec(0usize..3, 20),
        noise in prop::collection::vec(0usize..3, 20),
    ) {
        let mask: Vec<bool> = (0..20).map(|i| i % 3 == 0).collect();
        let labels: Vec<Option<usize>> = classes.iter().map(|&c| Some(c)).collect();
        let trained: std::collections::HashSet<_> = (0..20).filter(|&i| mask[i]).map(|i| classes[i]).collect();
        prop_assume!(trained.len() >= 2);
        let scrambled: Vec<Option<usize>> = (0..20).map(|i| if mask[i] { labels[i] } else { Some(noise[i]) }).collect();
        let cfg = ProbeConfig::default();
        prop_assert_eq!(train_probe(&x, &labels, &mask, 3, &cfg).unwrap(), train_probe(&x, &scrambled, &mask, 3, &cfg).unwrap());
    }

    #[test]
    fn config_render_round_trips(
        encoder in prop::sample::select(vec!["gcn", "sage", "mlp"]),
        optimizer in prop::sample::select(vec!["sgd", "adamw"]),
        hop_mode in prop::sample::select(vec!["full", "union"]),
        sizes in (1usize..512, 1usize..512, 1usize..2000, 1usize..40, 1usize..50, 1usize..10),
        reals in (1e-6f64..1.0, 0.0f64..1e-2, 0.0f64..1.0, 0.01f64..2.0, 0.1f64..100.0, 1.0f64..10.0),
        probs in prop::collection::vec(0.0f64..0.99, 4),
        flags in prop::collection::vec(any::<bool>(), 5),
        seeds in (any::<u64>(), any::<u64>()),
        patience in prop::option::of(1usize..100),
    ) {
        let mut s = Settings::default();
        let (hidden, batch, epochs, walk, iters, cap) = sizes;
        let (lr, wd, restart, temp, lambda, tau) = reals;
        let assignments = [
            ("encoder", encoder.to_string()),
            ("optimizer", optimizer.to_string()),
            ("hop_mode", hop_mode.to_string()),
            ("hidden_size", hidden.to_string()),
            ("proj_dim", (hidden / 2 + 1).to_string()),
            ("batch_size", batch.to_string()),
            ("epochs", epochs.to_string()),
            ("patience", patience.map_or("none".into(), |p| p.to_string())),
            ("walk_length", walk.to_string()),
            ("sinkhorn_iters", iters.to_string()),
            ("hop_cap", cap.to_string()),
            ("learning_rate", lr.to_string()),
            ("weight_decay", wd.to_string()),
            ("restart_prob", restart.to_string()),
            ("infonce_temperature", temp.to_string()),
            ("lambda", lambda.to_string()),
            ("tau_sig", tau.to_string()),
            ("p_edge_1", probs[0].to_string()),
            ("p_edge_2", probs[1].to_string()),
            ("p_feat_1", probs[2].to_string()),
            ("p_feat_2", probs[3].to_string()),
            ("topology_rescale", flags[0].to_string()),
            ("emd_similarity", flags[1].to_string()),
            ("unrolled_sinkhorn", flags[2].to_string()),
            ("adv_enabled", flags[3].to_string()),
            ("aligned_views", flags[4].to_string()),
            ("seed", seeds.0.to_string()),
            ("eval_seed", seeds.1.to_string()),
            ("probe_lr", (lr * 3.0).to_string()),
        ];
        for (k, v) in &assignments {
            s.set(k, v).unwrap();
        }
        prop_assert!(s.validate().is_ok());
        let mut back = Settings::default();
        back.apply_text(&render(&s), Path::new("rendered")).unwrap();
        prop_assert_eq!(back, s);
    }
}
