use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, Graph, Tensor, Var};
use crate::data::encode_example;

pub(crate) use crate::tiny::{tiny_config, tiny_example};

fn random_params(cfg: ModelConfig, seed: u64, scale: f64) -> ModelParams {
    let mut p = ModelParams::init(cfg, seed).unwrap();
    for t in &mut p.tensors {
        t.data.iter_mut().for_each(|x| *x *= scale / 0.05);
    }
    p
}

fn sums_to_one(v: &[f64], tol: f64) -> bool {
    (v.iter().sum::<f64>() - 1.0).abs() < tol
}

#[test]
fn zero_weights_encoder() {
    let cfg = tiny_config(1);
    let mut p = ModelParams::zeroed(cfg).unwrap();
    let hb = p.layout.bridge_h_b;
    let cb = p.layout.bridge_c_b;
    p.tensors[hb].data = (0..8).map(|i| 0.1 * i as f64).collect();
    p.tensors[cb].data = vec![-0.3; 8];
    let (_, ex) = tiny_example();
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let net = Network::new(cfg, &b.set);
    let enc = net.encode(&mut g, &ex.source_ids).unwrap();
    assert!(g.value(enc.states).iter().all(|&x| x == 0.0));
    let want: Vec<f64> = (0..8).map(|i| (0.1 * i as f64).tanh()).collect();
    assert_eq!(g.value(enc.init.h), want.as_slice());
    assert!(g.value(enc.init.c).iter().all(|&x| x == (-0.3f64).tanh()));
}

#[test]
fn single_token_source_has_one_state() {
    let cfg = tiny_config(1);
    let p = ModelParams::init(cfg, 3).unwrap();
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let enc = Network::new(cfg, &b.set).encode(&mut g, &[7]).unwrap();
    assert_eq!(g.shape(enc.states), &[1, 16]);
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let cfg = tiny_config(1);
    let p = random_params(cfg, 5, 0.4);
    let (_, ex) = tiny_example();
    let names = p.names.clone();
    let keep: Vec<usize> = ["embedding", "encoder.fw.w", "encoder.bw.w", "encoder.bw.b", "bridge.c.w", "bridge.h.b"]
        .iter()
        .map(|n| names.iter().position(|m| m == n).unwrap())
        .collect();
    let mut sub: Vec<Tensor> = keep.iter().map(|&i| p.tensors[i].clone()).collect();
    let report = grad_check(
        |g, vars| {
            let mut all: Vec<Var> = p.tensors.iter().map(|t| g.leaf(t)).collect();
            for (k, &i) in keep.iter().enumerate() {
                all[i] = vars[k];
            }
            let b = p.bind_vars(all);
            let enc = Network::new(cfg, &b.set).encode(g, &ex.source_ids)?;
            let w = g.constant(vec![6, 16], (0..96).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect())?;
            let s = g.mul(enc.states, w)?;
            let s = g.sum(s);
            let t = g.sum(enc.init.c);
            let u = g.sum(enc.init.h);
            let st = g.add(s, t)?;
            g.add(st, u)
        },
        &mut sub,
        1e-6,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

/// Encoder output whose states are the given rows (bypasses the LSTM).
fn fixed_encoder(g: &mut Graph, b: &Bound, rows: Vec<Vec<f64>>) -> EncoderOutput {
    let len = rows.len();
    let width = rows[0].len();
    let states = g.constant(vec![len, width], rows.concat()).unwrap();
    let h = g.zeros(vec![1, 8]);
    let features = b.set.heads.iter().map(|hd| g.matmul(states, hd.w_h).unwrap()).collect();
    EncoderOutput {
        states,
        mask: Rc::from(vec![true; len]),
        init: DecoderState { h, c: h },
        features,
    }
}

#[test]
fn zero_coverage_leaves_scores_unchanged() {
    let cfg = tiny_config(1);
    let p = random_params(cfg, 8, 0.5);
    let (_, ex) = tiny_example();
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let net = Network::new(cfg, &b.set);
    let enc = net.encode(&mut g, &ex.source_ids).unwrap();
    let cov = g.zeros(vec![1, 6]);
    let on = net.attention_step(&mut g, enc.init.h, &enc, cov, true).unwrap();
    let off = net.attention_step(&mut g, enc.init.h, &enc, cov, false).unwrap();
    assert_eq!(g.value(on[0]), g.value(off[0]));
}

#[test]
fn coverage_changes_scores_when_nonzero() {
    let cfg = tiny_config(1);
    let p = random_params(cfg, 8, 0.5);
    let (_, ex) = tiny_example();
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let net = Network::new(cfg, &b.set);
    let enc = net.encode(&mut g, &ex.source_ids).unwrap();
    let zero = g.zeros(vec![1, 6]);
    let cov = g.row(vec![0.9, 0.0, 0.0, 0.1, 0.0, 0.0]);
    let on = net.attention_step(&mut g, enc.init.h, &enc, cov, true).unwrap();
    let off = net.attention_step(&mut g, enc.init.h, &enc, zero, true).unwrap();
    assert_ne!(g.value(on[0]), g.value(off[0]));
}

#[test]
fn identical_states_give_uniform_attention() {
    for heads in [1, 4] {
        let cfg = tiny_config(heads);
        let p = random_params(cfg, 2, 0.5);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let row: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let enc = fixed_encoder(&mut g, &b, vec![row.clone(); 5]);
        let net = Network::new(cfg, &b.set);
        let s = g.row(vec![0.2; 8]);
        let cov = g.zeros(vec![1, 5]);
        for a in net.attention_step(&mut g, s, &enc, cov, false).unwrap() {
            for &x in g.value(a) {
                assert!((x - 0.2).abs() < 1e-12);
            }
        }
        if heads == 1 {
            let attn = net.attention_step(&mut g, s, &enc, cov, false).unwrap();
            let ctx = net.make_context(&mut g, &attn, &enc).unwrap();
            for (c, r) in g.value(ctx).iter().zip(&row) {
                assert!((c - r).abs() < 1e-12);
            }
        }
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(1e-12).ln() - b.max(1e-12).ln()))
        .sum()
}

#[test]
fn distinct_heads_disagree() {
    let cfg = tiny_config(4);
    let p = random_params(cfg, 13, 0.5);
    let (_, ex) = tiny_example();
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let net = Network::new(cfg, &b.set);
    let enc = net.encode(&mut g, &ex.source_ids).unwrap();
    let cov = g.zeros(vec![1, 6]);
    let attn = net.attention_step(&mut g, enc.init.h, &enc, cov, false).unwrap();
    assert_eq!(attn.len(), 4);
    for i in 0..4 {
        assert!(sums_to_one(g.value(attn[i]), 1e-12));
        for j in 0..4 {
            if i != j {
                assert!(kl(g.value(attn[i]), g.value(attn[j])) > 0.0);
            }
        }
    }
}

#[test]
fn one_hot_attention_selects_state() {
    let cfg = tiny_config(1);
    let p = random_params(cfg, 1, 0.5);
    let (_, ex) = tiny_example();
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let net = Network::new(cfg, &b.set);
    let enc = net.encode(&mut g, &ex.source_ids).unwrap();
    let a = g.row(vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    let ctx = net.make_context(&mut g, &[a], &enc).unwrap();
    assert_eq!(g.value(ctx), &g.value(enc.states)[32..48]);
}

#[test]
fn four_head_context_keeps_size() {
    for (hidden, heads) in [(128, 4), (8, 4), (8, 1)] {
        let cfg = ModelConfig {
            vocab_size: 10,
            emb_dim: 4,
            hidden_dim: hidden,
            head_count: heads,
        };
        let p = ModelParams::init(cfg, 1).unwrap();
        for h in &p.layout.heads {
            if let Some(proj) = h.proj {
                assert_eq!(p.tensors[proj].shape, vec![2 * hidden, 2 * hidden / 4]);
            }
        }
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let net = Network::new(cfg, &b.set);
        let enc = net.encode(&mut g, &[5, 6, 7]).unwrap();
        let cov = g.zeros(vec![1, 3]);
        let attn = net.attention_step(&mut g, enc.init.h, &enc, cov, false).unwrap();
        let ctx = net.make_context(&mut g, &attn, &enc).unwrap();
        assert_eq!(g.shape(ctx), &[1, 2 * hidden]);
    }
    assert!(ModelConfig {
        vocab_size: 10,
        emb_dim: 4,
        hidden_dim: 3,
        head_count: 4
    }
    .validate()
    .is_err());
}

#[test]
fn zero_generator_is_uniform() {
    let cfg = tiny_config(1);
    let p = ModelParams::zeroed(cfg).unwrap();
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let net = Network::new(cfg, &b.set);
    let s = g.row(vec![0.3; 8]);
    let ctx = g.row(vec![-0.7; 16]);
    let pv = net.generator_distribution(&mut g, s, ctx).unwrap();
    assert!(g.value(pv).iter().all(|&x| (x - 0.05).abs() < 1e-15));
    let x = g.row(vec![1.0; 8]);
    let pg = net.switch(&mut g, ctx, s, x).unwrap();
    assert_eq!(g.scalar(pg), 0.5);
}

#[test]
fn switch_saturates_with_bias() {
    let cfg = tiny_config(1);
    let mut p = ModelParams::zeroed(cfg).unwrap();
    let sb = p.layout.switch_bias;
    p.tensors[sb].data[0] = 60.0;
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let net = Network::new(cfg, &b.set);
    let s = g.row(vec![0.3; 8]);
    let ctx = g.row(vec![-0.7; 16]);
    let x = g.row(vec![1.0; 8]);
    let pg = net.switch(&mut g, ctx, s, x).unwrap();
    assert_eq!(g.scalar(pg), 1.0);
}

fn subset_check(p: &ModelParams, names: &[&str], f: impl Fn(&mut Graph, &Bound) -> crate::Result<Var>) -> f64 {
    let keep: Vec<usize> = names.iter().map(|n| p.index_of(n).unwrap()).collect();
    let mut sub: Vec<Tensor> = keep.iter().map(|&i| p.tensors[i].clone()).collect();
    grad_check(
        |g, vars| {
            let mut all: Vec<Var> = p.tensors.iter().map(|t| g.leaf(t)).collect();
            for (k, &i) in keep.iter().enumerate() {
                all[i] = vars[k];
            }
            let b = p.bind_vars(all);
            f(g, &b)
        },
        &mut sub,
        1e-6,
    )
    .unwrap()
    .max_rel_error
}

#[test]
fn generator_and_switch_gradients() {
    let cfg = tiny_config(1);
    let p = random_params(cfg, 21, 0.6);
    let err = subset_check(&p, &["output.w", "output.b", "output.vocab.w", "output.vocab.b"], |g, b| {
        let net = Network::new(cfg, &b.set);
        let s = g.row((0..8).map(|i| (i as f64).cos()).collect());
        let ctx = g.row((0..16).map(|i| (i as f64 * 0.3).sin()).collect());
        let pv = net.generator_distribution(g, s, ctx)?;
        let w = g.slice(pv, 7, 1)?;
        let l = g.log_clamped(w)?;
        Ok(g.neg(l))
    });
    assert!(err < 1e-4, "{err}");
    let err = subset_check(&p, &["switch.w_ctx", "switch.w_s", "switch.w_x", "switch.b"], |g, b| {
        let net = Network::new(cfg, &b.set);
        let s = g.row((0..8).map(|i| (i as f64).cos()).collect());
        let ctx = g.row((0..16).map(|i| (i as f64 * 0.3).sin()).collect());
        let x = g.row(vec![0.5; 8]);
        let pg = net.switch(g, ctx, s, x)?;
        let l = g.log(pg)?;
        Ok(g.scale(l, -1.0))
    });
    assert!(err < 1e-4, "{err}");
}

fn ext(ids: Vec<usize>, vocab: usize, ext_size: usize) -> ExtendedSource {
    ExtendedSource {
        ids: Rc::from(ids),
        ext_size,
        vocab_size: vocab,
    }
}

#[test]
fn final_distribution_cases() {
    let mut g = Graph::new();
    // p_gen = 1: generator output, zero-extended.
    let pv = g.row(vec![0.1, 0.2, 0.3, 0.4]);
    let one = g.scalar_const(1.0);
    let a = g.row(vec![0.25, 0.75]);
    let (d, _) = final_distribution(&mut g, pv, one, a, &ext(vec![1, 5], 4, 6)).unwrap();
    assert_eq!(g.value(d), &[0.1, 0.2, 0.3, 0.4, 0.0, 0.0]);

    // p_gen = 0: pure copy, repeated source words summed.
    let pv = g.row(vec![0.1; 10]);
    let zero = g.scalar_const(0.0);
    let a = g.row(vec![0.2, 0.3, 0.5]);
    let (d, _) = final_distribution(&mut g, pv, zero, a, &ext(vec![5, 7, 5], 10, 10)).unwrap();
    let v = g.value(d);
    assert!((v[5] - 0.7).abs() < 1e-15 && (v[7] - 0.3).abs() < 1e-15);
    assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 2);

    // p_gen = 0.5 with a uniform generator.
    let pv = g.row(vec![0.25; 4]);
    let half = g.scalar_const(0.5);
    let a = g.row(vec![1.0]);
    let (d, pp) = final_distribution(&mut g, pv, half, a, &ext(vec![2], 4, 4)).unwrap();
    assert!((g.value(d)[2] - 0.625).abs() < 1e-15);
    assert_eq!(g.scalar(pp), 0.5);
}

#[test]
fn dropout_decisions() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    assert!((0..1000).all(|_| !pointer_dropout_decision(0.0, &mut rng).unwrap()));
    assert!(pointer_dropout_decision(1.0, &mut rng).is_err());
    assert!(pointer_dropout_decision(-0.1, &mut rng).is_err());
    let n = 10_000;
    let drops = (0..n)
        .filter(|_| pointer_dropout_decision(0.2, &mut rng).unwrap())
        .count() as f64;
    let sigma = (n as f64 * 0.2 * 0.8).sqrt();
    assert!((drops - 2000.0).abs() <= 3.0 * sigma, "{drops}");
}

#[test]
fn teacher_forced_invariants_and_coverage_identity() {
    for heads in [1, 4] {
        let cfg = tiny_config(heads);
        let p = random_params(cfg, 31, 0.8);
        let (_, ex) = tiny_example();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let flags = StepFlags {
            coverage_on: true,
            pointer_dropped: false,
        };
        let tf = Network::new(cfg, &b.set).forward_teacher_forced(&mut g, &ex, flags).unwrap();
        assert_eq!(tf.steps.len(), 5);
        let mut running = vec![0.0; 6];
        for step in &tf.steps {
            assert_eq!(g.value(step.coverage), running.as_slice());
            for &a in &step.attention {
                assert!(sums_to_one(g.value(a), 1e-9));
            }
            assert!(sums_to_one(g.value(step.final_dist), 1e-9));
            let pg = g.scalar(step.p_gen);
            assert!(pg > 0.0 && pg < 1.0);
            assert_eq!(g.shape(step.final_dist)[1], ex.ext_vocab_size());
            for (r, a) in running.iter_mut().zip(g.value(step.pointer_attention())) {
                *r += a;
            }
        }
    }
}

#[test]
fn single_step_coverage_is_zero() {
    let cfg = tiny_config(1);
    let p = random_params(cfg, 4, 0.5);
    let (vocab, _) = tiny_example();
    let ex = encode_example(&["t1", "t2"], &[] as &[&str], &vocab, 6, 4).unwrap();
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let tf = Network::new(cfg, &b.set)
        .forward_teacher_forced(&mut g, &ex, StepFlags::default())
        .unwrap();
    assert_eq!(tf.steps.len(), 1);
    assert_eq!(g.value(tf.steps[0].coverage), &[0.0, 0.0]);
}

#[test]
fn generator_only_and_pointer_only_limits() {
    let cfg = tiny_config(1);
    let (_, ex) = tiny_example();
    for bias in [60.0, -60.0] {
        let mut p = random_params(cfg, 6, 0.5);
        for name in ["switch.w_ctx", "switch.w_s", "switch.w_x"] {
            let i = p.index_of(name).unwrap();
            p.tensors[i].data.iter_mut().for_each(|x| *x = 0.0);
        }
        let i = p.index_of("switch.b").unwrap();
        p.tensors[i].data[0] = bias;
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let tf = Network::new(cfg, &b.set)
            .forward_teacher_forced(&mut g, &ex, StepFlags::default())
            .unwrap();
        for step in &tf.steps {
            let d = g.value(step.final_dist);
            if bias > 0.0 {
                assert_eq!(&d[..20], g.value(step.p_vocab));
                assert!(d[20..].iter().all(|&x| x == 0.0));
            } else {
                for id in 0..20 {
                    if !ex.source_ext_ids.contains(&id) {
                        assert!(d[id] < 1e-25);
                    }
                }
            }
        }
    }
}

#[test]
fn dropped_pointer_reduces_to_generator() {
    let cfg = tiny_config(4);
    let p = random_params(cfg, 6, 0.5);
    let (_, ex) = tiny_example();
    let mut g = Graph::new();
    let b = p.bind(&mut g);
    let flags = StepFlags {
        coverage_on: false,
        pointer_dropped: true,
    };
    let tf = Network::new(cfg, &b.set).forward_teacher_forced(&mut g, &ex, flags).unwrap();
    for step in &tf.steps {
        assert!(step.p_point.is_none());
        assert_eq!(g.scalar(step.p_gen), 1.0);
        let d = g.value(step.final_dist);
        assert_eq!(&d[..20], g.value(step.p_vocab));
    }
}

#[test]
fn padding_positions_do_not_matter() {
    let cfg = tiny_config(4);
    let p = random_params(cfg, 17, 0.5);
    let ids = [5, 9, 11, 6];
    let run = |layout: &[Option<usize>]| {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let net = Network::new(cfg, &b.set);
        let src: Vec<usize> = layout.iter().map(|x| x.map_or(0, |k| ids[k])).collect();
        let mask: Vec<bool> = layout.iter().map(Option::is_some).collect();
        let enc = net.encode_masked(&mut g, &src, &mask).unwrap();
        let cov = g.zeros(vec![1, layout.len()]);
        let attn = net.attention_step(&mut g, enc.init.h, &enc, cov, true).unwrap();
        let ctx = net.make_context(&mut g, &attn, &enc).unwrap();
        let pointer: Vec<f64> = layout
            .iter()
            .zip(g.value(attn[0]))
            .filter(|(x, _)| x.is_some())
            .map(|(_, &a)| a)
            .collect();
        (g.value(ctx).to_vec(), pointer, g.value(enc.init.h).to_vec())
    };
    let a = run(&[Some(0), None, Some(1), Some(2), None, Some(3)]);
    let b = run(&[None, Some(0), Some(1), None, Some(2), Some(3)]);
    let c = run(&[Some(0), Some(1), Some(2), Some(3), None, None]);
    for (x, y) in [(&a, &b), (&a, &c)] {
        assert_eq!(x.2, y.2);
        for (u, v) in x.0.iter().zip(&y.0) {
            assert!((u - v).abs() < 1e-15);
        }
        for (u, v) in x.1.iter().zip(&y.1) {
            assert!((u - v).abs() < 1e-15);
        }
    }
}
