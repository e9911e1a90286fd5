use super::*;
use crate::normalize::NormalizedSequence;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar_layer(w: f64, u: f64, b: [f64; 4]) -> LayerParams {
    LayerParams {
        w: Mat { rows: 4, cols: 1, data: vec![w; 4] },
        u: Mat { rows: 4, cols: 1, data: vec![u; 4] },
        b: b.to_vec(),
    }
}

fn sigma(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn cell_step_zero_params_fixpoint() {
    let layer = LayerParams {
        w: Mat::zeros(8, 3),
        u: Mat::zeros(8, 2),
        b: vec![0.0; 8],
    };
    let (h, c, gates) = cell_step(&[1.0, -2.0, 3.0], &[0.0, 0.0], &[0.0, 0.0], &layer).unwrap();
    assert_eq!(h, vec![0.0, 0.0]);
    assert_eq!(c, vec![0.0, 0.0]);
    // i, f, o sit at 0.5; candidate g at 0
    assert_eq!(&gates[0..2], &[0.5, 0.5]);
    assert_eq!(&gates[2..4], &[0.5, 0.5]);
    assert_eq!(&gates[4..6], &[0.0, 0.0]);
    assert_eq!(&gates[6..8], &[0.5, 0.5]);
}

#[test]
fn cell_step_forget_gate_carries_state() {
    // scalar cell, all weights zero, forget bias +20, c_prev = 3
    let layer = scalar_layer(0.0, 0.0, [0.0, 20.0, 0.0, 0.0]);
    let (_, c, _) = cell_step(&[0.0], &[0.0], &[3.0], &layer).unwrap();
    let expect = 3.0 * sigma(20.0);
    assert!((c[0] - expect).abs() < 1e-12);
    assert!((c[0] - 3.0).abs() < 1e-7); // ≈ 3 − 6e-9
}

#[test]
fn cell_step_saturated_gates() {
    // input gate, candidate and output gate all forced open via biases
    let layer = scalar_layer(0.0, 0.0, [20.0, 0.0, 20.0, 20.0]);
    let (h, c, _) = cell_step(&[0.0], &[0.0], &[0.0], &layer).unwrap();
    let expect_c = sigma(20.0) * (20.0f64).tanh();
    assert!((c[0] - expect_c).abs() < 1e-12);
    assert!((c[0] - 1.0).abs() < 1e-7);
    let expect_h = sigma(20.0) * c[0].tanh();
    assert!((h[0] - expect_h).abs() < 1e-12);
}

#[test]
fn cell_step_shape_error() {
    let layer = scalar_layer(0.0, 0.0, [0.0; 4]);
    assert!(matches!(
        cell_step(&[0.0, 1.0], &[0.0], &[0.0], &layer),
        Err(Error::Shape(_))
    ));
}

fn toy_sequence(dim: usize, steps: usize, label: usize) -> NormalizedSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vectors = (0..steps)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    NormalizedSequence {
        id: "toy".into(),
        subject: 0,
        label,
        vectors,
        mask: vec![true; steps],
    }
}

fn zero_params(dim: usize, hidden: &[usize], classes: usize) -> LstmParams {
    let mut p = LstmParams::init(dim, hidden, classes, 0).unwrap();
    for t in p.tensors_mut() {
        for v in t {
            *v = 0.0;
        }
    }
    p
}

#[test]
fn forward_zero_params_uniform_probs() {
    let params = zero_params(4, &[3], 3);
    let seq = toy_sequence(4, 1, 0);
    let tape = forward_sequence(&seq, &params, 0.0, false, 0).unwrap();
    for p in &tape.probs[0] {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn forward_inference_deterministic() {
    let params = LstmParams::init(4, &[5, 5], 3, 11).unwrap();
    let seq = toy_sequence(4, 3, 0);
    let a = forward_sequence(&seq, &params, 0.5, false, 1).unwrap();
    let b = forward_sequence(&seq, &params, 0.5, false, 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn forward_dropout_seeded_determinism() {
    let params = LstmParams::init(3, &[4, 4], 2, 5).unwrap();
    let seq = toy_sequence(3, 2, 0);
    let a = forward_sequence(&seq, &params, 0.5, true, 99).unwrap();
    let b = forward_sequence(&seq, &params, 0.5, true, 99).unwrap();
    assert_eq!(a, b);
    let c = forward_sequence(&seq, &params, 0.5, true, 100).unwrap();
    assert_ne!(a, c);
}

#[test]
fn forward_softmax_rows_sum_to_one() {
    let params = LstmParams::init(6, &[8, 8], 4, 3).unwrap();
    let seq = toy_sequence(6, 9, 0);
    let tape = forward_sequence(&seq, &params, 0.0, false, 0).unwrap();
    for p in &tape.probs {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn uniform_tape(steps: usize, classes: usize) -> LstmTape {
    let probs = vec![vec![1.0 / classes as f64; classes]; steps];
    LstmTape {
        records: vec![],
        logits: vec![vec![0.0; classes]; steps],
        probs,
        mask: vec![true; steps],
    }
}

#[test]
fn loss_uniform_is_ln_c() {
    let tape = uniform_tape(2, 2);
    let loss = compute_loss(&[tape], &[0], LossOptions::many_to_many()).unwrap();
    assert!((loss - 2.0f64.ln()).abs() < 1e-12);
}

#[test]
fn loss_perfect_prediction_is_zero() {
    let mut tape = uniform_tape(3, 2);
    for p in &mut tape.probs {
        *p = vec![1.0, 0.0];
    }
    let loss = compute_loss(&[tape], &[0], LossOptions::many_to_many()).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn loss_hand_sum_over_batch() {
    let mut a = uniform_tape(1, 2); // p[label] = 0.5
    a.probs[0] = vec![0.5, 0.5];
    let mut b = uniform_tape(1, 4);
    b.probs[0] = vec![0.25, 0.25, 0.25, 0.25]; // p[label] = 0.25
    // batch with heterogeneous class counts is fine for the loss itself
    let loss_a = compute_loss(&[a], &[0], LossOptions::many_to_many()).unwrap();
    let loss_b = compute_loss(&[b], &[1], LossOptions::many_to_many()).unwrap();
    let mean = (loss_a + loss_b) / 2.0;
    let expect = (2.0f64.ln() + 4.0f64.ln()) / 2.0;
    assert!((mean - expect).abs() < 1e-12);
    assert!((mean - 1.039721).abs() < 1e-6);
}

#[test]
fn loss_many_to_one_ignores_earlier_steps() {
    let mut tape = uniform_tape(4, 3);
    tape.probs[3] = vec![0.2, 0.5, 0.3];
    let opts = LossOptions {
        mode: LossMode::ManyToOne,
        mask_padding: true,
        sum_over_time: false,
    };
    let base = compute_loss(&[tape.clone()], &[1], opts).unwrap();
    // perturb a non-final step: loss must be bit-identical
    tape.probs[0] = vec![0.9, 0.05, 0.05];
    tape.probs[2] = vec![0.0, 1.0, 0.0];
    let perturbed = compute_loss(&[tape], &[1], opts).unwrap();
    assert_eq!(base.to_bits(), perturbed.to_bits());
    assert!((base - (-0.5f64.ln())).abs() < 1e-12);
}

#[test]
fn loss_masked_padding_never_changes_loss() {
    let mut tape = uniform_tape(2, 2);
    tape.probs[0] = vec![0.7, 0.3];
    tape.probs[1] = vec![0.6, 0.4];
    let base = compute_loss(&[tape.clone()], &[0], LossOptions::many_to_many()).unwrap();
    // append a masked-out padded step with arbitrary probabilities
    tape.logits.push(vec![0.0, 0.0]);
    tape.probs.push(vec![0.01, 0.99]);
    tape.mask = vec![true, true, false];
    let with_pad = compute_loss(&[tape.clone()], &[0], LossOptions::many_to_many()).unwrap();
    assert_eq!(base.to_bits(), with_pad.to_bits());
    // an unmasked uniform pad pulls the mean toward ln C
    tape.mask = vec![true, true, true];
    tape.probs[2] = vec![0.5, 0.5];
    let unmasked = compute_loss(&[tape], &[0], LossOptions::many_to_many()).unwrap();
    let ln2 = 2.0f64.ln();
    assert!((unmasked - ln2).abs() < (base - ln2).abs() || base < ln2);
}

#[test]
fn loss_floor_on_zero_probability() {
    let mut tape = uniform_tape(1, 2);
    tape.probs[0] = vec![0.0, 1.0];
    let loss = compute_loss(&[tape], &[0], LossOptions::many_to_many()).unwrap();
    assert!((loss - (-PROB_FLOOR.ln())).abs() < 1e-6);
}

// ---- gradient oracle ----

/// Central finite differences through the public forward path.
fn numeric_grads(
    params: &LstmParams,
    seqs: &[NormalizedSequence],
    labels: &[usize],
    opts: LossOptions,
    step: f64,
) -> LstmParams {
    let loss_at = |p: &LstmParams| {
        let tapes: Vec<LstmTape> = seqs
            .iter()
            .map(|s| forward_sequence(s, p, 0.0, false, 0).unwrap())
            .collect();
        compute_loss(&tapes, labels, opts).unwrap()
    };
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let tensor_count = params.tensors().len();
    for ti in 0..tensor_count {
        let len = params.tensors()[ti].len();
        for k in 0..len {
            let orig = probe.tensors()[ti][k];
            probe.tensors_mut()[ti][k] = orig + step;
            let plus = loss_at(&probe);
            probe.tensors_mut()[ti][k] = orig - step;
            let minus = loss_at(&probe);
            probe.tensors_mut()[ti][k] = orig;
            grads.tensors_mut()[ti][k] = (plus - minus) / (2.0 * step);
        }
    }
    grads
}

/// Largest |a − b| − atol·slack ratio against rtol·max(|a|,|b|). Central
/// differences bottom out near 1e-11 absolute, so gradients far smaller
/// than that are compared absolutely.
fn max_grad_mismatch(a: &LstmParams, b: &LstmParams, atol: f64, rtol: f64) -> f64 {
    let mut worst = 0.0f64;
    for (ta, tb) in a.tensors().iter().zip(b.tensors().iter()) {
        for (&x, &y) in ta.iter().zip(tb.iter()) {
            let tol = atol + rtol * x.abs().max(y.abs());
            worst = worst.max((x - y).abs() / tol);
        }
    }
    worst
}

fn random_instance(
    layers: &[usize],
    dim: usize,
    steps: usize,
    classes: usize,
    batch: usize,
    seed: u64,
) -> (LstmParams, Vec<NormalizedSequence>, Vec<usize>) {
    let params = LstmParams::init(dim, layers, classes, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut seqs = Vec::new();
    let mut labels = Vec::new();
    for n in 0..batch {
        let vectors = (0..steps)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        // give the last sample a short true length to exercise masking
        let mut mask = vec![true; steps];
        if n + 1 == batch && steps > 2 {
            mask[steps - 1] = false;
        }
        let label = rng.gen_range(0..classes);
        seqs.push(NormalizedSequence {
            id: format!("g{n}"),
            subject: 0,
            label,
            vectors,
            mask,
        });
        labels.push(label);
    }
    (params, seqs, labels)
}

#[test]
fn bptt_matches_finite_differences_many_to_many() {
    let (params, seqs, labels) = random_instance(&[8, 8], 6, 5, 3, 2, 42);
    let opts = LossOptions::many_to_many();
    let tapes: Vec<LstmTape> = seqs
        .iter()
        .map(|s| forward_sequence(s, &params, 0.0, false, 0).unwrap())
        .collect();
    let analytic = backward_through_time(&tapes, &labels, opts, &params).unwrap();
    let numeric = numeric_grads(&params, &seqs, &labels, opts, 1e-5);
    let err = max_grad_mismatch(&analytic, &numeric, 1e-9, 1e-4);
    assert!(err < 1.0, "worst gradient mismatch {err} × tolerance");
}

#[test]
fn bptt_matches_finite_differences_many_to_one() {
    let (params, seqs, labels) = random_instance(&[6, 6], 4, 4, 3, 2, 9);
    let opts = LossOptions {
        mode: LossMode::ManyToOne,
        mask_padding: true,
        sum_over_time: false,
    };
    let tapes: Vec<LstmTape> = seqs
        .iter()
        .map(|s| forward_sequence(s, &params, 0.0, false, 0).unwrap())
        .collect();
    let analytic = backward_through_time(&tapes, &labels, opts, &params).unwrap();
    let numeric = numeric_grads(&params, &seqs, &labels, opts, 1e-5);
    let err = max_grad_mismatch(&analytic, &numeric, 1e-9, 1e-4);
    assert!(err < 1.0, "worst gradient mismatch {err} × tolerance");
}

#[test]
fn bptt_with_dropout_matches_frozen_mask_differences() {
    // with a recorded dropout tape, the analytic gradient differentiates
    // the same (masked) function; checked against differences computed by
    // replaying the identical seed
    let (params, seqs, labels) = random_instance(&[5, 5], 4, 3, 2, 1, 13);
    let opts = LossOptions::many_to_many();
    let seed = 1234;
    let tapes: Vec<LstmTape> = seqs
        .iter()
        .map(|s| forward_sequence(s, &params, 0.5, true, seed).unwrap())
        .collect();
    let analytic = backward_through_time(&tapes, &labels, opts, &params).unwrap();

    let loss_at = |p: &LstmParams| {
        let tapes: Vec<LstmTape> = seqs
            .iter()
            .map(|s| forward_sequence(s, p, 0.5, true, seed).unwrap())
            .collect();
        compute_loss(&tapes, &labels, opts).unwrap()
    };
    let mut probe = params.clone();
    let step = 1e-5;
    let mut worst = 0.0f64;
    for ti in 0..params.tensors().len() {
        for k in (0..params.tensors()[ti].len()).step_by(7) {
            let orig = probe.tensors()[ti][k];
            probe.tensors_mut()[ti][k] = orig + step;
            let plus = loss_at(&probe);
            probe.tensors_mut()[ti][k] = orig - step;
            let minus = loss_at(&probe);
            probe.tensors_mut()[ti][k] = orig;
            let num = (plus - minus) / (2.0 * step);
            let ana = analytic.tensors()[ti][k];
            let tol = 1e-9 + 1e-4 * num.abs().max(ana.abs());
            worst = worst.max((num - ana).abs() / tol);
        }
    }
    assert!(worst < 1.0, "worst gradient mismatch {worst} × tolerance");
}

#[test]
fn zero_params_gradient_reaches_only_output_layer() {
    let params = zero_params(4, &[3, 3], 3);
    let seq = toy_sequence(4, 3, 1);
    let tape = forward_sequence(&seq, &params, 0.0, false, 0).unwrap();
    let grads =
        backward_through_time(&[tape], &[1], LossOptions::many_to_many(), &params).unwrap();
    // h ≡ 0 blocks any signal into the recurrent layers and into w_out
    // (outer product with zero h), but b_out sees the softmax error
    assert!(grads.b_out.iter().any(|&g| g.abs() > 1e-6));
    assert!(grads.w_out.data.iter().all(|&g| g == 0.0));
    for l in &grads.layers {
        assert!(l.w.data.iter().all(|&g| g == 0.0));
        assert!(l.u.data.iter().all(|&g| g == 0.0));
        assert!(l.b.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn gradient_vanishes_at_line_search_minimum() {
    // freeze everything but one scalar of b_out and line-search a strict
    // local minimum; the analytic gradient there must be ≈ 0. The batch
    // mixes both labels so the loss is not monotone in b_out[0].
    let params = LstmParams::init(3, &[4], 2, 21).unwrap();
    let mut other = toy_sequence(3, 3, 1);
    for v in other.vectors.iter_mut().flatten() {
        *v = -*v;
    }
    let seqs = [toy_sequence(3, 3, 0), other];
    let labels = [0usize, 1];
    let opts = LossOptions::many_to_many();
    let loss_with = |p: &mut LstmParams, v: f64| {
        p.b_out[0] = v;
        let tapes: Vec<LstmTape> = seqs
            .iter()
            .map(|s| forward_sequence(s, p, 0.0, false, 0).unwrap())
            .collect();
        compute_loss(&tapes, &labels, opts).unwrap()
    };
    let mut p = params.clone();
    // golden-section-ish refinement over a bracket
    let (mut lo, mut hi) = (-5.0f64, 5.0f64);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if loss_with(&mut p, m1) < loss_with(&mut p, m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let best = (lo + hi) / 2.0;
    assert!(best.abs() < 4.9, "minimum sits at the bracket edge: {best}");
    p.b_out[0] = best;
    let tapes: Vec<LstmTape> = seqs
        .iter()
        .map(|s| forward_sequence(s, &p, 0.0, false, 0).unwrap())
        .collect();
    let grads = backward_through_time(&tapes, &labels, opts, &p).unwrap();
    assert!(grads.b_out[0].abs() < 1e-6, "gradient at minimum: {}", grads.b_out[0]);
}

// ---- clipping and adam ----

#[test]
fn clip_below_threshold_unchanged() {
    let params = LstmParams::init(2, &[2], 2, 0).unwrap();
    let mut grads = params.zeros_like();
    grads.b_out[0] = 0.3;
    grads.b_out[1] = 0.4;
    let before = grads.clone();
    clip_global_norm(&mut grads, 1.0).unwrap();
    assert_eq!(grads, before);
}

#[test]
fn clip_scales_to_threshold() {
    let params = LstmParams::init(2, &[2], 2, 0).unwrap();
    let mut grads = params.zeros_like();
    grads.b_out[0] = 3.0;
    grads.b_out[1] = 4.0;
    clip_global_norm(&mut grads, 1.0).unwrap();
    assert!((grads.b_out[0] - 0.6).abs() < 1e-12);
    assert!((grads.b_out[1] - 0.8).abs() < 1e-12);
    assert!((global_norm(&grads) - 1.0).abs() < 1e-12);
}

#[test]
fn clip_zero_grads_unchanged() {
    let params = LstmParams::init(2, &[2], 2, 0).unwrap();
    let mut grads = params.zeros_like();
    clip_global_norm(&mut grads, 1.0).unwrap();
    assert_eq!(global_norm(&grads), 0.0);
}

#[test]
fn adam_first_step_is_minus_lr() {
    let mut params = zero_params(2, &[2], 2);
    let mut grads = params.zeros_like();
    for t in grads.tensors_mut() {
        for v in t {
            *v = 1.0;
        }
    }
    let mut state = AdamState::new(&params);
    let config = TrainConfig { learning_rate: 0.005, ..TrainConfig::default() };
    adam_update(&mut params, &grads, &mut state, &config).unwrap();
    // bias-corrected m̂ = v̂ = 1 → update = −lr·1/(1+ε) ≈ −0.005
    for t in params.tensors() {
        for &v in t {
            assert!((v + 0.005).abs() < 1e-9, "{v}");
        }
    }
}

#[test]
fn adam_zero_gradient_is_noop() {
    let mut params = LstmParams::init(2, &[3], 2, 4).unwrap();
    let before = params.clone();
    let grads = params.zeros_like();
    let mut state = AdamState::new(&params);
    adam_update(&mut params, &grads, &mut state, &TrainConfig::default()).unwrap();
    assert_eq!(params, before);
}

#[test]
fn adam_deterministic() {
    let run = || {
        let mut params = LstmParams::init(2, &[3], 2, 4).unwrap();
        let mut grads = params.zeros_like();
        grads.b_out[0] = 0.5;
        grads.layers[0].b[1] = -0.25;
        let mut state = AdamState::new(&params);
        let config = TrainConfig::default();
        for _ in 0..3 {
            adam_update(&mut params, &grads, &mut state, &config).unwrap();
        }
        params
    };
    assert_eq!(run(), run());
}

// ---- training ----

#[test]
fn train_rejects_single_class() {
    let seq = toy_sequence(3, 2, 0);
    let config = TrainConfig { epochs: 1, hidden: vec![2], ..TrainConfig::default() };
    assert!(matches!(train(&[seq], &config), Err(Error::Argument(_))));
}

#[test]
fn train_rejects_empty_dataset() {
    let config = TrainConfig::default();
    assert!(matches!(train(&[], &config), Err(Error::Argument(_))));
}

#[test]
fn train_deterministic_loss_log() {
    let mut data = Vec::new();
    for n in 0..6 {
        let mut seq = toy_sequence(3, 4, n % 2);
        seq.id = format!("d{n}");
        // make classes actually differ
        for v in seq.vectors.iter_mut().flatten() {
            *v += (n % 2) as f64;
        }
        data.push(seq);
    }
    let config = TrainConfig {
        epochs: 3,
        hidden: vec![4, 4],
        batch_size: 2,
        seed: 77,
        ..TrainConfig::default()
    };
    let (_, log_a) = train(&data, &config).unwrap();
    let (_, log_b) = train(&data, &config).unwrap();
    assert_eq!(log_a, log_b);
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let params = LstmParams::init(6, &[4, 4], 3, 2).unwrap();
    let config = TrainConfig::default();
    save_checkpoint(&path, &params, &config).unwrap();
    let ckpt = load_checkpoint(&path).unwrap();
    assert_eq!(ckpt.params, params);
    assert_eq!(ckpt.train_config, config);
    assert_eq!(ckpt.version, CHECKPOINT_VERSION);
}
