//! Mini-batch training driver.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::NormalizedSequence;

use super::optim::{adam_update, clip_global_norm, AdamState};
use super::{backward_through_time, compute_loss, forward_sequence, LstmParams, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Mean class probabilities over the unmasked timesteps (inference mode).
pub fn predict_probs(seq: &NormalizedSequence, params: &LstmParams) -> Result<Vec<f64>> {
    let tape = forward_sequence(seq, params, 0.0, false, 0)?;
    let classes = params.class_count();
    let mut acc = vec![0.0; classes];
    let mut count = 0usize;
    for (t, &real) in tape.mask.iter().enumerate() {
        if !real {
            continue;
        }
        for (a, p) in acc.iter_mut().zip(&tape.probs[t]) {
            *a += p;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptySequence("all timesteps masked".into()));
    }
    for a in &mut acc {
        *a /= count as f64;
    }
    Ok(acc)
}

/// Argmax label, lowest index on ties.
pub fn predict_label(seq: &NormalizedSequence, params: &LstmParams) -> Result<usize> {
    let probs = predict_probs(seq, params)?;
    Ok(argmax(&probs))
}

pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = k;
        }
    }
    best
}

fn derive_seed(base: u64, epoch: usize, sample: usize) -> u64 {
    // splitmix-style mixing keeps per-sample dropout streams independent
    let mut z = base
        .wrapping_add((epoch as u64).wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add((sample as u64).wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Train the stack: forward → loss → BPTT → clip → Adam, with a seeded
/// shuffle each epoch. Returns the final parameters and per-epoch log.
pub fn train(
    dataset: &[NormalizedSequence],
    config: &TrainConfig,
) -> Result<(LstmParams, Vec<EpochLog>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("empty dataset".into()));
    }
    let labels_present: BTreeSet<usize> = dataset.iter().map(|s| s.label).collect();
    if labels_present.len() < 2 {
        return Err(Error::Argument("training needs at least 2 classes".into()));
    }
    let classes = dataset.iter().map(|s| s.label).max().unwrap() + 1;
    let input_dim = dataset[0].dim();
    if dataset.iter().any(|s| s.dim() != input_dim) {
        return Err(Error::Shape("inconsistent sequence dimensions".into()));
    }

    let mut params = LstmParams::init(input_dim, &config.hidden, classes, config.seed)?;
    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5348_5546));
    let opts = config.loss_options();
    let labels: Vec<usize> = dataset.iter().map(|s| s.label).collect();

    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut tapes = Vec::with_capacity(batch.len());
            let mut batch_labels = Vec::with_capacity(batch.len());
            for &idx in batch {
                let seed = derive_seed(config.seed, epoch, idx);
                tapes.push(forward_sequence(
                    &dataset[idx],
                    &params,
                    config.dropout,
                    true,
                    seed,
                )?);
                batch_labels.push(labels[idx]);
            }
            let loss = compute_loss(&tapes, &batch_labels, opts)?;
            loss_sum += loss * batch.len() as f64;
            let mut grads = backward_through_time(&tapes, &batch_labels, opts, &params)?;
            clip_global_norm(&mut grads, config.clip_norm)?;
            adam_update(&mut params, &grads, &mut adam, config)?;
        }

        let mut correct = 0usize;
        for (seq, &label) in dataset.iter().zip(&labels) {
            if predict_label(seq, &params)? == label {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / dataset.len() as f64;
        log.push(EpochLog {
            epoch,
            mean_loss: loss_sum / dataset.len() as f64,
            train_accuracy: accuracy,
        });
        if let Some(target) = config.target_accuracy {
            if accuracy >= target {
                break;
            }
        }
    }
    Ok((params, log))
}
