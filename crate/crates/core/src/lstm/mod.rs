//! Stacked LSTM with per-timestep (many-to-many) training, written from
//! scratch so the gradient path is fully inspectable.
//!
//! Gate ordering inside every 4H block is fixed as (i, f, g, o):
//!   i_t = σ(W_i x + U_i h + b_i)      input gate
//!   f_t = σ(W_f x + U_f h + b_f)      forget gate
//!   g_t = tanh(W_g x + U_g h + b_g)   candidate
//!   o_t = σ(W_o x + U_o h + b_o)      output gate
//!   c_t = f ⊙ c_prev + i ⊙ g
//!   h_t = o ⊙ tanh(c_t)
//!
//! Dropout (inverted, kept units scaled by 1/(1−p)) is applied between
//! stacked layers only, never on recurrent connections and never on the
//! top layer's output.

mod checkpoint;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use optim::{adam_update, clip_global_norm, global_norm, AdamState};
pub use train::{predict_label, predict_probs, train, EpochLog};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{softmax, Mat};
use crate::normalize::NormalizedSequence;

/// Probability floor applied before taking logs in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which timesteps contribute to the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Per-timestep cross entropy averaged over frames.
    ManyToMany,
    /// Cross entropy at the last real frame only.
    ManyToOne,
}

/// Weights of one stacked layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Input weights, 4H × D.
    pub w: Mat,
    /// Recurrent weights, 4H × H.
    pub u: Mat,
    /// Bias, 4H.
    pub b: Vec<f64>,
}

impl LayerParams {
    pub fn hidden_size(&self) -> usize {
        self.u.cols
    }

    pub fn input_size(&self) -> usize {
        self.w.cols
    }
}

/// All trainable weights of the stack plus the output projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub layers: Vec<LayerParams>,
    /// Output projection, C × H_L.
    pub w_out: Mat,
    pub b_out: Vec<f64>,
}

impl LstmParams {
    /// Seeded initialization: weights uniform in [−1/√H, 1/√H], zero
    /// biases except the forget-gate bias which starts at +1.
    pub fn init(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.is_empty() || hidden.contains(&0) || classes < 2 {
            return Err(Error::Argument(format!(
                "bad lstm shape: input_dim={input_dim}, hidden={hidden:?}, classes={classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut d = input_dim;
        for &h in hidden {
            let bound = 1.0 / (h as f64).sqrt();
            let mut w = Mat::zeros(4 * h, d);
            for v in &mut w.data {
                *v = rng.gen_range(-bound..bound);
            }
            let mut u = Mat::zeros(4 * h, h);
            for v in &mut u.data {
                *v = rng.gen_range(-bound..bound);
            }
            let mut b = vec![0.0; 4 * h];
            // forget-gate block is the second quarter under (i,f,g,o)
            for v in &mut b[h..2 * h] {
                *v = 1.0;
            }
            layers.push(LayerParams { w, u, b });
            d = h;
        }
        let h_last = *hidden.last().unwrap();
        let bound = 1.0 / (h_last as f64).sqrt();
        let mut w_out = Mat::zeros(classes, h_last);
        for v in &mut w_out.data {
            *v = rng.gen_range(-bound..bound);
        }
        Ok(LstmParams { layers, w_out, b_out: vec![0.0; classes] })
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w: Mat::zeros(l.w.rows, l.w.cols),
                    u: Mat::zeros(l.u.rows, l.u.cols),
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
            w_out: Mat::zeros(self.w_out.rows, self.w_out.cols),
            b_out: vec![0.0; self.b_out.len()],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden_size()).collect()
    }

    pub fn class_count(&self) -> usize {
        self.w_out.rows
    }

    /// Tensors in a fixed flattening order (layer w, u, b; then w_out,
    /// b_out), used by the optimizer and gradient clipping.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w.data.as_slice());
            out.push(l.u.data.as_slice());
            out.push(l.b.as_slice());
        }
        out.push(self.w_out.data.as_slice());
        out.push(self.b_out.as_slice());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.data.as_mut_slice());
            out.push(l.u.data.as_mut_slice());
            out.push(l.b.as_mut_slice());
        }
        out.push(self.w_out.data.as_mut_slice());
        out.push(self.b_out.as_mut_slice());
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("no layers".into()));
        }
        let mut d = self.input_dim();
        for (i, l) in self.layers.iter().enumerate() {
            let h = l.hidden_size();
            if l.w.rows != 4 * h || l.u.rows != 4 * h || l.b.len() != 4 * h {
                return Err(Error::Shape(format!("layer {i}: inconsistent 4H blocks")));
            }
            if l.w.cols != d {
                return Err(Error::Shape(format!(
                    "layer {i}: input dim {} != expected {d}",
                    l.w.cols
                )));
            }
            d = h;
        }
        if self.w_out.cols != d {
            return Err(Error::Shape("output projection width != top hidden size".into()));
        }
        if self.b_out.len() != self.w_out.rows {
            return Err(Error::Shape("output bias length != class count".into()));
        }
        if !self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())) {
            return Err(Error::Overflow("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Gate activations and states of one layer at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Activated gates, 4H, blocks (i, f, g, o).
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub tanh_c: Vec<f64>,
    /// The input fed to this layer at this step (post-dropout output of
    /// the layer below, or the frame vector for layer 0).
    pub input: Vec<f64>,
    /// Inverted-dropout scale factors applied to this layer's output
    /// before it feeds the next layer. None when no dropout applies.
    pub drop_mask: Option<Vec<f64>>,
}

/// Full forward-pass record of one sample, sufficient for exact BPTT.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmTape {
    /// records[layer][t]
    pub records: Vec<Vec<StepRecord>>,
    /// logits[t], C
    pub logits: Vec<Vec<f64>>,
    /// probs[t], softmax rows
    pub probs: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
}

impl LstmTape {
    pub fn steps(&self) -> usize {
        self.mask.len()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One LSTM cell step. Returns (h, c, activated-gate record).
pub fn cell_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    layer: &LayerParams,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let h_size = layer.hidden_size();
    if x.len() != layer.input_size() || h_prev.len() != h_size || c_prev.len() != h_size {
        return Err(Error::Shape(format!(
            "cell_step: x={}, h_prev={}, c_prev={} vs layer D={}, H={}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            layer.input_size(),
            h_size
        )));
    }
    let mut pre = layer.b.clone();
    {
        // pre = W x + U h_prev + b
        let mut tmp = vec![0.0; 4 * h_size];
        layer.w.matvec(x, &mut tmp);
        for (p, t) in pre.iter_mut().zip(&tmp) {
            *p += t;
        }
        layer.u.matvec(h_prev, &mut tmp);
        for (p, t) in pre.iter_mut().zip(&tmp) {
            *p += t;
        }
    }
    let mut gates = vec![0.0; 4 * h_size];
    for k in 0..h_size {
        gates[k] = sigmoid(pre[k]); // i
        gates[h_size + k] = sigmoid(pre[h_size + k]); // f
        gates[2 * h_size + k] = pre[2 * h_size + k].tanh(); // g
        gates[3 * h_size + k] = sigmoid(pre[3 * h_size + k]); // o
    }
    let mut c = vec![0.0; h_size];
    let mut h = vec![0.0; h_size];
    for k in 0..h_size {
        c[k] = gates[h_size + k] * c_prev[k] + gates[k] * gates[2 * h_size + k];
        h[k] = gates[3 * h_size + k] * c[k].tanh();
    }
    if !h.iter().all(|v| v.is_finite()) || !c.iter().all(|v| v.is_finite()) {
        return Err(Error::Overflow("non-finite cell state".into()));
    }
    Ok((h, c, gates))
}

/// Run the full stack over a sequence, recording everything BPTT needs.
///
/// `seed` drives the dropout masks; with `training=false` or dropout 0
/// the pass is deterministic and seed-independent.
pub fn forward_sequence(
    seq: &NormalizedSequence,
    params: &LstmParams,
    dropout: f64,
    training: bool,
    seed: u64,
) -> Result<LstmTape> {
    params.validate()?;
    if seq.dim() != params.input_dim() {
        return Err(Error::Shape(format!(
            "sequence dim {} != model input dim {}",
            seq.dim(),
            params.input_dim()
        )));
    }
    let steps = seq.len();
    let layer_count = params.layers.len();
    let use_dropout = training && dropout > 0.0;
    let keep = 1.0 - dropout;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut records: Vec<Vec<StepRecord>> = vec![Vec::with_capacity(steps); layer_count];
    let mut logits = Vec::with_capacity(steps);
    let mut probs = Vec::with_capacity(steps);

    for t in 0..steps {
        let mut input = seq.vectors[t].clone();
        for (l, layer) in params.layers.iter().enumerate() {
            let h_size = layer.hidden_size();
            let (h_prev, c_prev) = if t == 0 {
                (vec![0.0; h_size], vec![0.0; h_size])
            } else {
                let prev = &records[l][t - 1];
                (prev.h.clone(), prev.c.clone())
            };
            let (h, c, gates) = cell_step(&input, &h_prev, &c_prev, layer)?;
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();

            // dropout applies to this layer's output before the next layer
            let (next_input, drop_mask) = if l + 1 < layer_count {
                if use_dropout {
                    let mask: Vec<f64> = (0..h_size)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let dropped: Vec<f64> =
                        h.iter().zip(&mask).map(|(v, m)| v * m).collect();
                    (dropped, Some(mask))
                } else {
                    (h.clone(), None)
                }
            } else {
                (h.clone(), None)
            };

            records[l].push(StepRecord { gates, c, h, tanh_c, input, drop_mask });
            input = next_input;
        }
        let top_h = &records[layer_count - 1][t].h;
        let mut logit = params.b_out.clone();
        let mut tmp = vec![0.0; params.class_count()];
        params.w_out.matvec(top_h, &mut tmp);
        for (a, b) in logit.iter_mut().zip(&tmp) {
            *a += b;
        }
        let p = softmax(&logit);
        logits.push(logit);
        probs.push(p);
    }

    Ok(LstmTape { records, logits, probs, mask: seq.mask.clone() })
}

/// Options shared by `compute_loss` and `backward_through_time`.
#[derive(Debug, Clone, Copy)]
pub struct LossOptions {
    pub mode: LossMode,
    /// Exclude zero-padded frames from the loss.
    pub mask_padding: bool,
    /// Sum over timesteps instead of averaging (fidelity switch).
    pub sum_over_time: bool,
}

impl LossOptions {
    pub fn many_to_many() -> Self {
        LossOptions { mode: LossMode::ManyToMany, mask_padding: true, sum_over_time: false }
    }
}

fn effective_mask(tape: &LstmTape, mask_padding: bool) -> Vec<bool> {
    if mask_padding {
        tape.mask.clone()
    } else {
        vec![true; tape.steps()]
    }
}

fn last_true(mask: &[bool]) -> Option<usize> {
    mask.iter().rposition(|&m| m)
}

/// Batch loss under the chosen mode.
pub fn compute_loss(tapes: &[LstmTape], labels: &[usize], opts: LossOptions) -> Result<f64> {
    if tapes.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if tapes.len() != labels.len() {
        return Err(Error::Shape("tapes/labels length mismatch".into()));
    }
    let mut total = 0.0;
    for (tape, &label) in tapes.iter().zip(labels) {
        let mask = effective_mask(tape, opts.mask_padding);
        match opts.mode {
            LossMode::ManyToMany => {
                let mut acc = 0.0;
                let mut count = 0usize;
                for (t, &real) in mask.iter().enumerate() {
                    if !real {
                        continue;
                    }
                    let p = tape.probs[t][label].max(PROB_FLOOR);
                    acc -= p.ln();
                    count += 1;
                }
                if count == 0 {
                    return Err(Error::EmptySequence("all timesteps masked".into()));
                }
                total += if opts.sum_over_time { acc } else { acc / count as f64 };
            }
            LossMode::ManyToOne => {
                let t = last_true(&mask)
                    .ok_or_else(|| Error::EmptySequence("all timesteps masked".into()))?;
                let p = tape.probs[t][label].max(PROB_FLOOR);
                total -= p.ln();
            }
        }
    }
    Ok(total / tapes.len() as f64)
}

/// Exact analytic gradient of `compute_loss` with respect to every
/// parameter, accumulated over the batch.
pub fn backward_through_time(
    tapes: &[LstmTape],
    labels: &[usize],
    opts: LossOptions,
    params: &LstmParams,
) -> Result<LstmParams> {
    if tapes.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if tapes.len() != labels.len() {
        return Err(Error::Shape("tapes/labels length mismatch".into()));
    }
    let layer_count = params.layers.len();
    let classes = params.class_count();
    let batch = tapes.len() as f64;
    let mut grads = params.zeros_like();

    for (tape, &label) in tapes.iter().zip(labels) {
        if tape.records.len() != layer_count {
            return Err(Error::Consistency("tape layer count != params".into()));
        }
        let steps = tape.steps();
        if tape
            .records
            .iter()
            .zip(&params.layers)
            .any(|(r, l)| r.iter().any(|s| s.h.len() != l.hidden_size()))
        {
            return Err(Error::Consistency("tape hidden sizes != params".into()));
        }
        if label >= classes {
            return Err(Error::Argument(format!("label {label} >= classes {classes}")));
        }
        let mask = effective_mask(tape, opts.mask_padding);

        // per-timestep logit-gradient coefficients
        let mut coef = vec![0.0; steps];
        match opts.mode {
            LossMode::ManyToMany => {
                let count = mask.iter().filter(|&&m| m).count();
                if count == 0 {
                    return Err(Error::EmptySequence("all timesteps masked".into()));
                }
                let c = if opts.sum_over_time { 1.0 } else { 1.0 / count as f64 } / batch;
                for (t, &real) in mask.iter().enumerate() {
                    if real {
                        coef[t] = c;
                    }
                }
            }
            LossMode::ManyToOne => {
                let t = last_true(&mask)
                    .ok_or_else(|| Error::EmptySequence("all timesteps masked".into()))?;
                coef[t] = 1.0 / batch;
            }
        }

        // output projection; collect dL/dh for the top layer
        let top = layer_count - 1;
        let h_top = params.layers[top].hidden_size();
        let mut d_from_above: Vec<Vec<f64>> = vec![vec![0.0; h_top]; steps];
        for t in 0..steps {
            if coef[t] == 0.0 {
                continue;
            }
            let mut dlogit = vec![0.0; classes];
            for k in 0..classes {
                let target = if k == label { 1.0 } else { 0.0 };
                dlogit[k] = coef[t] * (tape.probs[t][k] - target);
            }
            let h = &tape.records[top][t].h;
            grads.w_out.outer_add(&dlogit, h);
            for (g, d) in grads.b_out.iter_mut().zip(&dlogit) {
                *g += d;
            }
            params.w_out.matvec_transpose_add(&dlogit, &mut d_from_above[t]);
        }

        // layers, top-down; within a layer, time runs backward
        for l in (0..layer_count).rev() {
            let layer = &params.layers[l];
            let h_size = layer.hidden_size();
            let d_size = layer.input_size();
            let grad_layer = &mut grads.layers[l];
            let mut dh_next = vec![0.0; h_size];
            let mut dc_next = vec![0.0; h_size];
            let mut d_below: Vec<Vec<f64>> = if l > 0 {
                vec![vec![0.0; d_size]; steps]
            } else {
                Vec::new()
            };

            for t in (0..steps).rev() {
                let rec = &tape.records[l][t];
                let mut dh = d_from_above[t].clone();
                for (a, b) in dh.iter_mut().zip(&dh_next) {
                    *a += b;
                }
                let (i_g, rest) = rec.gates.split_at(h_size);
                let (f_g, rest) = rest.split_at(h_size);
                let (g_g, o_g) = rest.split_at(h_size);

                let mut dpre = vec![0.0; 4 * h_size];
                let zeros;
                let c_prev: &[f64] = if t == 0 {
                    zeros = vec![0.0; h_size];
                    &zeros
                } else {
                    &tape.records[l][t - 1].c
                };
                for k in 0..h_size {
                    let d_o = dh[k] * rec.tanh_c[k];
                    let dc = dc_next[k] + dh[k] * o_g[k] * (1.0 - rec.tanh_c[k] * rec.tanh_c[k]);
                    let d_i = dc * g_g[k];
                    let d_g = dc * i_g[k];
                    let d_f = dc * c_prev[k];
                    dc_next[k] = dc * f_g[k];
                    dpre[k] = d_i * i_g[k] * (1.0 - i_g[k]);
                    dpre[h_size + k] = d_f * f_g[k] * (1.0 - f_g[k]);
                    dpre[2 * h_size + k] = d_g * (1.0 - g_g[k] * g_g[k]);
                    dpre[3 * h_size + k] = d_o * o_g[k] * (1.0 - o_g[k]);
                }

                grad_layer.w.outer_add(&dpre, &rec.input);
                if t > 0 {
                    grad_layer.u.outer_add(&dpre, &tape.records[l][t - 1].h);
                }
                for (g, d) in grad_layer.b.iter_mut().zip(&dpre) {
                    *g += d;
                }
                if l > 0 {
                    layer.w.matvec_transpose_add(&dpre, &mut d_below[t]);
                }
                dh_next = vec![0.0; h_size];
                layer.u.matvec_transpose_add(&dpre, &mut dh_next);
            }

            if l > 0 {
                // pass gradient down, undoing the dropout scaling of the
                // layer below's output
                d_from_above = d_below;
                for t in 0..steps {
                    if let Some(mask) = &tape.records[l - 1][t].drop_mask {
                        for (d, m) in d_from_above[t].iter_mut().zip(mask) {
                            *d *= m;
                        }
                    }
                }
            }
        }
    }

    Ok(grads)
}

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub mask_padding: bool,
    pub sum_over_time: bool,
    pub hidden: Vec<usize>,
    /// Stop early once training accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            clip_norm: 1.0,
            dropout: 0.5,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            loss_mode: LossMode::ManyToMany,
            mask_padding: true,
            sum_over_time: false,
            hidden: vec![128, 128, 128],
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            mode: self.loss_mode,
            mask_padding: self.mask_padding,
            sum_over_time: self.sum_over_time,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden sizes must be non-empty and positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
