//! Attentive GRU decoder: at each step, additive attention over the encoder
//! outputs produces a context vector that is combined with the previously
//! emitted sample to drive the recurrence. No teacher forcing -- the decoder
//! consumes its own outputs, so training matches inference.

use super::{sigmoid, softmax, DecoderParams};
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};

#[derive(Debug, Clone)]
struct StepCache {
    /// Decoder state the step started from.
    query: Vec<f64>,
    /// GRU input `[prev_out, context]`.
    input: Vec<f64>,
    update: Vec<f64>,
    reset: Vec<f64>,
    cand: Vec<f64>,
    state: Vec<f64>,
    weights: Vec<f64>,
    /// tanh alignment vectors, one row per memory entry.
    align: Mat,
    output: f64,
}

/// Forward activations for the backward pass.
#[derive(Debug, Clone)]
pub struct DecodeCache {
    memory: Mat,
    steps: Vec<StepCache>,
}

impl DecodeCache {
    pub fn reconstruction(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.output).collect()
    }

    /// Per-step attention distributions over the memory.
    pub fn attention_weights(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.weights.clone()).collect()
    }
}

pub fn decode_cached(
    initial_state: &[f64],
    memory: &Mat,
    params: &DecoderParams,
    target_len: usize,
) -> Result<DecodeCache> {
    if target_len == 0 {
        return Err(Error::Argument("target_len must be positive".into()));
    }
    if memory.rows == 0 {
        return Err(Error::Argument("attention memory must be non-empty".into()));
    }
    let h = params.hidden;
    if initial_state.len() != h || memory.cols != h {
        return Err(Error::Argument("decoder state/memory width mismatch".into()));
    }

    // The memory projection is step-invariant.
    let mem_proj: Vec<Vec<f64>> = (0..memory.rows)
        .map(|j| params.attn_memory.matvec(memory.row(j)))
        .collect();

    let mut steps = Vec::with_capacity(target_len);
    let mut state = initial_state.to_vec();
    let mut prev_out = 0.0;

    for _ in 0..target_len {
        let query = state.clone();
        let q_proj = params.attn_query.matvec(&query);
        let mut align = Mat::zeros(memory.rows, h);
        let mut scores = vec![0.0; memory.rows];
        for j in 0..memory.rows {
            for i in 0..h {
                align[(j, i)] = (q_proj[i] + mem_proj[j][i]).tanh();
            }
            scores[j] = dot(&params.attn_score, align.row(j));
        }
        let weights = softmax(&scores);
        let mut context = vec![0.0; h];
        for j in 0..memory.rows {
            for (c, m) in context.iter_mut().zip(memory.row(j)) {
                *c += weights[j] * m;
            }
        }

        let mut input = Vec::with_capacity(h + 1);
        input.push(prev_out);
        input.extend_from_slice(&context);

        let wz = params.w_update.matvec(&input);
        let uz = params.u_update.matvec(&state);
        let wr = params.w_reset.matvec(&input);
        let ur = params.u_reset.matvec(&state);
        let update: Vec<f64> = (0..h).map(|i| sigmoid(wz[i] + uz[i] + params.b_update[i])).collect();
        let reset: Vec<f64> = (0..h).map(|i| sigmoid(wr[i] + ur[i] + params.b_reset[i])).collect();
        let gated: Vec<f64> = reset.iter().zip(&state).map(|(r, p)| r * p).collect();
        let wc = params.w_cand.matvec(&input);
        let uc = params.u_cand.matvec(&gated);
        let cand: Vec<f64> = (0..h).map(|i| (wc[i] + uc[i] + params.b_cand[i]).tanh()).collect();
        let next: Vec<f64> = (0..h)
            .map(|i| (1.0 - update[i]) * state[i] + update[i] * cand[i])
            .collect();
        let output = dot(&params.out_weight, &next) + params.out_bias[0];

        steps.push(StepCache {
            query,
            input,
            update,
            reset,
            cand,
            state: next.clone(),
            weights,
            align,
            output,
        });
        state = next;
        prev_out = output;
    }

    Ok(DecodeCache {
        memory: memory.clone(),
        steps,
    })
}

/// Reconstruct `target_len` samples from the encoder's final state and
/// output stack.
pub fn decode_attentive(
    initial_state: &[f64],
    memory: &Mat,
    params: &DecoderParams,
    target_len: usize,
) -> Result<Vec<f64>> {
    Ok(decode_cached(initial_state, memory, params, target_len)?.reconstruction())
}

/// Backward pass. `d_outputs[t]` is the loss gradient on the t-th emitted
/// sample. Returns parameter gradients plus the gradients flowing into the
/// initial state and the attention memory.
pub fn decoder_backward(
    cache: &DecodeCache,
    params: &DecoderParams,
    d_outputs: &[f64],
) -> (DecoderParams, Vec<f64>, Mat) {
    let h = params.hidden;
    let mem_rows = cache.memory.rows;
    let mut grads = DecoderParams::zeros(h);
    let mut d_memory = Mat::zeros(mem_rows, h);
    let mut d_state = vec![0.0; h];
    let mut d_prev_out = 0.0;

    for (t, step) in cache.steps.iter().enumerate().rev() {
        let d_out_total = d_outputs[t] + d_prev_out;
        for i in 0..h {
            grads.out_weight[i] += d_out_total * step.state[i];
            d_state[i] += params.out_weight[i] * d_out_total;
        }
        grads.out_bias[0] += d_out_total;

        // GRU backward
        let prev = &step.query;
        let mut d_prev_state = vec![0.0; h];
        let mut d_cand_pre = vec![0.0; h];
        let mut d_update_pre = vec![0.0; h];
        for i in 0..h {
            let dz = d_state[i] * (step.cand[i] - prev[i]);
            let dc = d_state[i] * step.update[i];
            d_prev_state[i] += d_state[i] * (1.0 - step.update[i]);
            d_cand_pre[i] = dc * (1.0 - step.cand[i] * step.cand[i]);
            d_update_pre[i] = dz * step.update[i] * (1.0 - step.update[i]);
        }
        let gated: Vec<f64> = step.reset.iter().zip(prev).map(|(r, p)| r * p).collect();
        let d_gated = params.u_cand.tr_matvec(&d_cand_pre);
        let mut d_reset_pre = vec![0.0; h];
        for i in 0..h {
            d_reset_pre[i] = d_gated[i] * prev[i] * step.reset[i] * (1.0 - step.reset[i]);
            d_prev_state[i] += d_gated[i] * step.reset[i];
        }

        grads.w_cand.add_outer(1.0, &d_cand_pre, &step.input);
        grads.u_cand.add_outer(1.0, &d_cand_pre, &gated);
        grads.w_update.add_outer(1.0, &d_update_pre, &step.input);
        grads.u_update.add_outer(1.0, &d_update_pre, prev);
        grads.w_reset.add_outer(1.0, &d_reset_pre, &step.input);
        grads.u_reset.add_outer(1.0, &d_reset_pre, prev);
        for i in 0..h {
            grads.b_cand[i] += d_cand_pre[i];
            grads.b_update[i] += d_update_pre[i];
            grads.b_reset[i] += d_reset_pre[i];
        }

        let via_update = params.u_update.tr_matvec(&d_update_pre);
        let via_reset = params.u_reset.tr_matvec(&d_reset_pre);
        for i in 0..h {
            d_prev_state[i] += via_update[i] + via_reset[i];
        }

        let mut d_input = vec![0.0; h + 1];
        for (m, pre) in [
            (&params.w_update, &d_update_pre),
            (&params.w_reset, &d_reset_pre),
            (&params.w_cand, &d_cand_pre),
        ] {
            let contrib = m.tr_matvec(pre);
            for (d, c) in d_input.iter_mut().zip(&contrib) {
                *d += c;
            }
        }
        d_prev_out = d_input[0];
        let d_context = &d_input[1..];

        // attention backward
        let mut d_scores = vec![0.0; mem_rows];
        let mut d_weights = vec![0.0; mem_rows];
        for j in 0..mem_rows {
            d_weights[j] = dot(cache.memory.row(j), d_context);
            for (dm, dc) in d_memory.row_mut(j).iter_mut().zip(d_context) {
                *dm += step.weights[j] * dc;
            }
        }
        let weighted_sum: f64 = step
            .weights
            .iter()
            .zip(&d_weights)
            .map(|(w, dw)| w * dw)
            .sum();
        for j in 0..mem_rows {
            d_scores[j] = step.weights[j] * (d_weights[j] - weighted_sum);
        }

        let mut sum_align_pre = vec![0.0; h];
        for j in 0..mem_rows {
            let row = step.align.row(j);
            let mut align_pre = vec![0.0; h];
            for i in 0..h {
                grads.attn_score[i] += d_scores[j] * row[i];
                align_pre[i] = d_scores[j] * params.attn_score[i] * (1.0 - row[i] * row[i]);
                sum_align_pre[i] += align_pre[i];
            }
            grads.attn_memory.add_outer(1.0, &align_pre, cache.memory.row(j));
            let back = params.attn_memory.tr_matvec(&align_pre);
            for (dm, b) in d_memory.row_mut(j).iter_mut().zip(&back) {
                *dm += b;
            }
        }
        grads.attn_query.add_outer(1.0, &sum_align_pre, &step.query);
        let d_query = params.attn_query.tr_matvec(&sum_align_pre);

        for i in 0..h {
            d_state[i] = d_prev_state[i] + d_query[i];
        }
    }

    (grads, d_state, d_memory)
}
