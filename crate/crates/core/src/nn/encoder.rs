//! GRU encoder over a scalar sequence, plus backpropagation through time.

use super::{sigmoid, EncoderParams};
use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Forward activations kept for the backward pass. `states[t]` is the
/// hidden state *before* consuming sample `t` (so `states[0]` is the zero
/// initial state and `states[L]` is `h_c`).
#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub inputs: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub update: Vec<Vec<f64>>,
    pub reset: Vec<Vec<f64>>,
    pub cand: Vec<Vec<f64>>,
}

impl EncoderCache {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// Stack of per-step hidden states (the attention memory).
    pub fn outputs(&self) -> Mat {
        let len = self.inputs.len();
        let hidden = self.states[0].len();
        let mut m = Mat::zeros(len, hidden);
        for t in 0..len {
            m.row_mut(t).copy_from_slice(&self.states[t + 1]);
        }
        m
    }
}

pub fn encode_cached(segment: &[f64], params: &EncoderParams) -> Result<EncoderCache> {
    if segment.is_empty() {
        return Err(Error::Argument("cannot encode an empty segment".into()));
    }
    if segment.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("encoder input contains a non-finite sample".into()));
    }
    let h = params.hidden;
    let mut cache = EncoderCache {
        inputs: segment.to_vec(),
        states: Vec::with_capacity(segment.len() + 1),
        update: Vec::with_capacity(segment.len()),
        reset: Vec::with_capacity(segment.len()),
        cand: Vec::with_capacity(segment.len()),
    };
    cache.states.push(vec![0.0; h]);

    for &x in segment {
        let prev = cache.states.last().unwrap().clone();
        let uz = params.u_update.matvec(&prev);
        let ur = params.u_reset.matvec(&prev);
        let update: Vec<f64> = (0..h)
            .map(|i| sigmoid(params.w_update[i] * x + uz[i] + params.b_update[i]))
            .collect();
        let reset: Vec<f64> = (0..h)
            .map(|i| sigmoid(params.w_reset[i] * x + ur[i] + params.b_reset[i]))
            .collect();
        let gated: Vec<f64> = reset.iter().zip(&prev).map(|(r, p)| r * p).collect();
        let uc = params.u_cand.matvec(&gated);
        let cand: Vec<f64> = (0..h)
            .map(|i| (params.w_cand[i] * x + uc[i] + params.b_cand[i]).tanh())
            .collect();
        let state: Vec<f64> = (0..h)
            .map(|i| (1.0 - update[i]) * prev[i] + update[i] * cand[i])
            .collect();
        cache.update.push(update);
        cache.reset.push(reset);
        cache.cand.push(cand);
        cache.states.push(state);
    }
    Ok(cache)
}

/// Encode a segment: returns the final hidden state and the stacked
/// per-step states.
pub fn encode(segment: &[f64], params: &EncoderParams) -> Result<(Vec<f64>, Mat)> {
    let cache = encode_cached(segment, params)?;
    Ok((cache.final_state().to_vec(), cache.outputs()))
}

/// Backpropagation through time. `d_final` is the gradient on `h_c`;
/// `d_outputs`, when present, holds a gradient row per step of the attention
/// memory. Returns parameter gradients with the same shapes as `params`.
pub fn encoder_backward(
    cache: &EncoderCache,
    params: &EncoderParams,
    d_final: &[f64],
    d_outputs: Option<&Mat>,
) -> EncoderParams {
    let h = params.hidden;
    let len = cache.inputs.len();
    let mut grads = EncoderParams::zeros(h);
    let mut d_state = d_final.to_vec();

    for t in (0..len).rev() {
        if let Some(m) = d_outputs {
            for (d, g) in d_state.iter_mut().zip(m.row(t)) {
                *d += g;
            }
        }
        let x = cache.inputs[t];
        let prev = &cache.states[t];
        let update = &cache.update[t];
        let reset = &cache.reset[t];
        let cand = &cache.cand[t];

        let mut d_prev = vec![0.0; h];
        let mut d_cand_pre = vec![0.0; h];
        let mut d_update_pre = vec![0.0; h];
        for i in 0..h {
            let dz = d_state[i] * (cand[i] - prev[i]);
            let dc = d_state[i] * update[i];
            d_prev[i] += d_state[i] * (1.0 - update[i]);
            d_cand_pre[i] = dc * (1.0 - cand[i] * cand[i]);
            d_update_pre[i] = dz * update[i] * (1.0 - update[i]);
        }

        let gated: Vec<f64> = reset.iter().zip(prev).map(|(r, p)| r * p).collect();
        let d_gated = params.u_cand.tr_matvec(&d_cand_pre);
        let mut d_reset_pre = vec![0.0; h];
        for i in 0..h {
            d_reset_pre[i] = d_gated[i] * prev[i] * reset[i] * (1.0 - reset[i]);
            d_prev[i] += d_gated[i] * reset[i];
        }

        for i in 0..h {
            grads.w_cand[i] += d_cand_pre[i] * x;
            grads.b_cand[i] += d_cand_pre[i];
            grads.w_update[i] += d_update_pre[i] * x;
            grads.b_update[i] += d_update_pre[i];
            grads.w_reset[i] += d_reset_pre[i] * x;
            grads.b_reset[i] += d_reset_pre[i];
        }
        grads.u_cand.add_outer(1.0, &d_cand_pre, &gated);
        grads.u_update.add_outer(1.0, &d_update_pre, prev);
        grads.u_reset.add_outer(1.0, &d_reset_pre, prev);

        let via_update = params.u_update.tr_matvec(&d_update_pre);
        let via_reset = params.u_reset.tr_matvec(&d_reset_pre);
        for i in 0..h {
            d_prev[i] += via_update[i] + via_reset[i];
        }
        d_state = d_prev;
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::nn::fd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_keep_state_at_zero() {
        let params = EncoderParams::zeros(4);
        let (h_c, _) = encode(&[0.7, -1.2, 3.0], &params).unwrap();
        assert!(h_c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_stack_has_one_row_per_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = EncoderParams::init(5, &mut rng);
        let (_, s_o) = encode(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7], &params).unwrap();
        assert_eq!(s_o.rows, 7);
        assert_eq!(s_o.cols, 5);
    }

    #[test]
    fn rejects_non_finite_input() {
        let params = EncoderParams::zeros(3);
        assert!(encode(&[1.0, f64::NAN], &params).is_err());
        assert!(encode(&[], &params).is_err());
    }

    #[test]
    fn init_is_reproducible() {
        let a = EncoderParams::init(6, &mut ChaCha8Rng::seed_from_u64(9));
        let b = EncoderParams::init(6, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_of_final_state_norm_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for (hidden, len) in [(3usize, 5usize), (8, 12)] {
            let params = EncoderParams::init(hidden, &mut rng);
            let segment: Vec<f64> = (0..len).map(|i| ((i as f64) * 0.9).sin()).collect();

            // loss = ‖h_c‖²
            let cache = encode_cached(&segment, &params).unwrap();
            let d_final: Vec<f64> = cache.final_state().iter().map(|v| 2.0 * v).collect();
            let grads = encoder_backward(&cache, &params, &d_final, None);

            fd::check_grads(
                &params,
                &grads,
                |p| {
                    let (h_c, _) = encode(&segment, p).unwrap();
                    dot(&h_c, &h_c)
                },
                &format!("encoder H={hidden} L={len}"),
            );
        }
    }

    #[test]
    fn gradient_through_output_stack_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let params = EncoderParams::init(4, &mut rng);
        let segment = [0.3, -0.5, 0.9, 0.2, -0.1, 0.6];

        // loss = Σ_t Σ_i s_o[t][i]²
        let cache = encode_cached(&segment, &params).unwrap();
        let outputs = cache.outputs();
        let d_outputs = Mat::from_fn(outputs.rows, outputs.cols, |t, i| 2.0 * outputs[(t, i)]);
        let grads = encoder_backward(&cache, &params, &[0.0; 4], Some(&d_outputs));

        fd::check_grads(
            &params,
            &grads,
            |p| {
                let (_, s_o) = encode(&segment, p).unwrap();
                s_o.data.iter().map(|v| v * v).sum()
            },
            "encoder output stack",
        );
    }
}
