//! Mixture-membership estimation network: one tanh hidden layer into a
//! softmax over components.

use super::{softmax, EstimatorParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EstimatorCache {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub membership: Vec<f64>,
}

pub fn estimator_forward(y: &[f64], params: &EstimatorParams) -> Result<EstimatorCache> {
    if y.len() != params.input_dim {
        return Err(Error::Argument(format!(
            "estimator expects input dim {}, got {}",
            params.input_dim,
            y.len()
        )));
    }
    let mut hidden = params.w_hidden.matvec(y);
    for (h, b) in hidden.iter_mut().zip(&params.b_hidden) {
        *h = (*h + b).tanh();
    }
    let mut logits = params.w_out.matvec(&hidden);
    for (l, b) in logits.iter_mut().zip(&params.b_out) {
        *l += b;
    }
    Ok(EstimatorCache {
        input: y.to_vec(),
        hidden,
        membership: softmax(&logits),
    })
}

/// Membership probabilities `γ` for one latent vector; always a
/// distribution over the K components.
pub fn estimate_membership(y: &[f64], params: &EstimatorParams) -> Result<Vec<f64>> {
    Ok(estimator_forward(y, params)?.membership)
}

/// Backward pass from a gradient on `γ`: returns parameter gradients and
/// the gradient on the input vector.
pub fn estimator_backward(
    cache: &EstimatorCache,
    params: &EstimatorParams,
    d_membership: &[f64],
) -> (EstimatorParams, Vec<f64>) {
    let mut grads = EstimatorParams::zeros(params.input_dim, params.hidden_dim, params.components);
    // softmax jacobian
    let inner: f64 = cache
        .membership
        .iter()
        .zip(d_membership)
        .map(|(g, d)| g * d)
        .sum();
    let d_logits: Vec<f64> = cache
        .membership
        .iter()
        .zip(d_membership)
        .map(|(g, d)| g * (d - inner))
        .collect();

    grads.w_out.add_outer(1.0, &d_logits, &cache.hidden);
    for (b, d) in grads.b_out.iter_mut().zip(&d_logits) {
        *b += d;
    }
    let d_hidden_post = params.w_out.tr_matvec(&d_logits);
    let d_hidden_pre: Vec<f64> = d_hidden_post
        .iter()
        .zip(&cache.hidden)
        .map(|(d, h)| d * (1.0 - h * h))
        .collect();
    grads.w_hidden.add_outer(1.0, &d_hidden_pre, &cache.input);
    for (b, d) in grads.b_hidden.iter_mut().zip(&d_hidden_pre) {
        *b += d;
    }
    let d_input = params.w_hidden.tr_matvec(&d_hidden_pre);
    (grads, d_input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fd;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn membership_is_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = EstimatorParams::init(6, 10, 3, &mut rng);
        let y = [0.4, -0.2, 0.9, 0.0, -0.7, 0.3];
        let gamma = estimate_membership(&y, &params).unwrap();
        assert_eq!(gamma.len(), 3);
        assert!(gamma.iter().all(|g| *g >= 0.0));
        assert!((gamma.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_weights_give_uniform_membership() {
        let params = EstimatorParams::zeros(4, 5, 4);
        let gamma = estimate_membership(&[1.0, -2.0, 0.5, 3.0], &params).unwrap();
        for g in gamma {
            assert!((g - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let params = EstimatorParams::init(5, 7, 3, &mut rng);
        let y = [0.2, -0.4, 0.8, -0.1, 0.5];
        // loss = Σ_k (γ_k − t_k)² against a fixed target
        let target = [0.7, 0.2, 0.1];

        let cache = estimator_forward(&y, &params).unwrap();
        let d_membership: Vec<f64> = cache
            .membership
            .iter()
            .zip(&target)
            .map(|(g, t)| 2.0 * (g - t))
            .collect();
        let (grads, d_input) = estimator_backward(&cache, &params, &d_membership);

        let loss = |p: &EstimatorParams, y: &[f64]| -> f64 {
            let gamma = estimate_membership(y, p).unwrap();
            gamma.iter().zip(&target).map(|(g, t)| (g - t) * (g - t)).sum()
        };
        fd::check_grads(&params, &grads, |p| loss(p, &y), "estimator");

        let step = 1e-5;
        for i in 0..y.len() {
            let mut up = y;
            let mut down = y;
            up[i] += step;
            down[i] -= step;
            let numeric = (loss(&params, &up) - loss(&params, &down)) / (2.0 * step);
            assert!(fd::rel_err(numeric, d_input[i]) < fd::FD_REL_TOL);
        }
    }
}
