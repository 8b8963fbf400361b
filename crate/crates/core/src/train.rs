//! Surrogate-based training: reconstruction-only pretraining, per-round
//! hybrid EM on the latent mixture, and one SGD epoch per round on the
//! frozen-mixture joint objective. Each round's EM supplies the frozen
//! means/covariances; the mixture weights inside the joint loss stay live,
//! recomputed from the estimation network over each batch.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::gmm::{self, GmmParams, PreparedGmm};
use crate::nn::{
    self, decode_cached, decoder_backward, encode_cached, encoder_backward, estimator_backward,
    estimator_forward, reconstruction_features, reconstruction_features_backward, DecoderParams,
    EncoderParams, EstimatorParams, LearningRate, ParamBlocks,
};
use crate::segment::{optimize_breakpoints, select_num_segments, split_series, Segment};

pub const COMPONENT_CANDIDATES: [usize; 3] = [2, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Energy weight in the joint objective.
    pub lambda: f64,
    /// Mixture components; `None` selects among {2, 5, 10} on a validation
    /// split of the training normals.
    pub components: Option<usize>,
    /// Encoder/decoder hidden width.
    pub hidden: usize,
    /// Estimation-network hidden width.
    pub estimator_hidden: usize,
    /// Surrogate rounds (EM + one SGD epoch each).
    pub rounds: usize,
    pub pretrain_epochs: usize,
    pub eta0: f64,
    pub decay: f64,
    /// The joint phase runs at `eta0 * joint_eta_scale`: the frozen
    /// mixture's inverse covariances make its gradients orders of magnitude
    /// steeper than pretraining's.
    pub joint_eta_scale: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Shared segment count; `None` selects it via the Calinski-Harabasz sweep.
    pub num_segments: Option<usize>,
    pub m_max: usize,
    pub resample_len: usize,
    /// Covariance regularizer.
    pub eps: f64,
    /// Global gradient-norm clip for pretraining updates.
    pub grad_clip: f64,
    /// Clip for joint-phase updates; the energy term's inverse covariances
    /// make these gradients orders of magnitude steeper.
    pub joint_grad_clip: f64,
    /// Emit one progress record per round on standard error.
    pub progress: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda: 0.1,
            components: None,
            hidden: 8,
            estimator_hidden: 10,
            rounds: 20,
            pretrain_epochs: 50,
            eta0: 0.01,
            decay: 0.01,
            joint_eta_scale: 0.01,
            batch_size: 32,
            seed: 0,
            num_segments: None,
            m_max: 6,
            resample_len: 16,
            eps: gmm::DEFAULT_COVARIANCE_EPS,
            grad_clip: 5.0,
            joint_grad_clip: 1.0,
            progress: true,
        }
    }
}

/// One surrogate round in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub objective: f64,
    pub recon_term: f64,
    pub energy_term: f64,
    /// Mean sample energy of the round's EM fit on the latents it was fit
    /// to; the drift-free convergence measurement.
    pub em_mean_energy: f64,
    /// Pretraining objective `o1`; recorded only when the round's energy
    /// term is nonnegative, the regime where it is a valid lower bound.
    pub bound_lower: Option<f64>,
    pub bound_upper: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub pretrain_loss: f64,
    pub rounds: Vec<RoundRecord>,
}

/// Everything scoring needs: segmentation setting, the three networks, the
/// frozen mixture from the final EM step, and the training energy
/// distribution for shapelet thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub num_segments: usize,
    pub normalized_inputs: bool,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub estimator: EstimatorParams,
    pub gmm: GmmParams,
    pub training_energies: Vec<f64>,
    pub pretrain_loss: f64,
}

/// Re-optimize breakpoints per series and pool every segment.
pub fn segment_dataset(dataset: &Dataset, num_segments: usize) -> Result<Vec<Segment>> {
    let mut segments = Vec::with_capacity(dataset.len() * num_segments);
    for series in &dataset.series {
        let model = optimize_breakpoints(series, num_segments)?;
        segments.extend(split_series(series, &model)?);
    }
    Ok(segments)
}

fn latent_batch(
    segments: &[Segment],
    encoder: &EncoderParams,
    decoder: &DecoderParams,
) -> Result<Vec<Vec<f64>>> {
    segments
        .iter()
        .map(|s| Ok(nn::latent_representation(&s.values, encoder, decoder)?.y))
        .collect()
}

struct SegmentForward {
    enc_cache: nn::EncoderCache,
    dec_cache: nn::DecodeCache,
    reconstruction: Vec<f64>,
    y: Vec<f64>,
    recon_loss: f64,
}

fn forward_segment(
    values: &[f64],
    encoder: &EncoderParams,
    decoder: &DecoderParams,
) -> Result<SegmentForward> {
    let enc_cache = encode_cached(values, encoder)?;
    let memory = enc_cache.outputs();
    let dec_cache = decode_cached(enc_cache.final_state(), &memory, decoder, values.len())?;
    let reconstruction = dec_cache.reconstruction();
    let (euclid, cosine) = reconstruction_features(values, &reconstruction)?;
    let mut y = enc_cache.final_state().to_vec();
    y.push(euclid);
    y.push(cosine);
    let recon_loss = values
        .iter()
        .zip(&reconstruction)
        .map(|(s, r)| (s - r) * (s - r))
        .sum();
    Ok(SegmentForward {
        enc_cache,
        dec_cache,
        reconstruction,
        y,
        recon_loss,
    })
}

struct BatchGrads {
    encoder: EncoderParams,
    decoder: DecoderParams,
    estimator: EstimatorParams,
}

struct BatchLoss {
    total: f64,
    recon: f64,
    energy: f64,
}

/// Loss and gradients over one batch. With `frozen` absent this is the
/// reconstruction-only pretraining objective; otherwise the joint objective
/// with the mixture's means/covariances frozen and the weights recomputed
/// from the estimation network over this batch.
fn batch_loss_grads(
    batch: &[&[f64]],
    encoder: &EncoderParams,
    decoder: &DecoderParams,
    estimator: &EstimatorParams,
    frozen: Option<(&PreparedGmm, f64)>,
    want_grads: bool,
) -> Result<(BatchLoss, Option<BatchGrads>)> {
    let h = encoder.hidden;
    let n = batch.len();
    let forwards = batch
        .iter()
        .map(|values| forward_segment(values, encoder, decoder))
        .collect::<Result<Vec<_>>>()?;
    let recon: f64 = forwards.iter().map(|f| f.recon_loss).sum();

    // Estimation network, live batch weights and per-segment energies.
    let k = frozen.map_or(0, |(p, _)| p.params.k);
    let mut energy = 0.0;
    let mut est_caches = Vec::new();
    let mut weights = vec![0.0; k];
    let mut energy_dy: Vec<Vec<f64>> = Vec::new();
    let mut d_weights_total = vec![0.0; k];
    if let Some((prepared, lambda)) = frozen {
        for f in &forwards {
            let cache = estimator_forward(&f.y, estimator)?;
            for (w, g) in weights.iter_mut().zip(&cache.membership) {
                *w += g / n as f64;
            }
            est_caches.push(cache);
        }
        for f in &forwards {
            let (e, dy, dphi) = prepared.energy_grads(&f.y, &weights);
            energy += e;
            if want_grads {
                energy_dy.push(dy.iter().map(|v| lambda * v).collect());
                for (t, d) in d_weights_total.iter_mut().zip(&dphi) {
                    *t += lambda * d;
                }
            }
        }
        if !energy.is_finite() {
            return Err(Error::Numerical("non-finite energy term in joint loss".into()));
        }
    }
    let lambda = frozen.map_or(0.0, |(_, l)| l);
    let loss = BatchLoss {
        total: recon + lambda * energy,
        recon,
        energy,
    };
    if !want_grads {
        return Ok((loss, None));
    }

    let mut enc_grads = EncoderParams::zeros(h);
    let mut dec_grads = DecoderParams::zeros(h);
    let mut est_grads = EstimatorParams::zeros(
        estimator.input_dim,
        estimator.hidden_dim,
        estimator.components,
    );

    for (i, f) in forwards.iter().enumerate() {
        // gradient on y: the energy term directly, plus the estimation
        // network pulled by the shared batch-weight constraint
        let mut dy = vec![0.0; h + 2];
        if frozen.is_some() {
            for (d, e) in dy.iter_mut().zip(&energy_dy[i]) {
                *d += e;
            }
            let d_membership: Vec<f64> = d_weights_total.iter().map(|d| d / n as f64).collect();
            let (eg, dy_est) = estimator_backward(&est_caches[i], estimator, &d_membership);
            accumulate(&mut est_grads, &eg);
            for (d, e) in dy.iter_mut().zip(&dy_est) {
                *d += e;
            }
        }

        // reconstruction gradient: squared L2 plus the feature pathway
        let mut d_recon: Vec<f64> = f
            .reconstruction
            .iter()
            .zip(batch[i])
            .map(|(r, s)| 2.0 * (r - s))
            .collect();
        let feature_grad =
            reconstruction_features_backward(batch[i], &f.reconstruction, dy[h], dy[h + 1]);
        for (d, g) in d_recon.iter_mut().zip(&feature_grad) {
            *d += g;
        }

        let (dg, mut d_state, d_memory) = decoder_backward(&f.dec_cache, decoder, &d_recon);
        accumulate(&mut dec_grads, &dg);
        for (ds, dyv) in d_state.iter_mut().zip(&dy[..h]) {
            *ds += dyv;
        }
        let eg = encoder_backward(&f.enc_cache, encoder, &d_state, Some(&d_memory));
        accumulate(&mut enc_grads, &eg);
    }

    Ok((
        loss,
        Some(BatchGrads {
            encoder: enc_grads,
            decoder: dec_grads,
            estimator: est_grads,
        }),
    ))
}

fn accumulate<P: nn::ParamBlocks>(into: &mut P, from: &P) {
    for (dst, src) in into.blocks_mut().into_iter().zip(from.blocks()) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

fn scale<P: nn::ParamBlocks>(p: &mut P, factor: f64) {
    for block in p.blocks_mut() {
        for v in block {
            *v *= factor;
        }
    }
}

/// Scale the encoder/decoder gradient pair down to `max_norm` when its
/// joint norm exceeds it. The estimator is clipped on its own: its
/// gradients are orders of magnitude smaller and would be starved inside a
/// shared norm.
fn clip_global_norm(grads: &mut BatchGrads, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let mut sq = 0.0f64;
    for blocks in [grads.encoder.blocks(), grads.decoder.blocks()] {
        for b in blocks {
            for v in b {
                sq += v * v;
            }
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let f = max_norm / norm;
        scale(&mut grads.encoder, f);
        scale(&mut grads.decoder, f);
    }
    let mut est_sq = 0.0f64;
    for b in grads.estimator.blocks() {
        for v in b {
            est_sq += v * v;
        }
    }
    let est_norm = est_sq.sqrt();
    if est_norm > max_norm && est_norm.is_finite() {
        scale(&mut grads.estimator, max_norm / est_norm);
    }
}

/// Joint objective value on a batch of segments (totals only, no gradients):
/// `(total, reconstruction term, energy term)`.
pub fn joint_loss(
    batch: &[Vec<f64>],
    encoder: &EncoderParams,
    decoder: &DecoderParams,
    estimator: &EstimatorParams,
    frozen_gmm: &GmmParams,
    lambda: f64,
) -> Result<(f64, f64, f64)> {
    let prepared = frozen_gmm.prepare()?;
    let refs: Vec<&[f64]> = batch.iter().map(|v| v.as_slice()).collect();
    let (loss, _) = batch_loss_grads(
        &refs,
        encoder,
        decoder,
        estimator,
        Some((&prepared, lambda)),
        false,
    )?;
    Ok((loss.total, loss.recon, loss.energy))
}

/// Reconstruction objective over a segment set.
pub fn reconstruction_objective(
    segments: &[Segment],
    encoder: &EncoderParams,
    decoder: &DecoderParams,
) -> Result<f64> {
    let refs: Vec<&[f64]> = segments.iter().map(|s| s.values.as_slice()).collect();
    let (loss, _) = batch_loss_grads(&refs, encoder, decoder, &EstimatorParams::zeros(1, 1, 1), None, false)?;
    Ok(loss.recon)
}

fn run_epoch(
    segments: &[Segment],
    encoder: &mut EncoderParams,
    decoder: &mut DecoderParams,
    estimator: &mut EstimatorParams,
    frozen: Option<(&PreparedGmm, f64)>,
    config: &TrainingConfig,
    schedule: LearningRate,
    step: &mut usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    // The estimation network only sees the smooth Φ pathway; it takes the
    // unscaled learning rate while the recurrent pair uses `schedule`.
    let est_schedule = LearningRate {
        eta0: config.eta0,
        decay: config.decay,
    };
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(rng);
    let mut epoch_loss = 0.0;
    for chunk in order.chunks(config.batch_size.max(1)) {
        let batch: Vec<&[f64]> = chunk.iter().map(|&i| segments[i].values.as_slice()).collect();
        let (loss, grads) =
            batch_loss_grads(&batch, encoder, decoder, estimator, frozen, true)?;
        if !loss.total.is_finite() {
            return Err(Error::Numerical(format!(
                "training diverged: batch loss {} at step {step}",
                loss.total
            )));
        }
        epoch_loss += loss.total;
        let mut grads = grads.unwrap();
        // batch-mean updates keep the step size independent of batch size
        let inv = 1.0 / batch.len() as f64;
        scale(&mut grads.encoder, inv);
        scale(&mut grads.decoder, inv);
        scale(&mut grads.estimator, inv);
        let clip = if frozen.is_some() { config.joint_grad_clip } else { config.grad_clip };
        clip_global_norm(&mut grads, clip);
        let lr = schedule.at(*step);
        nn::sgd_step(encoder, &grads.encoder, lr)?;
        nn::sgd_step(decoder, &grads.decoder, lr)?;
        if frozen.is_some() {
            nn::sgd_step(estimator, &grads.estimator, est_schedule.at(*step))?;
        }
        *step += 1;
    }
    Ok(epoch_loss)
}

/// Reconstruction-only pretraining of the encoder/decoder pair.
pub fn pretrain_autoencoder(
    segments: &[Segment],
    config: &TrainingConfig,
) -> Result<(EncoderParams, DecoderParams)> {
    if segments.is_empty() {
        return Err(Error::Argument("cannot pretrain on an empty segment set".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut encoder = EncoderParams::init(config.hidden, &mut init_rng);
    let mut decoder = DecoderParams::init(config.hidden, &mut init_rng);
    let mut estimator = EstimatorParams::zeros(1, 1, 1);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5350_4C49_54u64);
    let schedule = LearningRate {
        eta0: config.eta0,
        decay: config.decay,
    };
    let mut step = 0usize;
    let mut last = f64::NAN;
    for epoch in 0..config.pretrain_epochs {
        last = run_epoch(
            segments,
            &mut encoder,
            &mut decoder,
            &mut estimator,
            None,
            config,
            schedule,
            &mut step,
            &mut shuffle_rng,
        )?;
        log::debug!("pretrain epoch {epoch}: loss {last:.6}");
    }
    log::info!("pretraining finished: final epoch loss {last:.6}");
    Ok((encoder, decoder))
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub trace: TrainingTrace,
}

/// The full training algorithm: segment, pretrain, then alternate hybrid EM
/// with one SGD epoch on the surrogate objective for `rounds` rounds. The
/// returned model freezes the final EM step's mixture for scoring.
pub fn surrogate_train(train: &Dataset, config: &TrainingConfig) -> Result<TrainOutcome> {
    let config = resolve_components(train, config)?;
    let num_segments = match config.num_segments {
        Some(m) => m,
        None => {
            let shortest = train.series.iter().map(|s| s.len()).min().unwrap_or(4);
            let cap = (shortest / 2).max(2);
            select_num_segments(train, config.m_max.min(cap), config.resample_len, config.seed)?
        }
    };
    log::info!("training with M={num_segments} segments per series");

    let segments = segment_dataset(train, num_segments)?;
    let (mut encoder, mut decoder) = pretrain_autoencoder(&segments, &config)?;
    let pretrain_loss = reconstruction_objective(&segments, &encoder, &decoder)?;

    let mut est_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4553_54u64);
    let k = config.components.unwrap_or(COMPONENT_CANDIDATES[0]);
    let mut estimator =
        EstimatorParams::init(config.hidden + 2, config.estimator_hidden, k, &mut est_rng);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4A4F_494E_54u64);
    let schedule = LearningRate {
        eta0: config.eta0 * config.joint_eta_scale,
        decay: config.decay,
    };
    let mut step = 0usize;
    let mut trace = TrainingTrace {
        pretrain_loss,
        rounds: Vec::new(),
    };

    // The alternation is EM ↔ one SGD epoch. Each round's trace entry is
    // measured with the EM fit aligned to the networks at measurement time
    // (the EM runs after the epoch), so the recorded objective carries no
    // staleness between mixture and latents, and the returned mixture
    // matches the returned networks. Round 0 is the post-pretraining
    // baseline: EM only, no SGD yet.
    let refit = |encoder: &EncoderParams,
                     decoder: &DecoderParams,
                     warm: Option<&GmmParams>|
     -> Result<(gmm::EmFit, Vec<Vec<f64>>)> {
        let ys = latent_batch(&segments, encoder, decoder)?;
        let init = match warm {
            None => gmm::gmm_from_kmeans(&ys, k, config.seed ^ 0x4B4D_45414E53u64, config.eps)?,
            Some(prev) => prev.clone(),
        };
        let fit = gmm::em_refine(&ys, &init, 200, 1e-6)?;
        debug_assert!(
            fit.mean_energy_trace.last().unwrap() <= &(fit.mean_energy_trace[0] + 1e-9),
            "EM increased the mean energy"
        );
        Ok((fit, ys))
    };
    let batch: Vec<Vec<f64>> = segments.iter().map(|s| s.values.clone()).collect();
    let record_round = |round: usize,
                            encoder: &EncoderParams,
                            decoder: &DecoderParams,
                            estimator: &EstimatorParams,
                            fit: &gmm::EmFit,
                            started: Instant,
                            trace: &mut TrainingTrace|
     -> Result<()> {
        let (objective, recon_term, energy_term) =
            joint_loss(&batch, encoder, decoder, estimator, &fit.params, config.lambda)?;
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite objective {objective} at round {round}; trace so far: {} rounds",
                trace.rounds.len()
            )));
        }
        // o1 lower-bounds the objective only while the energy term is
        // nonnegative; with very confident mixtures the energy (a negative
        // log-density) goes below zero and the bound does not apply.
        let bound_applicable = energy_term >= 0.0;
        if bound_applicable && pretrain_loss > objective + 1e-9 {
            log::warn!(
                "pretraining regression: o1={pretrain_loss:.6} exceeds o3={objective:.6} at round {round}"
            );
        }
        let record = RoundRecord {
            round,
            objective,
            recon_term,
            energy_term,
            em_mean_energy: *fit.mean_energy_trace.last().unwrap(),
            bound_lower: bound_applicable.then_some(pretrain_loss),
            bound_upper: objective,
            seconds: started.elapsed().as_secs_f64(),
        };
        if config.progress {
            eprintln!(
                "{{\"t\":{},\"o_t\":{:.6},\"recon\":{:.6},\"energy\":{:.6},\"seconds\":{:.3}}}",
                record.round, record.objective, record.recon_term, record.energy_term, record.seconds
            );
        }
        trace.rounds.push(record);
        Ok(())
    };

    let started = Instant::now();
    let (mut fit, mut ys) = refit(&encoder, &decoder, None)?;
    record_round(0, &encoder, &decoder, &estimator, &fit, started, &mut trace)?;

    for round in 1..=config.rounds {
        let started = Instant::now();
        let prepared = fit.params.prepare()?;
        run_epoch(
            &segments,
            &mut encoder,
            &mut decoder,
            &mut estimator,
            Some((&prepared, config.lambda)),
            &config,
            schedule,
            &mut step,
            &mut shuffle_rng,
        )?;
        let (next_fit, next_ys) = refit(&encoder, &decoder, Some(&fit.params))?;
        fit = next_fit;
        ys = next_ys;
        record_round(round, &encoder, &decoder, &estimator, &fit, started, &mut trace)?;
    }

    let gmm_params = fit.params;
    let prepared = gmm_params.prepare()?;
    let training_energies: Vec<f64> = ys.iter().map(|y| prepared.sample_energy(y)).collect();

    Ok(TrainOutcome {
        model: TrainedModel {
            num_segments,
            normalized_inputs: true,
            encoder,
            decoder,
            estimator,
            gmm: gmm_params,
            training_energies,
            pretrain_loss,
        },
        trace,
    })
}

/// When `components` is unset, train once per candidate K on 80% of the
/// training normals and keep the K with the lowest mean validation energy.
fn resolve_components(train: &Dataset, config: &TrainingConfig) -> Result<TrainingConfig> {
    if config.components.is_some() {
        return Ok(config.clone());
    }
    let k = select_num_components(train, config, &COMPONENT_CANDIDATES)?;
    log::info!("selected K={k} mixture components on the validation split");
    Ok(TrainingConfig {
        components: Some(k),
        ..config.clone()
    })
}

/// Hyperparameter selection for K: hold out 20% of training normals, fit
/// with each candidate, pick the lowest mean held-out energy.
pub fn select_num_components(
    train: &Dataset,
    config: &TrainingConfig,
    candidates: &[usize],
) -> Result<usize> {
    let normals: Vec<_> = train
        .series
        .iter()
        .filter(|s| s.label != Some(Label::Anomaly))
        .cloned()
        .collect();
    if normals.len() < 5 {
        return Ok(candidates[0]);
    }
    let held = (normals.len() / 5).max(1);
    let fit_set = Dataset::new(
        format!("{}-fit", train.name),
        normals[..normals.len() - held].to_vec(),
        train.normal_class,
    )?;
    let val_set: Vec<_> = normals[normals.len() - held..].to_vec();

    let mut best: Option<(usize, f64)> = None;
    for &k in candidates {
        let cfg = TrainingConfig {
            components: Some(k),
            progress: false,
            ..config.clone()
        };
        let outcome = match surrogate_train(&fit_set, &cfg) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("candidate K={k} failed: {e}");
                continue;
            }
        };
        let prepared = outcome.model.gmm.prepare()?;
        let mut energies = Vec::new();
        for series in &val_set {
            let model = optimize_breakpoints(series, outcome.model.num_segments)?;
            for seg in split_series(series, &model)? {
                let y = nn::latent_representation(&seg.values, &outcome.model.encoder, &outcome.model.decoder)?.y;
                energies.push(prepared.sample_energy(&y));
            }
        }
        let mean = energies.iter().sum::<f64>() / energies.len() as f64;
        log::info!("candidate K={k}: mean validation energy {mean:.4}");
        if best.map_or(true, |(_, b)| mean < b) {
            best = Some((k, mean));
        }
    }
    best.map(|(k, _)| k)
        .ok_or_else(|| Error::Numerical("every component candidate failed to train".into()))
}

/// On-disk model file: version, segmentation setting and the parameter
/// blocks (shapes are explicit in the serialized matrices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    num_segments: usize,
    normalized_inputs: bool,
    encoder: EncoderParams,
    decoder: DecoderParams,
    estimator: EstimatorParams,
    gmm: GmmParams,
}

/// JSON sidecar next to the model file: the exact config, the training
/// trace, the training-data fingerprint and the training energy
/// distribution used for shapelet thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub version: u32,
    pub config: TrainingConfig,
    pub trace: TrainingTrace,
    pub dataset_fingerprint: String,
    pub training_energies: Vec<f64>,
    pub pretrain_loss: f64,
}

const MODEL_FILE_VERSION: u32 = 1;

/// `model.json` → `model.sidecar.json`.
pub fn sidecar_path(model_path: &std::path::Path) -> std::path::PathBuf {
    model_path.with_extension("sidecar.json")
}

pub fn save_model(
    model: &TrainedModel,
    config: &TrainingConfig,
    trace: &TrainingTrace,
    dataset_fingerprint: &str,
    path: &std::path::Path,
) -> Result<()> {
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        num_segments: model.num_segments,
        normalized_inputs: model.normalized_inputs,
        encoder: model.encoder.clone(),
        decoder: model.decoder.clone(),
        estimator: model.estimator.clone(),
        gmm: model.gmm.clone(),
    };
    let sidecar = ModelSidecar {
        version: MODEL_FILE_VERSION,
        config: config.clone(),
        trace: trace.clone(),
        dataset_fingerprint: dataset_fingerprint.to_string(),
        training_energies: model.training_energies.clone(),
        pretrain_loss: model.pretrain_loss,
    };
    std::fs::write(path, serde_json::to_vec_pretty(&file)?)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_vec_pretty(&sidecar)?)
        .map_err(|e| Error::io(side.display().to_string(), e))?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<(TrainedModel, ModelSidecar)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: ModelFile = serde_json::from_slice(&bytes)?;
    if file.version != MODEL_FILE_VERSION {
        return Err(Error::Config(format!(
            "unsupported model file version {} in {}",
            file.version,
            path.display()
        )));
    }
    let side = sidecar_path(path);
    let side_bytes = std::fs::read(&side).map_err(|e| Error::io(side.display().to_string(), e))?;
    let sidecar: ModelSidecar = serde_json::from_slice(&side_bytes)?;
    let model = TrainedModel {
        num_segments: file.num_segments,
        normalized_inputs: file.normalized_inputs,
        encoder: file.encoder,
        decoder: file.decoder,
        estimator: file.estimator,
        gmm: file.gmm,
        training_energies: sidecar.training_energies.clone(),
        pretrain_loss: sidecar.pretrain_loss,
    };
    model.gmm.validate()?;
    Ok((model, sidecar))
}

/// Optimality-gap bounds: `o1` is the pretrained
/// reconstruction-only objective (a lower bound), `o3` the joint objective
/// at the trained parameters. A violated bound signals a pretraining
/// regression and is reported as an error.
pub fn objective_bounds(
    train: &Dataset,
    model: &TrainedModel,
    config: &TrainingConfig,
) -> Result<(f64, f64)> {
    let segments = segment_dataset(train, model.num_segments)?;
    let batch: Vec<Vec<f64>> = segments.iter().map(|s| s.values.clone()).collect();
    let (o3, _, energy_term) = joint_loss(
        &batch,
        &model.encoder,
        &model.decoder,
        &model.estimator,
        &model.gmm,
        config.lambda,
    )?;
    let o1 = model.pretrain_loss;
    if energy_term >= 0.0 && o1 > o3 + 1e-9 {
        return Err(Error::Numerical(format!(
            "objective bound violated: o1={o1:.6} > o3={o3:.6} (pretraining regression)"
        )));
    }
    if energy_term < 0.0 {
        log::info!(
            "objective bound not applicable: energy term {energy_term:.6} is negative"
        );
    }
    Ok((o1, o3))
}
