//! Gaussian mixture estimation in latent space: weighted-moment parameter
//! updates, sample energy, k-means initialization and EM refinement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, Cholesky, Mat};

pub const DEFAULT_COVARIANCE_EPS: f64 = 1e-6;
const LN_2PI: f64 = 1.8378770664093453;

/// Mixture weights, means and full covariances. Serialized with the field
/// names used in the model file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "Phi")]
    pub weights: Vec<f64>,
    #[serde(rename = "mu")]
    pub means: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    pub covariances: Vec<Mat>,
    pub eps: f64,
}

impl GmmParams {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.weights.len() != self.k || self.means.len() != self.k {
            return Err(Error::Argument("mixture has inconsistent component count".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| *w < -1e-12) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(format!(
                "mixture weights must be a distribution (sum {sum})"
            )));
        }
        let d = self.dim();
        for (k, (mu, sigma)) in self.means.iter().zip(&self.covariances).enumerate() {
            if mu.len() != d || sigma.rows != d || sigma.cols != d {
                return Err(Error::Argument(format!("component {k} has mismatched shapes")));
            }
            for i in 0..d {
                for j in 0..i {
                    let scale = sigma[(i, j)].abs().max(sigma[(j, i)].abs()).max(1.0);
                    if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-9 * scale {
                        return Err(Error::Argument(format!("component {k} covariance not symmetric")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Factor every covariance once for repeated energy evaluations.
    pub fn prepare(&self) -> Result<PreparedGmm> {
        let chols = self
            .covariances
            .iter()
            .enumerate()
            .map(|(k, s)| {
                Cholesky::new(s).map_err(|e| {
                    Error::Numerical(format!("component {k} covariance is not positive definite: {e}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedGmm {
            params: self.clone(),
            chols,
        })
    }
}

/// Per-segment membership probabilities; rows sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub gamma: Mat,
}

impl Responsibilities {
    pub fn new(gamma: Mat) -> Result<Self> {
        for i in 0..gamma.rows {
            let row = gamma.row(i);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|g| *g < -1e-12 || *g > 1.0 + 1e-12) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Argument(format!(
                    "responsibility row {i} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(Responsibilities { gamma })
    }

    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        let mut gamma = Mat::zeros(labels.len(), k);
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::Argument(format!("label {l} out of range for K={k}")));
            }
            gamma[(i, l)] = 1.0;
        }
        Responsibilities::new(gamma)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Weighted mixture moments: Φ_k = mean responsibility, μ_k and Σ_k the
/// responsibility-weighted mean and covariance, with `eps` added to every
/// covariance diagonal. A component whose responsibility mass vanishes is
/// reseeded on a data point with the global covariance.
pub fn mixture_stats(ys: &[Vec<f64>], gamma: &Responsibilities, eps: f64) -> Result<GmmParams> {
    let n = ys.len();
    let k = gamma.gamma.cols;
    if n == 0 || gamma.gamma.rows != n {
        return Err(Error::Argument("mixture_stats needs one responsibility row per point".into()));
    }
    if n < k {
        return Err(Error::Argument(format!("need at least K={k} points, got {n}")));
    }
    let d = ys[0].len();

    let mut weights = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    let mut covariances = vec![Mat::zeros(d, d); k];
    let mut mass = vec![0.0; k];

    for i in 0..n {
        for c in 0..k {
            mass[c] += gamma.gamma[(i, c)];
        }
    }
    for c in 0..k {
        weights[c] = mass[c] / n as f64;
    }

    // Global moments, used only to reseed dead components.
    let global_mean: Vec<f64> = (0..d)
        .map(|j| ys.iter().map(|y| y[j]).sum::<f64>() / n as f64)
        .collect();
    let mut global_cov = Mat::zeros(d, d);
    for y in ys {
        let diff: Vec<f64> = y.iter().zip(&global_mean).map(|(a, b)| a - b).collect();
        global_cov.add_outer(1.0 / n as f64, &diff, &diff);
    }

    for c in 0..k {
        if mass[c] < 1e-12 {
            let pick = (splitmix64(c as u64 ^ (n as u64) << 32) % n as u64) as usize;
            log::warn!("mixture component {c} lost all responsibility mass; reseeding on point {pick}");
            means[c] = ys[pick].clone();
            covariances[c] = global_cov.clone();
            covariances[c].add_diagonal(eps);
            weights[c] = 1e-12;
            continue;
        }
        for (i, y) in ys.iter().enumerate() {
            let g = gamma.gamma[(i, c)];
            for j in 0..d {
                means[c][j] += g * y[j];
            }
        }
        for v in &mut means[c] {
            *v /= mass[c];
        }
        for (i, y) in ys.iter().enumerate() {
            let g = gamma.gamma[(i, c)];
            if g == 0.0 {
                continue;
            }
            let diff: Vec<f64> = y.iter().zip(&means[c]).map(|(a, b)| a - b).collect();
            covariances[c].add_outer(g / mass[c], &diff, &diff);
        }
        // enforce exact symmetry against accumulated rounding
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (covariances[c][(i, j)] + covariances[c][(j, i)]);
                covariances[c][(i, j)] = avg;
                covariances[c][(j, i)] = avg;
            }
        }
        covariances[c].add_diagonal(eps);
    }

    // Renormalize in case a dead component was reseeded.
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= wsum;
    }

    Ok(GmmParams {
        k,
        weights,
        means,
        covariances,
        eps,
    })
}

/// A mixture with covariances pre-factored; supplies log-densities, sample
/// energy and the analytic gradients the surrogate loss needs.
#[derive(Debug, Clone)]
pub struct PreparedGmm {
    pub params: GmmParams,
    chols: Vec<Cholesky>,
}

impl PreparedGmm {
    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// `ln N(y; μ_k, Σ_k)` for every component.
    pub fn component_log_densities(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim() as f64;
        self.params
            .means
            .iter()
            .zip(&self.chols)
            .map(|(mu, chol)| {
                let diff: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
                let z = chol.solve_lower(&diff);
                let quad: f64 = z.iter().map(|v| v * v).sum();
                -0.5 * (quad + d * LN_2PI + chol.log_det())
            })
            .collect()
    }

    /// Sample energy with the mixture's own weights.
    pub fn sample_energy(&self, y: &[f64]) -> f64 {
        self.energy_with_weights(y, &self.params.weights)
    }

    /// Sample energy `E(y) = −ln Σ_k Φ_k N(y; μ_k, Σ_k)` with caller-supplied
    /// weights (the surrogate objective recomputes Φ from the estimation
    /// network per batch).
    pub fn energy_with_weights(&self, y: &[f64], weights: &[f64]) -> f64 {
        let logs = self.component_log_densities(y);
        let terms: Vec<f64> = logs
            .iter()
            .zip(weights)
            .map(|(ln_n, w)| if *w > 0.0 { w.ln() + ln_n } else { f64::NEG_INFINITY })
            .collect();
        -log_sum_exp(&terms)
    }

    /// Energy plus its gradients: `(E, ∂E/∂y, ∂E/∂Φ)`.
    pub fn energy_grads(&self, y: &[f64], weights: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let logs = self.component_log_densities(y);
        let terms: Vec<f64> = logs
            .iter()
            .zip(weights)
            .map(|(ln_n, w)| if *w > 0.0 { w.ln() + ln_n } else { f64::NEG_INFINITY })
            .collect();
        let lse = log_sum_exp(&terms);
        let energy = -lse;

        let mut dy = vec![0.0; d];
        let mut dphi = vec![0.0; weights.len()];
        for (k, chol) in self.chols.iter().enumerate() {
            // posterior weight of component k at y
            let post = (terms[k] - lse).exp();
            // ∂E/∂Φ_k = −N_k / Σ_m Φ_m N_m
            dphi[k] = -((logs[k] - lse).exp());
            if post == 0.0 {
                continue;
            }
            let diff: Vec<f64> = y
                .iter()
                .zip(&self.params.means[k])
                .map(|(a, b)| a - b)
                .collect();
            let sol = chol.solve(&diff); // Σ_k⁻¹ (y − μ_k)
            for j in 0..d {
                dy[j] += post * sol[j];
            }
        }
        (energy, dy, dphi)
    }

    /// Posterior responsibilities (E-step row).
    pub fn posteriors(&self, y: &[f64]) -> Vec<f64> {
        let logs = self.component_log_densities(y);
        let terms: Vec<f64> = logs
            .iter()
            .zip(&self.params.weights)
            .map(|(ln_n, w)| if *w > 0.0 { w.ln() + ln_n } else { f64::NEG_INFINITY })
            .collect();
        let lse = log_sum_exp(&terms);
        terms.iter().map(|t| (t - lse).exp()).collect()
    }

    pub fn mean_energy(&self, ys: &[Vec<f64>]) -> f64 {
        ys.iter().map(|y| self.sample_energy(y)).sum::<f64>() / ys.len() as f64
    }
}

/// Spec-level convenience: energy of one latent vector under a mixture.
pub fn sample_energy(y: &[f64], params: &GmmParams) -> Result<f64> {
    Ok(params.prepare()?.sample_energy(y))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from k-means++ seeding. Deterministic given `seed`;
/// assignment ties break toward the lower centroid index, and an emptied
/// cluster steals the point farthest from its centroid.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(Error::Argument(format!("kmeans needs at least K={k} points, got {n}")));
    }
    let d = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].clone());
    let mut dists: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dists.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in dists.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.push(points[pick].clone());
        let last = centroids.last().unwrap();
        for (di, p) in dists.iter_mut().zip(points) {
            *di = di.min(sq_dist(p, last));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let dist = sq_dist(p, centroid);
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }

        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // steal the globally worst-assigned point
                let (worst, _) = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centroids[labels[i]])))
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .unwrap();
                let old = labels[worst];
                labels[worst] = c;
                counts[old] -= 1;
                for (s, v) in sums[old].iter_mut().zip(&points[worst]) {
                    *s -= v;
                }
                counts[c] = 1;
                sums[c] = points[worst].clone();
                changed = true;
            }
            for j in 0..d {
                centroids[c][j] = sums[c][j] / counts[c] as f64;
            }
        }

        if !changed {
            break;
        }
    }
    Ok((labels, centroids))
}

pub fn kmeans_inertia(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum()
}

/// EM refinement outcome: final parameters plus the mean-energy value after
/// every accepted iteration (starting with the initial parameters).
#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: GmmParams,
    pub mean_energy_trace: Vec<f64>,
}

/// Alternate posterior E-steps with `mixture_stats` M-steps until the mean
/// sample energy stops improving by `tol` (or `max_iters`). A step that
/// would increase the energy is rejected, so the reported trace is
/// non-increasing and the returned parameters are never worse than `init`.
pub fn em_refine(ys: &[Vec<f64>], init: &GmmParams, max_iters: usize, tol: f64) -> Result<EmFit> {
    init.validate()?;
    let mut params = init.clone();
    let mut prepared = params.prepare()?;
    let mut energy = prepared.mean_energy(ys);
    let mut trace = vec![energy];

    for _ in 0..max_iters {
        let mut gamma = Mat::zeros(ys.len(), params.k);
        for (i, y) in ys.iter().enumerate() {
            let post = prepared.posteriors(y);
            gamma.row_mut(i).copy_from_slice(&post);
        }
        let candidate = mixture_stats(ys, &Responsibilities::new(gamma)?, params.eps)?;
        let cand_prepared = candidate.prepare()?;
        let cand_energy = cand_prepared.mean_energy(ys);
        if !cand_energy.is_finite() {
            return Err(Error::Numerical("EM produced a non-finite mean energy".into()));
        }
        if cand_energy > energy {
            break;
        }
        let improvement = energy - cand_energy;
        params = candidate;
        prepared = cand_prepared;
        energy = cand_energy;
        trace.push(energy);
        if improvement < tol {
            break;
        }
    }
    Ok(EmFit {
        params,
        mean_energy_trace: trace,
    })
}

/// K-means hard assignments converted to one-hot responsibilities and fed
/// through `mixture_stats`: the standard starting point for `em_refine`.
pub fn gmm_from_kmeans(ys: &[Vec<f64>], k: usize, seed: u64, eps: f64) -> Result<GmmParams> {
    let (labels, _) = kmeans(ys, k, seed, 100)?;
    let gamma = Responsibilities::one_hot(&labels, k)?;
    mixture_stats(ys, &gamma, eps)
}
