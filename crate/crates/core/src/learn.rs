//! Function approximators and the optimizer stack: dense MLPs with manual
//! backprop, Gaussian policies with fixed covariance, GAE, Adam, and the
//! clipped-surrogate PPO update.

use alloc::vec;
use alloc::vec::Vec;
use rand_core::RngCore;

use crate::mathx;

#[derive(Debug, Clone, PartialEq)]
pub enum LearnError {
    Dimension { expected: usize, got: usize },
    NonFinite(&'static str),
    EmptyBatch,
}

impl core::fmt::Display for LearnError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            LearnError::Dimension { expected, got } => {
                write!(f, "length {got}, expected {expected}")
            }
            LearnError::NonFinite(what) => write!(f, "non-finite {what}"),
            LearnError::EmptyBatch => write!(f, "empty batch"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LearnError {}

/// Dense MLP: tanh hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    /// Per layer, `out x in` row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Per-layer activations saved by `forward_cache` for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input followed by each layer's post-activation output.
    pub acts: Vec<Vec<f64>>,
}

/// Parameter gradients in the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Xavier-uniform initialization.
    pub fn init<R: RngCore>(sizes: &[usize], rng: &mut R) -> Mlp {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = mathx::sqrt(6.0 / (fan_in + fan_out) as f64);
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| mathx::uniform(rng, -bound, bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn zeros(sizes: &[usize]) -> Mlp {
        let mut m = Mlp {
            sizes: sizes.to_vec(),
            weights: Vec::new(),
            biases: Vec::new(),
        };
        for w in sizes.windows(2) {
            m.weights.push(vec![0.0; w[0] * w[1]]);
            m.biases.push(vec![0.0; w[1]]);
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer_forward(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let w = &self.weights[layer];
        let mut y = self.biases[layer].clone();
        for r in 0..n_out {
            let row = &w[r * n_in..(r + 1) * n_in];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            y[r] += acc;
        }
        if layer + 2 < self.sizes.len() {
            for v in y.iter_mut() {
                *v = mathx::tanh(*v);
            }
        }
        y
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        if x.len() != self.input_dim() {
            return Err(LearnError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut h = x.to_vec();
        for layer in 0..self.weights.len() {
            h = self.layer_forward(layer, &h);
        }
        Ok(h)
    }

    pub fn forward_cache(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache), LearnError> {
        if x.len() != self.input_dim() {
            return Err(LearnError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for layer in 0..self.weights.len() {
            let next = self.layer_forward(layer, acts.last().unwrap());
            acts.push(next);
        }
        Ok((acts.last().unwrap().clone(), MlpCache { acts }))
    }

    /// Exact parameter gradients of `upstream . output`, accumulated into
    /// `grads`.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        upstream: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<(), LearnError> {
        if upstream.len() != self.output_dim() {
            return Err(LearnError::Dimension {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for layer in (0..self.weights.len()).rev() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            // output layer is linear; hidden activations are tanh whose
            // derivative is 1 - y^2 with y the cached post-activation
            if layer + 2 < self.sizes.len() {
                let y = &cache.acts[layer + 1];
                for (d, yv) in delta.iter_mut().zip(y.iter()) {
                    *d *= 1.0 - yv * yv;
                }
            }
            let x = &cache.acts[layer];
            let gw = &mut grads.weights[layer];
            for r in 0..n_out {
                let dr = delta[r];
                if dr != 0.0 {
                    let row = &mut gw[r * n_in..(r + 1) * n_in];
                    for (g, xv) in row.iter_mut().zip(x.iter()) {
                        *g += dr * xv;
                    }
                }
                grads.biases[layer][r] += dr;
            }
            if layer > 0 {
                let w = &self.weights[layer];
                let mut prev = vec![0.0; n_in];
                for r in 0..n_out {
                    let dr = delta[r];
                    if dr != 0.0 {
                        let row = &w[r * n_in..(r + 1) * n_in];
                        for (p, wv) in prev.iter_mut().zip(row.iter()) {
                            *p += dr * wv;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok(())
    }

    /// Flatten all parameters, weights before biases per layer.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            p.extend_from_slice(w);
            p.extend_from_slice(b);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), LearnError> {
        if params.len() != self.param_count() {
            return Err(LearnError::Dimension {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (wn, bn) = (w.len(), b.len());
            w.copy_from_slice(&params[k..k + wn]);
            k += wn;
            b.copy_from_slice(&params[k..k + bn]);
            k += bn;
        }
        Ok(())
    }
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> MlpGrads {
        MlpGrads {
            weights: mlp.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: mlp.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut g = Vec::new();
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            g.extend_from_slice(w);
            g.extend_from_slice(b);
        }
        g
    }
}

/// Clip a flat gradient to a maximum L2 norm, in place.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = mathx::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// Gaussian policy: MLP mean, fixed per-dimension log standard deviation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

const LN_2PI: f64 = 1.8378770664093453;

impl GaussianPolicy {
    pub fn new(mean: Mlp, log_std_value: f64) -> GaussianPolicy {
        let dim = mean.output_dim();
        GaussianPolicy {
            mean,
            log_std: vec![log_std_value; dim],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.mean.output_dim()
    }

    /// Deterministic (mean) action.
    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>, LearnError> {
        self.mean.forward(obs)
    }

    pub fn sample<R: RngCore>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64), LearnError> {
        let mu = self.mean.forward(obs)?;
        let action: Vec<f64> = mu
            .iter()
            .zip(self.log_std.iter())
            .map(|(m, ls)| m + mathx::exp(*ls) * mathx::standard_normal(rng))
            .collect();
        let lp = self.log_prob_given_mean(&mu, &action);
        Ok((action, lp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64, LearnError> {
        if action.len() != self.action_dim() {
            return Err(LearnError::Dimension {
                expected: self.action_dim(),
                got: action.len(),
            });
        }
        let mu = self.mean.forward(obs)?;
        Ok(self.log_prob_given_mean(&mu, action))
    }

    fn log_prob_given_mean(&self, mu: &[f64], action: &[f64]) -> f64 {
        let mut lp = 0.0;
        for ((m, a), ls) in mu.iter().zip(action.iter()).zip(self.log_std.iter()) {
            let z = (a - m) / mathx::exp(*ls);
            lp += -0.5 * z * z - ls - 0.5 * LN_2PI;
        }
        lp
    }

    /// d log_prob / d mean, used as the upstream gradient into the mean net.
    fn dlogp_dmean(&self, mu: &[f64], action: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(action.iter())
            .zip(self.log_std.iter())
            .map(|((m, a), ls)| {
                let var = mathx::exp(2.0 * ls);
                (a - m) / var
            })
            .collect()
    }

    /// Differential entropy; constant because the covariance is fixed.
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|ls| ls + 0.5 * (1.0 + LN_2PI))
            .sum()
    }
}

/// Generalized advantage estimation.
///
/// `dones[t]` marks transitions into a terminal state; `bootstrap` is the
/// value estimate for the state after the last transition (0 if terminal).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>), LearnError> {
    let n = rewards.len();
    for len in [values.len(), dones.len()] {
        if len != n {
            return Err(LearnError::Dimension { expected: n, got: len });
        }
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_value * not_done - values[t];
        next_adv = delta + gamma * lam * not_done * next_adv;
        adv[t] = next_adv;
    }
    let ret: Vec<f64> = adv.iter().zip(values.iter()).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Normalize to zero mean, unit variance (no-op on constant input).
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = mathx::sqrt(var);
    if std > 1e-8 {
        for a in adv.iter_mut() {
            *a = (*a - mean) / std;
        }
    } else {
        for a in adv.iter_mut() {
            *a -= mean;
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub lam: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Environment steps collected per update.
    pub batch_size: usize,
    pub max_grad_norm: f64,
    /// Entropy bonus weight; with a fixed covariance the entropy is constant
    /// in the parameters, so this only shifts reported losses.
    pub entropy_coef: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            gamma: 0.99,
            lam: 0.95,
            learning_rate: 3e-4,
            epochs: 10,
            minibatch_size: 512,
            batch_size: 16384,
            max_grad_norm: 0.5,
            entropy_coef: 0.0,
        }
    }
}

/// Flat-parameter Adam optimizer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, dim: usize) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - mathx::powi(self.beta1, self.t as i32);
        let b2t = 1.0 - mathx::powi(self.beta2, self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (mathx::sqrt(vh) + self.eps);
        }
    }
}

/// Collected experience for one PPO update.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Value-function inputs when they differ from the policy observations
    /// (e.g. a design-conditioned value function); empty means same as `obs`.
    pub value_obs: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// One PPO update over the batch: clipped surrogate for the policy, MSE to
/// returns for the value function, multiple epochs over shuffled minibatches,
/// gradient-norm clipping. Restores both networks untouched and errors if any
/// loss goes non-finite.
pub fn ppo_update<R: RngCore>(
    policy: &mut GaussianPolicy,
    value_fn: &mut Mlp,
    policy_opt: &mut Adam,
    value_opt: &mut Adam,
    batch: &Batch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats, LearnError> {
    let n = batch.len();
    if n == 0 {
        return Err(LearnError::EmptyBatch);
    }
    for len in [
        batch.actions.len(),
        batch.log_probs.len(),
        batch.advantages.len(),
        batch.returns.len(),
    ] {
        if len != n {
            return Err(LearnError::Dimension { expected: n, got: len });
        }
    }
    if !batch.value_obs.is_empty() && batch.value_obs.len() != n {
        return Err(LearnError::Dimension {
            expected: n,
            got: batch.value_obs.len(),
        });
    }
    let policy_backup = policy.mean.params();
    let value_backup = value_fn.params();
    let popt_backup = policy_opt.clone();
    let vopt_backup = value_opt.clone();

    let mut stats = PpoStats::default();
    let mut stat_batches = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut failed = false;

    'epochs: for _ in 0..cfg.epochs {
        mathx::shuffle(rng, &mut order);
        for chunk in order.chunks(cfg.minibatch_size.max(1)) {
            let mb = chunk.len() as f64;
            let mut pgrads = MlpGrads::zeros_like(&policy.mean);
            let mut vgrads = MlpGrads::zeros_like(value_fn);
            let mut ploss = 0.0;
            let mut vloss = 0.0;
            let mut clipped = 0usize;
            let mut kl = 0.0;
            for &i in chunk {
                let (mu, cache) = policy.mean.forward_cache(&batch.obs[i])?;
                let new_lp = policy.log_prob_given_mean(&mu, &batch.actions[i]);
                let ratio = mathx::exp(new_lp - batch.log_probs[i]);
                let adv = batch.advantages[i];
                let surr1 = ratio * adv;
                let surr2 = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
                ploss += -surr1.min(surr2);
                kl += batch.log_probs[i] - new_lp;
                if (ratio - 1.0).abs() > cfg.clip_eps {
                    clipped += 1;
                }
                // gradient flows through the ratio only when the unclipped
                // branch attains the min
                if surr1 <= surr2 && adv != 0.0 {
                    let scale = -adv * ratio / mb;
                    let up: Vec<f64> = policy
                        .dlogp_dmean(&mu, &batch.actions[i])
                        .iter()
                        .map(|g| scale * g)
                        .collect();
                    policy.mean.backward_into(&cache, &up, &mut pgrads)?;
                }

                let vobs = if batch.value_obs.is_empty() {
                    &batch.obs[i]
                } else {
                    &batch.value_obs[i]
                };
                let (v, vcache) = value_fn.forward_cache(vobs)?;
                let err = v[0] - batch.returns[i];
                vloss += err * err;
                value_fn.backward_into(&vcache, &[2.0 * err / mb], &mut vgrads)?;
            }
            ploss /= mb;
            vloss /= mb;
            if !(ploss.is_finite() && vloss.is_finite()) {
                failed = true;
                break 'epochs;
            }
            let mut pg = pgrads.flatten();
            clip_grad_norm(&mut pg, cfg.max_grad_norm);
            let mut params = policy.mean.params();
            policy_opt.step(&mut params, &pg);
            policy.mean.set_params(&params)?;

            let mut vg = vgrads.flatten();
            clip_grad_norm(&mut vg, cfg.max_grad_norm);
            let mut vparams = value_fn.params();
            value_opt.step(&mut vparams, &vg);
            value_fn.set_params(&vparams)?;

            stats.policy_loss += ploss;
            stats.value_loss += vloss;
            stats.clip_fraction += clipped as f64 / mb;
            stats.approx_kl += kl / mb;
            stat_batches += 1;
        }
    }
    if failed {
        policy.mean.set_params(&policy_backup)?;
        value_fn.set_params(&value_backup)?;
        *policy_opt = popt_backup;
        *value_opt = vopt_backup;
        return Err(LearnError::NonFinite("ppo loss"));
    }
    if stat_batches > 0 {
        let s = stat_batches as f64;
        stats.policy_loss /= s;
        stats.value_loss /= s;
        stats.clip_fraction /= s;
        stats.approx_kl /= s;
    }
    Ok(stats)
}

/// FNV-1a hash of a parameter vector's exact bit patterns; used to verify
/// parameters are untouched across operations that must not change them.
pub fn params_hash(params: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in params {
        for b in p.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_bias() {
        let mut mlp = Mlp::zeros(&[4, 8, 3]);
        mlp.biases[1] = vec![0.5, -1.0, 2.0];
        let y = mlp.forward(&[1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(y, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::init(&[3, 2], &mut rng);
        let x = [0.7, -1.2, 0.4];
        let (y, cache) = mlp.forward_cache(&x).unwrap();
        // loss = 0.5 ||y||^2, upstream = y
        let mut grads = MlpGrads::zeros_like(&mlp);
        mlp.backward_into(&cache, &y, &mut grads).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert!((grads.weights[0][r * 3 + c] - y[r] * x[c]).abs() < 1e-12);
            }
            assert!((grads.biases[0][r] - y[r]).abs() < 1e-12);
        }
    }

    fn finite_difference_check(sizes: &[usize], seed: u64, max_checked: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::init(sizes, &mut rng);
        let x: Vec<f64> = (0..sizes[0]).map(|_| mathx::uniform(&mut rng, -1.0, 1.0)).collect();
        let dir: Vec<f64> = (0..*sizes.last().unwrap())
            .map(|_| mathx::uniform(&mut rng, -1.0, 1.0))
            .collect();
        let (_, cache) = mlp.forward_cache(&x).unwrap();
        let mut grads = MlpGrads::zeros_like(&mlp);
        mlp.backward_into(&cache, &dir, &mut grads).unwrap();
        let analytic = grads.flatten();
        let params = mlp.params();
        let total = params.len();
        let stride = (total / max_checked).max(1);
        let h = 1e-5;
        let mut checked = 0;
        for k in (0..total).step_by(stride) {
            let mut probe = mlp.clone();
            let mut p = params.clone();
            p[k] += h;
            probe.set_params(&p).unwrap();
            let up: f64 = probe
                .forward(&x)
                .unwrap()
                .iter()
                .zip(dir.iter())
                .map(|(y, d)| y * d)
                .sum();
            p[k] -= 2.0 * h;
            probe.set_params(&p).unwrap();
            let down: f64 = probe
                .forward(&x)
                .unwrap()
                .iter()
                .zip(dir.iter())
                .map(|(y, d)| y * d)
                .sum();
            let fd = (up - down) / (2.0 * h);
            let denom = analytic[k].abs().max(fd.abs()).max(1e-6);
            assert!(
                (analytic[k] - fd).abs() / denom < 1e-4,
                "{sizes:?} param {k}: analytic {} vs fd {fd}",
                analytic[k]
            );
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn gradients_match_finite_differences_across_shapes() {
        // every layer shape family used by the pipeline
        finite_difference_check(&[3, 2], 2, 1000);
        finite_difference_check(&[5, 8, 8, 3], 3, 1000);
        finite_difference_check(&[101, 64, 64, 36], 4, 200);
        finite_difference_check(&[137, 64, 64, 1], 5, 200);
        finite_difference_check(&[21, 32, 32, 2], 6, 500);
    }

    #[test]
    fn gae_lambda_zero_is_one_step() {
        let rewards = [1.0, 2.0, 3.0];
        let values = [0.5, 1.5, 2.5];
        let dones = [false, true, false];
        let gamma = 0.9;
        let (adv, ret) = gae(&rewards, &values, &dones, 10.0, gamma, 0.0).unwrap();
        let expect = [
            1.0 + gamma * 1.5 - 0.5,
            2.0 - 1.5, // done: no bootstrap
            3.0 + gamma * 10.0 - 2.5,
        ];
        for (a, e) in adv.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
        for i in 0..3 {
            assert!((ret[i] - (adv[i] + values[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_zero_inputs_zero_outputs() {
        let (adv, ret) = gae(&[0.0; 4], &[0.0; 4], &[false; 4], 0.0, 0.99, 0.95).unwrap();
        assert!(adv.iter().all(|&a| a == 0.0));
        assert!(ret.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn gae_undiscounted_mc_is_suffix_sum() {
        // gamma = 1, lambda = 1, V = 0: advantage is reward-to-go
        let rewards = [1.0, -2.0, 3.0, 0.5, 4.0];
        let (adv, ret) = gae(&rewards, &[0.0; 5], &[false; 5], 0.0, 1.0, 1.0).unwrap();
        let expect = [6.5, 5.5, 7.5, 4.5, 4.0];
        for (a, e) in adv.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
        assert_eq!(adv, ret);
    }

    #[test]
    fn advantage_normalization() {
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        normalize_advantages(&mut a);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        let mut c = vec![5.0; 3];
        normalize_advantages(&mut c);
        assert!(c.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gaussian_log_prob_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let policy = GaussianPolicy::new(Mlp::init(&[2, 4, 1], &mut rng), mathx::ln(0.1));
        let obs = [0.3, -0.7];
        let mu = policy.mean_action(&obs).unwrap()[0];
        // quadrature over +-8 sigma
        let sigma = 0.1;
        let (lo, hi) = (mu - 8.0 * sigma, mu + 8.0 * sigma);
        let n = 4000;
        let da = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let a = lo + (i as f64 + 0.5) * da;
            integral += mathx::exp(policy.log_prob(&obs, &[a]).unwrap()) * da;
        }
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }

    fn tiny_setup() -> (GaussianPolicy, Mlp, Adam, Adam, PpoConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let policy = GaussianPolicy::new(Mlp::init(&[3, 8, 2], &mut rng), mathx::ln(0.1));
        let value = Mlp::init(&[3, 8, 1], &mut rng);
        let popt = Adam::new(3e-4, policy.mean.param_count());
        let vopt = Adam::new(3e-4, value.param_count());
        let cfg = PpoConfig {
            epochs: 1,
            minibatch_size: 64,
            ..Default::default()
        };
        (policy, value, popt, vopt, cfg)
    }

    #[test]
    fn zero_advantage_ratio_one_batch_moves_nothing() {
        let (mut policy, mut value, mut popt, mut vopt, cfg) = tiny_setup();
        let obs = vec![vec![0.1, 0.2, 0.3], vec![-0.5, 0.0, 0.9]];
        let actions: Vec<Vec<f64>> = obs.iter().map(|o| policy.mean_action(o).unwrap()).collect();
        let log_probs: Vec<f64> = obs
            .iter()
            .zip(actions.iter())
            .map(|(o, a)| policy.log_prob(o, a).unwrap())
            .collect();
        let returns: Vec<f64> = obs.iter().map(|o| value.forward(o).unwrap()[0]).collect();
        let batch = Batch {
            obs,
            actions,
            log_probs,
            advantages: vec![0.0, 0.0],
            returns,
            value_obs: Vec::new(),
        };
        let p0 = policy.mean.params();
        let v0 = value.params();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ppo_update(&mut policy, &mut value, &mut popt, &mut vopt, &batch, &cfg, &mut rng).unwrap();
        assert_eq!(policy.mean.params(), p0);
        assert_eq!(value.params(), v0);
    }

    #[test]
    fn positive_advantage_increases_log_prob() {
        let (mut policy, mut value, mut popt, mut vopt, mut cfg) = tiny_setup();
        cfg.epochs = 5;
        cfg.learning_rate = 1e-3;
        let obs = vec![vec![0.4, -0.1, 0.8]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (action, lp) = policy.sample(&obs[0], &mut rng).unwrap();
        let batch = Batch {
            obs: obs.clone(),
            actions: vec![action.clone()],
            log_probs: vec![lp],
            advantages: vec![1.0],
            returns: vec![0.0],
            value_obs: Vec::new(),
        };
        ppo_update(&mut policy, &mut value, &mut popt, &mut vopt, &batch, &cfg, &mut rng).unwrap();
        let lp_after = policy.log_prob(&obs[0], &action).unwrap();
        assert!(lp_after > lp, "{lp} -> {lp_after}");
    }

    #[test]
    fn saturated_clip_region_has_zero_policy_gradient() {
        let (mut policy, mut value, mut popt, mut vopt, cfg) = tiny_setup();
        let obs = vec![vec![0.2, 0.2, -0.3]];
        let action = policy.mean_action(&obs[0]).unwrap();
        let lp = policy.log_prob(&obs[0], &action).unwrap();
        // stored log-prob shifted so the current ratio is 1 + 2*eps
        let old_lp = lp - mathx::ln(1.0 + 2.0 * cfg.clip_eps);
        let returns = vec![value.forward(&obs[0]).unwrap()[0]];
        let batch = Batch {
            obs,
            actions: vec![action],
            log_probs: vec![old_lp],
            advantages: vec![2.0],
            returns,
            value_obs: Vec::new(),
        };
        let p0 = policy.mean.params();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stats =
            ppo_update(&mut policy, &mut value, &mut popt, &mut vopt, &batch, &cfg, &mut rng)
                .unwrap();
        assert_eq!(policy.mean.params(), p0);
        assert!(stats.clip_fraction > 0.99);
    }

    #[test]
    fn empty_batch_rejected() {
        let (mut policy, mut value, mut popt, mut vopt, cfg) = tiny_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            ppo_update(
                &mut policy,
                &mut value,
                &mut popt,
                &mut vopt,
                &Batch::default(),
                &cfg,
                &mut rng
            ),
            Err(LearnError::EmptyBatch)
        ));
    }

    #[test]
    fn non_finite_loss_aborts_and_restores() {
        let (mut policy, mut value, mut popt, mut vopt, cfg) = tiny_setup();
        let obs = vec![vec![0.1, 0.1, 0.1]];
        let action = policy.mean_action(&obs[0]).unwrap();
        let lp = policy.log_prob(&obs[0], &action).unwrap();
        let batch = Batch {
            obs,
            actions: vec![action],
            log_probs: vec![lp],
            advantages: vec![f64::INFINITY],
            returns: vec![0.0],
            value_obs: Vec::new(),
        };
        let p0 = policy.mean.params();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            ppo_update(&mut policy, &mut value, &mut popt, &mut vopt, &batch, &cfg, &mut rng),
            Err(LearnError::NonFinite(_))
        ));
        assert_eq!(policy.mean.params(), p0);
        assert_eq!(popt.t, 0);
    }

    #[test]
    fn params_roundtrip_and_hash() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mlp = Mlp::init(&[6, 5, 4], &mut rng);
        let p = mlp.params();
        assert_eq!(p.len(), mlp.param_count());
        let mut other = Mlp::zeros(&[6, 5, 4]);
        other.set_params(&p).unwrap();
        assert_eq!(other, mlp);
        assert_eq!(params_hash(&p), params_hash(&other.params()));
        let mut q = p.clone();
        q[0] += 1e-15;
        assert_ne!(params_hash(&p), params_hash(&q));
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut opt = Adam::new(0.1, 2);
        let mut params = vec![1.0, -1.0];
        for _ in 0..50 {
            let grads = vec![2.0 * params[0], 2.0 * params[1]];
            opt.step(&mut params, &grads);
        }
        assert!(params[0].abs() < 0.5);
        assert!(params[1].abs() < 0.5);
    }
}
