//! Frozen-controller design-and-control optimization: a design policy
//! proposes a character, the pretrained controller is rolled out in it, and
//! PPO updates the design policy and its value function only.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand_core::RngCore;

use crate::character::{self, CharacterDesign, DesignBox};
use crate::imitation::{self, ImitationError, MdpConfig, RolloutMode, Trajectory};
use crate::learn::{
    self, Adam, Batch, GaussianPolicy, LearnError, Mlp, PpoConfig,
};
use crate::mathx;
use crate::metrics::{self, ClipMetrics, EvalReport, MetricsError};
use crate::motion::MotionClip;
use crate::physics::CharacterModel;

#[derive(Debug, Clone, PartialEq)]
pub enum DesignOptError {
    EmptyCorpus,
    Mismatch(&'static str),
    Imitation(ImitationError),
    Learn(LearnError),
    Metrics(MetricsError),
    Design(character::DesignError),
}

impl core::fmt::Display for DesignOptError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DesignOptError::EmptyCorpus => write!(f, "no clips supplied"),
            DesignOptError::Mismatch(what) => write!(f, "controller/topology mismatch: {what}"),
            DesignOptError::Imitation(e) => write!(f, "imitation: {e}"),
            DesignOptError::Learn(e) => write!(f, "learn: {e}"),
            DesignOptError::Metrics(e) => write!(f, "metrics: {e}"),
            DesignOptError::Design(e) => write!(f, "design: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DesignOptError {}

impl From<ImitationError> for DesignOptError {
    fn from(e: ImitationError) -> Self {
        DesignOptError::Imitation(e)
    }
}
impl From<LearnError> for DesignOptError {
    fn from(e: LearnError) -> Self {
        DesignOptError::Learn(e)
    }
}
impl From<MetricsError> for DesignOptError {
    fn from(e: MetricsError) -> Self {
        DesignOptError::Metrics(e)
    }
}
impl From<character::DesignError> for DesignOptError {
    fn from(e: character::DesignError) -> Self {
        DesignOptError::Design(e)
    }
}

/// A trained imitation controller: the Gaussian control policy plus the MDP
/// constants it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub policy: GaussianPolicy,
    pub cfg: MdpConfig,
}

impl Controller {
    pub fn check_compat(&self, model: &CharacterModel) -> Result<(), DesignOptError> {
        if self.policy.mean.input_dim() != imitation::observation_dim(model) {
            return Err(DesignOptError::Mismatch("observation dimension"));
        }
        if self.policy.action_dim() != imitation::action_dim(model, &self.cfg) {
            return Err(DesignOptError::Mismatch("action dimension"));
        }
        Ok(())
    }

    pub fn params_hash(&self) -> u64 {
        learn::params_hash(&self.policy.mean.params())
    }
}

/// One searched scalar: a set of tied flat design-vector indices sharing a
/// value, bounded by `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DesignGroup {
    pub name: String,
    pub indices: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
}

/// The searched slice of the design space; indices not covered by any group
/// keep their base values.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DesignSubspace {
    pub groups: Vec<DesignGroup>,
}

impl DesignSubspace {
    pub fn dim(&self) -> usize {
        self.groups.len()
    }

    /// Base value per group (from the base design's flat code).
    pub fn base_values(&self, base_code: &[f64]) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| base_code[g.indices[0]])
            .collect()
    }

    /// Overwrite the grouped indices of `base_code` with `z` clamped into
    /// each group's bounds.
    pub fn apply(&self, base_code: &[f64], z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.groups.len());
        let mut code = base_code.to_vec();
        for (g, &v) in self.groups.iter().zip(z.iter()) {
            let v = v.clamp(g.lo, g.hi);
            for &i in &g.indices {
                code[i] = v;
            }
        }
        code
    }

    /// Single scalar tying both legs' thigh and shin length scales.
    pub fn leg_lengths(model: &CharacterModel, lo: f64, hi: f64) -> DesignSubspace {
        use crate::character::humanoid::{L_SHIN, L_THIGH, R_SHIN, R_THIGH};
        let bone0 = 2; // flat-code offset of bone_length_scales
        let _ = model;
        DesignSubspace {
            groups: vec![DesignGroup {
                name: "leg_length".into(),
                indices: vec![bone0 + L_THIGH, bone0 + L_SHIN, bone0 + R_THIGH, bone0 + R_SHIN],
                lo,
                hi,
            }],
        }
    }

    /// Leg lengths plus a shared motor-gear scalar across all joints.
    pub fn legs_and_gears(model: &CharacterModel, bx: &DesignBox) -> DesignSubspace {
        let mut s = Self::leg_lengths(model, bx.scale.0, bx.scale.1);
        let gear0 = 2 + 2 * model.links.len() + model.joint_count();
        s.groups.push(DesignGroup {
            name: "motor_gear".into(),
            indices: (0..model.joint_count()).map(|j| gear0 + j).collect(),
            lo: bx.motor_gear.0,
            hi: bx.motor_gear.1,
        });
        s
    }
}

/// Conditioning features of the design stage: the first reference frame's
/// pose without its root x (translation invariance) plus its velocities.
pub fn design_obs(clip: &MotionClip) -> Vec<f64> {
    let mut o = clip.frames[0][1..].to_vec();
    o.extend_from_slice(&clip.velocity(0));
    o
}

pub fn design_obs_dim(model: &CharacterModel) -> usize {
    2 * model.dof() - 1
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DesignOptConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub ppo: PpoConfig,
    /// Fixed log standard deviation of the design policy.
    pub log_std: f64,
    /// Deterministic evaluation (and best-design tracking) cadence.
    pub eval_every: usize,
    /// Hidden sizes of the design policy and value networks.
    pub hidden: Vec<usize>,
}

impl Default for DesignOptConfig {
    fn default() -> Self {
        DesignOptConfig {
            iterations: 60,
            episodes_per_iter: 16,
            ppo: PpoConfig {
                minibatch_size: 16,
                epochs: 5,
                learning_rate: 1e-3,
                ..Default::default()
            },
            log_std: mathx::ln(0.05),
            eval_every: 10,
            hidden: vec![32, 32],
        }
    }
}

/// One design-stage episode as recorded in the history.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpisodeRecord {
    pub iteration: usize,
    pub clip_id: String,
    /// Reward granted at the design stage itself; always exactly 0.
    pub design_reward: f64,
    /// Discounted control-stage return of the frozen controller.
    pub control_return: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub mean_reward: f64,
    pub e_mpjpe_g: f64,
    pub z: Vec<f64>,
    pub is_best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub best_design: CharacterDesign,
    pub best_z: Vec<f64>,
    pub episodes: Vec<EpisodeRecord>,
    pub evals: Vec<EvalRecord>,
    pub policy: GaussianPolicy,
    pub value_fn: Mlp,
    /// Episodes dropped because the sampled design failed to simulate.
    pub discarded: usize,
}

/// Deterministic rollout of the frozen controller, returning the trajectory.
pub fn control_rollout(
    controller: &Controller,
    model: &CharacterModel,
    design: &CharacterDesign,
    clip: &MotionClip,
    mode: RolloutMode,
) -> Result<Trajectory, DesignOptError> {
    controller.check_compat(model)?;
    let policy = &controller.policy;
    let mut failed = false;
    let traj = imitation::rollout(model, &controller.cfg, clip, design, 0, mode, |obs| {
        match policy.mean_action(obs) {
            Ok(a) => a,
            Err(_) => {
                failed = true;
                vec![0.0; policy.action_dim()]
            }
        }
    })?;
    if failed {
        return Err(DesignOptError::Mismatch("observation dimension"));
    }
    Ok(traj)
}

fn discounted_return(traj: &Trajectory, gamma: f64) -> f64 {
    let mut g = 0.0;
    for s in traj.steps.iter().rev() {
        g = s.reward.total + gamma * g;
    }
    g
}

/// Deterministic metric suite plus mean undiscounted episode reward for a
/// design across clips.
pub fn evaluate_design(
    controller: &Controller,
    base: &CharacterModel,
    bx: &DesignBox,
    design: &CharacterDesign,
    clips: &[MotionClip],
) -> Result<(EvalReport, f64), DesignOptError> {
    if clips.is_empty() {
        return Err(DesignOptError::EmptyCorpus);
    }
    let model = character::build(design, bx, base)?;
    let mut per_clip: Vec<ClipMetrics> = Vec::with_capacity(clips.len());
    let mut reward_sum = 0.0;
    for clip in clips {
        let traj = control_rollout(controller, &model, design, clip, RolloutMode::Eval)?;
        reward_sum += traj.steps.iter().map(|s| s.reward.total).sum::<f64>();
        per_clip.push(metrics::evaluate_trajectory(&model, clip, &traj)?);
    }
    let mean_reward = reward_sum / clips.len() as f64;
    Ok((EvalReport::from_clips(per_clip), mean_reward))
}

/// Algorithm: per episode, sample a clip, sample a design from the design
/// policy conditioned on the first reference frame (design-stage reward 0),
/// build the character, roll out the FROZEN controller, and credit the
/// design action with the discounted control-stage return. PPO updates only
/// the design policy and its design-conditioned value function. The best
/// design is tracked by deterministic evaluation over all clips, ties broken
/// by lower global MPJPE.
pub fn optimize<R: RngCore>(
    controller: &Controller,
    base: &CharacterModel,
    bx: &DesignBox,
    subspace: &DesignSubspace,
    clips: &[MotionClip],
    cfg: &DesignOptConfig,
    rng: &mut R,
) -> Result<OptimizeOutcome, DesignOptError> {
    if clips.is_empty() {
        return Err(DesignOptError::EmptyCorpus);
    }
    controller.check_compat(base)?;
    let base_design = CharacterDesign::identity(base);
    let base_code = base_design.encode();
    let base_z = subspace.base_values(&base_code);
    let zdim = subspace.dim();
    let odim = design_obs_dim(base);

    let mut sizes = vec![odim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(zdim);
    let mut policy = GaussianPolicy::new(Mlp::init(&sizes, rng), cfg.log_std);
    // zero the output layer so the initial mean design is the base design
    let last = policy.mean.weights.len() - 1;
    for w in policy.mean.weights[last].iter_mut() {
        *w = 0.0;
    }
    let mut vsizes = vec![odim + zdim];
    vsizes.extend_from_slice(&cfg.hidden);
    vsizes.push(1);
    let mut value_fn = Mlp::init(&vsizes, rng);
    let mut popt = Adam::new(cfg.ppo.learning_rate, policy.mean.param_count());
    let mut vopt = Adam::new(cfg.ppo.learning_rate, value_fn.param_count());

    let decode = |a: &[f64]| -> Result<CharacterDesign, DesignOptError> {
        let z: Vec<f64> = base_z.iter().zip(a.iter()).map(|(b, x)| b + x).collect();
        let code = subspace.apply(&base_code, &z);
        let (design, _) =
            CharacterDesign::decode(&code, base.links.len(), base.joint_count(), bx)?;
        Ok(design)
    };

    let mut episodes = Vec::new();
    let mut evals = Vec::new();
    let mut discarded = 0usize;
    let mut best: Option<(f64, f64, Vec<f64>, CharacterDesign)> = None;

    let consider = |iteration: usize,
                        policy: &GaussianPolicy,
                        best: &mut Option<(f64, f64, Vec<f64>, CharacterDesign)>,
                        evals: &mut Vec<EvalRecord>|
     -> Result<(), DesignOptError> {
        let mut a_det = Vec::with_capacity(zdim);
        // evaluation design: mean action averaged over the clips' conditions
        for k in 0..zdim {
            let mut acc = 0.0;
            for clip in clips {
                acc += policy.mean_action(&design_obs(clip))?[k];
            }
            a_det.push(acc / clips.len() as f64);
        }
        let design = decode(&a_det)?;
        let z: Vec<f64> = base_z.iter().zip(a_det.iter()).map(|(b, x)| b + x).collect();
        let (report, mean_reward) = evaluate_design(controller, base, bx, &design, clips)?;
        let better = match best {
            None => true,
            Some((r, g, _, _)) => {
                mean_reward > *r || (mean_reward == *r && report.e_mpjpe_g < *g)
            }
        };
        if better {
            *best = Some((mean_reward, report.e_mpjpe_g, z.clone(), design));
        }
        evals.push(EvalRecord {
            iteration,
            mean_reward,
            e_mpjpe_g: report.e_mpjpe_g,
            z,
            is_best: better,
        });
        Ok(())
    };

    consider(0, &policy, &mut best, &mut evals)?;

    for iteration in 0..cfg.iterations {
        let mut batch = Batch::default();
        let mut raw_returns = Vec::new();
        for ep in 0..cfg.episodes_per_iter {
            let clip = &clips[(iteration * cfg.episodes_per_iter + ep) % clips.len()];
            let s0 = design_obs(clip);
            let (a, logp) = policy.sample(&s0, rng)?;
            let design = match decode(&a) {
                Ok(d) => d,
                Err(_) => {
                    discarded += 1;
                    continue;
                }
            };
            let model = match character::build(&design, bx, base) {
                Ok(m) => m,
                Err(_) => {
                    discarded += 1;
                    continue;
                }
            };
            let traj =
                match control_rollout(controller, &model, &design, clip, RolloutMode::Train) {
                    Ok(t) => t,
                    Err(DesignOptError::Imitation(_)) => {
                        discarded += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
            let g = discounted_return(&traj, cfg.ppo.gamma);
            let z: Vec<f64> = base_z.iter().zip(a.iter()).map(|(b, x)| b + x).collect();
            let mut vobs = s0.clone();
            vobs.extend_from_slice(&z);
            episodes.push(EpisodeRecord {
                iteration,
                clip_id: clip.id.clone(),
                design_reward: 0.0,
                control_return: g,
                z,
            });
            batch.obs.push(s0);
            batch.actions.push(a);
            batch.log_probs.push(logp);
            batch.value_obs.push(vobs);
            raw_returns.push(g);
        }
        if batch.obs.is_empty() {
            continue;
        }
        // single-action episodes: advantage = return - design value
        let mut adv = Vec::with_capacity(raw_returns.len());
        for (g, vobs) in raw_returns.iter().zip(batch.value_obs.iter()) {
            adv.push(g - value_fn.forward(vobs)?[0]);
        }
        learn::normalize_advantages(&mut adv);
        batch.advantages = adv;
        batch.returns = raw_returns;
        learn::ppo_update(
            &mut policy,
            &mut value_fn,
            &mut popt,
            &mut vopt,
            &batch,
            &cfg.ppo,
            rng,
        )?;
        if (iteration + 1) % cfg.eval_every == 0 || iteration + 1 == cfg.iterations {
            consider(iteration + 1, &policy, &mut best, &mut evals)?;
        }
    }

    let (_, _, best_z, best_design) = best.expect("at least the base design was evaluated");
    Ok(OptimizeOutcome {
        best_design,
        best_z,
        episodes,
        evals,
        policy,
        value_fn,
        discarded,
    })
}
