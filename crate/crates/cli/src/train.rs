//! Controller training driver: curriculum clip sampling, reference-state
//! initialization, on-policy collection, and PPO updates.

use std::cell::RefCell;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use morphsim_core::character::{self, DesignBox, DesignError};
use morphsim_core::imitation::{
    action_dim, observation_dim, rollout, ImitationError, MdpConfig, RolloutMode,
};
use morphsim_core::learn::{
    gae, normalize_advantages, ppo_update, Adam, Batch, GaussianPolicy, LearnError, Mlp, PpoConfig,
};
use morphsim_core::mathx;
use morphsim_core::motion::{CurriculumState, MotionError};
use morphsim_core::{CharacterDesign, CharacterModel, MotionClip};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("clip {0}: frame dimension does not match the character")]
    ClipDim(String),
    #[error(transparent)]
    Imitation(#[from] ImitationError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Design(#[from] DesignError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// PPO iterations (one batch collection + update each).
    pub iterations: usize,
    /// Hidden layer sizes of the policy and value networks.
    pub hidden: Vec<usize>,
    /// Fixed log standard deviation of the control policy.
    pub log_std: f64,
    /// Softmax temperature of the hard-negative clip curriculum.
    pub curriculum_temperature: f64,
    pub ppo: PpoConfig,
    pub mdp: MdpConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 200,
            hidden: vec![256, 256],
            log_std: mathx::ln(0.1),
            curriculum_temperature: 0.2,
            ppo: PpoConfig::default(),
            mdp: MdpConfig::default(),
        }
    }
}

/// Per-iteration training statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IterStats {
    pub iteration: usize,
    /// Environment steps collected this iteration.
    pub steps: usize,
    pub episodes: usize,
    pub mean_step_reward: f64,
    pub mean_episode_return: f64,
    /// Fraction of episodes that ran to the end without termination.
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

pub struct TrainOutcome {
    pub policy: GaussianPolicy,
    pub value_fn: Mlp,
    pub curriculum: CurriculumState,
    pub stats: Vec<IterStats>,
}

/// Train an imitation controller from scratch on a clip corpus.
///
/// Each episode samples a clip through the curriculum, starts at a uniformly
/// random reference frame, and runs until termination, the clip end, or the
/// horizon. Episode ends are treated as absorbing for advantage estimation.
pub fn train_controller(
    base: &CharacterModel,
    design: &CharacterDesign,
    clips: &[MotionClip],
    cfg: &TrainConfig,
    seed: u64,
    mut progress: impl FnMut(&IterStats),
) -> Result<TrainOutcome, TrainError> {
    if clips.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let model = character::build(design, &DesignBox::default(), base)?;
    for c in clips {
        if c.dim() != model.dof() {
            return Err(TrainError::ClipDim(c.id.clone()));
        }
    }
    let obs_dim = observation_dim(&model);
    let act_dim = action_dim(&model, &cfg.mdp);
    // the rollout closure and the curriculum both need the rng
    let rng = RefCell::new(ChaCha8Rng::seed_from_u64(seed));

    let mut sizes = vec![obs_dim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(act_dim);
    let mut policy = GaussianPolicy::new(Mlp::init(&sizes, &mut *rng.borrow_mut()), cfg.log_std);
    // shrink the output layer so the initial mean action is near zero: zero
    // action means "track the reference with baseline gains", a far better
    // starting policy than random PD offsets
    let last = policy.mean.weights.len() - 1;
    for w in policy.mean.weights[last].iter_mut() {
        *w *= 0.01;
    }
    for b in policy.mean.biases[last].iter_mut() {
        *b *= 0.01;
    }
    let mut vsizes = vec![obs_dim];
    vsizes.extend_from_slice(&cfg.hidden);
    vsizes.push(1);
    let mut value_fn = Mlp::init(&vsizes, &mut *rng.borrow_mut());
    let mut popt = Adam::new(cfg.ppo.learning_rate, policy.mean.param_count());
    let mut vopt = Adam::new(cfg.ppo.learning_rate, value_fn.param_count());

    let mut curriculum = CurriculumState::new(clips.iter().map(|c| c.id.clone()));
    curriculum.temperature = cfg.curriculum_temperature;

    let mut stats = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let mut batch = Batch::default();
        let mut episodes = 0usize;
        let mut successes = 0usize;
        let mut reward_sum = 0.0;
        while batch.len() < cfg.ppo.batch_size {
            let clip_id = curriculum.sample_clip(&mut *rng.borrow_mut())?.to_string();
            let clip = clips.iter().find(|c| c.id == clip_id).expect("sampled id");
            let t0 = mathx::uniform_index(&mut *rng.borrow_mut(), clip.len() - 1);
            let mut log_probs = Vec::new();
            let mut sample_err = None;
            let traj = rollout(
                &model,
                &cfg.mdp,
                clip,
                design,
                t0,
                RolloutMode::Train,
                |obs| match policy.sample(obs, &mut *rng.borrow_mut()) {
                    Ok((a, lp)) => {
                        log_probs.push(lp);
                        a
                    }
                    Err(e) => {
                        sample_err = Some(e);
                        vec![0.0; act_dim]
                    }
                },
            )?;
            if let Some(e) = sample_err {
                return Err(e.into());
            }
            if traj.steps.is_empty() {
                continue;
            }
            let success = !traj.terminated();
            curriculum.record_outcome(&clip_id, success)?;
            episodes += 1;
            successes += success as usize;

            let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward.total).collect();
            reward_sum += rewards.iter().sum::<f64>();
            let mut values = Vec::with_capacity(rewards.len());
            for s in &traj.steps {
                values.push(value_fn.forward(&s.obs)?[0]);
            }
            let mut dones = vec![false; rewards.len()];
            *dones.last_mut().expect("non-empty") = true;
            let (adv, ret) = gae(&rewards, &values, &dones, 0.0, cfg.ppo.gamma, cfg.ppo.lam)?;
            for (i, s) in traj.steps.iter().enumerate() {
                batch.obs.push(s.obs.clone());
                batch.actions.push(s.action.clone());
                batch.log_probs.push(log_probs[i]);
                batch.advantages.push(adv[i]);
                batch.returns.push(ret[i]);
            }
        }
        normalize_advantages(&mut batch.advantages);
        let ps = ppo_update(
            &mut policy,
            &mut value_fn,
            &mut popt,
            &mut vopt,
            &batch,
            &cfg.ppo,
            &mut *rng.borrow_mut(),
        )?;
        let st = IterStats {
            iteration,
            steps: batch.len(),
            episodes,
            mean_step_reward: reward_sum / batch.len() as f64,
            mean_episode_return: reward_sum / episodes.max(1) as f64,
            success_rate: successes as f64 / episodes.max(1) as f64,
            policy_loss: ps.policy_loss,
            value_loss: ps.value_loss,
            clip_fraction: ps.clip_fraction,
            approx_kl: ps.approx_kl,
        };
        progress(&st);
        stats.push(st);
    }
    Ok(TrainOutcome {
        policy,
        value_fn,
        curriculum,
        stats,
    })
}
