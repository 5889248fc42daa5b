//! The motion-imitation MDP: character-centric featurization, the tracking
//! reward, reference-state initialization, early termination, and the episode
//! driver.

use alloc::vec::Vec;
use rand_core::RngCore;

use crate::character::CharacterDesign;
use crate::mathx;
use crate::motion::MotionClip;
use crate::physics::{
    self, CharacterModel, PhysicsError, ResidualForce, SimConfig, SimState,
};

#[derive(Debug, Clone, PartialEq)]
pub enum ImitationError {
    Dimension { expected: usize, got: usize },
    NonFinite(&'static str),
    BadWeights,
    Physics(PhysicsError),
}

impl core::fmt::Display for ImitationError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ImitationError::Dimension { expected, got } => {
                write!(f, "length {got}, expected {expected}")
            }
            ImitationError::NonFinite(what) => write!(f, "non-finite {what}"),
            ImitationError::BadWeights => write!(f, "reward weights must be >= 0 with positive sum"),
            ImitationError::Physics(e) => write!(f, "physics: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ImitationError {}

impl From<PhysicsError> for ImitationError {
    fn from(e: PhysicsError) -> Self {
        ImitationError::Physics(e)
    }
}

/// Weights of the four tracking-reward components; normalized to sum 1
/// before use.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_p: f64,
    pub w_v: f64,
    pub w_e: f64,
    pub w_vf: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_p: 0.5,
            w_v: 0.1,
            w_e: 0.3,
            w_vf: 0.1,
        }
    }
}

impl RewardWeights {
    pub fn normalized(&self) -> Result<RewardWeights, ImitationError> {
        let ws = [self.w_p, self.w_v, self.w_e, self.w_vf];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ImitationError::BadWeights);
        }
        let sum: f64 = ws.iter().sum();
        if sum <= 0.0 {
            return Err(ImitationError::BadWeights);
        }
        Ok(RewardWeights {
            w_p: self.w_p / sum,
            w_v: self.w_v / sum,
            w_e: self.w_e / sum,
            w_vf: self.w_vf / sum,
        })
    }
}

/// Reward components; each lies in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    pub total: f64,
    pub r_p: f64,
    pub r_v: f64,
    pub r_e: f64,
    pub r_vf: f64,
}

/// Everything fixed about the MDP besides the character itself.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MdpConfig {
    pub sim: SimConfig,
    pub weights: RewardWeights,
    /// Control decisions per second; clips are sampled at the same rate.
    pub control_rate: f64,
    /// Physics substeps per control step.
    pub substeps: usize,
    /// Episode cap in control frames.
    pub horizon: usize,
    /// Mean per-link position error triggering deviation termination, m.
    pub deviation_threshold: f64,
    /// Baseline PD gains; the policy scales them by exp(a), a in [-1, 1].
    pub kp_base: f64,
    pub kd_base: f64,
    /// Residual forces per foot geom.
    pub forces_per_foot: usize,
}

impl Default for MdpConfig {
    fn default() -> Self {
        MdpConfig {
            sim: SimConfig::default(),
            weights: RewardWeights::default(),
            control_rate: 30.0,
            substeps: 15,
            horizon: 300,
            deviation_threshold: 0.5,
            kp_base: 300.0,
            kd_base: 15.0,
            forces_per_foot: 2,
        }
    }
}

fn rot_inv(theta: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = (mathx::sin(theta), mathx::cos(theta));
    [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
}

/// Observation dimension for a given character topology.
pub fn observation_dim(model: &CharacterModel) -> usize {
    let l = model.links.len();
    let n = model.dof();
    // ref positions + position errors + velocities + rotation diffs
    // + ref rotations + design code
    2 * l + 2 * l + n + (n - 2) + (n - 2) + CharacterDesign::dim(l, model.joint_count())
}

/// Character-centric observation: reference link positions and tracking
/// errors rotated into the root frame anchored at the character's translation
/// coordinates, velocities (root-linear part rotated likewise), wrapped
/// rotation differences, raw reference rotations, and the design code.
pub fn featurize(
    model: &CharacterModel,
    state: &SimState,
    ref_q: &[f64],
    ref_qdot: &[f64],
    design: &CharacterDesign,
) -> Result<Vec<f64>, ImitationError> {
    let n = model.dof();
    for len in [state.q.len(), state.qdot.len(), ref_q.len(), ref_qdot.len()] {
        if len != n {
            return Err(ImitationError::Dimension { expected: n, got: len });
        }
    }
    let theta = state.q[2];
    let anchor = [state.q[0], state.q[1]];
    let sim_pos = physics::link_positions(model, &state.q);
    let ref_pos = physics::link_positions(model, ref_q);

    let mut obs = Vec::with_capacity(observation_dim(model));
    for p in &ref_pos {
        let r = rot_inv(theta, [p[0] - anchor[0], p[1] - anchor[1]]);
        obs.extend_from_slice(&r);
    }
    for (pr, ps) in ref_pos.iter().zip(sim_pos.iter()) {
        let r = rot_inv(theta, [pr[0] - ps[0], pr[1] - ps[1]]);
        obs.extend_from_slice(&r);
    }
    let vlin = rot_inv(theta, [state.qdot[0], state.qdot[1]]);
    obs.extend_from_slice(&vlin);
    obs.extend_from_slice(&state.qdot[2..]);
    for k in 2..n {
        obs.push(mathx::wrap_angle(ref_q[k] - state.q[k]));
    }
    obs.extend_from_slice(&ref_q[2..]);
    obs.extend_from_slice(&CharacterDesign::encode(design));
    if !obs.iter().all(|x| x.is_finite()) {
        return Err(ImitationError::NonFinite("observation"));
    }
    Ok(obs)
}

/// Tracking reward:
/// `r_p = exp(-2.0 ||q_rot (-) ref||^2)`, `r_v = exp(-0.005 ||qdot - ref||^2)`,
/// `r_e = exp(-5 ||link positions - ref||^2)`,
/// `r_vf = exp(-||residual magnitudes / cap||^2)`.
pub fn reward(
    model: &CharacterModel,
    state: &SimState,
    ref_q: &[f64],
    ref_qdot: &[f64],
    residual_magnitudes: &[f64],
    weights: &RewardWeights,
    force_cap: f64,
) -> Result<RewardTerms, ImitationError> {
    let n = model.dof();
    for len in [state.q.len(), state.qdot.len(), ref_q.len(), ref_qdot.len()] {
        if len != n {
            return Err(ImitationError::Dimension { expected: n, got: len });
        }
    }
    let w = weights.normalized()?;

    let mut rot_sq = 0.0;
    for k in 2..n {
        let d = mathx::wrap_angle(state.q[k] - ref_q[k]);
        rot_sq += d * d;
    }
    let mut vel_sq = 0.0;
    for k in 0..n {
        let d = state.qdot[k] - ref_qdot[k];
        vel_sq += d * d;
    }
    let sim_pos = physics::link_positions(model, &state.q);
    let ref_pos = physics::link_positions(model, ref_q);
    let mut pos_sq = 0.0;
    for (a, b) in sim_pos.iter().zip(ref_pos.iter()) {
        pos_sq += (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]);
    }
    let mut vf_sq = 0.0;
    for &m in residual_magnitudes {
        let e = m / force_cap;
        vf_sq += e * e;
    }

    let r_p = mathx::exp(-2.0 * rot_sq);
    let r_v = mathx::exp(-0.005 * vel_sq);
    let r_e = mathx::exp(-5.0 * pos_sq);
    let r_vf = mathx::exp(-vf_sq);
    let total = w.w_p * r_p + w.w_v * r_v + w.w_e * r_e + w.w_vf * r_vf;
    if !total.is_finite() {
        return Err(ImitationError::NonFinite("reward"));
    }
    Ok(RewardTerms { total, r_p, r_v, r_e, r_vf })
}

/// State matching a specific clip frame, with finite-difference velocities
/// and recomputed contact flags.
pub fn reset_at(
    model: &CharacterModel,
    cfg: &MdpConfig,
    clip: &MotionClip,
    frame: usize,
) -> Result<SimState, ImitationError> {
    if clip.dim() != model.dof() {
        return Err(ImitationError::Dimension {
            expected: model.dof(),
            got: clip.dim(),
        });
    }
    let q = clip.frames[frame].clone();
    let qdot = clip.velocity(frame);
    let kin = physics::forward_kinematics(model, &q, &qdot);
    let contact_flags = physics::compute_contact_flags(model, &cfg.sim, &kin);
    Ok(SimState {
        q,
        qdot,
        time: frame as f64 / clip.frame_rate,
        contact_flags,
    })
}

/// Reference-state initialization: uniform start frame in `[0, T-2]`.
pub fn reset_rsi<R: RngCore>(
    model: &CharacterModel,
    cfg: &MdpConfig,
    clip: &MotionClip,
    rng: &mut R,
) -> Result<(SimState, usize), ImitationError> {
    let t0 = mathx::uniform_index(rng, clip.len() - 1);
    Ok((reset_at(model, cfg, clip, t0)?, t0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TerminationReason {
    /// Mean per-link position error exceeded the threshold.
    Deviation,
    /// A non-foot link touched the ground.
    Fallen,
}

/// Early-termination test against a reference frame.
pub fn check_termination(
    model: &CharacterModel,
    cfg: &MdpConfig,
    state: &SimState,
    ref_q: &[f64],
) -> Result<Option<TerminationReason>, ImitationError> {
    let n = model.dof();
    if ref_q.len() != n {
        return Err(ImitationError::Dimension { expected: n, got: ref_q.len() });
    }
    if physics::non_foot_ground_contact(model, &cfg.sim, state) {
        return Ok(Some(TerminationReason::Fallen));
    }
    let sim_pos = physics::link_positions(model, &state.q);
    let ref_pos = physics::link_positions(model, ref_q);
    let mut mean = 0.0;
    for (a, b) in sim_pos.iter().zip(ref_pos.iter()) {
        mean += mathx::hypot(a[0] - b[0], a[1] - b[1]);
    }
    mean /= model.links.len() as f64;
    if mean > cfg.deviation_threshold {
        return Ok(Some(TerminationReason::Deviation));
    }
    Ok(None)
}

/// Flat action dimension: per-joint PD target residuals, per-joint kp and kd
/// scales, and 3 parameters per residual force.
pub fn action_dim(model: &CharacterModel, cfg: &MdpConfig) -> usize {
    3 * model.joint_count() + 3 * cfg.forces_per_foot_total(model)
}

impl MdpConfig {
    fn forces_per_foot_total(&self, model: &CharacterModel) -> usize {
        self.forces_per_foot * model.foot_geoms.len()
    }
}

/// Decoded control-step command.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub p_target: Vec<f64>,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub residual_forces: Vec<ResidualForce>,
}

/// Decode a raw policy action against the next reference frame.
///
/// PD targets are residuals added to the reference joint angles; gains are
/// `base * exp(a)` with `a` clamped to [-1, 1]; each residual force is
/// (attachment fraction, direction angle, magnitude fraction of the cap).
pub fn decode_action(
    model: &CharacterModel,
    cfg: &MdpConfig,
    raw: &[f64],
    ref_next_q: &[f64],
) -> Result<Command, ImitationError> {
    let nj = model.joint_count();
    let expected = action_dim(model, cfg);
    if raw.len() != expected {
        return Err(ImitationError::Dimension { expected, got: raw.len() });
    }
    if ref_next_q.len() != model.dof() {
        return Err(ImitationError::Dimension {
            expected: model.dof(),
            got: ref_next_q.len(),
        });
    }
    if !raw.iter().all(|x| x.is_finite()) {
        return Err(ImitationError::NonFinite("action"));
    }
    let p_target: Vec<f64> = (0..nj).map(|j| ref_next_q[3 + j] + raw[j]).collect();
    let kp: Vec<f64> = (0..nj)
        .map(|j| cfg.kp_base * mathx::exp(raw[nj + j].clamp(-1.0, 1.0)))
        .collect();
    let kd: Vec<f64> = (0..nj)
        .map(|j| cfg.kd_base * mathx::exp(raw[2 * nj + j].clamp(-1.0, 1.0)))
        .collect();
    let mut residual_forces = Vec::with_capacity(cfg.forces_per_foot_total(model));
    let mut k = 3 * nj;
    for &geom in &model.foot_geoms {
        for _ in 0..cfg.forces_per_foot {
            let (ax, aang, amag) = (raw[k], raw[k + 1], raw[k + 2]);
            k += 3;
            let frac = 0.5 * (1.0 + ax.clamp(-1.0, 1.0));
            residual_forces.push(ResidualForce {
                geom,
                contact_point: [frac * model.links[geom].length, 0.0],
                direction: [mathx::cos(aang), mathx::sin(aang)],
                magnitude: cfg.sim.residual_force_cap * amag.clamp(0.0, 1.0),
            });
        }
    }
    Ok(Command { p_target, kp, kd, residual_forces })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutMode {
    /// Stop at the first termination.
    Train,
    /// Reset to the reference at the failure frame and continue, recording
    /// the termination.
    Eval,
}

/// One control step of the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Reference frame index this step tracked (the frame after the one the
    /// step started from).
    pub frame: usize,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: RewardTerms,
    /// State at the end of the control step.
    pub state: SimState,
    pub termination: Option<TerminationReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_frame: usize,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn terminated(&self) -> bool {
        self.steps.iter().any(|s| s.termination.is_some())
    }
}

/// Drive one episode with a policy mapping observations to raw actions.
///
/// Runs from `start_frame` until the clip end, the horizon cap, or (in train
/// mode) the first termination.
pub fn rollout<F>(
    model: &CharacterModel,
    cfg: &MdpConfig,
    clip: &MotionClip,
    design: &CharacterDesign,
    start_frame: usize,
    mode: RolloutMode,
    mut policy: F,
) -> Result<Trajectory, ImitationError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if start_frame >= clip.len() {
        return Err(ImitationError::Dimension {
            expected: clip.len() - 1,
            got: start_frame,
        });
    }
    let mut state = reset_at(model, cfg, clip, start_frame)?;
    let dt = 1.0 / (cfg.control_rate * cfg.substeps as f64);
    let gears: Vec<f64> = model.joints.iter().map(|j| j.motor_gear).collect();
    let mut steps = Vec::new();
    let mut t = start_frame;
    while t + 1 < clip.len() && steps.len() < cfg.horizon {
        let target = t + 1;
        let ref_q = &clip.frames[target];
        let ref_qdot = clip.velocity(target);
        let obs = featurize(model, &state, ref_q, &ref_qdot, design)?;
        let action = policy(&obs);
        let cmd = decode_action(model, cfg, &action, ref_q)?;
        for _ in 0..cfg.substeps {
            let nj = model.joint_count();
            let torques = physics::pd_torque(
                &cmd.kp,
                &cmd.kd,
                &cmd.p_target,
                &state.q[3..3 + nj],
                &state.qdot[3..3 + nj],
                &gears,
                cfg.sim.torque_limit,
            )?;
            state = physics::step(model, &cfg.sim, &state, &torques, &cmd.residual_forces, dt)?;
        }
        let mags: Vec<f64> = cmd.residual_forces.iter().map(|f| f.magnitude).collect();
        let r = reward(
            model,
            &state,
            ref_q,
            &ref_qdot,
            &mags,
            &cfg.weights,
            cfg.sim.residual_force_cap,
        )?;
        let termination = check_termination(model, cfg, &state, ref_q)?;
        let record_state = state.clone();
        if termination.is_some() && mode == RolloutMode::Eval {
            state = reset_at(model, cfg, clip, target)?;
        }
        steps.push(StepRecord {
            frame: target,
            obs,
            action,
            reward: r,
            state: record_state,
            termination,
        });
        if termination.is_some() && mode == RolloutMode::Train {
            break;
        }
        t = target;
    }
    Ok(Trajectory { start_frame, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::character::{base_humanoid, standing_state, CharacterDesign};
    use crate::motion::{generate_clip, ClipKind, ClipParams};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (CharacterModel, MdpConfig, CharacterDesign) {
        let model = base_humanoid();
        let design = CharacterDesign::identity(&model);
        (model, MdpConfig::default(), design)
    }

    fn walk_clip() -> MotionClip {
        generate_clip(ClipKind::Walk, &ClipParams::default(), 3.0).unwrap()
    }

    #[test]
    fn featurize_zero_errors_at_reference() {
        let (model, _, design) = setup();
        let state = standing_state(&model);
        let obs = featurize(&model, &state, &state.q, &state.qdot, &design).unwrap();
        let l = model.links.len();
        let n = model.dof();
        // position-error block and rotation-difference block are exactly zero
        for &v in &obs[2 * l..4 * l] {
            assert_eq!(v, 0.0);
        }
        let rd = 4 * l + n;
        for &v in &obs[rd..rd + n - 2] {
            assert_eq!(v, 0.0);
        }
        assert_eq!(obs.len(), observation_dim(&model));
    }

    #[test]
    fn featurize_invariant_to_shared_translation() {
        let (model, _, design) = setup();
        let clip = walk_clip();
        let mut state = standing_state(&model);
        state.q[3] = 0.2;
        state.qdot[0] = 0.7;
        state.qdot[5] = -0.4;
        let ref_q = clip.frames[10].clone();
        let ref_qdot = clip.velocity(10);
        let a = featurize(&model, &state, &ref_q, &ref_qdot, &design).unwrap();
        let (dx, dy) = (3.7, -1.9);
        let mut state2 = state.clone();
        state2.q[0] += dx;
        state2.q[1] += dy;
        let mut ref_q2 = ref_q.clone();
        ref_q2[0] += dx;
        ref_q2[1] += dy;
        let b = featurize(&model, &state2, &ref_q2, &ref_qdot, &design).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_difference_wraps() {
        let (model, _, design) = setup();
        let mut state = standing_state(&model);
        let mut ref_q = state.q.clone();
        state.q[3] = 3.0;
        ref_q[3] = -3.0;
        let ref_qdot = vec![0.0; model.dof()];
        let obs = featurize(&model, &state, &ref_q, &ref_qdot, &design).unwrap();
        let rd = 4 * model.links.len() + model.dof();
        // wrap(-3 - 3) = wrap(-6) = 2*pi - 6 = 0.28319
        let d = obs[rd + 1]; // slot for q[3]
        assert!((d - (2.0 * core::f64::consts::PI - 6.0)).abs() < 1e-9, "{d}");
    }

    #[test]
    fn reward_perfect_tracking_is_one() {
        let (model, cfg, _) = setup();
        let state = standing_state(&model);
        let r = reward(
            &model,
            &state,
            &state.q,
            &state.qdot,
            &[],
            &cfg.weights,
            cfg.sim.residual_force_cap,
        )
        .unwrap();
        assert_eq!(r.r_p, 1.0);
        assert_eq!(r.r_v, 1.0);
        assert_eq!(r.r_e, 1.0);
        assert_eq!(r.r_vf, 1.0);
        assert!((r.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reward_rotation_component_hand_value() {
        let (model, cfg, _) = setup();
        let state = standing_state(&model);
        let mut ref_q = state.q.clone();
        // squared rotation error 0.5 in a single joint slot
        ref_q[4] += mathx::sqrt(0.5);
        let r = reward(
            &model,
            &state,
            &ref_q,
            &state.qdot,
            &[],
            &cfg.weights,
            cfg.sim.residual_force_cap,
        )
        .unwrap();
        // exp(-2.0 * 0.5)
        assert!((r.r_p - 0.367879441171442).abs() < 1e-9);
    }

    #[test]
    fn reward_residual_force_hand_value() {
        let (model, cfg, _) = setup();
        let state = standing_state(&model);
        let r = reward(
            &model,
            &state,
            &state.q,
            &state.qdot,
            &[3.0, 4.0],
            &cfg.weights,
            100.0,
        )
        .unwrap();
        // exp(-(0.03^2 + 0.04^2)) = exp(-0.0025)
        assert!((r.r_vf - 0.997503121880929).abs() < 1e-9);
    }

    #[test]
    fn reward_monotone_in_errors() {
        let (model, cfg, _) = setup();
        let state = standing_state(&model);
        let mut prev = 2.0;
        for k in 0..6 {
            let mut ref_q = state.q.clone();
            ref_q[5] += 0.1 * k as f64;
            let r = reward(
                &model,
                &state,
                &ref_q,
                &state.qdot,
                &[],
                &cfg.weights,
                cfg.sim.residual_force_cap,
            )
            .unwrap();
            assert!(r.total <= prev);
            assert!(r.r_p > 0.0 && r.r_p <= 1.0);
            prev = r.total;
        }
    }

    #[test]
    fn bad_weights_rejected() {
        let w = RewardWeights {
            w_p: -0.1,
            ..Default::default()
        };
        assert!(w.normalized().is_err());
        let w = RewardWeights {
            w_p: 0.0,
            w_v: 0.0,
            w_e: 0.0,
            w_vf: 0.0,
        };
        assert!(w.normalized().is_err());
    }

    #[test]
    fn reset_at_frame_zero_matches_clip() {
        let (model, cfg, _) = setup();
        let clip = walk_clip();
        let s = reset_at(&model, &cfg, &clip, 0).unwrap();
        assert_eq!(s.q, clip.frames[0]);
        assert_eq!(s.qdot, clip.velocity(0));
    }

    #[test]
    fn rsi_start_frames_are_uniform() {
        let (model, cfg, _) = setup();
        let clip = generate_clip(
            ClipKind::Walk,
            &ClipParams::default(),
            99.0 / 30.0, // exactly 100 frames
        )
        .unwrap();
        assert_eq!(clip.len(), 100);
        let bins = clip.len() - 1;
        let mut counts = vec![0usize; bins];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000usize;
        for _ in 0..n {
            let (_, t0) = reset_rsi(&model, &cfg, &clip, &mut rng).unwrap();
            counts[t0] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // Wilson-Hilferty approximation of the chi-square 99th percentile
        let df = (bins - 1) as f64;
        let a = 2.0 / (9.0 * df);
        let crit = df * mathx::powi(1.0 - a + 2.326347874 * mathx::sqrt(a), 3);
        assert!(chi2 < crit, "chi2 {chi2} exceeds 99th percentile {crit}");
    }

    #[test]
    fn termination_examples() {
        let (model, cfg, _) = setup();
        let state = standing_state(&model);
        assert_eq!(
            check_termination(&model, &cfg, &state, &state.q).unwrap(),
            None
        );
        // every link offset 0.6 m from the reference
        let mut ref_q = state.q.clone();
        ref_q[0] += 0.6;
        assert_eq!(
            check_termination(&model, &cfg, &state, &ref_q).unwrap(),
            Some(TerminationReason::Deviation)
        );
        // torso on the ground at zero pose error
        let mut fallen = state.clone();
        fallen.q[1] = 0.0;
        fallen.q[2] = 0.0;
        let ref_fallen = fallen.q.clone();
        assert_eq!(
            check_termination(&model, &cfg, &fallen, &ref_fallen).unwrap(),
            Some(TerminationReason::Fallen)
        );
    }

    #[test]
    fn termination_monotone_in_threshold() {
        let (model, mut cfg, _) = setup();
        let state = standing_state(&model);
        let mut ref_q = state.q.clone();
        ref_q[0] += 0.4;
        cfg.deviation_threshold = 0.5;
        let loose = check_termination(&model, &cfg, &state, &ref_q).unwrap();
        cfg.deviation_threshold = 0.3;
        let tight = check_termination(&model, &cfg, &state, &ref_q).unwrap();
        assert_eq!(loose, None);
        assert_eq!(tight, Some(TerminationReason::Deviation));
    }

    #[test]
    fn decode_action_layout() {
        let (model, cfg, _) = setup();
        let clip = walk_clip();
        let nj = model.joint_count();
        let raw = vec![0.0; action_dim(&model, &cfg)];
        let cmd = decode_action(&model, &cfg, &raw, &clip.frames[1]).unwrap();
        for j in 0..nj {
            assert_eq!(cmd.p_target[j], clip.frames[1][3 + j]);
            assert_eq!(cmd.kp[j], cfg.kp_base);
            assert_eq!(cmd.kd[j], cfg.kd_base);
        }
        // zero action -> zero-magnitude forces
        assert_eq!(cmd.residual_forces.len(), 4);
        for f in &cmd.residual_forces {
            assert_eq!(f.magnitude, 0.0);
        }
        assert!(matches!(
            decode_action(&model, &cfg, &raw[..3], &clip.frames[1]),
            Err(ImitationError::Dimension { .. })
        ));
    }

    #[test]
    fn rollout_is_deterministic() {
        let (model, cfg, design) = setup();
        let clip = walk_clip();
        let zero = vec![0.0; action_dim(&model, &cfg)];
        let run = || {
            rollout(
                &model,
                &cfg,
                &clip,
                &design,
                0,
                RolloutMode::Eval,
                |_| zero.clone(),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rollout_rewards_match_offline_recomputation() {
        let (model, cfg, design) = setup();
        let clip = walk_clip();
        let zero = vec![0.0; action_dim(&model, &cfg)];
        let traj = rollout(
            &model,
            &cfg,
            &clip,
            &design,
            0,
            RolloutMode::Eval,
            |_| zero.clone(),
        )
        .unwrap();
        assert!(!traj.steps.is_empty());
        for s in &traj.steps {
            let cmd = decode_action(&model, &cfg, &s.action, &clip.frames[s.frame]).unwrap();
            let mags: Vec<f64> = cmd.residual_forces.iter().map(|f| f.magnitude).collect();
            let r = reward(
                &model,
                &s.state,
                &clip.frames[s.frame],
                &clip.velocity(s.frame),
                &mags,
                &cfg.weights,
                cfg.sim.residual_force_cap,
            )
            .unwrap();
            assert!((r.total - s.reward.total).abs() < 1e-12);
        }
    }

    #[test]
    fn rollout_from_last_frame_is_empty() {
        let (model, cfg, design) = setup();
        let clip = walk_clip();
        let traj = rollout(
            &model,
            &cfg,
            &clip,
            &design,
            clip.len() - 1,
            RolloutMode::Train,
            |_| vec![0.0; action_dim(&model, &cfg)],
        )
        .unwrap();
        assert!(traj.steps.is_empty());
    }

    #[test]
    fn eval_mode_resets_and_continues_after_failure() {
        let (model, cfg, design) = setup();
        let clip = walk_clip();
        // an action that yanks every joint far off the reference quickly
        // destroys tracking
        let nj = model.joint_count();
        let mut bad = vec![0.0; action_dim(&model, &cfg)];
        for v in bad.iter_mut().take(nj) {
            *v = 2.0;
        }
        let traj = rollout(
            &model,
            &cfg,
            &clip,
            &design,
            0,
            RolloutMode::Eval,
            |_| bad.clone(),
        )
        .unwrap();
        assert!(traj.terminated());
        // eval mode keeps going to the clip end despite terminations
        assert_eq!(traj.steps.len(), clip.len() - 1);
        // train mode stops at the first one
        let train = rollout(
            &model,
            &cfg,
            &clip,
            &design,
            0,
            RolloutMode::Train,
            |_| bad.clone(),
        )
        .unwrap();
        assert!(train.terminated());
        assert!(train.steps.len() < clip.len() - 1);
        assert!(train.steps.last().unwrap().termination.is_some());
    }
}
