//! Reference motion clips, procedural clip generators, and the
//! hard-negative-mining curriculum sampler.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::mathx;

#[derive(Debug, Clone, PartialEq)]
pub enum MotionError {
    InvalidClip(String),
    InvalidParams(String),
    EmptyCorpus,
    UnknownClip(String),
}

impl core::fmt::Display for MotionError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MotionError::InvalidClip(m) => write!(f, "invalid clip: {m}"),
            MotionError::InvalidParams(m) => write!(f, "invalid params: {m}"),
            MotionError::EmptyCorpus => write!(f, "no clips registered"),
            MotionError::UnknownClip(id) => write!(f, "unknown clip id: {id}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MotionError {}

/// Time-indexed reference poses, same layout as `SimState::q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub id: String,
    pub category: String,
    pub frame_rate: f64,
    pub frames: Vec<Vec<f64>>,
}

impl MotionClip {
    pub fn validate(&self) -> Result<(), MotionError> {
        if self.frames.len() < 2 {
            return Err(MotionError::InvalidClip("fewer than 2 frames".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(MotionError::InvalidClip("frame rate must be > 0".into()));
        }
        let dim = self.frames[0].len();
        for (i, fr) in self.frames.iter().enumerate() {
            if fr.len() != dim {
                return Err(MotionError::InvalidClip(format!(
                    "frame {i} has length {}, expected {dim}",
                    fr.len()
                )));
            }
            if !fr.iter().all(|v| v.is_finite()) {
                return Err(MotionError::InvalidClip(format!("frame {i} not finite")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    pub fn duration(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 / self.frame_rate
    }

    /// Finite-difference velocity at frame `t`: central differences inside,
    /// one-sided at the endpoints.
    pub fn velocity(&self, t: usize) -> Vec<f64> {
        let n = self.len();
        assert!(t < n && n >= 2);
        let fr = self.frame_rate;
        let (a, b, scale) = if t == 0 {
            (0, 1, fr)
        } else if t == n - 1 {
            (n - 2, n - 1, fr)
        } else {
            (t - 1, t + 1, fr / 2.0)
        };
        self.frames[a]
            .iter()
            .zip(self.frames[b].iter())
            .map(|(x0, x1)| (x1 - x0) * scale)
            .collect()
    }
}

const HISTORY_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClipRecord {
    id: String,
    /// Oldest first, at most `HISTORY_CAP` entries.
    history: Vec<bool>,
    success_rate: f64,
}

/// Per-clip success tracking driving the hard-negative sampling curriculum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    records: Vec<ClipRecord>,
    pub temperature: f64,
    /// EWMA decay per history slot; the newest outcome carries weight 1.
    pub decay: f64,
}

impl CurriculumState {
    pub fn new(clip_ids: impl IntoIterator<Item = String>) -> Self {
        CurriculumState {
            records: clip_ids
                .into_iter()
                .map(|id| ClipRecord {
                    id,
                    history: Vec::new(),
                    success_rate: 0.0,
                })
                .collect(),
            temperature: 0.2,
            decay: 0.5,
        }
    }

    pub fn clip_ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn success_rate(&self, id: &str) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.id == id)
            .map(|r| r.success_rate)
    }

    /// Sampling probabilities: softmax over `-s_i / temperature`.
    pub fn probabilities(&self) -> Result<Vec<f64>, MotionError> {
        if self.records.is_empty() {
            return Err(MotionError::EmptyCorpus);
        }
        let logits: Vec<f64> = self
            .records
            .iter()
            .map(|r| -r.success_rate / self.temperature)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| mathx::exp(l - max)).collect();
        let z: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / z).collect())
    }

    /// Draw a clip id from the curriculum distribution.
    pub fn sample_clip<R: RngCore>(&self, rng: &mut R) -> Result<&str, MotionError> {
        let probs = self.probabilities()?;
        let u = mathx::uniform01(rng);
        let mut acc = 0.0;
        for (r, p) in self.records.iter().zip(probs.iter()) {
            acc += p;
            if u < acc {
                return Ok(&r.id);
            }
        }
        Ok(&self.records.last().expect("nonempty").id)
    }

    /// Push an episode outcome and refresh the clip's EWMA success rate.
    pub fn record_outcome(&mut self, id: &str, success: bool) -> Result<(), MotionError> {
        let rec = self
            .records
            .iter_mut()
            .find(|r| r.id == id)
            .ok_or_else(|| MotionError::UnknownClip(id.to_string()))?;
        if rec.history.len() == HISTORY_CAP {
            rec.history.remove(0);
        }
        rec.history.push(success);
        // normalized EWMA, newest weighted most
        let mut num = 0.0;
        let mut den = 0.0;
        let mut w = 1.0;
        for &h in rec.history.iter().rev() {
            num += w * if h { 1.0 } else { 0.0 };
            den += w;
            w *= self.decay;
        }
        rec.success_rate = num / den;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipKind {
    Walk,
    Hop,
    Crawl,
    Kick,
    CartwheelProxy,
}

impl ClipKind {
    pub fn name(&self) -> &'static str {
        match self {
            ClipKind::Walk => "walk",
            ClipKind::Hop => "hop",
            ClipKind::Crawl => "crawl",
            ClipKind::Kick => "kick",
            ClipKind::CartwheelProxy => "cartwheel-proxy",
        }
    }
}

/// Generator parameters; interpretation depends on the kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipParams {
    /// Gait cycles per second.
    pub frequency: f64,
    /// Forward distance covered per gait cycle, meters.
    pub stride: f64,
    /// Joint-swing amplitude, radians (or hop height in meters for hops).
    pub amplitude: f64,
}

impl Default for ClipParams {
    fn default() -> Self {
        ClipParams {
            frequency: 1.0,
            stride: 0.3,
            amplitude: 0.35,
        }
    }
}

pub const CLIP_FRAME_RATE: f64 = 30.0;

/// Minimum height of non-foot geometry in generated reference frames.
pub const GROUND_CLEARANCE: f64 = 0.05;

/// Joint slots in the default humanoid's q layout.
mod jq {
    pub const HEAD: usize = 3;
    pub const ARM: usize = 4;
    pub const L_HIP: usize = 5;
    pub const L_KNEE: usize = 6;
    pub const L_ANKLE: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Two-link leg inverse kinematics against the default humanoid's leg.
///
/// Given the pelvis position, the torso angle and a desired ankle position,
/// returns (hip, knee, ankle) angles placing the ankle there (clamped to the
/// leg's reach) with the foot pitched `foot_pitch` above horizontal. The knee
/// always bends backward.
fn leg_ik(
    lt: f64,
    ls: f64,
    px: f64,
    py: f64,
    theta: f64,
    ax: f64,
    ay: f64,
    foot_pitch: f64,
) -> (f64, f64, f64) {
    let (dx, dy) = (ax - px, ay - py);
    let r = mathx::hypot(dx, dy)
        .min(lt + ls - 1.0e-6)
        .max((lt - ls).abs() + 1.0e-6);
    // angle of the pelvis->ankle line from straight down, positive forward
    let u_d = mathx::atan2(dx, -dy);
    let cos_knee = ((lt * lt + ls * ls - r * r) / (2.0 * lt * ls)).clamp(-1.0, 1.0);
    let cos_hip = ((lt * lt + r * r - ls * ls) / (2.0 * lt * r)).clamp(-1.0, 1.0);
    let lean = theta - core::f64::consts::FRAC_PI_2;
    let q_hip = u_d + mathx::acos(cos_hip) - lean;
    let q_knee = mathx::acos(cos_knee) - core::f64::consts::PI;
    let q_ankle = foot_pitch - (q_hip + q_knee + lean);
    (q_hip, q_knee, q_ankle)
}

/// Ankle x offset behind the pelvis when planting a foot; centers the
/// center of mass over the foot, which extends forward of the ankle.
const PLANT_BACK: f64 = 0.04;

/// Procedurally generate a reference clip for the default humanoid.
///
/// Leg motion is built by inverse kinematics from explicit foot placements:
/// a planted foot keeps a fixed world position for its whole stance phase,
/// so the references are free of foot skate and a PD tracker is not fighting
/// the ground friction.
pub fn generate_clip(
    kind: ClipKind,
    params: &ClipParams,
    duration: f64,
) -> Result<MotionClip, MotionError> {
    if !(params.frequency > 0.0) {
        return Err(MotionError::InvalidParams("frequency must be > 0".into()));
    }
    if !(duration > 0.0) {
        return Err(MotionError::InvalidParams("duration must be > 0".into()));
    }
    let n_frames = (duration * CLIP_FRAME_RATE) as usize + 1;
    if n_frames < 2 {
        return Err(MotionError::InvalidParams(
            "duration yields fewer than 2 frames at 30 Hz".into(),
        ));
    }
    let model = crate::character::base_humanoid();
    let upright = core::f64::consts::FRAC_PI_2;
    let lt = model.links[crate::character::humanoid::L_THIGH].length;
    let ls = model.links[crate::character::humanoid::L_SHIN].length;
    let ankle_h = model.links[crate::character::humanoid::L_FOOT].geom_halfwidth;
    let reach = lt + ls;
    let freq = params.frequency;
    let stride = params.stride;
    let a = params.amplitude;

    // walking-family pelvis height: enough knee slack to reach the farthest
    // plant without locking the knee
    let span = 0.25 * stride + 0.05;
    let walk_h = ankle_h
        + mathx::sqrt(((0.99 * reach) * (0.99 * reach) - span * span).max(0.25 * reach * reach));

    // a planted foot stays at a fixed world x for its entire stance phase;
    // plants advance by stride/2 per half cycle, centered on the pelvis path
    let plant_x = |v: f64, cycle_idx: f64, mid_frac: f64, off: f64| -> f64 {
        v * (cycle_idx + mid_frac - off) / freq - PLANT_BACK
    };

    let mut frames: Vec<Vec<f64>> = Vec::with_capacity(n_frames);
    let zeros = vec![0.0; model.dof()];
    for i in 0..n_frames {
        let t = i as f64 / CLIP_FRAME_RATE;
        let phase = 2.0 * core::f64::consts::PI * freq * t;
        let mut q = vec![0.0; model.dof()];
        // each kind fills: torso angle, stylized joints, the desired COM
        // trajectory, and per-leg ankle targets (None = joints set directly)
        let (com, th, ik): ([f64; 2], f64, [Option<(f64, f64, f64)>; 2]);
        match kind {
            ClipKind::Walk | ClipKind::Crawl => {
                // same stepping machinery; crawl runs it deeply crouched with
                // the torso pitched forward and toes down
                let crawl = kind == ClipKind::Crawl;
                let v = stride * freq;
                let (h, lean, lift, foot_pitch) = if crawl {
                    (ankle_h + 0.60 * reach, -0.55, 0.08 * a, 0.45)
                } else {
                    (walk_h, -0.03, 0.17 * a, 0.0)
                };
                th = upright + lean;
                com = [v * t, h - 0.01 * mathx::cos(2.0 * phase).max(0.0)];
                // left leg stance on the first half cycle, right on the second
                let mut targets = [None, None];
                for (leg, off) in [(0usize, 0.0f64), (1, 0.5)] {
                    let s = t * freq + off;
                    let idx = mathx::floor(s);
                    let cyc = s - idx;
                    targets[leg] = Some(if cyc < 0.5 {
                        (plant_x(v, idx, 0.25, off), ankle_h, foot_pitch)
                    } else {
                        let p = (cyc - 0.5) / 0.5;
                        let x0 = plant_x(v, idx, 0.25, off);
                        let x1 = plant_x(v, idx + 1.0, 0.25, off);
                        (
                            x0 + (x1 - x0) * smoothstep(p),
                            ankle_h + lift * mathx::sin(core::f64::consts::PI * p),
                            foot_pitch,
                        )
                    });
                }
                ik = targets;
                q[jq::ARM] = if crawl { 0.8 } else { 0.2 * mathx::sin(phase) };
                if crawl {
                    q[jq::HEAD] = 0.3;
                }
            }
            ClipKind::Hop => {
                // amplitude is the apex height; feet stay planted for the
                // whole stance and all forward travel happens in flight
                let duty = 0.65;
                let s = t * freq;
                let idx = mathx::floor(s);
                let c = s - idx;
                let h0 = ankle_h + 0.93 * reach;
                let x_base = stride * idx;
                th = upright;
                if c < duty {
                    // crouch deep enough that the takeoff speed for the apex
                    // is reachable under the torque limits
                    let depth = (2.0 * a).min(0.3 * reach);
                    let crouch = depth * mathx::sin(core::f64::consts::PI * c / duty);
                    com = [x_base, h0 - crouch];
                    ik = [Some((x_base - PLANT_BACK, ankle_h, 0.0)); 2];
                    q[jq::ARM] = 0.0;
                } else {
                    let p = (c - duty) / (1.0 - duty);
                    let px = x_base + stride * smoothstep(p);
                    let py = h0 + a * mathx::sin(core::f64::consts::PI * p);
                    com = [px, py];
                    // feet ride along under the body, slightly tucked
                    let tuck = 0.05 * mathx::sin(core::f64::consts::PI * p);
                    ik = [Some((px - PLANT_BACK, ankle_h + (py - h0) + tuck, 0.0)); 2];
                    q[jq::ARM] = -0.4 * mathx::sin(core::f64::consts::PI * p);
                }
            }
            ClipKind::Kick => {
                // right leg swings forward periodically, left supports
                let swing = mathx::sin(phase).max(0.0);
                th = upright - 0.15 * swing;
                let h0 = ankle_h + 0.97 * reach;
                com = [0.0, h0 - 0.03 * swing];
                ik = [Some((-PLANT_BACK, ankle_h, 0.0)), None];
                q[jq::R_HIP] = a * 3.0 * swing.min(0.78);
                q[jq::R_KNEE] = -0.8 * (1.0 - swing) - 0.05;
                q[jq::R_ANKLE] = 0.4 * swing; // pointed toe
                q[jq::ARM] = -0.6 * swing;
            }
            ClipKind::CartwheelProxy => {
                // large torso pitch oscillation over planted, straddled feet;
                // a planar stand-in for the rotational character of a
                // cartwheel
                th = upright + 0.7 * mathx::sin(phase);
                // keep the knees bent: near full extension the knee angle is
                // extremely sensitive to hip height and the clip gets jumpy
                let h0 = ankle_h + 0.9 * reach;
                let s = mathx::sin(phase);
                com = [0.0, h0 - 0.12 * s * s];
                ik = [Some((-0.16, ankle_h, 0.0)), Some((0.08, ankle_h, 0.0))];
                q[jq::ARM] = 1.8 * mathx::sin(phase);
            }
        }
        // (q[0], q[1]) anchors the whole-body COM, so the pelvis position
        // depends on the pose; solve the small fixed point pelvis -> IK ->
        // COM offset -> pelvis
        q[2] = th;
        let (mut px, mut py) = (com[0], com[1]);
        for _ in 0..6 {
            for (leg, target) in ik.iter().enumerate() {
                if let Some((ax, ay, fp)) = target {
                    let (qh, qk, qa) = leg_ik(lt, ls, px, py, th, *ax, *ay, *fp);
                    q[jq::L_HIP + 3 * leg] = qh;
                    q[jq::L_KNEE + 3 * leg] = qk;
                    q[jq::L_ANKLE + 3 * leg] = qa;
                }
            }
            for (j, joint) in model.joints.iter().enumerate() {
                q[3 + j] = q[3 + j].clamp(joint.lower, joint.upper);
            }
            q[0] = 0.0;
            q[1] = 0.0;
            let kin = crate::physics::forward_kinematics(&model, &q, &zeros);
            px = com[0] + kin.origin[model.root][0];
            py = com[1] + kin.origin[model.root][1];
        }
        q[0] = com[0];
        q[1] = com[1];
        frames.push(q);
    }
    // Ground consistency: raise each frame the minimal amount so feet never
    // penetrate and every other link keeps clearance. Without this, exact
    // tracking of a generated pose could itself count as a fall.
    for q in frames.iter_mut() {
        let kin = crate::physics::forward_kinematics(&model, q, &zeros);
        let mut dy: f64 = 0.0;
        for l in 0..model.links.len() {
            let low = crate::physics::lowest_height(&model, &kin, l);
            let need = if model.is_foot(l) {
                -low
            } else {
                GROUND_CLEARANCE - low
            };
            dy = dy.max(need);
        }
        q[1] += dy;
    }
    let clip = MotionClip {
        id: format!(
            "{}-f{:.2}-s{:.2}-a{:.2}",
            kind.name(),
            params.frequency,
            params.stride,
            params.amplitude
        ),
        category: kind.name().into(),
        frame_rate: CLIP_FRAME_RATE,
        frames,
    };
    clip.validate()?;
    Ok(clip)
}
