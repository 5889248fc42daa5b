//! Tracking-quality metrics over logged trajectories: MPJPE (root-relative
//! and global), acceleration error, and per-clip success.

use alloc::string::String;
use alloc::vec::Vec;

use crate::imitation::Trajectory;
use crate::mathx;
use crate::motion::MotionClip;
use crate::physics::{self, CharacterModel};

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    ShapeMismatch { expected: usize, got: usize },
    TooFewFrames(usize),
}

impl core::fmt::Display for MetricsError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            MetricsError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: {got}, expected {expected}")
            }
            MetricsError::TooFewFrames(n) => write!(f, "need >= 3 frames, got {n}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MetricsError {}

/// Per-frame, per-link 2D positions.
pub type Positions = Vec<Vec<[f64; 2]>>;

fn check_shapes(sim: &Positions, reference: &Positions) -> Result<(), MetricsError> {
    if sim.len() != reference.len() {
        return Err(MetricsError::ShapeMismatch {
            expected: reference.len(),
            got: sim.len(),
        });
    }
    for (a, b) in sim.iter().zip(reference.iter()) {
        if a.len() != b.len() {
            return Err(MetricsError::ShapeMismatch {
                expected: b.len(),
                got: a.len(),
            });
        }
    }
    Ok(())
}

/// Mean per-joint position error in millimeters.
///
/// With `root_relative` the root link's translation is subtracted from every
/// link per frame before differencing (the global "-g" variant skips this).
/// Link index 0 is treated as the root.
pub fn mpjpe(sim: &Positions, reference: &Positions, root_relative: bool) -> Result<f64, MetricsError> {
    check_shapes(sim, reference)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (fs, fr) in sim.iter().zip(reference.iter()) {
        let (os, or) = if root_relative {
            (fs[0], fr[0])
        } else {
            ([0.0, 0.0], [0.0, 0.0])
        };
        for (ps, pr) in fs.iter().zip(fr.iter()) {
            let dx = (ps[0] - os[0]) - (pr[0] - or[0]);
            let dy = (ps[1] - os[1]) - (pr[1] - or[1]);
            sum += mathx::hypot(dx, dy);
            count += 1;
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(1000.0 * sum / count as f64)
}

/// Mean joint-acceleration error in mm/frame^2, via second central
/// differences of the position trajectories.
pub fn accel_error(sim: &Positions, reference: &Positions) -> Result<f64, MetricsError> {
    check_shapes(sim, reference)?;
    if sim.len() < 3 {
        return Err(MetricsError::TooFewFrames(sim.len()));
    }
    let accel = |p: &Positions, t: usize, j: usize| -> [f64; 2] {
        [
            p[t + 1][j][0] - 2.0 * p[t][j][0] + p[t - 1][j][0],
            p[t + 1][j][1] - 2.0 * p[t][j][1] + p[t - 1][j][1],
        ]
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 1..sim.len() - 1 {
        for j in 0..sim[t].len() {
            let a = accel(sim, t, j);
            let b = accel(reference, t, j);
            sum += mathx::hypot(a[0] - b[0], a[1] - b[1]);
            count += 1;
        }
    }
    Ok(1000.0 * sum / count as f64)
}

/// A clip succeeds iff its trajectory contains no termination record.
pub fn success(traj: &Trajectory) -> bool {
    !traj.terminated()
}

/// Link-position trajectories of a rollout and the matching reference frames.
///
/// The root link's positions are moved to index 0 so the metric functions can
/// treat it uniformly.
pub fn trajectory_positions(
    model: &CharacterModel,
    clip: &MotionClip,
    traj: &Trajectory,
) -> (Positions, Positions) {
    let reorder = |mut ps: Vec<[f64; 2]>| -> Vec<[f64; 2]> {
        ps.swap(0, model.root);
        ps
    };
    let sim = traj
        .steps
        .iter()
        .map(|s| reorder(physics::link_positions(model, &s.state.q)))
        .collect();
    let reference = traj
        .steps
        .iter()
        .map(|s| reorder(physics::link_positions(model, &clip.frames[s.frame])))
        .collect();
    (sim, reference)
}

/// Metrics for one evaluated clip.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub s_succ: f64,
    pub e_mpjpe: f64,
    pub e_mpjpe_g: f64,
    pub e_acc: f64,
}

/// The evaluation suite over a set of clips, with aggregate means.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub clips: Vec<ClipMetrics>,
    pub s_succ: f64,
    pub e_mpjpe: f64,
    pub e_mpjpe_g: f64,
    pub e_acc: f64,
}

impl EvalReport {
    pub fn from_clips(clips: Vec<ClipMetrics>) -> EvalReport {
        let n = clips.len().max(1) as f64;
        let mean = |f: fn(&ClipMetrics) -> f64| clips.iter().map(f).sum::<f64>() / n;
        EvalReport {
            s_succ: mean(|c| c.s_succ),
            e_mpjpe: mean(|c| c.e_mpjpe),
            e_mpjpe_g: mean(|c| c.e_mpjpe_g),
            e_acc: mean(|c| c.e_acc),
            clips,
        }
    }
}

/// Full metric suite for one rollout against its clip.
pub fn evaluate_trajectory(
    model: &CharacterModel,
    clip: &MotionClip,
    traj: &Trajectory,
) -> Result<ClipMetrics, MetricsError> {
    let (sim, reference) = trajectory_positions(model, clip, traj);
    let e_acc = if sim.len() >= 3 {
        accel_error(&sim, &reference)?
    } else {
        0.0
    };
    Ok(ClipMetrics {
        clip_id: clip.id.clone(),
        s_succ: if success(traj) { 1.0 } else { 0.0 },
        e_mpjpe: mpjpe(&sim, &reference, true)?,
        e_mpjpe_g: mpjpe(&sim, &reference, false)?,
        e_acc,
    })
}
