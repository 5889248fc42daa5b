//! Versioned on-disk formats.
//!
//! Every JSON artifact carries a `version` field and is rejected on mismatch.
//! Serialization is deterministic (fixed field order, shortest round-trip
//! float formatting), so saving a loaded artifact reproduces it byte for
//! byte. CSV files use the same float formatting.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use morphsim_core::design_opt::{Controller, EpisodeRecord, EvalRecord};
use morphsim_core::imitation::{MdpConfig, Trajectory};
use morphsim_core::learn::{GaussianPolicy, Mlp};
use morphsim_core::metrics::EvalReport;
use morphsim_core::motion::CurriculumState;
use morphsim_core::{CharacterDesign, CharacterModel, MotionClip};

use crate::train::{IterStats, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: unsupported format version {got} (expected {expected})")]
    Version {
        path: PathBuf,
        expected: u32,
        got: u32,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn check_version(path: &Path, got: u32) -> Result<(), FormatError> {
    if got != FORMAT_VERSION {
        return Err(FormatError::Version {
            path: path.to_path_buf(),
            expected: FORMAT_VERSION,
            got,
        });
    }
    Ok(())
}

fn invalid(path: &Path, message: impl std::fmt::Display) -> FormatError {
    FormatError::Invalid {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

// ---------------------------------------------------------------- clips

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClipFile {
    pub version: u32,
    pub clip: MotionClip,
}

pub fn save_clip(path: &Path, clip: &MotionClip) -> Result<(), FormatError> {
    save_json(
        path,
        &ClipFile {
            version: FORMAT_VERSION,
            clip: clip.clone(),
        },
    )
}

pub fn load_clip(path: &Path) -> Result<MotionClip, FormatError> {
    let file: ClipFile = load_json(path)?;
    check_version(path, file.version)?;
    file.clip.validate().map_err(|e| invalid(path, e))?;
    Ok(file.clip)
}

/// Load every `*.json` clip in a directory, sorted by file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<MotionClip>, FormatError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name().is_some_and(|n| n != "manifest.json")
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| load_clip(p)).collect()
}

// ---------------------------------------------------------------- characters

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub model: CharacterModel,
}

pub fn save_model(path: &Path, model: &CharacterModel) -> Result<(), FormatError> {
    save_json(
        path,
        &ModelFile {
            version: FORMAT_VERSION,
            model: model.clone(),
        },
    )
}

pub fn load_model(path: &Path) -> Result<CharacterModel, FormatError> {
    let file: ModelFile = load_json(path)?;
    check_version(path, file.version)?;
    file.model.validate().map_err(|e| invalid(path, e))?;
    Ok(file.model)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DesignFile {
    pub version: u32,
    pub design: CharacterDesign,
}

pub fn save_design(path: &Path, design: &CharacterDesign) -> Result<(), FormatError> {
    save_json(
        path,
        &DesignFile {
            version: FORMAT_VERSION,
            design: design.clone(),
        },
    )
}

pub fn load_design(path: &Path) -> Result<CharacterDesign, FormatError> {
    let file: DesignFile = load_json(path)?;
    check_version(path, file.version)?;
    Ok(file.design)
}

// ---------------------------------------------------------------- checkpoints

/// A trained imitation controller with everything needed to resume or reuse
/// it: networks, MDP constants, training configuration, curriculum state.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ControllerCheckpoint {
    pub version: u32,
    pub seed: u64,
    pub mdp: MdpConfig,
    pub train: TrainConfig,
    pub policy: GaussianPolicy,
    pub value_fn: Mlp,
    pub curriculum: CurriculumState,
    pub iterations_done: usize,
}

impl ControllerCheckpoint {
    pub fn controller(&self) -> Controller {
        Controller {
            policy: self.policy.clone(),
            cfg: self.mdp.clone(),
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &ControllerCheckpoint) -> Result<(), FormatError> {
    save_json(path, ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<ControllerCheckpoint, FormatError> {
    let ckpt: ControllerCheckpoint = load_json(path)?;
    check_version(path, ckpt.version)?;
    Ok(ckpt)
}

// ---------------------------------------------------------------- CSV logs

fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Per-control-step trajectory dump: generalized state, reward terms,
/// contact flags, and the termination record if any.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), FormatError> {
    let mut s = String::new();
    let (nq, nc) = match traj.steps.first() {
        Some(r) => (r.state.q.len(), r.state.contact_flags.len()),
        None => (0, 0),
    };
    s.push_str("step,frame,time");
    for i in 0..nq {
        let _ = write!(s, ",q{i}");
    }
    for i in 0..nq {
        let _ = write!(s, ",qd{i}");
    }
    for i in 0..nc {
        let _ = write!(s, ",contact{i}");
    }
    s.push_str(",r_total,r_p,r_v,r_e,r_vf,termination\n");
    for (i, rec) in traj.steps.iter().enumerate() {
        let _ = write!(s, "{},{},{}", i, rec.frame, rec.state.time);
        for v in rec.state.q.iter().chain(rec.state.qdot.iter()) {
            let _ = write!(s, ",{v}");
        }
        for c in &rec.state.contact_flags {
            let _ = write!(s, ",{}", *c as u8);
        }
        let r = &rec.reward;
        let _ = write!(s, ",{},{},{},{},{}", r.total, r.r_p, r.r_v, r.r_e, r.r_vf);
        match rec.termination {
            Some(t) => {
                let _ = write!(s, ",{t:?}");
            }
            None => s.push(','),
        }
        s.push('\n');
    }
    write_text(path, &s)
}

const METRIC_COLS: [&str; 4] = ["S_succ", "E_mpjpe", "E_mpjpe-g", "E_acc"];

pub fn write_metrics_csv(path: &Path, report: &EvalReport) -> Result<(), FormatError> {
    let mut s = String::from("clip,S_succ,E_mpjpe,E_mpjpe-g,E_acc\n");
    for c in &report.clips {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            c.clip_id, c.s_succ, c.e_mpjpe, c.e_mpjpe_g, c.e_acc
        );
    }
    let _ = writeln!(
        s,
        "mean,{},{},{},{}",
        report.s_succ, report.e_mpjpe, report.e_mpjpe_g, report.e_acc
    );
    write_text(path, &s)
}

/// Human-readable aligned metrics table (same contents as the CSV).
pub fn render_metrics_table(report: &EvalReport) -> String {
    let mut rows: Vec<[String; 5]> = Vec::new();
    let fmt = |v: f64| format!("{v:.3}");
    for c in &report.clips {
        rows.push([
            c.clip_id.clone(),
            fmt(c.s_succ),
            fmt(c.e_mpjpe),
            fmt(c.e_mpjpe_g),
            fmt(c.e_acc),
        ]);
    }
    rows.push([
        "mean".into(),
        fmt(report.s_succ),
        fmt(report.e_mpjpe),
        fmt(report.e_mpjpe_g),
        fmt(report.e_acc),
    ]);
    let mut widths = [4usize, 0, 0, 0, 0];
    for (i, h) in METRIC_COLS.iter().enumerate() {
        widths[i + 1] = h.len();
    }
    for row in &rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut s = format!("{:<w$}", "clip", w = widths[0]);
    for (i, h) in METRIC_COLS.iter().enumerate() {
        let _ = write!(s, "  {h:>w$}", w = widths[i + 1]);
    }
    s.push('\n');
    for row in &rows {
        let _ = write!(s, "{:<w$}", row[0], w = widths[0]);
        for i in 1..5 {
            let _ = write!(s, "  {:>w$}", row[i], w = widths[i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_metrics_table(path: &Path, report: &EvalReport) -> Result<(), FormatError> {
    write_text(path, &render_metrics_table(report))
}

/// Controller-training curve, one row per PPO iteration.
pub fn write_curve_csv(path: &Path, stats: &[IterStats]) -> Result<(), FormatError> {
    let mut s = String::from(
        "iteration,steps,episodes,mean_step_reward,mean_episode_return,\
         success_rate,policy_loss,value_loss,clip_fraction,approx_kl\n",
    );
    for st in stats {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            st.iteration,
            st.steps,
            st.episodes,
            st.mean_step_reward,
            st.mean_episode_return,
            st.success_rate,
            st.policy_loss,
            st.value_loss,
            st.clip_fraction,
            st.approx_kl
        );
    }
    write_text(path, &s)
}

/// Design-stage episode history.
pub fn write_design_episodes_csv(path: &Path, eps: &[EpisodeRecord]) -> Result<(), FormatError> {
    let zdim = eps.first().map_or(0, |e| e.z.len());
    let mut s = String::from("iteration,clip,design_reward,control_return");
    for i in 0..zdim {
        let _ = write!(s, ",z{i}");
    }
    s.push('\n');
    for e in eps {
        let _ = write!(
            s,
            "{},{},{},{}",
            e.iteration, e.clip_id, e.design_reward, e.control_return
        );
        for v in &e.z {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    write_text(path, &s)
}

/// Periodic deterministic design evaluations.
pub fn write_design_evals_csv(path: &Path, evals: &[EvalRecord]) -> Result<(), FormatError> {
    let zdim = evals.first().map_or(0, |e| e.z.len());
    let mut s = String::from("iteration,mean_reward,E_mpjpe-g,is_best");
    for i in 0..zdim {
        let _ = write!(s, ",z{i}");
    }
    s.push('\n');
    for e in evals {
        let _ = write!(
            s,
            "{},{},{},{}",
            e.iteration, e.mean_reward, e.e_mpjpe_g, e.is_best as u8
        );
        for v in &e.z {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    write_text(path, &s)
}

// ---------------------------------------------------------------- manifest

/// Written by every command as `manifest.json` in its output directory.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub command: String,
    pub seed: u64,
    pub outputs: Vec<String>,
}

pub fn write_manifest(dir: &Path, command: &str, seed: u64, outputs: &[&str]) -> Result<(), FormatError> {
    save_json(
        &dir.join("manifest.json"),
        &Manifest {
            version: FORMAT_VERSION,
            command: command.into(),
            seed,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        },
    )
}
