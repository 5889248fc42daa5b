//! Command-line surface: argument parsing, option precedence, and the
//! implementations of the five subcommands.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use morphsim_core::character::{self, DesignBox};
use morphsim_core::design_opt::{self, DesignOptError};
use morphsim_core::imitation::{self, ImitationError, RolloutMode};
use morphsim_core::metrics;
use morphsim_core::motion::{generate_clip, MotionError};
use morphsim_core::{CharacterDesign, CharacterModel};

use crate::config::{default_corpus, ConfigError, RunConfig, SubspaceKind};
use crate::formats::{self, ControllerCheckpoint, FormatError, FORMAT_VERSION};
use crate::train::{self, TrainError};

pub const SEED_ENV: &str = "MORPHSIM_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    DesignOpt(#[from] DesignOptError),
    #[error(transparent)]
    Imitation(#[from] ImitationError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error("invalid {SEED_ENV} value {0:?}: expected a u64")]
    Seed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// Stable machine-readable error category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Format(_) => "format",
            CliError::Config(_) => "config",
            CliError::Train(_) => "train",
            CliError::DesignOpt(_) => "design-opt",
            CliError::Imitation(_) => "imitation",
            CliError::Motion(_) => "motion",
            CliError::Seed(_) => "seed",
            CliError::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "morphsim", version, about = "Planar motion imitation and character co-design")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// RNG seed; overrides the config file and the MORPHSIM_SEED variable.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing); a manifest.json is written
    /// alongside the outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a reference-clip corpus as one JSON file per clip.
    GenCorpus,
    /// Train an imitation controller on a clip corpus.
    Train {
        /// Directory of clip JSON files.
        #[arg(long)]
        corpus: PathBuf,
        /// Override the configured iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Character model JSON; defaults to the built-in humanoid.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Character design JSON; defaults to the identity design.
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Optimize the character design under a frozen controller.
    OptimizeDesign {
        /// Controller checkpoint JSON.
        #[arg(long)]
        controller: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Searched subspace: "leg-lengths" or "legs-and-gears".
        #[arg(long)]
        subspace: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the metric suite for a controller (and optional design) on a corpus.
    Evaluate {
        #[arg(long)]
        controller: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Roll out a controller on one clip and dump the trajectory.
    Rollout {
        #[arg(long)]
        controller: PathBuf,
        /// Clip JSON file.
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Start frame in the clip.
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
}

fn resolve_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = cfg.seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.parse().map_err(|_| CliError::Seed(v)),
        Err(_) => Ok(0),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn load_base(model: &Option<PathBuf>) -> Result<CharacterModel, CliError> {
    match model {
        Some(p) => Ok(formats::load_model(p)?),
        None => Ok(character::base_humanoid()),
    }
}

fn load_design_or_identity(
    design: &Option<PathBuf>,
    base: &CharacterModel,
) -> Result<CharacterDesign, CliError> {
    match design {
        Some(p) => Ok(formats::load_design(p)?),
        None => Ok(CharacterDesign::identity(base)),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = resolve_seed(cli.seed, &cfg)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    ensure_dir(&out)?;
    match &cli.command {
        Command::GenCorpus => cmd_gen_corpus(&cfg, &out, seed),
        Command::Train {
            corpus,
            iterations,
            model,
            design,
        } => cmd_train(&cfg, &out, seed, corpus, *iterations, model, design),
        Command::OptimizeDesign {
            controller,
            corpus,
            subspace,
            iterations,
            model,
        } => cmd_optimize_design(
            &cfg,
            &out,
            seed,
            controller,
            corpus,
            subspace.as_deref(),
            *iterations,
            model,
        ),
        Command::Evaluate {
            controller,
            corpus,
            design,
            model,
        } => cmd_evaluate(&out, seed, controller, corpus, design, model),
        Command::Rollout {
            controller,
            clip,
            design,
            model,
            start,
        } => cmd_rollout(&out, seed, controller, clip, design, model, *start),
    }
}

pub fn cmd_gen_corpus(cfg: &RunConfig, out: &Path, seed: u64) -> Result<(), CliError> {
    let entries = cfg.corpus.clone().unwrap_or_else(default_corpus);
    let mut outputs = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let clip = generate_clip(e.kind, &e.params, e.duration)?;
        let name = format!("{i:02}-{}.json", clip.id);
        formats::save_clip(&out.join(&name), &clip)?;
        outputs.push(name);
    }
    let refs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    formats::write_manifest(out, "gen-corpus", seed, &refs)?;
    println!("wrote {} clips to {}", outputs.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    cfg: &RunConfig,
    out: &Path,
    seed: u64,
    corpus: &Path,
    iterations: Option<usize>,
    model: &Option<PathBuf>,
    design: &Option<PathBuf>,
) -> Result<(), CliError> {
    let clips = formats::load_corpus(corpus)?;
    let base = load_base(model)?;
    let design = load_design_or_identity(design, &base)?;
    let mut tc = cfg.train.clone().unwrap_or_default();
    if let Some(it) = iterations {
        tc.iterations = it;
    }
    let outcome = train::train_controller(&base, &design, &clips, &tc, seed, |st| {
        println!(
            "iter {:4}  reward/step {:.4}  success {:.2}  kl {:.5}",
            st.iteration, st.mean_step_reward, st.success_rate, st.approx_kl
        );
    })?;
    let ckpt = ControllerCheckpoint {
        version: FORMAT_VERSION,
        seed,
        mdp: tc.mdp.clone(),
        train: tc.clone(),
        policy: outcome.policy,
        value_fn: outcome.value_fn,
        curriculum: outcome.curriculum,
        iterations_done: tc.iterations,
    };
    formats::save_checkpoint(&out.join("checkpoint.json"), &ckpt)?;
    formats::write_curve_csv(&out.join("curve.csv"), &outcome.stats)?;
    formats::write_manifest(out, "train", seed, &["checkpoint.json", "curve.csv"])?;
    println!("checkpoint written to {}", out.join("checkpoint.json").display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_optimize_design(
    cfg: &RunConfig,
    out: &Path,
    seed: u64,
    controller: &Path,
    corpus: &Path,
    subspace: Option<&str>,
    iterations: Option<usize>,
    model: &Option<PathBuf>,
) -> Result<(), CliError> {
    let ckpt = formats::load_checkpoint(controller)?;
    let controller = ckpt.controller();
    let clips = formats::load_corpus(corpus)?;
    let base = load_base(model)?;
    let bx = DesignBox::default();
    let kind = match subspace {
        Some(s) => SubspaceKind::from_str(s)?,
        None => cfg.subspace.unwrap_or(SubspaceKind::LegsAndGears),
    };
    let sub = kind.build(&base, &bx);
    let mut oc = cfg.design_opt.clone().unwrap_or_default();
    if let Some(it) = iterations {
        oc.iterations = it;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hash_before = controller.params_hash();
    let outcome = design_opt::optimize(&controller, &base, &bx, &sub, &clips, &oc, &mut rng)?;
    let hash_after = controller.params_hash();
    formats::save_design(&out.join("design.json"), &outcome.best_design)?;
    formats::write_design_episodes_csv(&out.join("episodes.csv"), &outcome.episodes)?;
    formats::write_design_evals_csv(&out.join("evals.csv"), &outcome.evals)?;
    let (report, mean_reward) =
        design_opt::evaluate_design(&controller, &base, &bx, &outcome.best_design, &clips)?;
    formats::write_metrics_csv(&out.join("metrics.csv"), &report)?;
    formats::write_metrics_table(&out.join("metrics.txt"), &report)?;
    formats::save_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "version": FORMAT_VERSION,
            "subspace": sub,
            "best_z": outcome.best_z,
            "mean_reward": mean_reward,
            "discarded_episodes": outcome.discarded,
            "controller_hash": format!("{hash_before:016x}"),
            "controller_unchanged": hash_before == hash_after,
        }),
    )?;
    formats::write_manifest(
        out,
        "optimize-design",
        seed,
        &[
            "design.json",
            "episodes.csv",
            "evals.csv",
            "metrics.csv",
            "metrics.txt",
            "summary.json",
        ],
    )?;
    print!("{}", formats::render_metrics_table(&report));
    println!("best design written to {}", out.join("design.json").display());
    Ok(())
}

pub fn cmd_evaluate(
    out: &Path,
    seed: u64,
    controller: &Path,
    corpus: &Path,
    design: &Option<PathBuf>,
    model: &Option<PathBuf>,
) -> Result<(), CliError> {
    let ckpt = formats::load_checkpoint(controller)?;
    let controller = ckpt.controller();
    let clips = formats::load_corpus(corpus)?;
    let base = load_base(model)?;
    let design = load_design_or_identity(design, &base)?;
    let bx = DesignBox::default();
    let (report, mean_reward) =
        design_opt::evaluate_design(&controller, &base, &bx, &design, &clips)?;
    formats::write_metrics_csv(&out.join("metrics.csv"), &report)?;
    formats::write_metrics_table(&out.join("metrics.txt"), &report)?;
    formats::write_manifest(out, "evaluate", seed, &["metrics.csv", "metrics.txt"])?;
    print!("{}", formats::render_metrics_table(&report));
    println!("mean episode reward: {mean_reward:.4}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_rollout(
    out: &Path,
    seed: u64,
    controller: &Path,
    clip: &Path,
    design: &Option<PathBuf>,
    model: &Option<PathBuf>,
    start: usize,
) -> Result<(), CliError> {
    let ckpt = formats::load_checkpoint(controller)?;
    let controller = ckpt.controller();
    let clip = formats::load_clip(clip)?;
    let base = load_base(model)?;
    let design = load_design_or_identity(design, &base)?;
    let bx = DesignBox::default();
    let built = character::build(&design, &bx, &base).map_err(DesignOptError::from)?;
    controller.check_compat(&built)?;
    let policy = &controller.policy;
    let traj = imitation::rollout(
        &built,
        &controller.cfg,
        &clip,
        &design,
        start,
        RolloutMode::Eval,
        |obs| policy.mean_action(obs).expect("dimensions checked"),
    )?;
    let m = metrics::evaluate_trajectory(&built, &clip, &traj)
        .map_err(DesignOptError::from)?;
    formats::write_trajectory_csv(&out.join("trajectory.csv"), &traj)?;
    formats::save_json(
        &out.join("summary.json"),
        &serde_json::json!({ "version": FORMAT_VERSION, "metrics": m }),
    )?;
    formats::write_manifest(out, "rollout", seed, &["trajectory.csv", "summary.json"])?;
    println!(
        "{} steps, S_succ {:.0}, E_mpjpe {:.1} mm",
        traj.steps.len(),
        m.s_succ,
        m.e_mpjpe
    );
    Ok(())
}
