//! Planar motion imitation and character co-design.
//!
//! The crate is split along the pipeline stages: `physics` simulates a planar
//! articulated character, `character` parameterizes the searchable design
//! space, `motion` provides reference clips and the curriculum sampler,
//! `imitation` defines the tracking MDP, `learn` holds the networks and PPO,
//! `design_opt` runs the frozen-controller design search, and `metrics`
//! evaluates tracking quality.
//!
//! The crate is `no_std`-compatible (with `alloc`); IO and file formats live
//! in the companion `morphsim` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod character;
pub mod design_opt;
pub mod imitation;
pub mod learn;
pub mod mathx;
pub mod metrics;
pub mod motion;
pub mod physics;

pub use character::CharacterDesign;
pub use motion::MotionClip;
pub use physics::{CharacterModel, SimState};
