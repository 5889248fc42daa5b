//! Design-vector parameterization of characters and the default planar
//! humanoid the rest of the pipeline is built around.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::physics::{CharacterModel, Joint, Link, SimState};

use core::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub enum DesignError {
    Dimension { expected: usize, got: usize },
    OutOfBox { fields: Vec<String> },
}

impl core::fmt::Display for DesignError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DesignError::Dimension { expected, got } => {
                write!(f, "design vector length {got}, expected {expected}")
            }
            DesignError::OutOfBox { fields } => {
                write!(f, "design outside box: {}", fields.join(", "))
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DesignError {}

/// Bounds of the searchable design space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignBox {
    pub scale: (f64, f64),
    pub frictionloss: (f64, f64),
    pub motor_gear: (f64, f64),
}

impl Default for DesignBox {
    fn default() -> Self {
        DesignBox {
            scale: (0.5, 2.0),
            frictionloss: (0.0, 5.0),
            motor_gear: (0.2, 5.0),
        }
    }
}

/// The searchable design vector: global height/weight stand-ins, per-link
/// length and geom-size scales, and per-joint frictionloss and motor gears.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterDesign {
    pub global_scale: f64,
    pub mass_scale: f64,
    pub bone_length_scales: Vec<f64>,
    pub geom_size_scales: Vec<f64>,
    pub frictionloss: Vec<f64>,
    pub motor_gears: Vec<f64>,
}

/// Indices of flat-vector entries that `decode` clamped into the box.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClampReport {
    pub clamped: Vec<usize>,
}

impl ClampReport {
    pub fn any(&self) -> bool {
        !self.clamped.is_empty()
    }
}

impl CharacterDesign {
    /// The design that reproduces `base` exactly under `build`.
    pub fn identity(base: &CharacterModel) -> Self {
        CharacterDesign {
            global_scale: 1.0,
            mass_scale: 1.0,
            bone_length_scales: vec![1.0; base.links.len()],
            geom_size_scales: vec![1.0; base.links.len()],
            frictionloss: base.joints.iter().map(|j| j.frictionloss).collect(),
            motor_gears: base.joints.iter().map(|j| j.motor_gear).collect(),
        }
    }

    pub fn dim(n_links: usize, n_joints: usize) -> usize {
        2 + 2 * n_links + 2 * n_joints
    }

    pub fn validate(&self, bx: &DesignBox) -> Result<(), DesignError> {
        let mut bad = Vec::new();
        let in_scale = |v: f64| v >= bx.scale.0 && v <= bx.scale.1;
        if !in_scale(self.global_scale) {
            bad.push("global_scale".into());
        }
        if !in_scale(self.mass_scale) {
            bad.push("mass_scale".into());
        }
        for (i, &v) in self.bone_length_scales.iter().enumerate() {
            if !in_scale(v) {
                bad.push(format!("bone_length_scales[{i}]"));
            }
        }
        for (i, &v) in self.geom_size_scales.iter().enumerate() {
            if !in_scale(v) {
                bad.push(format!("geom_size_scales[{i}]"));
            }
        }
        for (i, &v) in self.frictionloss.iter().enumerate() {
            if !(v >= bx.frictionloss.0 && v <= bx.frictionloss.1) {
                bad.push(format!("frictionloss[{i}]"));
            }
        }
        for (i, &v) in self.motor_gears.iter().enumerate() {
            if !(v >= bx.motor_gear.0 && v <= bx.motor_gear.1) {
                bad.push(format!("motor_gears[{i}]"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(DesignError::OutOfBox { fields: bad })
        }
    }

    /// Flatten into the fixed-layout real vector.
    pub fn encode(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(
            2 + self.bone_length_scales.len()
                + self.geom_size_scales.len()
                + self.frictionloss.len()
                + self.motor_gears.len(),
        );
        v.push(self.global_scale);
        v.push(self.mass_scale);
        v.extend_from_slice(&self.bone_length_scales);
        v.extend_from_slice(&self.geom_size_scales);
        v.extend_from_slice(&self.frictionloss);
        v.extend_from_slice(&self.motor_gears);
        v
    }

    /// Inverse of `encode`, clamping each entry into the box and reporting
    /// which entries were clamped.
    pub fn decode(
        vector: &[f64],
        n_links: usize,
        n_joints: usize,
        bx: &DesignBox,
    ) -> Result<(Self, ClampReport), DesignError> {
        let expected = Self::dim(n_links, n_joints);
        if vector.len() != expected {
            return Err(DesignError::Dimension {
                expected,
                got: vector.len(),
            });
        }
        let mut report = ClampReport::default();
        let mut clamp = |idx: usize, v: f64, lo: f64, hi: f64| -> f64 {
            let c = v.clamp(lo, hi);
            if c != v {
                report.clamped.push(idx);
            }
            c
        };
        let mut i = 0;
        let mut take = |n: usize| {
            let s = i;
            i += n;
            s..i
        };
        let gs = take(1).start;
        let ms = take(1).start;
        let bl = take(n_links);
        let gsz = take(n_links);
        let fl = take(n_joints);
        let mg = take(n_joints);
        let design = CharacterDesign {
            global_scale: clamp(gs, vector[gs], bx.scale.0, bx.scale.1),
            mass_scale: clamp(ms, vector[ms], bx.scale.0, bx.scale.1),
            bone_length_scales: bl
                .map(|k| clamp(k, vector[k], bx.scale.0, bx.scale.1))
                .collect(),
            geom_size_scales: gsz
                .map(|k| clamp(k, vector[k], bx.scale.0, bx.scale.1))
                .collect(),
            frictionloss: fl
                .map(|k| clamp(k, vector[k], bx.frictionloss.0, bx.frictionloss.1))
                .collect(),
            motor_gears: mg
                .map(|k| clamp(k, vector[k], bx.motor_gear.0, bx.motor_gear.1))
                .collect(),
        };
        Ok((design, report))
    }
}

/// Instantiate a concrete model from a design and the base topology.
///
/// Lengths scale by `global_scale * bone_length_scales`, geom halfwidths by
/// `geom_size_scales`, masses by `mass_scale * geom_size_scales^2` (planar
/// area proxy), and inertias are recomputed from the scaled geometry.
pub fn build(
    design: &CharacterDesign,
    bx: &DesignBox,
    base: &CharacterModel,
) -> Result<CharacterModel, DesignError> {
    design.validate(bx)?;
    let n_links = base.links.len();
    let n_joints = base.joints.len();
    let lens_ok = design.bone_length_scales.len() == n_links
        && design.geom_size_scales.len() == n_links
        && design.frictionloss.len() == n_joints
        && design.motor_gears.len() == n_joints;
    if !lens_ok {
        return Err(DesignError::Dimension {
            expected: CharacterDesign::dim(n_links, n_joints),
            got: design.encode().len(),
        });
    }
    let links = base
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Link::new(
                l.length * design.global_scale * design.bone_length_scales[i],
                l.mass * design.mass_scale * design.geom_size_scales[i] * design.geom_size_scales[i],
                l.geom_halfwidth * design.geom_size_scales[i],
            )
        })
        .collect();
    let joints = base
        .joints
        .iter()
        .enumerate()
        .map(|(ji, j)| Joint {
            frictionloss: design.frictionloss[ji],
            motor_gear: design.motor_gears[ji],
            ..j.clone()
        })
        .collect();
    Ok(CharacterModel {
        links,
        joints,
        foot_geoms: base.foot_geoms.clone(),
        root: base.root,
    })
}

/// Link indices of the default humanoid.
pub mod humanoid {
    pub const TORSO: usize = 0;
    pub const HEAD: usize = 1;
    pub const ARM: usize = 2;
    pub const L_THIGH: usize = 3;
    pub const L_SHIN: usize = 4;
    pub const L_FOOT: usize = 5;
    pub const R_THIGH: usize = 6;
    pub const R_SHIN: usize = 7;
    pub const R_FOOT: usize = 8;
}

/// Default 9-link planar humanoid: torso root, head, one combined arm link,
/// and two three-link legs. Joint angle 0 is the standing rest pose.
pub fn base_humanoid() -> CharacterModel {
    let links = vec![
        Link::new(0.60, 16.0, 0.09), // torso
        Link::new(0.25, 5.0, 0.08),  // head
        Link::new(0.60, 7.0, 0.05),  // arm (both arms collapsed)
        Link::new(0.45, 7.5, 0.07),  // left thigh
        Link::new(0.42, 4.5, 0.03),  // left shin
        Link::new(0.26, 1.2, 0.08),  // left foot
        Link::new(0.45, 7.5, 0.07),  // right thigh
        Link::new(0.42, 4.5, 0.03),  // right shin
        Link::new(0.26, 1.2, 0.08),  // right foot
    ];
    let joint = |parent, child, attach: f64, rest: f64, lo: f64, hi: f64| Joint {
        parent,
        child,
        parent_attach: attach,
        rest_offset: rest,
        lower: lo,
        upper: hi,
        frictionloss: 0.1,
        motor_gear: 1.0,
    };
    let joints = vec![
        joint(humanoid::TORSO, humanoid::HEAD, 1.0, 0.0, -0.5, 0.5),
        joint(humanoid::TORSO, humanoid::ARM, 0.9, PI, -2.5, 2.5),
        joint(humanoid::TORSO, humanoid::L_THIGH, 0.0, PI, -0.8, 2.4),
        joint(humanoid::L_THIGH, humanoid::L_SHIN, 1.0, 0.0, -2.4, 0.05),
        joint(humanoid::L_SHIN, humanoid::L_FOOT, 1.0, PI / 2.0, -0.8, 0.8),
        joint(humanoid::TORSO, humanoid::R_THIGH, 0.0, PI, -0.8, 2.4),
        joint(humanoid::R_THIGH, humanoid::R_SHIN, 1.0, 0.0, -2.4, 0.05),
        joint(humanoid::R_SHIN, humanoid::R_FOOT, 1.0, PI / 2.0, -0.8, 0.8),
    ];
    CharacterModel {
        links,
        joints,
        foot_geoms: vec![humanoid::L_FOOT, humanoid::R_FOOT],
        root: 0,
    }
}

/// Rest pose standing on the ground: all joints at 0, torso upright, root
/// raised so the lowest geom point just touches the ground plane.
pub fn standing_state(model: &CharacterModel) -> SimState {
    let mut state = SimState::new(model);
    state.q[2] = PI / 2.0;
    let kin = crate::physics::forward_kinematics(model, &state.q, &state.qdot);
    let lowest = (0..model.links.len())
        .map(|i| crate::physics::lowest_height(model, &kin, i))
        .fold(f64::INFINITY, f64::min);
    state.q[1] = -lowest;
    let kin = crate::physics::forward_kinematics(model, &state.q, &state.qdot);
    state.contact_flags = model
        .foot_geoms
        .iter()
        .map(|&g| crate::physics::lowest_height(model, &kin, g) <= 1.0e-3)
        .collect();
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_design_reproduces_base() {
        let base = base_humanoid();
        let bx = DesignBox::default();
        let d = CharacterDesign::identity(&base);
        let built = build(&d, &bx, &base).unwrap();
        assert_eq!(built, base);
    }

    #[test]
    fn global_scale_scales_every_length() {
        let base = base_humanoid();
        let bx = DesignBox::default();
        let mut d = CharacterDesign::identity(&base);
        d.global_scale = 1.1;
        let built = build(&d, &bx, &base).unwrap();
        for (b, s) in base.links.iter().zip(built.links.iter()) {
            assert!((s.length - 1.1 * b.length).abs() < 1e-12);
            assert_eq!(s.geom_halfwidth, b.geom_halfwidth);
        }
    }

    #[test]
    fn mass_scale_doubles_mass_and_inertia() {
        let base = base_humanoid();
        let bx = DesignBox::default();
        let mut d = CharacterDesign::identity(&base);
        d.mass_scale = 2.0;
        let built = build(&d, &bx, &base).unwrap();
        assert!((built.total_mass() - 2.0 * base.total_mass()).abs() < 1e-9);
        for (b, s) in base.links.iter().zip(built.links.iter()) {
            // geometry unchanged, mass doubled: box inertia m(l^2+4w^2)/12
            // doubles exactly
            let expected = 2.0 * b.mass
                * (b.length * b.length + 4.0 * b.geom_halfwidth * b.geom_halfwidth)
                / 12.0;
            assert!((s.inertia - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_box_design_lists_fields() {
        let base = base_humanoid();
        let bx = DesignBox::default();
        let mut d = CharacterDesign::identity(&base);
        d.global_scale = 3.0;
        d.motor_gears[2] = 0.01;
        match build(&d, &bx, &base) {
            Err(DesignError::OutOfBox { fields }) => {
                assert!(fields.contains(&"global_scale".to_string()));
                assert!(fields.iter().any(|f| f.contains("motor_gears[2]")));
            }
            other => panic!("expected OutOfBox, got {other:?}"),
        }
    }

    #[test]
    fn encode_identity_is_ones_and_base_values() {
        let base = base_humanoid();
        let d = CharacterDesign::identity(&base);
        let v = d.encode();
        let n = base.links.len();
        assert!(v[..2 + 2 * n].iter().all(|&x| x == 1.0));
        for (k, j) in base.joints.iter().enumerate() {
            assert_eq!(v[2 + 2 * n + k], j.frictionloss);
            assert_eq!(v[2 + 2 * n + base.joints.len() + k], j.motor_gear);
        }
    }

    #[test]
    fn decode_clamps_and_reports() {
        let base = base_humanoid();
        let bx = DesignBox::default();
        let d = CharacterDesign::identity(&base);
        let mut v = d.encode();
        v[0] = bx.scale.1 * 1.1;
        let (decoded, report) = CharacterDesign::decode(
            &v,
            base.links.len(),
            base.joints.len(),
            &bx,
        )
        .unwrap();
        assert_eq!(decoded.global_scale, bx.scale.1);
        assert_eq!(report.clamped, vec![0]);
    }

    #[test]
    fn decode_rejects_wrong_length() {
        let bx = DesignBox::default();
        assert!(matches!(
            CharacterDesign::decode(&[1.0; 5], 9, 8, &bx),
            Err(DesignError::Dimension { .. })
        ));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            gs in 0.5f64..2.0,
            ms in 0.5f64..2.0,
            seed in 0u64..1000,
        ) {
            let base = base_humanoid();
            let bx = DesignBox::default();
            let n = base.links.len();
            let nj = base.joints.len();
            let mut d = CharacterDesign::identity(&base);
            d.global_scale = gs;
            d.mass_scale = ms;
            for i in 0..n {
                d.bone_length_scales[i] = 0.5 + 1.5 * (((seed + i as u64 * 7) % 100) as f64 / 100.0);
                d.geom_size_scales[i] = 0.5 + 1.5 * (((seed + i as u64 * 13) % 100) as f64 / 100.0);
            }
            for k in 0..nj {
                d.frictionloss[k] = 5.0 * (((seed + k as u64 * 3) % 100) as f64 / 100.0);
                d.motor_gears[k] = 0.2 + 4.8 * (((seed + k as u64 * 11) % 100) as f64 / 100.0);
            }
            let (back, report) = CharacterDesign::decode(&d.encode(), n, nj, &bx).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert!(!report.any());
        }

        #[test]
        fn mass_monotone_in_mass_scale(a in 0.5f64..1.9, delta in 0.01f64..0.1) {
            let base = base_humanoid();
            let bx = DesignBox::default();
            let mut d1 = CharacterDesign::identity(&base);
            d1.mass_scale = a;
            let mut d2 = d1.clone();
            d2.mass_scale = a + delta;
            let m1 = build(&d1, &bx, &base).unwrap().total_mass();
            let m2 = build(&d2, &bx, &base).unwrap().total_mass();
            prop_assert!(m2 > m1);
        }
    }

    #[test]
    fn standing_state_touches_ground() {
        let model = base_humanoid();
        let state = standing_state(&model);
        let kin = crate::physics::forward_kinematics(&model, &state.q, &state.qdot);
        let lowest = (0..model.links.len())
            .map(|i| crate::physics::lowest_height(&model, &kin, i))
            .fold(f64::INFINITY, f64::min);
        assert!(lowest.abs() < 1e-9);
        // both feet flagged in contact, nothing else near the ground besides feet
        assert!(state.contact_flags.iter().all(|&c| c));
        assert!(!crate::physics::non_foot_ground_contact(
            &model,
            &crate::physics::SimConfig::default(),
            &state
        ));
    }
}
