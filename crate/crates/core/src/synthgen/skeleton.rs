//! Procedural 23-keypoint skeleton and the default archetype table.
//!
//! Keypoint layout (cm, body frame, +x forward, +z up):
//!
//! | index  | part                                   |
//! |--------|----------------------------------------|
//! | 0      | root (spine base)                      |
//! | 1      | head                                   |
//! | 2–6    | spine, 1.5 cm apart ahead of the root  |
//! | 7–9    | front-left limb (shoulder → paw)       |
//! | 10–12  | front-right limb                       |
//! | 13–15  | hind-left limb                         |
//! | 16–18  | hind-right limb                        |
//! | 19–22  | tail, trailing −x                      |

use serde::{Deserialize, Serialize};

use crate::dataio::BehaviorLabel;

pub const SKELETON_KEYPOINTS: usize = 23;

const SPINE_STEP: f64 = 1.5;
const LIMB_LATERAL: f64 = 1.2;

/// Rest pose, one `[x, y, z]` per keypoint.
pub fn rest_pose() -> Vec<[f64; 3]> {
    let mut p = Vec::with_capacity(SKELETON_KEYPOINTS);
    p.push([0.0, 0.0, 3.0]);
    p.push([6.0 * SPINE_STEP, 0.0, 3.0]);
    for i in 1..=5 {
        p.push([i as f64 * SPINE_STEP, 0.0, 3.0]);
    }
    for (x, y) in [
        (6.0, LIMB_LATERAL),
        (6.0, -LIMB_LATERAL),
        (SPINE_STEP, LIMB_LATERAL),
        (SPINE_STEP, -LIMB_LATERAL),
    ] {
        for z in [2.0, 1.0, 0.0] {
            p.push([x, y, z]);
        }
    }
    for i in 1..=4 {
        p.push([-(i as f64) * SPINE_STEP, 0.0, 3.0 - 0.5 * i as f64]);
    }
    debug_assert_eq!(p.len(), SKELETON_KEYPOINTS);
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointGroup {
    Head,
    /// Root plus the five spine points.
    Spine,
    Forelimbs,
    Hindlimbs,
    Limbs,
    Tail,
    All,
}

impl KeypointGroup {
    pub fn indices(self) -> Vec<usize> {
        match self {
            Self::Head => vec![1],
            Self::Spine => vec![0, 2, 3, 4, 5, 6],
            Self::Forelimbs => (7..13).collect(),
            Self::Hindlimbs => (13..19).collect(),
            Self::Limbs => (7..19).collect(),
            Self::Tail => (19..23).collect(),
            Self::All => (0..SKELETON_KEYPOINTS).collect(),
        }
    }
}

/// Gait phase of a limb keypoint: diagonal pairs (front-left with
/// hind-right) move together, opposite to the other pair.
pub fn gait_phase(keypoint: usize) -> f64 {
    match keypoint {
        7..=9 | 16..=18 => 0.0,
        10..=15 => std::f64::consts::PI,
        _ => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Self::X => 0,
            Self::Y => 1,
            Self::Z => 2,
        }
    }
}

/// Sinusoidal displacement of a keypoint group along one body-frame axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub group: KeypointGroup,
    pub axis: Axis,
    /// cm
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    /// Apply the diagonal-pair gait phase to limb keypoints.
    #[serde(default)]
    pub alternate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub behavior: BehaviorLabel,
    /// cm/s along the heading
    pub forward_speed: f64,
    #[serde(default)]
    pub oscillations: Vec<Oscillation>,
    /// Per-keypoint displacement from the rest pose; empty means none.
    #[serde(default)]
    pub posture_offset: Vec<[f64; 3]>,
    /// cm
    pub noise_sigma: f64,
}

fn offsets(f: impl Fn(usize, [f64; 3]) -> [f64; 3]) -> Vec<[f64; 3]> {
    rest_pose()
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let q = f(k, p);
            [q[0] - p[0], q[1] - p[1], q[2] - p[2]]
        })
        .collect()
}

fn osc(group: KeypointGroup, axis: Axis, amplitude: f64, frequency: f64) -> Oscillation {
    Oscillation {
        group,
        axis,
        amplitude,
        frequency,
        alternate: false,
    }
}

/// The nine default archetypes, in behavior-code order.
pub fn default_archetypes() -> Vec<ArchetypeSpec> {
    use BehaviorLabel::*;
    const NOISE: f64 = 0.1;
    let spine: Vec<usize> = KeypointGroup::Spine.indices();
    let fore = KeypointGroup::Forelimbs.indices();
    let gait = |amplitude, frequency| Oscillation {
        alternate: true,
        ..osc(KeypointGroup::Limbs, Axis::X, amplitude, frequency)
    };
    let arch = |behavior, forward_speed, oscillations, posture_offset| ArchetypeSpec {
        behavior,
        forward_speed,
        oscillations,
        posture_offset,
        noise_sigma: NOISE,
    };
    vec![
        arch(Idle, 0.0, vec![], vec![]),
        arch(
            Sniff,
            0.0,
            vec![osc(KeypointGroup::Head, Axis::Z, 0.5, 6.0)],
            offsets(|k, p| if k == 1 { [p[0], p[1], p[2] - 1.0] } else { p }),
        ),
        arch(
            Groom,
            0.0,
            vec![
                osc(KeypointGroup::Head, Axis::Z, 1.0, 4.0),
                osc(KeypointGroup::Forelimbs, Axis::Z, 1.0, 4.0),
            ],
            offsets(|k, p| match k {
                1 => [p[0] - 1.0, p[1], p[2] - 1.5],
                _ if fore.contains(&k) => [p[0] + 1.5, p[1] * 0.5, p[2] + 1.5],
                _ => p,
            }),
        ),
        arch(
            Scrunch,
            0.0,
            vec![],
            offsets(|_, p| [p[0] * 0.8, p[1], p[2]]),
        ),
        arch(
            ActiveCrouch,
            2.0,
            vec![],
            offsets(|_, p| [p[0] * 0.85, p[1], p[2] * 0.7]),
        ),
        arch(
            Rearing,
            0.0,
            vec![],
            offsets(|k, p| {
                if k == 1 || spine.contains(&k) {
                    [p[0], p[1], p[2] * 1.5]
                } else {
                    p
                }
            }),
        ),
        arch(
            Explore,
            5.0,
            vec![osc(KeypointGroup::Head, Axis::Y, 1.0, 1.0)],
            vec![],
        ),
        arch(Locomotion, 10.0, vec![gait(1.0, 3.0)], vec![]),
        arch(FastLocomotion, 25.0, vec![gait(1.5, 5.0)], vec![]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_pose_layout() {
        let p = rest_pose();
        assert_eq!(p.len(), 23);
        assert_eq!(p[0], [0.0, 0.0, 3.0]);
        assert_eq!(p[1], [9.0, 0.0, 3.0]);
        assert_eq!(p[6], [7.5, 0.0, 3.0]);
        assert_eq!(p[22], [-6.0, 0.0, 1.0]);
        // Distinct keypoints.
        for i in 0..23 {
            for j in 0..i {
                assert_ne!(p[i], p[j], "{i} and {j} coincide");
            }
        }
    }

    #[test]
    fn default_table_is_in_code_order() {
        let t = default_archetypes();
        assert_eq!(t.len(), 9);
        for (i, a) in t.iter().enumerate() {
            assert_eq!(a.behavior.code(), i);
            assert!(a.posture_offset.is_empty() || a.posture_offset.len() == 23);
        }
        assert_eq!(t[BehaviorLabel::Locomotion.code()].forward_speed, 10.0);
    }

    #[test]
    fn gait_pairs_are_opposed() {
        assert_eq!(gait_phase(7), gait_phase(16));
        assert_eq!(gait_phase(10), gait_phase(13));
        assert_ne!(gait_phase(7), gait_phase(10));
    }
}
