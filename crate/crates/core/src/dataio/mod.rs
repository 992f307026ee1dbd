//! Pose recordings: types, the canonical text format, windowing, alignment,
//! normalization, and session-level splits.

mod format;
mod split;
mod window;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use format::{
    format_session, load_sessions, parse_session, read_cohort_manifest, write_cohort_manifest,
    write_session, CohortManifest, SESSION_EXT,
};
pub use split::{
    format_split_manifest, largest_remainder, parse_split_manifest, read_split_manifest, split_ids,
    split_sessions, write_split_manifest, CohortSplit, DEFAULT_FRACTIONS,
};
pub use window::{
    align_egocentric, apply_norm, extract_windows, fit_norm_stats, majority_label,
    prepare_windows, NormStats, Window, WindowConfig, STD_FLOOR,
};

/// Default skeleton size.
pub const DEFAULT_KEYPOINTS: usize = 23;
pub const DEFAULT_FPS: u32 = 30;
pub const NUM_BEHAVIORS: usize = 9;

/// The nine annotated behaviors; integer codes follow declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorLabel {
    Idle = 0,
    Sniff = 1,
    Groom = 2,
    Scrunch = 3,
    ActiveCrouch = 4,
    Rearing = 5,
    Explore = 6,
    Locomotion = 7,
    FastLocomotion = 8,
}

impl BehaviorLabel {
    pub const ALL: [BehaviorLabel; NUM_BEHAVIORS] = [
        Self::Idle,
        Self::Sniff,
        Self::Groom,
        Self::Scrunch,
        Self::ActiveCrouch,
        Self::Rearing,
        Self::Explore,
        Self::Locomotion,
        Self::FastLocomotion,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Idle => "idle",
            Self::Sniff => "sniff",
            Self::Groom => "groom",
            Self::Scrunch => "scrunch",
            Self::ActiveCrouch => "active_crouch",
            Self::Rearing => "rearing",
            Self::Explore => "explore",
            Self::Locomotion => "locomotion",
            Self::FastLocomotion => "fast_locomotion",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|b| b.name().to_string()).collect()
    }
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BehaviorLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown behavior label '{s}'"))
    }
}

/// Ordered genotype labels of one cohort.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeSet {
    pub cohort_id: String,
    pub labels: Vec<String>,
}

impl GenotypeSet {
    pub fn new(cohort_id: impl Into<String>, labels: Vec<String>) -> crate::Result<Self> {
        let set = Self {
            cohort_id: cohort_id.into(),
            labels,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(2..=3).contains(&self.labels.len()) {
            return Err(crate::CoreError::Config(format!(
                "cohort '{}' must declare 2 or 3 genotypes, got {}",
                self.cohort_id,
                self.labels.len()
            )));
        }
        Ok(())
    }

    pub fn index_of(&self, genotype: &str) -> Option<usize> {
        self.labels.iter().position(|g| g == genotype)
    }

    /// Labels of the cross-cohort task, e.g. `cntnap2-WT`.
    pub fn unified_labels(&self) -> Vec<String> {
        self.labels
            .iter()
            .map(|g| unified_label(&self.cohort_id, g))
            .collect()
    }
}

/// Class name in the unified multi-cohort genotype task.
pub fn unified_label(cohort_id: &str, genotype: &str) -> String {
    format!("{cohort_id}-{genotype}")
}

/// Concatenation of every cohort's genotype labels, in cohort order.
pub fn unified_genotype_classes(sets: &[GenotypeSet]) -> Vec<String> {
    sets.iter().flat_map(|s| s.unified_labels()).collect()
}

/// One recording.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSession {
    pub session_id: String,
    pub cohort_id: String,
    pub genotype: String,
    pub fps: u32,
    pub keypoints: usize,
    /// Row-major `frames × keypoints × 3`, in cm.
    pub coords: Vec<f64>,
    pub frame_labels: Vec<BehaviorLabel>,
}

impl PoseSession {
    pub fn frames(&self) -> usize {
        self.frame_labels.len()
    }

    /// Channels per frame (`keypoints × 3`).
    pub fn channels(&self) -> usize {
        self.keypoints * 3
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let d = self.channels();
        &self.coords[f * d..(f + 1) * d]
    }

    /// Checks frame counts, finiteness, and (when given) genotype membership.
    pub fn validate(&self, genotypes: Option<&GenotypeSet>) -> crate::Result<()> {
        let d = self.channels();
        if self.keypoints == 0 || d == 0 || self.coords.len() % d != 0 {
            return Err(crate::CoreError::KeypointMismatch {
                session: self.session_id.clone(),
                expected: self.keypoints,
                found: if d == 0 { 0 } else { self.coords.len() / d },
            });
        }
        let coord_frames = self.coords.len() / d;
        if coord_frames != self.frame_labels.len() {
            return Err(crate::CoreError::FrameCountMismatch {
                session: self.session_id.clone(),
                coords: coord_frames,
                labels: self.frame_labels.len(),
            });
        }
        if coord_frames == 0 {
            return Err(crate::CoreError::Empty("session"));
        }
        if let Some(i) = self.coords.iter().position(|v| !v.is_finite()) {
            return Err(crate::CoreError::NonFinite {
                session: self.session_id.clone(),
                frame: i / d,
            });
        }
        if let Some(set) = genotypes {
            if set.index_of(&self.genotype).is_none() {
                return Err(crate::CoreError::UnknownGenotype {
                    session: self.session_id.clone(),
                    cohort: set.cohort_id.clone(),
                    genotype: self.genotype.clone(),
                    allowed: set.labels.clone(),
                });
            }
        }
        Ok(())
    }
}
