//! Data preparation and end-to-end runs shared by the CLI, the service and
//! the acceptance suite.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{
    apply_norm, fit_norm_stats, load_sessions, prepare_windows, read_cohort_manifest, split_sessions, CohortSplit,
    GenotypeSet, NormStats, PoseSession, Window, WindowConfig, DEFAULT_FRACTIONS,
};
use crate::synthgen::{generate_cohort, CohortConfig};
use crate::{CoreError, Result};

pub const TRAIN: usize = 0;
pub const VAL: usize = 1;
pub const TEST: usize = 2;
pub const PART_NAMES: [&str; 3] = ["train", "val", "test"];

/// Sessions of one cohort with its declared genotype set.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortData {
    pub genotypes: GenotypeSet,
    pub sessions: Vec<PoseSession>,
}

impl CohortData {
    pub fn synthesize(cfg: &CohortConfig) -> Result<Self> {
        Ok(Self {
            genotypes: cfg.genotype_set()?,
            sessions: generate_cohort(cfg)?,
        })
    }

    /// Loads a cohort directory. Without a `cohort.toml`, the genotype set is
    /// the sessions' labels in WT/HET/HOM order.
    pub fn load(dir: &Path) -> Result<Self> {
        let sessions = load_sessions(dir)?;
        let first = sessions.first().ok_or(CoreError::Empty("cohort directory"))?;
        let genotypes = match read_cohort_manifest(dir)? {
            Some(m) => m.genotype_set()?,
            None => {
                let labels = ["WT", "HET", "HOM"]
                    .iter()
                    .filter(|g| sessions.iter().any(|s| s.genotype == **g))
                    .map(|g| g.to_string())
                    .collect();
                GenotypeSet::new(first.cohort_id.clone(), labels)?
            }
        };
        for s in &sessions {
            if s.cohort_id != genotypes.cohort_id {
                return Err(CoreError::Config(format!(
                    "session '{}' belongs to cohort '{}', directory holds '{}'",
                    s.session_id, s.cohort_id, genotypes.cohort_id
                )));
            }
            s.validate(Some(&genotypes))?;
        }
        Ok(Self { genotypes, sessions })
    }

    pub fn cohort_id(&self) -> &str {
        &self.genotypes.cohort_id
    }

    pub fn split(&self, seed: u64) -> Result<CohortSplit> {
        split_sessions(&self.sessions, DEFAULT_FRACTIONS, seed)
    }
}

/// Loads every cohort directory below `root` (or `root` itself when it holds
/// session files), in sorted directory order.
pub fn load_cohorts(root: &Path) -> Result<Vec<CohortData>> {
    let own = load_sessions(root).map(|s| !s.is_empty()).unwrap_or(false);
    if own {
        return Ok(vec![CohortData::load(root)?]);
    }
    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| CoreError::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let cohorts: Vec<CohortData> = dirs.iter().map(|d| CohortData::load(d)).collect::<Result<_>>()?;
    if cohorts.is_empty() {
        return Err(CoreError::Empty("data directory"));
    }
    Ok(cohorts)
}

/// Windowed, aligned and z-scored splits over one or more cohorts. Norm
/// statistics are fitted on the union of the training splits.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub window: WindowConfig,
    pub cohorts: Vec<GenotypeSet>,
    pub splits: Vec<CohortSplit>,
    pub norm: NormStats,
    pub parts: [Vec<Window>; 3],
}

impl PreparedData {
    pub fn new(cohorts: &[CohortData], splits: &[CohortSplit], window: WindowConfig) -> Result<Self> {
        Self::with_norm(cohorts, splits, window, None)
    }

    /// As [`PreparedData::new`], but with fixed statistics when `norm` is given.
    pub fn with_norm(
        cohorts: &[CohortData],
        splits: &[CohortSplit],
        window: WindowConfig,
        norm: Option<NormStats>,
    ) -> Result<Self> {
        window.validate()?;
        if cohorts.len() != splits.len() || cohorts.is_empty() {
            return Err(CoreError::Config("need one split per cohort".into()));
        }
        let mut parts: [Vec<Window>; 3] = Default::default();
        for (c, split) in cohorts.iter().zip(splits) {
            for (p, out) in parts.iter_mut().enumerate() {
                let sessions: Vec<PoseSession> = split.select(&c.sessions, p).into_iter().cloned().collect();
                for s in &sessions {
                    if s.frames() < window.length {
                        return Err(CoreError::SessionTooShort {
                            session: s.session_id.clone(),
                            frames: s.frames(),
                            window: window.length,
                        });
                    }
                }
                out.extend(prepare_windows(&sessions, &window));
            }
        }
        let norm = match norm {
            Some(n) => n,
            None => fit_norm_stats(&parts[TRAIN])?,
        };
        for part in &mut parts {
            for w in part.iter_mut() {
                if w.channels != norm.mean.len() {
                    return Err(CoreError::KeypointMismatch {
                        session: w.session_id.clone(),
                        expected: norm.mean.len() / 3,
                        found: w.channels / 3,
                    });
                }
                w.data = apply_norm(&w.data, &norm);
            }
        }
        Ok(Self {
            window,
            cohorts: cohorts.iter().map(|c| c.genotypes.clone()).collect(),
            splits: splits.to_vec(),
            norm,
            parts,
        })
    }

    pub fn part(&self, p: usize) -> &[Window] {
        &self.parts[p]
    }

    pub fn inputs(&self, p: usize) -> Vec<&[f32]> {
        self.parts[p].iter().map(|w| w.data.as_slice()).collect()
    }

    pub fn behavior_labels(&self, p: usize) -> Vec<usize> {
        self.parts[p].iter().map(|w| w.behavior.code()).collect()
    }

    pub fn cohort_index(&self, cohort_id: &str) -> Result<usize> {
        self.cohorts
            .iter()
            .position(|c| c.cohort_id == cohort_id)
            .ok_or_else(|| CoreError::Config(format!("unknown cohort '{cohort_id}'")))
    }

    /// Genotype index within the window's own cohort.
    pub fn genotype_label(&self, w: &Window) -> Result<usize> {
        let set = &self.cohorts[self.cohort_index(&w.cohort_id)?];
        set.index_of(&w.genotype).ok_or_else(|| CoreError::UnknownGenotype {
            session: w.session_id.clone(),
            cohort: w.cohort_id.clone(),
            genotype: w.genotype.clone(),
            allowed: set.labels.clone(),
        })
    }

    /// Index in the concatenated cross-cohort genotype classes.
    pub fn unified_label(&self, w: &Window) -> Result<usize> {
        let c = self.cohort_index(&w.cohort_id)?;
        let offset: usize = self.cohorts[..c].iter().map(|s| s.labels.len()).sum();
        Ok(offset + self.genotype_label(w)?)
    }

    pub fn unified_classes(&self) -> Vec<String> {
        crate::dataio::unified_genotype_classes(&self.cohorts)
    }

    /// Windows of one cohort in split `p`.
    pub fn cohort_windows(&self, p: usize, cohort_id: &str) -> Vec<&Window> {
        self.parts[p].iter().filter(|w| w.cohort_id == cohort_id).collect()
    }
}

/// Summary numbers of one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartSummary {
    pub sessions: usize,
    pub windows: usize,
}

pub fn part_summary(data: &PreparedData, p: usize) -> PartSummary {
    let sessions: std::collections::BTreeSet<&str> =
        data.parts[p].iter().map(|w| w.session_id.as_str()).collect();
    PartSummary {
        sessions: sessions.len(),
        windows: data.parts[p].len(),
    }
}
