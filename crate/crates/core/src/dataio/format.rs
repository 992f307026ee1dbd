//! Canonical pose session text format.
//!
//! ```text
//! #session=<id>
//! #cohort=<id>
//! #genotype=<label>
//! #fps=<int>
//! #keypoints=<J>
//! <behavior>,<x0>,<y0>,<z0>,...,<x{J-1}>,<y{J-1}>,<z{J-1}>
//! ```
//!
//! Coordinates are written with three decimals (10 µm resolution for cm
//! units). A cohort directory may hold a `cohort.toml` declaring the genotype
//! set; without it, genotypes are checked against WT/HET/HOM.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BehaviorLabel, GenotypeSet, PoseSession, DEFAULT_FPS};
use crate::fsutil::atomic_write;
use crate::{CoreError, Result};

pub const SESSION_EXT: &str = "pose";
pub const COHORT_MANIFEST: &str = "cohort.toml";
const DEFAULT_GENOTYPES: [&str; 3] = ["WT", "HET", "HOM"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub cohort_id: String,
    pub genotypes: Vec<String>,
}

impl CohortManifest {
    pub fn genotype_set(&self) -> Result<GenotypeSet> {
        GenotypeSet::new(self.cohort_id.clone(), self.genotypes.clone())
    }
}

pub fn write_cohort_manifest(dir: &Path, manifest: &CohortManifest) -> Result<()> {
    let text = toml::to_string(manifest).map_err(|e| CoreError::Config(e.to_string()))?;
    atomic_write(&dir.join(COHORT_MANIFEST), text.as_bytes())
}

pub fn read_cohort_manifest(dir: &Path) -> Result<Option<CohortManifest>> {
    let path = dir.join(COHORT_MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    toml::from_str(&text).map(Some).map_err(|e| CoreError::Parse {
        path,
        line: 0,
        msg: e.to_string(),
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> CoreError {
    CoreError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses one session file. `path` is only used in error messages.
pub fn parse_session(text: &str, path: &Path) -> Result<PoseSession> {
    let mut session_id = None;
    let mut cohort_id = None;
    let mut genotype = None;
    let mut fps = DEFAULT_FPS;
    let mut keypoints = None;
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    let mut coord_frames = 0usize;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let (key, value) = header
                .split_once('=')
                .ok_or_else(|| parse_err(path, lineno, format!("malformed header '{line}'")))?;
            let value = value.trim();
            match key.trim() {
                "session" => session_id = Some(value.to_string()),
                "cohort" => cohort_id = Some(value.to_string()),
                "genotype" => genotype = Some(value.to_string()),
                "fps" => {
                    fps = value
                        .parse::<u32>()
                        .ok()
                        .filter(|&f| f > 0)
                        .ok_or_else(|| parse_err(path, lineno, format!("bad fps '{value}'")))?
                }
                "keypoints" => {
                    keypoints = Some(
                        value
                            .parse::<usize>()
                            .ok()
                            .filter(|&k| k > 0)
                            .ok_or_else(|| {
                                parse_err(path, lineno, format!("bad keypoint count '{value}'"))
                            })?,
                    )
                }
                other => return Err(parse_err(path, lineno, format!("unknown header '{other}'"))),
            }
            continue;
        }

        let session = session_id
            .clone()
            .ok_or_else(|| parse_err(path, lineno, "frame row before #session header"))?;
        let j = keypoints
            .ok_or_else(|| parse_err(path, lineno, "frame row before #keypoints header"))?;
        let fields: Vec<&str> = line.split(',').collect();
        let frame = coord_frames;
        let values = if fields.len() == 3 * j + 1 {
            let label = fields[0].trim();
            let b = label
                .parse::<BehaviorLabel>()
                .map_err(|_| CoreError::UnknownBehavior {
                    session: session.clone(),
                    frame,
                    label: label.to_string(),
                })?;
            labels.push(b);
            &fields[1..]
        } else if fields.len() == 3 * j {
            // Unlabeled frame: counted so the mismatch is reported below.
            &fields[..]
        } else {
            return Err(parse_err(
                path,
                lineno,
                format!(
                    "expected {} fields (label + {} coordinates), found {}",
                    3 * j + 1,
                    3 * j,
                    fields.len()
                ),
            ));
        };
        for v in values {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad coordinate '{v}'")))?;
            if !x.is_finite() {
                return Err(CoreError::NonFinite { session, frame });
            }
            coords.push(x);
        }
        coord_frames += 1;
    }

    let missing = |h: &str| parse_err(path, 0, format!("missing #{h} header"));
    let session = PoseSession {
        session_id: session_id.ok_or_else(|| missing("session"))?,
        cohort_id: cohort_id.ok_or_else(|| missing("cohort"))?,
        genotype: genotype.ok_or_else(|| missing("genotype"))?,
        fps,
        keypoints: keypoints.ok_or_else(|| missing("keypoints"))?,
        coords,
        frame_labels: labels,
    };
    if coord_frames != session.frame_labels.len() {
        return Err(CoreError::FrameCountMismatch {
            session: session.session_id,
            coords: coord_frames,
            labels: session.frame_labels.len(),
        });
    }
    session.validate(None)?;
    Ok(session)
}

/// Canonical text form; parsing it and formatting again is byte-identical.
pub fn format_session(s: &PoseSession) -> String {
    let d = s.channels();
    let mut out = String::with_capacity(s.frames() * d * 9 + 128);
    let _ = writeln!(out, "#session={}", s.session_id);
    let _ = writeln!(out, "#cohort={}", s.cohort_id);
    let _ = writeln!(out, "#genotype={}", s.genotype);
    let _ = writeln!(out, "#fps={}", s.fps);
    let _ = writeln!(out, "#keypoints={}", s.keypoints);
    for (f, label) in s.frame_labels.iter().enumerate() {
        out.push_str(label.name());
        for v in s.frame(f) {
            // Avoid "-0.000" so canonical output has one spelling of zero.
            let v = if v.abs() < 5e-4 { 0.0 } else { *v };
            let _ = write!(out, ",{v:.3}");
        }
        out.push('\n');
    }
    out
}

pub fn write_session(dir: &Path, s: &PoseSession) -> Result<PathBuf> {
    let path = dir.join(format!("{}.{SESSION_EXT}", s.session_id));
    atomic_write(&path, format_session(s).as_bytes())?;
    Ok(path)
}

/// Loads every `*.pose` file in `dir`, validated and ordered by session id.
pub fn load_sessions(dir: &Path) -> Result<Vec<PoseSession>> {
    let manifest = read_cohort_manifest(dir)?;
    let entries = fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CoreError::io(dir, e))?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()) == Some(SESSION_EXT) {
            paths.push(p);
        }
    }
    paths.sort();

    let mut sessions = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| CoreError::io(p, e))?;
        let s = parse_session(&text, p)?;
        let set = match &manifest {
            Some(m) => {
                if m.cohort_id != s.cohort_id {
                    return Err(parse_err(
                        p,
                        0,
                        format!(
                            "session cohort '{}' differs from directory cohort '{}'",
                            s.cohort_id, m.cohort_id
                        ),
                    ));
                }
                m.genotype_set()?
            }
            None => GenotypeSet {
                cohort_id: s.cohort_id.clone(),
                labels: DEFAULT_GENOTYPES.iter().map(|g| g.to_string()).collect(),
            },
        };
        s.validate(Some(&set))?;
        sessions.push(s);
    }
    sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    Ok(sessions)
}
