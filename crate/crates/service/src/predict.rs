use serde::{Deserialize, Serialize};

use pheno_core::dataio::{apply_norm, prepare_windows, BehaviorLabel, PoseSession};
use pheno_core::encoder::{argmax, ClassifierHead, ModelBundle, EMBED_CHUNK};
use pheno_core::{CoreError, Result};

/// A bundle checked to hold everything inference needs.
#[derive(Clone, Debug)]
pub struct InferenceModel {
    pub bundle: ModelBundle,
    pub hash: String,
}

impl InferenceModel {
    pub fn new(bundle: ModelBundle, hash: String) -> Result<Self> {
        let missing = |what: &str| Err(CoreError::Checkpoint(format!("bundle has no {what}")));
        if bundle.behavior_head.is_none() {
            return missing("behavior head");
        }
        if bundle.genotype_head.is_none() {
            return missing("genotype head");
        }
        if bundle.projection.is_none() {
            return missing("projection basis");
        }
        if bundle.centroids.is_none() {
            return missing("cluster centroids");
        }
        match &bundle.norm {
            None => return missing("normalization statistics"),
            Some(n) if n.mean.len() != bundle.encoder.config.channels => {
                return Err(CoreError::Checkpoint(format!(
                    "normalization covers {} channels, encoder expects {}",
                    n.mean.len(),
                    bundle.encoder.config.channels
                )))
            }
            Some(_) => {}
        }
        if bundle.meta.window.length != bundle.encoder.config.window_len {
            return Err(CoreError::Checkpoint("bundle window differs from the encoder's".into()));
        }
        Ok(Self { bundle, hash })
    }

    fn behavior_head(&self) -> &ClassifierHead {
        self.bundle.behavior_head.as_ref().expect("checked in new")
    }

    fn genotype_head(&self) -> &ClassifierHead {
        self.bundle.genotype_head.as_ref().expect("checked in new")
    }

    pub fn behavior_classes(&self) -> &[String] {
        &self.behavior_head().classes
    }

    pub fn genotype_classes(&self) -> &[String] {
        &self.genotype_head().classes
    }

    pub fn k(&self) -> usize {
        self.bundle.centroids.as_ref().map_or(0, |c| c.rows())
    }

    /// Checksum over every parameter the service reads.
    pub fn checksum(&self) -> Result<String> {
        self.bundle.hash()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub start_frame: usize,
    /// Softmax over the behavior classes.
    pub behavior: Vec<f64>,
    pub genotype: Vec<f64>,
    pub behavior_label: String,
    pub genotype_label: String,
    pub x: f32,
    pub y: f32,
    pub cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub start_frame: usize,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    /// Content hash of the uploaded file.
    pub id: String,
    /// The id declared inside the file.
    pub session_id: String,
    pub frames: usize,
    pub behavior_classes: Vec<String>,
    pub genotype_classes: Vec<String>,
    pub windows: Vec<WindowPrediction>,
    pub mean_behavior: Vec<f64>,
    pub mean_genotype: Vec<f64>,
    /// Most frequent per-window prediction; ties go to the lowest class.
    pub majority_behavior: String,
    pub majority_genotype: String,
    pub timeline: Vec<TimelineEntry>,
}

/// Softmax in f64 so each distribution sums to 1 well inside 1e-6.
fn distribution(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = logits.iter().map(|&l| (l as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn mean_rows(rows: impl Iterator<Item = Vec<f64>>, width: usize) -> Vec<f64> {
    let mut acc = vec![0.0; width];
    let mut n = 0usize;
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
        n += 1;
    }
    acc.iter().map(|v| v / n.max(1) as f64).collect()
}

fn majority(labels: impl Iterator<Item = usize>, classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for l in labels {
        counts[l] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    counts.iter().position(|&c| c == best).unwrap_or(0)
}

/// Windows, normalizes, encodes and scores one session.
pub fn predict_session(model: &InferenceModel, session: &PoseSession, id: &str) -> Result<SessionReport> {
    let b = &model.bundle;
    let window = b.meta.window;
    if session.frames() < window.length {
        return Err(CoreError::SessionTooShort {
            session: session.session_id.clone(),
            frames: session.frames(),
            window: window.length,
        });
    }
    let norm = b.norm.as_ref().expect("checked in new");
    if session.channels() != norm.mean.len() {
        return Err(CoreError::KeypointMismatch {
            session: session.session_id.clone(),
            expected: norm.mean.len() / 3,
            found: session.keypoints,
        });
    }
    let windows = prepare_windows(std::slice::from_ref(session), &window);
    let data: Vec<Vec<f32>> = windows.iter().map(|w| apply_norm(&w.data, norm)).collect();
    let refs: Vec<&[f32]> = data.iter().map(|d| d.as_slice()).collect();
    let z = b.encoder.embed(&refs, EMBED_CHUNK)?;

    let (bh, gh) = (model.behavior_head(), model.genotype_head());
    let projection = b.projection.as_ref().expect("checked in new");
    let centroids = b.centroids.as_ref().expect("checked in new");
    let preds = windows
        .iter()
        .zip(&z)
        .map(|(w, e)| {
            let bl = bh.logits(e)?;
            let gl = gh.logits(e)?;
            let [x, y] = projection.transform(e);
            Ok(WindowPrediction {
                start_frame: w.start_frame,
                behavior_label: bh.classes[argmax(&bl)].clone(),
                genotype_label: gh.classes[argmax(&gl)].clone(),
                behavior: distribution(&bl),
                genotype: distribution(&gl),
                x,
                y,
                cluster: nearest_row(centroids, e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let nb = bh.classes.len();
    let ng = gh.classes.len();
    let index = |classes: &[String], l: &str| classes.iter().position(|c| c == l).unwrap_or(0);
    let majority_behavior = bh.classes[majority(preds.iter().map(|p| index(&bh.classes, &p.behavior_label)), nb)].clone();
    let majority_genotype = gh.classes[majority(preds.iter().map(|p| index(&gh.classes, &p.genotype_label)), ng)].clone();
    Ok(SessionReport {
        id: id.to_string(),
        session_id: session.session_id.clone(),
        frames: session.frames(),
        behavior_classes: bh.classes.clone(),
        genotype_classes: gh.classes.clone(),
        mean_behavior: mean_rows(preds.iter().map(|p| p.behavior.clone()), nb),
        mean_genotype: mean_rows(preds.iter().map(|p| p.genotype.clone()), ng),
        majority_behavior,
        majority_genotype,
        timeline: preds
            .iter()
            .map(|p| TimelineEntry {
                start_frame: p.start_frame,
                label: p.behavior_label.clone(),
            })
            .collect(),
        windows: preds,
    })
}

/// Nearest centroid row; ties go to the lowest index.
fn nearest_row(centroids: &pheno_core::numerics::Tensor<f32>, e: &[f32]) -> usize {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d: f64 = centroids
            .row(c)
            .iter()
            .zip(e)
            .map(|(a, b)| {
                let t = (*a - *b) as f64;
                t * t
            })
            .sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Behavior code of a label name, for enrichment rows.
pub fn behavior_code(name: &str) -> Option<usize> {
    BehaviorLabel::ALL.iter().position(|b| b.name() == name)
}
