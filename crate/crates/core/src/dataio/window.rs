use serde::{Deserialize, Serialize};

use pheno_numerics::Scalar;

use super::{BehaviorLabel, PoseSession, NUM_BEHAVIORS};
use crate::{CoreError, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Window length `length` and stride `stride`, both in frames. Windows are
/// labeled by frame-majority vote with ties going to the lowest code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub length: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length: 32,
            stride: 16,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride > self.length {
            return Err(CoreError::Config(format!(
                "window stride must satisfy 1 <= stride <= length (stride {}, length {})",
                self.stride, self.length
            )));
        }
        Ok(())
    }

    /// Number of windows in a session of `frames` frames.
    pub fn count(&self, frames: usize) -> usize {
        if frames < self.length {
            0
        } else {
            (frames - self.length) / self.stride + 1
        }
    }
}

/// `length × channels` slice of a session, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub session_id: String,
    pub cohort_id: String,
    pub start_frame: usize,
    pub frames: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub behavior: BehaviorLabel,
    pub genotype: String,
}

/// Most frequent label, ties to the lowest code.
pub fn majority_label(labels: &[BehaviorLabel]) -> BehaviorLabel {
    let mut counts = [0usize; NUM_BEHAVIORS];
    for l in labels {
        counts[l.code()] += 1;
    }
    let mut best = 0;
    for (code, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = code;
        }
    }
    BehaviorLabel::from_code(best).expect("code in range")
}

/// Raw (unaligned) windows at start frames `0, S, 2S, …`.
pub fn extract_windows(session: &PoseSession, cfg: &WindowConfig) -> Vec<Window> {
    let d = session.channels();
    let n = cfg.count(session.frames());
    (0..n)
        .map(|i| {
            let start = i * cfg.stride;
            let end = start + cfg.length;
            Window {
                session_id: session.session_id.clone(),
                cohort_id: session.cohort_id.clone(),
                start_frame: start,
                frames: cfg.length,
                channels: d,
                data: session.coords[start * d..end * d]
                    .iter()
                    .map(|&v| v as f32)
                    .collect(),
                behavior: majority_label(&session.frame_labels[start..end]),
                genotype: session.genotype.clone(),
            }
        })
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Egocentric alignment of one `frames × (keypoints·3)` window.
///
/// Rotates about the vertical axis so the window-mean root→head (keypoint
/// 0 → keypoint 1) heading points along +x, then subtracts the window-median
/// root position. The median is taken per axis in the heading frame, which
/// keeps the result invariant to rotations of the input. A zero mean heading
/// skips the rotation.
pub fn align_egocentric<S: Scalar>(data: &[S], frames: usize, keypoints: usize) -> Vec<S> {
    let d = keypoints * 3;
    debug_assert_eq!(data.len(), frames * d);
    let at = |f: usize, k: usize, c: usize| data[f * d + k * 3 + c].as_f64();

    let (mut hx, mut hy) = (0.0, 0.0);
    if keypoints > 1 {
        for f in 0..frames {
            hx += at(f, 1, 0) - at(f, 0, 0);
            hy += at(f, 1, 1) - at(f, 0, 1);
        }
    }
    let norm = (hx * hx + hy * hy).sqrt();
    let (cos, sin) = if norm > 1e-12 {
        (hx / norm, hy / norm)
    } else {
        (1.0, 0.0)
    };

    // Rotation by −heading.
    let mut rotated = Vec::with_capacity(data.len());
    for f in 0..frames {
        for k in 0..keypoints {
            let (x, y) = (at(f, k, 0), at(f, k, 1));
            rotated.extend([cos * x + sin * y, -sin * x + cos * y, at(f, k, 2)]);
        }
    }
    let center: Vec<f64> = (0..3)
        .map(|c| {
            let mut v: Vec<f64> = (0..frames).map(|f| rotated[f * d + c]).collect();
            median(&mut v)
        })
        .collect();
    rotated
        .iter()
        .enumerate()
        .map(|(i, &v)| S::of(v - center[i % 3]))
        .collect()
}

/// Raw windows of every session, egocentrically aligned.
pub fn prepare_windows(sessions: &[PoseSession], cfg: &WindowConfig) -> Vec<Window> {
    sessions
        .iter()
        .flat_map(|s| {
            let mut ws = extract_windows(s, cfg);
            for w in &mut ws {
                w.data = align_egocentric(&w.data, w.frames, s.keypoints);
            }
            ws
        })
        .collect()
}

/// Per-channel mean and standard deviation fitted on training windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

pub fn fit_norm_stats(train: &[Window]) -> Result<NormStats> {
    let first = train.first().ok_or(CoreError::Empty("training set"))?;
    let d = first.channels;
    let mut sum = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    let mut n = 0usize;
    for w in train {
        for row in w.data.chunks_exact(d) {
            for (c, &v) in row.iter().enumerate() {
                sum[c] += v as f64;
            }
            n += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    for w in train {
        for row in w.data.chunks_exact(d) {
            for (c, &v) in row.iter().enumerate() {
                let dv = v as f64 - mean[c];
                sq[c] += dv * dv;
            }
        }
    }
    let std = sq
        .iter()
        .map(|s| ((s / n as f64).sqrt().max(STD_FLOOR)) as f32)
        .collect();
    Ok(NormStats {
        mean: mean.iter().map(|&m| m as f32).collect(),
        std,
    })
}

/// Z-scores every channel of `data` with `stats`.
pub fn apply_norm(data: &[f32], stats: &NormStats) -> Vec<f32> {
    let d = stats.mean.len();
    data.chunks_exact(d)
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(c, &v)| (v - stats.mean[c]) / stats.std[c])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use BehaviorLabel::*;

    fn session(frames: usize, keypoints: usize) -> PoseSession {
        PoseSession {
            session_id: "s".into(),
            cohort_id: "c".into(),
            genotype: "WT".into(),
            fps: 30,
            keypoints,
            coords: (0..frames * keypoints * 3).map(|i| i as f64).collect(),
            frame_labels: vec![Idle; frames],
        }
    }

    #[test]
    fn window_counts_at_boundaries() {
        let cfg = WindowConfig::default();
        let ws = extract_windows(&session(128, 2), &cfg);
        assert_eq!(ws.len(), 7);
        let starts: Vec<_> = ws.iter().map(|w| w.start_frame).collect();
        assert_eq!(starts, [0, 16, 32, 48, 64, 80, 96]);
        assert_eq!(extract_windows(&session(32, 2), &cfg).len(), 1);
        assert!(extract_windows(&session(31, 2), &cfg).is_empty());
    }

    #[test]
    fn window_config_bounds() {
        assert!(WindowConfig { length: 32, stride: 0 }.validate().is_err());
        assert!(WindowConfig { length: 32, stride: 33 }.validate().is_err());
        assert!(WindowConfig { length: 32, stride: 32 }.validate().is_ok());
    }

    #[test]
    fn majority_cases() {
        assert_eq!(majority_label(&[Idle; 32]), Idle);
        let mut v = vec![Groom; 17];
        v.extend([Idle; 15]);
        assert_eq!(majority_label(&v), Groom);
    }

    #[test]
    fn majority_tie_goes_to_lowest_code() {
        // Brute-force counter: pick the label with the highest count, and
        // among equal counts the first encountered in code order.
        let mut v = vec![Sniff; 16];
        v.extend([Idle; 16]);
        let mut best = (0usize, usize::MAX);
        for b in BehaviorLabel::ALL {
            let c = v.iter().filter(|&&l| l == b).count();
            if c > best.0 {
                best = (c, b.code());
            }
        }
        assert_eq!(best.1, Idle.code());
        assert_eq!(majority_label(&v), Idle);
    }

    #[test]
    fn stationary_animal_is_translated_to_origin() {
        let frames = 8;
        let j = 3;
        let mut data: Vec<f64> = Vec::new();
        for _ in 0..frames {
            data.extend([50.0, 30.0, 3.0, 52.0, 30.0, 3.0, 49.0, 31.0, 1.0]);
        }
        let out = align_egocentric(&data, frames, j);
        for f in 0..frames {
            let o = &out[f * 9..f * 9 + 9];
            assert!(o[0].abs() < 1e-12 && o[1].abs() < 1e-12 && o[2].abs() < 1e-12);
            assert!((o[3] - 2.0).abs() < 1e-12 && o[4].abs() < 1e-12);
            assert!((o[6] + 1.0).abs() < 1e-12 && (o[7] - 1.0).abs() < 1e-12);
            assert!((o[8] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotated_posture_aligns_to_same_output() {
        let frames = 6;
        let j = 4;
        let base: Vec<f64> = (0..frames * j * 3)
            .map(|i| ((i * 37 % 11) as f64) * 0.7 + (i % 3) as f64)
            .collect();
        let rotated: Vec<f64> = base
            .chunks_exact(3)
            .flat_map(|p| [-p[1] + 5.0, p[0] - 2.0, p[2]])
            .collect();
        let a = align_egocentric(&base, frames, j);
        let b = align_egocentric(&rotated, frames, j);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn coincident_keypoints_only_center() {
        let data = vec![4.0f64; 5 * 2 * 3];
        let out = align_egocentric(&data, 5, 2);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    fn win(data: Vec<f32>, channels: usize) -> Window {
        Window {
            session_id: "s".into(),
            cohort_id: "c".into(),
            start_frame: 0,
            frames: data.len() / channels,
            channels,
            data,
            behavior: Idle,
            genotype: "WT".into(),
        }
    }

    #[test]
    fn norm_stats_cases() {
        let stats = NormStats {
            mean: vec![5.0],
            std: vec![2.0],
        };
        assert_eq!(apply_norm(&[9.0], &stats), vec![2.0]);

        let w = win(vec![3.0, 1.0, 3.0, 2.0, 3.0, 6.0], 2);
        let s = fit_norm_stats(std::slice::from_ref(&w)).unwrap();
        assert_eq!(s.std[0] as f64, STD_FLOOR as f32 as f64);
        let n = apply_norm(&w.data, &s);
        assert_eq!(n[0], 0.0);
        let ch: Vec<f64> = n.iter().skip(1).step_by(2).map(|&v| v as f64).collect();
        let mean = ch.iter().sum::<f64>() / 3.0;
        let sd = (ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((sd - 1.0).abs() < 1e-6);

        assert!(fit_norm_stats(&[]).is_err());
    }
}
