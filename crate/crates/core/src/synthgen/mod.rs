//! Synthetic cohorts: Markov-chain behavior sequences rendered into skeleton
//! kinematics, with genotype dosage modulating speed, groom/idle preference
//! and groom oscillation frequency.

mod skeleton;

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use skeleton::{
    default_archetypes, gait_phase, rest_pose, ArchetypeSpec, Axis, KeypointGroup, Oscillation,
    SKELETON_KEYPOINTS,
};

use crate::dataio::{
    write_cohort_manifest, write_session, BehaviorLabel, CohortManifest, GenotypeSet, PoseSession,
    DEFAULT_FPS, NUM_BEHAVIORS,
};
use crate::{CoreError, Result};

pub type TransitionMatrix = [[f64; NUM_BEHAVIORS]; NUM_BEHAVIORS];

/// Dosage of the conventional genotype labels.
pub fn default_dosage(label: &str) -> Option<f64> {
    match label {
        "WT" => Some(0.0),
        "HET" => Some(0.5),
        "HOM" => Some(1.0),
        _ => None,
    }
}

/// Genotype effect coefficients: speed scale `1 − a·dosage`, groom/idle
/// log-weight boost `b·dosage`, groom frequency scale `1 + c·dosage`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for EffectCoefficients {
    fn default() -> Self {
        Self {
            a: 0.2,
            b: 0.5,
            c: 0.15,
        }
    }
}

impl EffectCoefficients {
    pub const ZERO: Self = Self {
        a: 0.0,
        b: 0.0,
        c: 0.0,
    };

    pub fn effect(&self, dosage: f64) -> GenotypeEffect {
        GenotypeEffect {
            dosage,
            speed_scale: 1.0 - self.a * dosage,
            stereotypy_boost: self.b * dosage,
            oscillation_scale: 1.0 + self.c * dosage,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenotypeEffect {
    pub dosage: f64,
    pub speed_scale: f64,
    pub stereotypy_boost: f64,
    /// Applies to groom oscillation frequencies.
    pub oscillation_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenotypeSpec {
    pub label: String,
    pub sessions: usize,
    /// Defaults to WT 0, HET 0.5, HOM 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dosage: Option<f64>,
}

impl GenotypeSpec {
    pub fn new(label: &str, sessions: usize) -> Self {
        Self {
            label: label.into(),
            sessions,
            dosage: None,
        }
    }

    pub fn dosage(&self) -> Result<f64> {
        self.dosage
            .or_else(|| default_dosage(&self.label))
            .ok_or_else(|| {
                CoreError::Config(format!(
                    "genotype '{}' needs an explicit dosage",
                    self.label
                ))
            })
    }
}

fn default_frames() -> usize {
    1800
}
fn default_fps() -> u32 {
    DEFAULT_FPS
}
fn default_dwell() -> f64 {
    45.0
}
fn default_blend() -> usize {
    5
}
fn default_turn_sigma() -> f64 {
    0.6
}
fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub cohort_id: String,
    pub genotypes: Vec<GenotypeSpec>,
    pub seed: u64,
    #[serde(default = "default_frames")]
    pub session_frames: usize,
    #[serde(default = "default_fps")]
    pub fps: u32,
    /// Mean bout length in frames; the per-frame stay probability is
    /// `1 − 1/mean_dwell`.
    #[serde(default = "default_dwell")]
    pub mean_dwell: f64,
    /// Log-weights of switch targets; zeros give uniform switching.
    #[serde(default)]
    pub switch_log_weights: [f64; NUM_BEHAVIORS],
    /// Explicit base transition matrix; overrides `mean_dwell` and
    /// `switch_log_weights`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
    /// First behavior of every session; drawn uniformly when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_behavior: Option<BehaviorLabel>,
    #[serde(default = "default_blend")]
    pub blend_frames: usize,
    /// Standard deviation (radians) of the heading change at each bout.
    #[serde(default = "default_turn_sigma")]
    pub turn_sigma: f64,
    /// Uniform scale of the rest pose; a per-background signature.
    #[serde(default = "default_one")]
    pub body_scale: f64,
    #[serde(default)]
    pub effect: EffectCoefficients,
    #[serde(default = "default_archetypes")]
    pub archetypes: Vec<ArchetypeSpec>,
}

impl CohortConfig {
    pub fn new(cohort_id: &str, genotypes: Vec<GenotypeSpec>, seed: u64) -> Self {
        Self {
            cohort_id: cohort_id.into(),
            genotypes,
            seed,
            session_frames: default_frames(),
            fps: DEFAULT_FPS,
            mean_dwell: default_dwell(),
            switch_log_weights: [0.0; NUM_BEHAVIORS],
            transition: None,
            initial_behavior: None,
            blend_frames: default_blend(),
            turn_sigma: default_turn_sigma(),
            body_scale: 1.0,
            effect: EffectCoefficients::default(),
            archetypes: default_archetypes(),
        }
    }

    pub fn genotype_set(&self) -> Result<GenotypeSet> {
        GenotypeSet::new(
            self.cohort_id.clone(),
            self.genotypes.iter().map(|g| g.label.clone()).collect(),
        )
    }

    pub fn total_sessions(&self) -> usize {
        self.genotypes.iter().map(|g| g.sessions).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(format!("cohort '{}': {m}", self.cohort_id)));
        self.genotype_set()?;
        if self.fps == 0 || self.session_frames == 0 {
            return bad("fps and session_frames must be positive".into());
        }
        if !(self.mean_dwell >= 1.0) {
            return bad(format!("mean_dwell must be >= 1, got {}", self.mean_dwell));
        }
        if self.blend_frames == 0 || !(self.turn_sigma >= 0.0) || !(self.body_scale > 0.0) {
            return bad("blend_frames, turn_sigma and body_scale out of range".into());
        }
        let mut max_dosage: f64 = 0.0;
        for g in &self.genotypes {
            if g.sessions == 0 {
                return bad(format!("genotype '{}' has zero sessions", g.label));
            }
            let d = g.dosage()?;
            if !(0.0..=1.0).contains(&d) {
                return bad(format!("dosage of '{}' must lie in [0, 1]", g.label));
            }
            max_dosage = max_dosage.max(d);
        }
        if !(1.0 - self.effect.a * max_dosage > 0.0) {
            return bad(format!("speed scale must stay positive (a = {})", self.effect.a));
        }
        if self.archetypes.len() != NUM_BEHAVIORS {
            return bad(format!("need {NUM_BEHAVIORS} archetypes"));
        }
        let nyquist = self.fps as f64 / 2.0;
        let osc_scale = (1.0 + self.effect.c * max_dosage).max(1.0);
        for (i, a) in self.archetypes.iter().enumerate() {
            if a.behavior.code() != i {
                return bad(format!("archetype {i} is '{}', expected code order", a.behavior));
            }
            if !(a.forward_speed >= 0.0) || !(a.noise_sigma >= 0.0) {
                return bad(format!("archetype '{}': negative speed or noise", a.behavior));
            }
            if !a.posture_offset.is_empty() && a.posture_offset.len() != SKELETON_KEYPOINTS {
                return bad(format!(
                    "archetype '{}': posture_offset needs {SKELETON_KEYPOINTS} entries",
                    a.behavior
                ));
            }
            for o in &a.oscillations {
                let f = if a.behavior == BehaviorLabel::Groom {
                    o.frequency * osc_scale
                } else {
                    o.frequency
                };
                if !(o.amplitude >= 0.0) || !(o.frequency >= 0.0) || f >= nyquist {
                    return bad(format!(
                        "archetype '{}': oscillation needs amplitude >= 0 and frequency below {nyquist} Hz",
                        a.behavior
                    ));
                }
            }
        }
        if let Some(m) = &self.transition {
            if m.len() != NUM_BEHAVIORS || m.iter().any(|r| r.len() != NUM_BEHAVIORS) {
                return bad("transition matrix must be 9x9".into());
            }
            for r in m {
                if r.iter().any(|v| !(*v >= 0.0)) || r.iter().sum::<f64>() <= 0.0 {
                    return bad("transition rows must be non-negative with positive sum".into());
                }
            }
        }
        Ok(())
    }

    /// Base transition matrix before genotype modulation.
    pub fn base_transition(&self) -> TransitionMatrix {
        let mut p = [[0.0; NUM_BEHAVIORS]; NUM_BEHAVIORS];
        if let Some(m) = &self.transition {
            for (i, row) in m.iter().enumerate() {
                let s: f64 = row.iter().sum();
                for (j, v) in row.iter().enumerate() {
                    p[i][j] = v / s;
                }
            }
            return p;
        }
        let w: Vec<f64> = self.switch_log_weights.iter().map(|l| l.exp()).collect();
        let leave = 1.0 / self.mean_dwell;
        for i in 0..NUM_BEHAVIORS {
            let others: f64 = (0..NUM_BEHAVIORS).filter(|&j| j != i).map(|j| w[j]).sum();
            for j in 0..NUM_BEHAVIORS {
                p[i][j] = if i == j {
                    1.0 - leave
                } else {
                    leave * w[j] / others
                };
            }
        }
        p
    }

    /// `P'_ij ∝ P_ij · exp(boost · [j ∈ {groom, idle}])`, rows renormalized.
    pub fn modulated_transition(&self, effect: &GenotypeEffect) -> TransitionMatrix {
        let mut p = self.base_transition();
        let boost = effect.stereotypy_boost.exp();
        for row in p.iter_mut() {
            for j in [BehaviorLabel::Groom.code(), BehaviorLabel::Idle.code()] {
                row[j] *= boost;
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        p
    }
}

/// Default three-cohort layout: 42 (WT/HET/HOM × 14), 80 (WT/HET × 40) and
/// 24 (WT/HET × 12) sessions.
pub fn default_cohorts(seed: u64) -> Vec<CohortConfig> {
    let layout: [(&str, &[(&str, usize)], f64); 3] = [
        ("cntnap2", &[("WT", 14), ("HET", 14), ("HOM", 14)], 1.0),
        ("chd8", &[("WT", 40), ("HET", 40)], 1.08),
        ("fmr1", &[("WT", 12), ("HET", 12)], 0.93),
    ];
    layout
        .iter()
        .enumerate()
        .map(|(i, (id, genotypes, scale))| {
            let mut c = CohortConfig::new(
                id,
                genotypes.iter().map(|(g, n)| GenotypeSpec::new(g, *n)).collect(),
                cohort_seed(seed, i),
            );
            c.body_scale = *scale;
            c
        })
        .collect()
}

/// Seed of the `index`-th cohort derived from a run seed. Kept below 2^63 so
/// it survives TOML's signed integers.
pub fn cohort_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64 + 1)
        & (i64::MAX as u64)
}

/// A multi-cohort synthesis config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub cohorts: Vec<CohortConfig>,
}

impl SynthConfig {
    pub fn default_with_seed(seed: u64) -> Self {
        Self {
            cohorts: default_cohorts(seed),
        }
    }

    /// Re-derives every cohort seed from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        for (i, c) in self.cohorts.iter_mut().enumerate() {
            c.seed = cohort_seed(seed, i);
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        for c in &cfg.cohorts {
            c.validate()?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CoreError::Config(e.to_string()))
    }
}

fn sample_row(row: &[f64; NUM_BEHAVIORS], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left `u` above the cumulative sum: last positive entry.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// First-order Markov chain over the nine behaviors.
pub fn sample_behavior_sequence(
    cfg: &CohortConfig,
    effect: &GenotypeEffect,
    length: usize,
    rng: &mut impl Rng,
) -> Vec<BehaviorLabel> {
    let p = cfg.modulated_transition(effect);
    let mut state = match cfg.initial_behavior {
        Some(b) => b.code(),
        None => rng.random_range(0..NUM_BEHAVIORS),
    };
    let mut out = Vec::with_capacity(length);
    for f in 0..length {
        if f > 0 {
            state = sample_row(&p[state], rng.random::<f64>());
        }
        out.push(BehaviorLabel::from_code(state).expect("code in range"));
    }
    out
}

/// Renders frame coordinates (`frames × 23 × 3`, cm) for a label sequence.
///
/// Archetype parameters are mixed with per-archetype weights that move
/// linearly to the new behavior over `blend_frames` after each switch. The
/// heading changes by `N(0, turn_sigma)` at each switch and blends over the
/// same frames. Oscillation phases accumulate continuously.
pub fn render_kinematics(
    labels: &[BehaviorLabel],
    effect: &GenotypeEffect,
    cfg: &CohortConfig,
    rng: &mut impl Rng,
) -> Vec<f64> {
    const J: usize = SKELETON_KEYPOINTS;
    let rest: Vec<[f64; 3]> = rest_pose()
        .iter()
        .map(|p| p.map(|v| v * cfg.body_scale))
        .collect();
    let fps = cfg.fps as f64;
    let blend = cfg.blend_frames as f64;
    let turn = Normal::new(0.0, cfg.turn_sigma.max(0.0)).expect("valid sigma");
    let unit = Normal::new(0.0, 1.0).expect("valid sigma");
    let groups: Vec<Vec<Vec<usize>>> = cfg
        .archetypes
        .iter()
        .map(|a| a.oscillations.iter().map(|o| o.group.indices()).collect())
        .collect();
    let mut phases: Vec<Vec<f64>> = cfg
        .archetypes
        .iter()
        .map(|a| vec![0.0; a.oscillations.len()])
        .collect();

    let mut weights = [0.0; NUM_BEHAVIORS];
    let mut from = weights;
    let mut switch_at = 0usize;
    let mut heading = 0.0;
    let mut heading_from = 0.0;
    let mut heading_to = 0.0;
    let (mut px, mut py) = (0.0, 0.0);
    let mut out = Vec::with_capacity(labels.len() * J * 3);
    let mut body = vec![[0.0f64; 3]; J];

    for (f, &label) in labels.iter().enumerate() {
        let b = label.code();
        if f == 0 {
            weights = [0.0; NUM_BEHAVIORS];
            weights[b] = 1.0;
        } else if label != labels[f - 1] {
            from = weights;
            switch_at = f;
            heading_from = heading;
            heading_to = heading + turn.sample(rng);
        }
        if f > 0 && f - switch_at < cfg.blend_frames && switch_at > 0 {
            let t = ((f - switch_at + 1) as f64 / blend).min(1.0);
            for k in 0..NUM_BEHAVIORS {
                let target = if k == b { 1.0 } else { 0.0 };
                weights[k] = from[k] + (target - from[k]) * t;
            }
            heading = heading_from + (heading_to - heading_from) * t;
        }

        let mut speed = 0.0;
        let mut noise = 0.0;
        for (k, body_pt) in body.iter_mut().enumerate() {
            *body_pt = rest[k];
        }
        for (a, arch) in cfg.archetypes.iter().enumerate() {
            let w = weights[a];
            let freq_scale = if arch.behavior == BehaviorLabel::Groom {
                effect.oscillation_scale
            } else {
                1.0
            };
            for (o, spec) in arch.oscillations.iter().enumerate() {
                phases[a][o] += TAU * spec.frequency * freq_scale / fps;
                if w == 0.0 {
                    continue;
                }
                for &k in &groups[a][o] {
                    let shift = if spec.alternate { gait_phase(k) } else { 0.0 };
                    body[k][spec.axis.index()] +=
                        w * spec.amplitude * (phases[a][o] + shift).sin();
                }
            }
            if w == 0.0 {
                continue;
            }
            speed += w * arch.forward_speed;
            noise += w * arch.noise_sigma;
            for (k, off) in arch.posture_offset.iter().enumerate() {
                for c in 0..3 {
                    body[k][c] += w * off[c] * cfg.body_scale;
                }
            }
        }

        let (sin, cos) = heading.sin_cos();
        let step = speed * effect.speed_scale / fps;
        px += step * cos;
        py += step * sin;
        for p in &body {
            let x = cos * p[0] - sin * p[1] + px;
            let y = sin * p[0] + cos * p[1] + py;
            for v in [x, y, p[2]] {
                let jitter = if noise > 0.0 {
                    noise * unit.sample(rng)
                } else {
                    0.0
                };
                out.push(((v + jitter) * 1000.0).round() / 1000.0);
            }
        }
    }
    out
}

/// Generator for session `index` of a cohort: the seed selects the key and
/// the index selects the stream, so sessions are independent of order.
pub fn session_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// One session per configured `(genotype, index)`, in genotype order.
pub fn generate_cohort(cfg: &CohortConfig) -> Result<Vec<PoseSession>> {
    cfg.validate()?;
    let mut sessions = Vec::with_capacity(cfg.total_sessions());
    let mut index = 0usize;
    for g in &cfg.genotypes {
        let effect = cfg.effect.effect(g.dosage()?);
        for i in 0..g.sessions {
            let mut rng = session_rng(cfg.seed, index);
            let labels = sample_behavior_sequence(cfg, &effect, cfg.session_frames, &mut rng);
            let coords = render_kinematics(&labels, &effect, cfg, &mut rng);
            sessions.push(PoseSession {
                session_id: format!("{}_{}_{:03}", cfg.cohort_id, g.label, i),
                cohort_id: cfg.cohort_id.clone(),
                genotype: g.label.clone(),
                fps: cfg.fps,
                keypoints: SKELETON_KEYPOINTS,
                coords,
                frame_labels: labels,
            });
            index += 1;
        }
    }
    let set = cfg.genotype_set()?;
    for s in &sessions {
        s.validate(Some(&set))?;
    }
    Ok(sessions)
}

/// Writes a cohort into `dir` (created if needed) with its `cohort.toml`.
pub fn write_cohort(dir: &Path, cfg: &CohortConfig, sessions: &[PoseSession]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    write_cohort_manifest(
        dir,
        &CohortManifest {
            cohort_id: cfg.cohort_id.clone(),
            genotypes: cfg.genotypes.iter().map(|g| g.label.clone()).collect(),
        },
    )?;
    for s in sessions {
        write_session(dir, s)?;
    }
    Ok(())
}

/// Fraction of frames spent in each behavior.
pub fn occupancy(labels: &[BehaviorLabel]) -> [f64; NUM_BEHAVIORS] {
    let mut occ = [0.0; NUM_BEHAVIORS];
    for l in labels {
        occ[l.code()] += 1.0;
    }
    let n = labels.len().max(1) as f64;
    occ.iter_mut().for_each(|v| *v /= n);
    occ
}
