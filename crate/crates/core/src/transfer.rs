//! Cross-cohort protocols: zero-shot behavior transfer, few-label genotype
//! transfer through a small MLP, and the report grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pheno_numerics::{adam_step, AdamConfig, AdamState, Graph, ParamStore, Tensor, Var};

use crate::dataio::largest_remainder;
use crate::encoder::{argmax, ClassifierHead, EncoderModel, EMBED_CHUNK};
use crate::evaluation::accuracy;
use crate::{CoreError, Result};

pub const DEFAULT_LABEL_FRAC: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    ZeroShotBehavior,
    FewLabelGenotype,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub source: String,
    pub target: String,
    pub protocol: Protocol,
    pub accuracy: f64,
    pub chance: f64,
    pub windows: usize,
    /// Sessions used to fit the few-label head (empty for zero-shot).
    #[serde(default)]
    pub train_sessions: Vec<String>,
    #[serde(default)]
    pub eval_sessions: Vec<String>,
    pub config: serde_json::Value,
}

/// Applies a source encoder and behavior head to target windows. Neither
/// model is modified; the checksums are compared to prove it.
pub fn zero_shot_behavior(
    encoder: &EncoderModel,
    head: &ClassifierHead,
    windows: &[&[f32]],
    labels: &[usize],
) -> Result<f64> {
    let before = (encoder.checksum(), head.params.checksum());
    let z = encoder.embed(windows, EMBED_CHUNK)?;
    let preds = z
        .iter()
        .map(|e| head.logits(e).map(|l| argmax(&l)))
        .collect::<Result<Vec<_>>>()?;
    let after = (encoder.checksum(), head.params.checksum());
    if before != after {
        return Err(CoreError::Checkpoint("zero-shot transfer modified the model".into()));
    }
    accuracy(&preds, labels)
}

/// Session-level selection of `frac` of the target sessions for training,
/// stratified by genotype so every genotype appears in both parts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewLabelSplit {
    pub train: Vec<String>,
    pub eval: Vec<String>,
}

/// `sessions` holds `(session_id, genotype)` pairs.
pub fn few_label_split(sessions: &[(String, String)], frac: f64, seed: u64) -> Result<FewLabelSplit> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(CoreError::Config(format!("label fraction {frac} outside (0, 1)")));
    }
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, g) in sessions {
        groups.entry(g.as_str()).or_default().push(id.as_str());
    }
    let n = sessions.len();
    let total = largest_remainder(n, &[frac, 1.0 - frac])[0];
    if total < groups.len() || n - total < groups.len() {
        return Err(CoreError::TooFewSessions {
            needed: groups.len() * 2,
            got: n,
        });
    }
    // Per-genotype quotas proportional to group size, at least one session on
    // each side, summing to `total`.
    let sizes: Vec<usize> = groups.values().map(|v| v.len()).collect();
    if sizes.iter().any(|&s| s < 2) {
        return Err(CoreError::TooFewSessions {
            needed: groups.len() * 2,
            got: n,
        });
    }
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / n as f64).collect();
    let mut quota = largest_remainder(total, &weights);
    for (q, &s) in quota.iter_mut().zip(&sizes) {
        *q = (*q).clamp(1, s - 1);
    }
    // Clamping can move the sum; rebalance on the largest groups first.
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    while quota.iter().sum::<usize>() > total {
        let i = *order.iter().find(|&&i| quota[i] > 1).expect("total ≥ group count");
        quota[i] -= 1;
    }
    while quota.iter().sum::<usize>() < total {
        let i = *order.iter().find(|&&i| quota[i] < sizes[i] - 1).expect("room below n − groups");
        quota[i] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (ids, &q) in groups.values().zip(&quota) {
        let mut ids: Vec<&str> = ids.clone();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        train.extend(ids[..q].iter().map(|s| s.to_string()));
        eval.extend(ids[q..].iter().map(|s| s.to_string()));
    }
    train.sort();
    eval.sort();
    Ok(FewLabelSplit { train, eval })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Fraction of the training sessions held out for early stopping.
    pub holdout_frac: f64,
    /// Epochs without a held-out loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 1e-3,
            max_epochs: 200,
            holdout_frac: 0.2,
            patience: 20,
            seed: 0,
        }
    }
}

/// `dim → hidden` with GELU, then `hidden → C`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead {
    /// `w1` `hidden×dim`, `b1` `1×hidden`, `w2` `C×hidden`, `b2` `1×C`.
    pub params: ParamStore,
    pub classes: usize,
}

impl MlpHead {
    pub fn init(dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.push("w1", crate::encoder::xavier(&mut rng, hidden, dim));
        params.push("b1", Tensor::zeros(&[1, hidden]));
        params.push("w2", crate::encoder::xavier(&mut rng, classes, hidden));
        params.push("b2", Tensor::zeros(&[1, classes]));
        Self { params, classes }
    }

    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let w1t = g.transpose(vars[0]);
        let h = g.matmul(x, w1t)?;
        let h = g.add(h, vars[1])?;
        let h = g.gelu(h);
        let w2t = g.transpose(vars[2]);
        let o = g.matmul(h, w2t)?;
        Ok(g.add(o, vars[3])?)
    }

    fn loss(&self, x: &Tensor<f32>, y: &[usize], trainable: bool) -> Result<(f32, Option<Vec<Tensor<f32>>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = (0..4)
            .map(|i| {
                if trainable {
                    g.param(self.params.shared(i))
                } else {
                    g.constant_shared(self.params.shared(i))
                }
            })
            .collect();
        let xv = g.constant(x.clone());
        let logits = self.forward(&mut g, &vars, xv)?;
        let loss = g.cross_entropy(logits, y)?;
        let value = g.value(loss).data()[0];
        if !trainable {
            return Ok((value, None));
        }
        let mut grads = g.backward(loss)?;
        let gs = vars
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, Some(gs)))
    }

    pub fn predict(&self, x: &Tensor<f32>) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = (0..4).map(|i| g.constant_shared(self.params.shared(i))).collect();
        let xv = g.constant(x.clone());
        let logits = self.forward(&mut g, &vars, xv)?;
        let t = g.value(logits);
        Ok((0..t.rows()).map(|r| argmax(t.row(r))).collect())
    }
}

fn stack(rows: &[&[f32]]) -> Result<Tensor<f32>> {
    let dim = rows.first().ok_or(CoreError::Empty("feature set"))?.len();
    let mut data = Vec::with_capacity(rows.len() * dim);
    rows.iter().for_each(|r| data.extend_from_slice(r));
    Ok(Tensor::matrix(rows.len(), dim, data)?)
}

/// Full-batch Adam on `train`, keeping the parameters with the lowest loss on
/// `holdout`.
pub fn fit_mlp(
    train: (&[&[f32]], &[usize]),
    holdout: (&[&[f32]], &[usize]),
    classes: usize,
    cfg: &MlpConfig,
) -> Result<MlpHead> {
    let x = stack(train.0)?;
    let xh = stack(holdout.0)?;
    let mut mlp = MlpHead::init(x.cols(), cfg.hidden, classes, cfg.seed);
    let mut state = AdamState::new(&mlp.params, AdamConfig::default());
    let mut best = (f32::INFINITY, mlp.params.clone());
    let mut bad = 0usize;
    for epoch in 0..cfg.max_epochs {
        let (value, grads) = mlp.loss(&x, train.1, true)?;
        if !value.is_finite() {
            return Err(CoreError::NonFiniteLoss { epoch, step: 0 });
        }
        adam_step(&mut mlp.params, &grads.expect("trainable pass"), &mut state, cfg.lr)?;
        let (held, _) = mlp.loss(&xh, holdout.1, false)?;
        if held < best.0 {
            best = (held, mlp.params.clone());
            bad = 0;
        } else {
            bad += 1;
            if bad >= cfg.patience {
                break;
            }
        }
    }
    mlp.params = best.1;
    Ok(mlp)
}

/// One target window for the few-label protocol.
#[derive(Clone, Copy, Debug)]
pub struct TargetWindow<'a> {
    pub session_id: &'a str,
    pub genotype: usize,
    pub data: &'a [f32],
}

/// Embeds every target window with the frozen source encoder, trains an MLP
/// on the windows of `frac` of the sessions and scores the rest.
pub fn few_label_genotype(
    encoder: &EncoderModel,
    target: &[TargetWindow<'_>],
    genotype_names: &[String],
    frac: f64,
    cfg: &MlpConfig,
) -> Result<(f64, FewLabelSplit)> {
    let mut sessions: BTreeMap<&str, usize> = BTreeMap::new();
    for w in target {
        sessions.insert(w.session_id, w.genotype);
    }
    let pairs: Vec<(String, String)> = sessions
        .iter()
        .map(|(id, &g)| (id.to_string(), genotype_names[g].clone()))
        .collect();
    let split = few_label_split(&pairs, frac, cfg.seed)?;
    // Held-out slice for early stopping, taken from the training sessions.
    let train_pairs: Vec<(String, String)> = pairs
        .iter()
        .filter(|(id, _)| split.train.binary_search(id).is_ok())
        .cloned()
        .collect();
    let n_hold = largest_remainder(train_pairs.len(), &[cfg.holdout_frac, 1.0 - cfg.holdout_frac])[0]
        .clamp(1, train_pairs.len().saturating_sub(1).max(1));
    let mut ids: Vec<&String> = train_pairs.iter().map(|(id, _)| id).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
    let hold: Vec<&String> = if train_pairs.len() > 1 { ids[..n_hold].to_vec() } else { Vec::new() };

    let before = encoder.checksum();
    let data: Vec<&[f32]> = target.iter().map(|w| w.data).collect();
    let z = encoder.embed(&data, EMBED_CHUNK)?;
    let mut fit = (Vec::new(), Vec::new());
    let mut held = (Vec::new(), Vec::new());
    let mut eval = (Vec::new(), Vec::new());
    for (w, e) in target.iter().zip(&z) {
        let id = w.session_id.to_string();
        let dst = if split.eval.binary_search(&id).is_ok() {
            &mut eval
        } else if hold.contains(&&id) {
            &mut held
        } else {
            &mut fit
        };
        dst.0.push(e.as_slice());
        dst.1.push(w.genotype);
    }
    if held.0.is_empty() {
        held = fit.clone();
    }
    let mlp = fit_mlp((&fit.0, &fit.1), (&held.0, &held.1), genotype_names.len(), cfg)?;
    let preds = mlp.predict(&stack(&eval.0)?)?;
    if encoder.checksum() != before {
        return Err(CoreError::Checkpoint("few-label transfer modified the encoder".into()));
    }
    Ok((accuracy(&preds, &eval.1)?, split))
}

/// Source-by-target accuracy table; the diagonal is marked with `*`.
pub fn format_grid(reports: &[TransferReport], cohorts: &[String]) -> String {
    let mut out = String::new();
    for protocol in [Protocol::ZeroShotBehavior, Protocol::FewLabelGenotype] {
        let cells: Vec<&TransferReport> = reports.iter().filter(|r| r.protocol == protocol).collect();
        if cells.is_empty() {
            continue;
        }
        let name = match protocol {
            Protocol::ZeroShotBehavior => "zero-shot-behavior",
            Protocol::FewLabelGenotype => "few-label-genotype",
        };
        let _ = writeln!(out, "# {name} (rows: source, columns: target, * = same cohort)");
        let _ = write!(out, "{:<12}", "source");
        for t in cohorts {
            let _ = write!(out, " {t:>10}");
        }
        out.push('\n');
        for s in cohorts {
            let _ = write!(out, "{s:<12}");
            for t in cohorts {
                match cells.iter().find(|r| &r.source == s && &r.target == t) {
                    Some(r) => {
                        let mark = if s == t { "*" } else { " " };
                        let _ = write!(out, " {:>9.4}{mark}", r.accuracy);
                    }
                    None => {
                        let _ = write!(out, " {:>10}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, HeadTask};

    fn pairs(counts: &[(&str, usize)]) -> Vec<(String, String)> {
        counts
            .iter()
            .flat_map(|(g, n)| (0..*n).map(move |i| (format!("{g}_{i:02}"), g.to_string())))
            .collect()
    }

    #[test]
    fn ten_sessions_give_three_and_seven() {
        let p = pairs(&[("WT", 5), ("HET", 5)]);
        let s = few_label_split(&p, 0.3, 1).unwrap();
        assert_eq!((s.train.len(), s.eval.len()), (3, 7));
        for g in ["WT", "HET"] {
            assert!(s.train.iter().any(|id| id.starts_with(g)));
            assert!(s.eval.iter().any(|id| id.starts_with(g)));
        }
    }

    #[test]
    fn few_label_split_errors_when_impossible() {
        assert!(few_label_split(&pairs(&[("WT", 1), ("HET", 5)]), 0.3, 0).is_err());
        assert!(few_label_split(&pairs(&[("WT", 2), ("HET", 2)]), 0.1, 0).is_err());
        assert!(few_label_split(&pairs(&[("WT", 5)]), 1.0, 0).is_err());
    }

    #[test]
    fn zero_shot_never_changes_parameters() {
        let c = EncoderConfig {
            d_model: 8,
            n_blocks: 1,
            n_heads: 2,
            ffn_width: 16,
            patch_len: 4,
            window_len: 8,
            channels: 2,
            dropout: 0.0,
        };
        let enc = EncoderModel::init(c, 0).unwrap();
        let head = ClassifierHead::init(HeadTask::Behavior, crate::dataio::BehaviorLabel::names(), 8, 0).unwrap();
        let w: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32 * 0.1; 16]).collect();
        let refs: Vec<&[f32]> = w.iter().map(|v| v.as_slice()).collect();
        let (ce, ch) = (enc.checksum(), head.params.checksum());
        let acc = zero_shot_behavior(&enc, &head, &refs, &[0, 1, 2, 3, 4]).unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert_eq!((enc.checksum(), head.params.checksum()), (ce, ch));
    }

    #[test]
    fn mlp_learns_separable_embeddings() {
        let rows: Vec<Vec<f32>> = (0..40)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![s, s * 0.5, (i as f32).sin() * 0.1]
            })
            .collect();
        let y: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let cfg = MlpConfig {
            lr: 1e-2,
            ..MlpConfig::default()
        };
        let mlp = fit_mlp((&refs, &y), (&refs, &y), 2, &cfg).unwrap();
        assert_eq!(mlp.predict(&stack(&refs).unwrap()).unwrap(), y);
    }

    #[test]
    fn grid_marks_the_diagonal() {
        let r = |s: &str, t: &str, a: f64| TransferReport {
            source: s.into(),
            target: t.into(),
            protocol: Protocol::ZeroShotBehavior,
            accuracy: a,
            chance: 1.0 / 9.0,
            windows: 1,
            train_sessions: vec![],
            eval_sessions: vec![],
            config: serde_json::Value::Null,
        };
        let text = format_grid(&[r("a", "a", 0.9), r("a", "b", 0.5)], &["a".into(), "b".into()]);
        assert!(text.contains("0.9000*"));
        assert!(text.contains("0.5000 "));
        assert!(text.lines().any(|l| l.starts_with('b') && l.contains('-')));
    }
}
