//! Losses, plateau scheduling, early stopping and the two training stages:
//! stage 1 fits a behavior head on a frozen encoder, stage 2 fine-tunes the
//! encoder jointly with a fresh genotype head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pheno_numerics::{adam_step, AdamConfig, AdamState, Graph, ParamStore, Tensor, Var};

use crate::encoder::{argmax, ClassifierHead, Dropout, EncoderModel, EMBED_CHUNK};
use crate::{CoreError, Result};

/// Mean `−log softmax(logits)[label]` over rows, with log-sum-exp
/// stabilization.
pub fn cross_entropy(logits: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
    let (n, c) = (logits.rows(), logits.cols());
    if n != labels.len() || n == 0 {
        return Err(CoreError::Config(format!("{n} logit rows but {} labels", labels.len())));
    }
    let mut total = 0.0f64;
    for (r, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(CoreError::Config(format!("label {l} outside 0..{c}")));
        }
        let row = logits.row(r);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
        let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
        total += lse - row[l] as f64;
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: u8,
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    /// Minimum absolute val-loss decrease that counts as improvement.
    pub plateau_threshold: f64,
    /// Stage 2 only: stop after this many epochs without a val-accuracy gain.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn stage1(seed: u64) -> Self {
        Self {
            stage: 1,
            lr: 1e-3,
            max_epochs: 50,
            batch_size: 64,
            plateau_factor: 0.5,
            plateau_patience: 5,
            plateau_threshold: 1e-4,
            early_stop_patience: 5,
            seed,
        }
    }

    pub fn stage2(seed: u64) -> Self {
        Self {
            stage: 2,
            lr: 1e-5,
            max_epochs: 10,
            ..Self::stage1(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if !matches!(self.stage, 1 | 2) {
            return bad("stage must be 1 or 2");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch count must be at least 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return bad("plateau factor must be in (0, 1]");
        }
        Ok(())
    }
}

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs fail to lower the monitored loss by more than `threshold`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, threshold: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            threshold,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_threshold)
    }

    /// Records one epoch's loss and returns the learning rate for the next.
    pub fn step(&mut self, loss: f64) -> f64 {
        match self.best {
            Some(b) if loss >= b - self.threshold => {
                self.bad_epochs += 1;
                if self.bad_epochs == self.patience {
                    self.lr *= self.factor;
                    self.bad_epochs = 0;
                }
            }
            _ => {
                self.best = Some(loss);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }
}

/// Applies the plateau rule to a whole loss sequence; returns the lr after
/// each epoch.
pub fn reduce_on_plateau(losses: &[f64], lr: f64, factor: f64, patience: usize, threshold: f64) -> Vec<f64> {
    let mut s = PlateauScheduler::new(lr, factor, patience, threshold);
    losses.iter().map(|&l| s.step(l)).collect()
}

/// Signals a stop once `patience` consecutive epochs fail to raise the
/// monitored accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Returns `(improved, stop)`.
    pub fn step(&mut self, accuracy: f64) -> (bool, bool) {
        match self.best {
            Some(b) if accuracy <= b => {
                self.bad_epochs += 1;
                (false, self.bad_epochs >= self.patience)
            }
            _ => {
                self.best = Some(accuracy);
                self.bad_epochs = 0;
                (true, false)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub stage: u8,
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Inputs with one class label each.
#[derive(Clone, Debug)]
pub struct LabeledSet<'a> {
    pub inputs: Vec<&'a [f32]>,
    pub labels: Vec<usize>,
}

impl<'a> LabeledSet<'a> {
    pub fn new(inputs: Vec<&'a [f32]>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(CoreError::Config(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn grads_for(grads: &mut pheno_numerics::Gradients<f32>, vars: &[Var], store: &ParamStore) -> Vec<Tensor<f32>> {
    vars.iter()
        .zip(store.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect()
}

/// Loss and accuracy of `head` over precomputed embeddings.
pub fn head_metrics(head: &ClassifierHead, z: &[Vec<f32>], labels: &[usize]) -> Result<(f64, f64)> {
    let c = head.num_classes();
    let mut logits = Vec::with_capacity(z.len() * c);
    let mut hits = 0usize;
    for (e, &l) in z.iter().zip(labels) {
        let row = head.logits(e)?;
        if argmax(&row) == l {
            hits += 1;
        }
        logits.extend(row);
    }
    let t = Tensor::matrix(z.len(), c, logits)?;
    Ok((cross_entropy(&t, labels)?, hits as f64 / z.len() as f64))
}

/// Outcome of stage 1, with the encoder checksum taken on both sides of
/// training.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Outcome {
    pub history: TrainHistory,
    pub checksum_before: String,
    pub checksum_after: String,
}

/// Fits `head` on embeddings from the frozen `encoder`. The encoder is only
/// ever bound as constants, and its checksum is compared afterwards. The
/// head from the best validation-accuracy epoch is kept.
pub fn train_stage1(
    encoder: &EncoderModel,
    head: &mut ClassifierHead,
    train: &LabeledSet<'_>,
    val: &LabeledSet<'_>,
    cfg: &TrainConfig,
) -> Result<Stage1Outcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(CoreError::Empty("training or validation split"));
    }
    let checksum_before = encoder.checksum();
    let z_train = encoder.embed(&train.inputs, EMBED_CHUNK)?;
    let z_val = encoder.embed(&val.inputs, EMBED_CHUNK)?;
    let history = fit_head(head, &z_train, &train.labels, &z_val, &val.labels, cfg)?;
    let checksum_after = encoder.checksum();
    if checksum_before != checksum_after {
        return Err(CoreError::Checkpoint("encoder changed during stage 1".into()));
    }
    Ok(Stage1Outcome {
        history,
        checksum_before,
        checksum_after,
    })
}

/// Mini-batch Adam on a linear head over fixed embeddings, with the plateau
/// schedule on validation loss.
pub fn fit_head(
    head: &mut ClassifierHead,
    z_train: &[Vec<f32>],
    y_train: &[usize],
    z_val: &[Vec<f32>],
    y_val: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if z_train.is_empty() || z_val.is_empty() {
        return Err(CoreError::Empty("training or validation split"));
    }
    let d = head.d_model();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(&head.params, AdamConfig::default());
    let mut sched = PlateauScheduler::from_config(cfg);
    let mut order: Vec<usize> = (0..z_train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr;
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut data = Vec::with_capacity(chunk.len() * d);
            chunk.iter().for_each(|&i| data.extend_from_slice(&z_train[i]));
            let labels: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let mut g = Graph::new();
            let vars = head.bind(&mut g, true);
            let z = g.constant(Tensor::matrix(chunk.len(), d, data)?);
            let logits = head.logits_graph(&mut g, &vars, z)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(CoreError::NonFiniteLoss { epoch, step });
            }
            total += value as f64 * chunk.len() as f64;
            let mut grads = g.backward(loss)?;
            let gs = grads_for(&mut grads, &vars, &head.params);
            adam_step(&mut head.params, &gs, &mut state, lr)?;
        }
        let (val_loss, val_accuracy) = head_metrics(head, z_val, y_val)?;
        sched.step(val_loss);
        epochs.push(EpochRecord {
            epoch,
            train_loss: total / z_train.len() as f64,
            val_loss,
            val_accuracy,
            lr,
        });
        log::info!("stage 1 epoch {epoch}: val loss {val_loss:.4}, val acc {val_accuracy:.4}, lr {lr:.2e}");
        if best.as_ref().is_none_or(|(a, _, _)| val_accuracy > *a) {
            best = Some((val_accuracy, epoch, head.params.clone()));
        }
    }
    let (best_val_accuracy, best_epoch, params) = best.expect("at least one epoch");
    head.params = params;
    Ok(TrainHistory {
        stage: 1,
        epochs,
        stop_reason: StopReason::MaxEpochs,
        best_epoch,
        best_val_accuracy,
    })
}

/// Loss and accuracy of `encoder` + `head` over raw windows.
pub fn model_metrics(encoder: &EncoderModel, head: &ClassifierHead, set: &LabeledSet<'_>) -> Result<(f64, f64)> {
    let z = encoder.embed(&set.inputs, EMBED_CHUNK)?;
    head_metrics(head, &z, &set.labels)
}

/// Joint Adam on encoder and head at a fixed learning rate, with early
/// stopping on validation accuracy. The best-epoch parameters are restored.
pub fn train_stage2(
    encoder: &mut EncoderModel,
    head: &mut ClassifierHead,
    train: &LabeledSet<'_>,
    val: &LabeledSet<'_>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(CoreError::Empty("training or validation split"));
    }
    if head.d_model() != encoder.config.d_model {
        return Err(CoreError::Config("head width differs from the encoder".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Separate moment buffers per store; Adam is elementwise, so this equals
    // one optimizer over the union.
    let mut enc_state = AdamState::new(&encoder.params, AdamConfig::default());
    let mut head_state = AdamState::new(&head.params, AdamConfig::default());
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, ParamStore, ParamStore)> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    let p = encoder.config.dropout;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&[f32]> = chunk.iter().map(|&i| train.inputs[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let mut g = Graph::new();
            let ev = encoder.bind(&mut g, true);
            let hv = head.bind(&mut g, true);
            let x = g.constant(encoder.input(&batch)?);
            let z = if p > 0.0 {
                let mut d = Dropout { p, rng: &mut rng };
                encoder.encode_graph(&mut g, &ev, x, batch.len(), Some(&mut d))?
            } else {
                encoder.encode_graph(&mut g, &ev, x, batch.len(), None)?
            };
            let logits = head.logits_graph(&mut g, &hv, z)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(CoreError::NonFiniteLoss { epoch, step });
            }
            total += value as f64 * chunk.len() as f64;
            let mut grads = g.backward(loss)?;
            let eg = grads_for(&mut grads, &ev, &encoder.params);
            let hg = grads_for(&mut grads, &hv, &head.params);
            drop(g);
            adam_step(&mut encoder.params, &eg, &mut enc_state, cfg.lr)?;
            adam_step(&mut head.params, &hg, &mut head_state, cfg.lr)?;
        }
        let (val_loss, val_accuracy) = model_metrics(encoder, head, val)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            val_accuracy,
            lr: cfg.lr,
        });
        log::info!("stage 2 epoch {epoch}: val loss {val_loss:.4}, val acc {val_accuracy:.4}");
        let (improved, stop) = stopper.step(val_accuracy);
        if improved {
            best = Some((val_accuracy, epoch, encoder.params.clone(), head.params.clone()));
        }
        if stop {
            stop_reason = StopReason::EarlyStopping;
            break;
        }
    }
    let (best_val_accuracy, best_epoch, ep, hp) = best.expect("at least one epoch");
    encoder.params = ep;
    head.params = hp;
    Ok(TrainHistory {
        stage: 2,
        epochs,
        stop_reason,
        best_epoch,
        best_val_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, HeadTask};

    #[test]
    fn cross_entropy_reference_values() {
        let zeros = Tensor::zeros(&[3, 9]);
        assert!((cross_entropy(&zeros, &[0, 4, 8]).unwrap() - 9f64.ln()).abs() < 1e-12);
        let two = Tensor::zeros(&[2, 2]);
        assert!((cross_entropy(&two, &[1, 0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let mut sat = Tensor::zeros(&[1, 9]);
        sat.data_mut()[3] = 30.0;
        assert!(cross_entropy(&sat, &[3]).unwrap() < 1e-9);
        assert!(cross_entropy(&zeros, &[0, 4, 9]).is_err());
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let l = Tensor::matrix(2, 3, vec![0.3, -1.2, 2.0, 0.0, 0.5, -0.5]).unwrap();
        let shifted = Tensor::matrix(2, 3, l.data().iter().map(|v| v + 7.5).collect()).unwrap();
        let a = cross_entropy(&l, &[2, 1]).unwrap();
        let b = cross_entropy(&shifted, &[2, 1]).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn plateau_halves_once_five_epochs_fail_to_improve() {
        // 1.0 sets the best, 0.9 and 0.89 improve, then four flat epochs.
        let mut losses = vec![1.0, 0.9, 0.89, 0.89, 0.89, 0.89, 0.89];
        let lrs = reduce_on_plateau(&losses, 1e-3, 0.5, 5, 1e-4);
        assert!(lrs.iter().all(|&lr| lr == 1e-3));
        losses.push(0.89);
        let lrs = reduce_on_plateau(&losses, 1e-3, 0.5, 5, 1e-4);
        assert_eq!(*lrs.last().unwrap(), 5e-4);
        assert!(lrs[..7].iter().all(|&lr| lr == 1e-3));
    }

    #[test]
    fn plateau_flat_from_the_start_halves_at_epoch_six() {
        let lrs = reduce_on_plateau(&[1.0; 6], 1e-3, 0.5, 5, 1e-4);
        assert_eq!(lrs[4], 1e-3);
        assert_eq!(lrs[5], 5e-4);
    }

    #[test]
    fn plateau_rules() {
        let dec: Vec<f64> = (0..20).map(|i| 1.0 - 0.01 * i as f64).collect();
        assert!(reduce_on_plateau(&dec, 1e-3, 0.5, 5, 1e-4).iter().all(|&lr| lr == 1e-3));
        let two = reduce_on_plateau(&[1.0; 11], 1e-3, 0.5, 5, 1e-4);
        assert_eq!(*two.last().unwrap(), 2.5e-4);
        // Gains below the threshold do not reset patience.
        let jitter: Vec<f64> = (0..6).map(|i| 1.0 - 1e-5 * i as f64).collect();
        assert_eq!(*reduce_on_plateau(&jitter, 1e-3, 0.5, 5, 1e-4).last().unwrap(), 5e-4);
    }

    #[test]
    fn early_stopping_counts_non_improving_epochs() {
        let mut s = EarlyStopping::new(5);
        assert_eq!(s.step(0.5), (true, false));
        for _ in 0..4 {
            assert_eq!(s.step(0.5), (false, false));
        }
        assert_eq!(s.step(0.4), (false, true));
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            n_blocks: 1,
            n_heads: 2,
            ffn_width: 16,
            patch_len: 4,
            window_len: 8,
            channels: 2,
            dropout: 0.0,
        }
    }

    fn toy(n: usize, c: &EncoderConfig) -> (Vec<Vec<f32>>, Vec<usize>) {
        let windows: Vec<Vec<f32>> = (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                (0..c.window_values()).map(|j| sign * (1.0 + (j as f32 * 0.3 + i as f32).sin() * 0.1)).collect()
            })
            .collect();
        let labels = (0..n).map(|i| i % 2).collect();
        (windows, labels)
    }

    #[test]
    fn zero_lr_stage1_leaves_head_and_encoder_unchanged() {
        let c = small();
        let enc = EncoderModel::init(c, 0).unwrap();
        let mut head = ClassifierHead::init(HeadTask::UnifiedGenotype, vec!["a".into(), "b".into()], 8, 1).unwrap();
        let before = head.clone();
        let (w, y) = toy(20, &c);
        let set = LabeledSet::new(w.iter().map(|v| v.as_slice()).collect(), y).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            max_epochs: 1,
            ..TrainConfig::stage1(3)
        };
        let out = train_stage1(&enc, &mut head, &set, &set, &cfg).unwrap();
        assert_eq!(head, before);
        assert_eq!(out.history.epochs.len(), 1);
        assert_eq!(out.checksum_before, out.checksum_after);
    }

    #[test]
    fn stage2_caps_epochs_and_moves_the_encoder() {
        let c = small();
        let mut enc = EncoderModel::init(c, 0).unwrap();
        let before = enc.checksum();
        let mut head = ClassifierHead::init(HeadTask::Genotype, vec!["a".into(), "b".into()], 8, 1).unwrap();
        let (w, y) = toy(16, &c);
        let set = LabeledSet::new(w.iter().map(|v| v.as_slice()).collect(), y).unwrap();
        let cfg = TrainConfig {
            lr: 1e-2,
            batch_size: 8,
            ..TrainConfig::stage2(1)
        };
        let h = train_stage2(&mut enc, &mut head, &set, &set, &cfg).unwrap();
        assert!(h.epochs.len() <= 10);
        assert_ne!(enc.checksum(), before);
        let a = h.epochs[h.best_epoch - 1].val_accuracy;
        assert_eq!(a, h.best_val_accuracy);
        assert_eq!(model_metrics(&enc, &head, &set).unwrap().1, a);
    }

    #[test]
    fn stage2_stops_after_five_flat_epochs() {
        let c = small();
        let mut enc = EncoderModel::init(c, 0).unwrap();
        let mut head = ClassifierHead::init(HeadTask::Genotype, vec!["a".into(), "b".into()], 8, 1).unwrap();
        let (w, y) = toy(16, &c);
        let set = LabeledSet::new(w.iter().map(|v| v.as_slice()).collect(), y).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::stage2(1)
        };
        let h = train_stage2(&mut enc, &mut head, &set, &set, &cfg).unwrap();
        // Epoch 1 sets the best; epochs 2..=6 are the five flat ones.
        assert_eq!(h.epochs.len(), 6);
        assert_eq!(h.stop_reason, StopReason::EarlyStopping);
        assert_eq!(h.best_epoch, 1);
    }
}
