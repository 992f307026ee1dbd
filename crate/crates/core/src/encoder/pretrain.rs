//! Masked-patch pretraining: a fraction of projected patches is replaced by
//! a learned mask token and reconstructed from the encoder's token outputs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pheno_numerics::{adam_step, AdamConfig, AdamState, Graph, ParamStore, Scalar, Tensor, Var};

use super::{xavier, Dropout, EncoderConfig, EncoderModel};
use crate::{CoreError, Result};

/// Linear map `d_model → P·D` plus the learned mask token.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconHead<S: Scalar = f32> {
    /// `weight` `d×(P·D)`, `bias` `1×(P·D)`, `mask_token` `1×d`.
    pub params: ParamStore<S>,
}

impl<S: Scalar> ReconHead<S> {
    pub fn init(config: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.push("weight", xavier(&mut rng, config.d_model, config.patch_dim()));
        params.push("bias", Tensor::zeros(&[1, config.patch_dim()]));
        params.push("mask_token", xavier(&mut rng, 1, config.d_model));
        Self { params }
    }

    pub fn from_params(config: &EncoderConfig, params: ParamStore<S>) -> Result<Self> {
        let expected = [
            ("weight", vec![config.d_model, config.patch_dim()]),
            ("bias", vec![1, config.patch_dim()]),
            ("mask_token", vec![1, config.d_model]),
        ];
        let ok = params.len() == 3
            && expected
                .iter()
                .enumerate()
                .all(|(i, (n, s))| params.name(i) == *n && params.get(i).shape() == s.as_slice());
        if !ok {
            return Err(CoreError::Checkpoint(
                "reconstruction head tensors do not match the encoder config".into(),
            ));
        }
        Ok(Self { params })
    }

    pub fn cast<T: Scalar>(&self) -> ReconHead<T> {
        ReconHead {
            params: self.params.cast(),
        }
    }

    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> Vec<Var> {
        (0..self.params.len())
            .map(|i| {
                if trainable {
                    g.param(self.params.shared(i))
                } else {
                    g.constant_shared(self.params.shared(i))
                }
            })
            .collect()
    }
}

fn masked_count(mask_frac: f64, n_patches: usize) -> Result<usize> {
    if !(mask_frac > 0.0 && mask_frac < 1.0) {
        return Err(CoreError::Config(format!(
            "mask fraction must lie in (0, 1), got {mask_frac}"
        )));
    }
    Ok(((mask_frac * n_patches as f64).ceil() as usize).clamp(1, n_patches))
}

/// Token rows (in the stacked `(B·N)` layout) to mask: `ceil(mask_frac·N)`
/// distinct patches per window, ascending within each window.
pub fn masked_rows(
    batch: usize,
    n_patches: usize,
    mask_frac: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let m = masked_count(mask_frac, n_patches)?;
    let mut rows = Vec::with_capacity(batch * m);
    let mut idx: Vec<usize> = (0..n_patches).collect();
    for b in 0..batch {
        idx.sort_unstable();
        let (chosen, _) = idx.partial_shuffle(rng, m);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        rows.extend(chosen.into_iter().map(|p| b * n_patches + p));
    }
    Ok(rows)
}

/// Mean squared reconstruction error over the masked patches of `input`
/// (the stacked `(B·N)×(P·D)` batch).
#[allow(clippy::too_many_arguments)]
pub fn masked_loss<S: Scalar>(
    g: &mut Graph<S>,
    model: &EncoderModel<S>,
    enc_vars: &[Var],
    recon_vars: &[Var],
    input: &Tensor<S>,
    batch: usize,
    masked: &[usize],
    dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    if masked.is_empty() {
        return Err(CoreError::Empty("mask"));
    }
    let d = model.config.d_model;
    let rows = input.rows();
    let mut keep = vec![S::one(); rows * d];
    let mut sel = vec![S::zero(); rows];
    for &r in masked {
        keep[r * d..(r + 1) * d].fill(S::zero());
        sel[r] = S::one();
    }
    let x = g.constant(input.clone());
    let proj = model.project_patches(g, enc_vars, x)?;
    let keep = g.constant(Tensor::matrix(rows, d, keep)?);
    let kept = g.mul(proj, keep)?;
    let sel = g.constant(Tensor::matrix(rows, 1, sel)?);
    let fill = g.matmul(sel, recon_vars[2])?;
    let mixed = g.add(kept, fill)?;
    let tokens = model.add_positions(g, enc_vars, mixed, batch)?;
    let h = model.run_blocks(g, enc_vars, tokens, batch, dropout)?;
    let hm = g.embedding_slice(h, masked)?;
    let rec = g.matmul(hm, recon_vars[0])?;
    let rec = g.add(rec, recon_vars[1])?;
    let pd = input.cols();
    let mut target = Vec::with_capacity(masked.len() * pd);
    for &r in masked {
        target.extend_from_slice(input.row(r));
    }
    let target = g.constant(Tensor::matrix(masked.len(), pd, target)?);
    Ok(g.mse(rec, target)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mask_frac: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 64,
            lr: 1e-3,
            mask_frac: 0.3,
            seed: 0,
        }
    }
}

/// Optimizer state for joint encoder + reconstruction-head updates.
pub struct Pretrainer<'a> {
    pub model: &'a mut EncoderModel,
    pub recon: &'a mut ReconHead,
    pub lr: f64,
    pub mask_frac: f64,
    enc_state: AdamState,
    rec_state: AdamState,
}

impl<'a> Pretrainer<'a> {
    pub fn new(model: &'a mut EncoderModel, recon: &'a mut ReconHead, lr: f64, mask_frac: f64) -> Self {
        let enc_state = AdamState::new(&model.params, AdamConfig::default());
        let rec_state = AdamState::new(&recon.params, AdamConfig::default());
        Self {
            model,
            recon,
            lr,
            mask_frac,
            enc_state,
            rec_state,
        }
    }

    /// One Adam update on `batch`; returns the pre-update loss.
    pub fn step(&mut self, batch: &[&[f32]], rng: &mut ChaCha8Rng) -> Result<f32> {
        if batch.is_empty() {
            return Err(CoreError::Empty("pretraining batch"));
        }
        let masked = masked_rows(batch.len(), self.model.config.n_patches(), self.mask_frac, rng)?;
        let input = self.model.input(batch)?;
        let mut g = Graph::new();
        let ev = self.model.bind(&mut g, true);
        let rv = self.recon.bind(&mut g, true);
        let p = self.model.config.dropout;
        let loss = if p > 0.0 {
            let mut d = Dropout { p, rng };
            masked_loss(&mut g, self.model, &ev, &rv, &input, batch.len(), &masked, Some(&mut d))?
        } else {
            masked_loss(&mut g, self.model, &ev, &rv, &input, batch.len(), &masked, None)?
        };
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(CoreError::NonFiniteLoss { epoch: 0, step: 0 });
        }
        let mut grads = g.backward(loss)?;
        let eg: Vec<Tensor<f32>> = ev
            .iter()
            .zip(self.model.params.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        let rg: Vec<Tensor<f32>> = rv
            .iter()
            .zip(self.recon.params.tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        adam_step(&mut self.model.params, &eg, &mut self.enc_state, self.lr)?;
        adam_step(&mut self.recon.params, &rg, &mut self.rec_state, self.lr)?;
        Ok(value)
    }
}

/// One masked-patch reconstruction update; returns the batch loss.
pub fn masked_pretrain_step(
    trainer: &mut Pretrainer<'_>,
    batch: &[&[f32]],
    rng: &mut ChaCha8Rng,
) -> Result<f32> {
    trainer.step(batch, rng)
}

/// Shuffled mini-batch pretraining; returns the mean loss of each epoch.
pub fn pretrain(
    model: &mut EncoderModel,
    recon: &mut ReconHead,
    windows: &[&[f32]],
    cfg: &PretrainConfig,
) -> Result<Vec<f32>> {
    masked_count(cfg.mask_frac, model.config.n_patches())?;
    if windows.is_empty() {
        return Err(CoreError::Empty("pretraining set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trainer = Pretrainer::new(model, recon, cfg.lr, cfg.mask_frac);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let batch: Vec<&[f32]> = chunk.iter().map(|&i| windows[i]).collect();
            let loss = trainer.step(&batch, &mut rng).map_err(|e| match e {
                CoreError::NonFiniteLoss { .. } => CoreError::NonFiniteLoss { epoch, step },
                other => other,
            })?;
            total += loss as f64;
            steps += 1;
        }
        let mean = (total / steps as f64) as f32;
        log::info!("pretrain epoch {epoch}: reconstruction loss {mean:.5}");
        history.push(mean);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            d_model: 16,
            n_blocks: 1,
            n_heads: 2,
            ffn_width: 32,
            patch_len: 4,
            window_len: 16,
            channels: 3,
            dropout: 0.0,
        }
    }

    #[test]
    fn mask_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows = masked_rows(3, 4, 0.3, &mut rng).unwrap();
        assert_eq!(rows.len(), 6);
        for b in 0..3 {
            let mine: Vec<_> = rows.iter().filter(|&&r| r / 4 == b).collect();
            assert_eq!(mine.len(), 2);
            assert_ne!(mine[0], mine[1]);
        }
        assert!(masked_rows(1, 4, 0.0, &mut rng).is_err());
        assert!(masked_rows(1, 4, 1.0, &mut rng).is_err());
    }

    #[test]
    fn perfect_reconstructor_on_zero_data() {
        let c = small();
        let model = EncoderModel::<f64>::init(c, 0).unwrap();
        let mut recon = ReconHead::<f64>::init(&c, 0);
        recon.params.get_mut(0).data_mut().fill(0.0);
        let input = Tensor::zeros(&[2 * c.n_patches(), c.patch_dim()]);
        let mut g = Graph::new();
        let ev = model.bind(&mut g, false);
        let rv = recon.bind(&mut g, false);
        let l = masked_loss(&mut g, &model, &ev, &rv, &input, 2, &[1, 6], None).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
    }

    #[test]
    fn pretraining_reduces_loss() {
        let c = small();
        let mut model = EncoderModel::<f32>::init(c, 1).unwrap();
        let mut recon = ReconHead::init(&c, 2);
        // Smooth periodic windows: masked patches are predictable from context.
        let windows: Vec<Vec<f32>> = (0..200)
            .map(|w| {
                (0..c.window_values())
                    .map(|i| {
                        let t = (i / c.channels) as f32;
                        let ch = (i % c.channels) as f32;
                        ((t * 0.4 + w as f32 * 0.7 + ch).sin()) * (1.0 + ch)
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[f32]> = windows.iter().map(|w| w.as_slice()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut trainer = Pretrainer::new(&mut model, &mut recon, 3e-3, 0.3);
        let mut losses = Vec::new();
        for _ in 0..200 {
            losses.push(masked_pretrain_step(&mut trainer, &refs, &mut rng).unwrap());
        }
        let first: f32 = losses[..10].iter().sum::<f32>() / 10.0;
        let last: f32 = losses[190..].iter().sum::<f32>() / 10.0;
        assert!(last < 0.6 * first, "first {first}, last {last}");
    }
}
