//! Patch-transformer encoder.
//!
//! A window `X ∈ R^{T×D}` is cut into `N = T/P` non-overlapping patches of
//! `P` frames. Each flattened patch (`P·D` values) is projected to `d_model`
//! and a learned positional embedding is added. The tokens pass through
//! pre-norm transformer blocks and are mean-pooled into `z ∈ R^{d_model}`.
//!
//! Because a row-major `T×D` window is already laid out as `N×(P·D)`, a batch
//! of `B` windows is fed as one `(B·N)×(P·D)` matrix. Attention is restricted
//! to each window's own tokens with an additive block-diagonal mask, so a
//! window's embedding does not depend on the rest of its batch.

mod checkpoint;
mod heads;
mod pretrain;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use pheno_numerics::{Graph, ParamStore, Scalar, Tensor, Var};

pub use checkpoint::{load_bundle, save_bundle, BundleMeta, ModelBundle, CHECKPOINT_VERSION};
pub use heads::{argmax, head_logits, softmax, ClassifierHead, HeadTask};
pub use pretrain::{
    masked_loss, masked_pretrain_step, masked_rows, pretrain, PretrainConfig, Pretrainer,
    ReconHead,
};

use crate::{CoreError, Result};

const LN_EPS: f64 = 1e-5;
/// Additive attention mask between tokens of different windows.
const MASK_NEG: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ffn_width: usize,
    pub patch_len: usize,
    pub window_len: usize,
    pub channels: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_blocks: 2,
            n_heads: 4,
            ffn_width: 256,
            patch_len: 8,
            window_len: 32,
            channels: 69,
            dropout: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn n_patches(&self) -> usize {
        self.window_len / self.patch_len
    }

    /// Values per flattened patch (`P·D`).
    pub fn patch_dim(&self) -> usize {
        self.patch_len * self.channels
    }

    pub fn window_values(&self) -> usize {
        self.window_len * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CoreError::Config(m));
        if [
            self.d_model,
            self.n_blocks,
            self.n_heads,
            self.ffn_width,
            self.patch_len,
            self.window_len,
            self.channels,
        ]
        .contains(&0)
        {
            return err("encoder dimensions must be positive".into());
        }
        if self.window_len % self.patch_len != 0 {
            return err(format!(
                "window length {} is not divisible by patch length {}",
                self.window_len, self.patch_len
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return err(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

const PATCH_W: usize = 0;
const PATCH_B: usize = 1;
const POS: usize = 2;
const BLOCK_START: usize = 3;
const BLOCK_NAMES: [&str; 16] = [
    "ln1.gain",
    "ln1.bias",
    "attn.wq",
    "attn.bq",
    "attn.wk",
    "attn.bk",
    "attn.wv",
    "attn.bv",
    "attn.wo",
    "attn.bo",
    "ln2.gain",
    "ln2.bias",
    "ffn.w1",
    "ffn.b1",
    "ffn.w2",
    "ffn.b2",
];

/// Xavier-uniform `rows×cols` matrix.
pub fn xavier<S: Scalar>(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor<S> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| S::of(rng.random_range(-a..a)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("sized")
}

/// Inverted dropout applied to residual branches during training.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply<S: Scalar>(&mut self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        if self.p == 0.0 {
            return Ok(x);
        }
        let shape = g.shape(x).to_vec();
        let keep = S::of(1.0 / (1.0 - self.p));
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < self.p {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let m = g.constant(Tensor::new(shape, mask)?);
        Ok(g.mul(x, m)?)
    }
}

/// Encoder parameters `θ` with a fixed tensor order (see [`Self::param_names`]).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<S: Scalar = f32> {
    pub config: EncoderConfig,
    pub params: ParamStore<S>,
}

impl<S: Scalar> EncoderModel<S> {
    /// Tensor names in store order, without the `encoder.` prefix.
    pub fn param_names(config: &EncoderConfig) -> Vec<String> {
        let mut names = vec!["patch.weight".into(), "patch.bias".into(), "pos".into()];
        for l in 0..config.n_blocks {
            names.extend(BLOCK_NAMES.iter().map(|n| format!("block{l}.{n}")));
        }
        names
    }

    /// Expected shape of each tensor, in store order.
    pub fn param_shapes(c: &EncoderConfig) -> Vec<Vec<usize>> {
        let d = c.d_model;
        let mut shapes = vec![vec![c.patch_dim(), d], vec![1, d], vec![c.n_patches(), d]];
        for _ in 0..c.n_blocks {
            shapes.extend([
                vec![1, d],
                vec![1, d],
                vec![d, d],
                vec![1, d],
                vec![d, d],
                vec![1, d],
                vec![d, d],
                vec![1, d],
                vec![d, d],
                vec![1, d],
                vec![1, d],
                vec![1, d],
                vec![d, c.ffn_width],
                vec![1, c.ffn_width],
                vec![c.ffn_width, d],
                vec![1, d],
            ]);
        }
        shapes
    }

    /// Xavier-uniform projections, N(0, 0.02) positions, unit layer-norm
    /// gains and zero biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let pos_dist = Normal::new(0.0, 0.02).expect("valid sigma");
        let mut params = ParamStore::new();
        params.push("patch.weight", xavier(&mut rng, config.patch_dim(), d));
        params.push("patch.bias", Tensor::zeros(&[1, d]));
        let pos = (0..config.n_patches() * d)
            .map(|_| S::of(pos_dist.sample(&mut rng)))
            .collect();
        params.push("pos", Tensor::matrix(config.n_patches(), d, pos)?);
        for l in 0..config.n_blocks {
            let name = |n: &str| format!("block{l}.{n}");
            params.push(name("ln1.gain"), Tensor::full(&[1, d], S::one()));
            params.push(name("ln1.bias"), Tensor::zeros(&[1, d]));
            for p in ["q", "k", "v", "o"] {
                params.push(name(&format!("attn.w{p}")), xavier(&mut rng, d, d));
                params.push(name(&format!("attn.b{p}")), Tensor::zeros(&[1, d]));
            }
            params.push(name("ln2.gain"), Tensor::full(&[1, d], S::one()));
            params.push(name("ln2.bias"), Tensor::zeros(&[1, d]));
            params.push(name("ffn.w1"), xavier(&mut rng, d, config.ffn_width));
            params.push(name("ffn.b1"), Tensor::zeros(&[1, config.ffn_width]));
            params.push(name("ffn.w2"), xavier(&mut rng, config.ffn_width, d));
            params.push(name("ffn.b2"), Tensor::zeros(&[1, d]));
        }
        Ok(Self { config, params })
    }

    /// Wraps an existing store after checking names and shapes.
    pub fn from_params(config: EncoderConfig, params: ParamStore<S>) -> Result<Self> {
        config.validate()?;
        let names = Self::param_names(&config);
        let shapes = Self::param_shapes(&config);
        if params.len() != names.len() {
            return Err(CoreError::Checkpoint(format!(
                "encoder expects {} tensors, found {}",
                names.len(),
                params.len()
            )));
        }
        for (i, (n, s)) in names.iter().zip(&shapes).enumerate() {
            if params.name(i) != n || params.get(i).shape() != s.as_slice() {
                return Err(CoreError::Checkpoint(format!(
                    "encoder tensor {i}: expected {n} {s:?}, found {} {:?}",
                    params.name(i),
                    params.get(i).shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn cast<T: Scalar>(&self) -> EncoderModel<T> {
        EncoderModel {
            config: self.config,
            params: self.params.cast(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// Binds every tensor into `g`: trainable leaves when `trainable`,
    /// shared constants otherwise.
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

    /// Stacks windows (`T×D` row-major each) into the `(B·N)×(P·D)` input.
    pub fn input(&self, windows: &[&[f32]]) -> Result<Tensor<S>> {
        let c = &self.config;
        let mut data = Vec::with_capacity(windows.len() * c.window_values());
        for w in windows {
            if w.len() != c.window_values() {
                return Err(CoreError::Config(format!(
                    "window has {} values, encoder expects {}×{}",
                    w.len(),
                    c.window_len,
                    c.channels
                )));
            }
            data.extend(w.iter().map(|&v| S::of(v as f64)));
        }
        Ok(Tensor::matrix(
            windows.len() * c.n_patches(),
            c.patch_dim(),
            data,
        )?)
    }

    /// Flattened patches times `W_p` plus bias, before positions.
    pub fn project_patches(&self, g: &mut Graph<S>, vars: &[Var], x: Var) -> Result<Var> {
        let h = g.matmul(x, vars[PATCH_W])?;
        Ok(g.add(h, vars[PATCH_B])?)
    }

    pub fn add_positions(&self, g: &mut Graph<S>, vars: &[Var], h: Var, batch: usize) -> Result<Var> {
        let n = self.config.n_patches();
        let idx: Vec<usize> = (0..batch * n).map(|i| i % n).collect();
        let pos = g.embedding_slice(vars[POS], &idx)?;
        Ok(g.add(h, pos)?)
    }

    /// Token embeddings `(B·N)×d_model`.
    pub fn patch_embed(&self, g: &mut Graph<S>, vars: &[Var], x: Var, batch: usize) -> Result<Var> {
        let h = self.project_patches(g, vars, x)?;
        self.add_positions(g, vars, h, batch)
    }

    fn affine_norm(&self, g: &mut Graph<S>, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let n = g.layer_norm(x, S::of(LN_EPS));
        let n = g.mul(n, gain)?;
        Ok(g.add(n, bias)?)
    }

    fn linear(&self, g: &mut Graph<S>, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = g.matmul(x, w)?;
        Ok(g.add(h, b)?)
    }

    fn attention(
        &self,
        g: &mut Graph<S>,
        v: &[Var],
        x: Var,
        mask: Option<Var>,
    ) -> Result<Var> {
        let c = &self.config;
        let dh = c.d_model / c.n_heads;
        let q = self.linear(g, x, v[2], v[3])?;
        let k = self.linear(g, x, v[4], v[5])?;
        let val = self.linear(g, x, v[6], v[7])?;
        let scale = S::of(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(c.n_heads);
        for h in 0..c.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(val, h * dh, dh)?;
            let kt = g.transpose(kh);
            let s = g.matmul(qh, kt)?;
            let mut s = g.scale(s, scale);
            if let Some(m) = mask {
                s = g.add(s, m)?;
            }
            let a = g.softmax(s);
            heads.push(g.matmul(a, vh)?);
        }
        let cat = g.concat(&heads, 1)?;
        self.linear(g, cat, v[8], v[9])
    }

    fn block_mask(&self, g: &mut Graph<S>, batch: usize) -> Option<Var> {
        if batch <= 1 {
            return None;
        }
        let n = self.config.n_patches();
        let bn = batch * n;
        let data = (0..bn * bn)
            .map(|i| {
                if (i / bn) / n == (i % bn) / n {
                    S::zero()
                } else {
                    S::of(MASK_NEG)
                }
            })
            .collect();
        Some(g.constant(Tensor::matrix(bn, bn, data).expect("sized")))
    }

    /// Transformer blocks over `(B·N)×d_model` tokens.
    pub fn run_blocks(
        &self,
        g: &mut Graph<S>,
        vars: &[Var],
        tokens: Var,
        batch: usize,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var> {
        let mask = self.block_mask(g, batch);
        let mut h = tokens;
        for l in 0..self.config.n_blocks {
            let v = &vars[BLOCK_START + l * BLOCK_NAMES.len()..][..BLOCK_NAMES.len()];
            let a = self.affine_norm(g, h, v[0], v[1])?;
            let mut a = self.attention(g, v, a, mask)?;
            if let Some(d) = dropout.as_deref_mut() {
                a = d.apply(g, a)?;
            }
            h = g.add(h, a)?;
            let f = self.affine_norm(g, h, v[10], v[11])?;
            let f = self.linear(g, f, v[12], v[13])?;
            let f = g.gelu(f);
            let mut f = self.linear(g, f, v[14], v[15])?;
            if let Some(d) = dropout.as_deref_mut() {
                f = d.apply(g, f)?;
            }
            h = g.add(h, f)?;
        }
        Ok(h)
    }

    /// Mean over each window's `N` token rows: `B×d_model`.
    pub fn pool(&self, g: &mut Graph<S>, h: Var, batch: usize) -> Result<Var> {
        let n = self.config.n_patches();
        let w = S::one() / S::of(n as f64);
        let data = (0..batch * batch * n)
            .map(|i| {
                if (i % (batch * n)) / n == i / (batch * n) {
                    w
                } else {
                    S::zero()
                }
            })
            .collect();
        let p = g.constant(Tensor::matrix(batch, batch * n, data)?);
        Ok(g.matmul(p, h)?)
    }

    /// Embeddings `B×d_model` of the stacked input `x`.
    pub fn encode_graph(
        &self,
        g: &mut Graph<S>,
        vars: &[Var],
        x: Var,
        batch: usize,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var> {
        let t = self.patch_embed(g, vars, x, batch)?;
        let h = self.run_blocks(g, vars, t, batch, dropout)?;
        self.pool(g, h, batch)
    }

    /// Embeddings of `windows`, computed in chunks of `chunk` windows.
    pub fn embed(&self, windows: &[&[f32]], chunk: usize) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(windows.len());
        for part in windows.chunks(chunk.max(1)) {
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let x = g.constant(self.input(part)?);
            let z = self.encode_graph(&mut g, &vars, x, part.len(), None)?;
            let t = g.value(z);
            for r in 0..part.len() {
                out.push(t.row(r).iter().map(|v| v.as_f64() as f32).collect());
            }
        }
        Ok(out)
    }

    /// Embedding `z` of one window.
    pub fn encode(&self, window: &[f32]) -> Result<Vec<f32>> {
        Ok(self.embed(&[window], 1)?.remove(0))
    }

    /// Token embeddings `N×d_model` of one window (patch embedding only).
    pub fn tokens(&self, window: &[f32]) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(self.input(&[window])?);
        let t = self.patch_embed(&mut g, &vars, x, 1)?;
        Ok(g.value(t).clone())
    }
}

/// Default embedding chunk size for inference.
pub const EMBED_CHUNK: usize = 64;

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            n_blocks: 2,
            n_heads: 2,
            ffn_width: 16,
            patch_len: 2,
            window_len: 8,
            channels: 3,
            dropout: 0.0,
        }
    }

    fn window(seed: u32, c: &EncoderConfig) -> Vec<f32> {
        (0..c.window_values())
            .map(|i| (i as f32 * 0.37 + seed as f32).sin())
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        let mut c = EncoderConfig::default();
        c.window_len = 30;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::default();
        c.n_heads = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_shapes() {
        let m = EncoderModel::<f32>::init(EncoderConfig::default(), 0).unwrap();
        assert_eq!(m.config.n_patches(), 4);
        let t = m.tokens(&vec![0.5; 32 * 69]).unwrap();
        assert_eq!(t.shape(), &[4, 64]);
        let z = m.encode(&vec![0.5; 32 * 69]).unwrap();
        assert_eq!(z.len(), 64);
        assert!(z.iter().all(|v| v.is_finite()));
        assert_eq!(m.params.len(), 3 + 2 * 16);
    }

    #[test]
    fn zero_input_zero_tokens() {
        let c = small();
        let mut m = EncoderModel::<f64>::init(c, 1).unwrap();
        m.params.get_mut(POS).data_mut().fill(0.0);
        let t = m.tokens(&vec![0.0; c.window_values()]).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_projection_copies_patch_prefix() {
        let c = small();
        let mut m = EncoderModel::<f64>::init(c, 1).unwrap();
        m.params.get_mut(POS).data_mut().fill(0.0);
        let w = m.params.get_mut(PATCH_W);
        w.data_mut().fill(0.0);
        // patch_dim 6 < d_model 8: the first six coordinates copy the patch.
        for i in 0..c.patch_dim().min(c.d_model) {
            w.data_mut()[i * c.d_model + i] = 1.0;
        }
        let x = window(3, &c);
        let t = m.tokens(&x).unwrap();
        for p in 0..c.n_patches() {
            for i in 0..c.patch_dim().min(c.d_model) {
                let want = x[p * c.patch_dim() + i] as f64;
                assert!((t.get(p, i) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zeroed_residual_branches_pool_patch_embeddings() {
        let c = small();
        let mut m = EncoderModel::<f64>::init(c, 2).unwrap();
        for l in 0..c.n_blocks {
            for k in [8, 9, 14, 15] {
                m.params
                    .get_mut(BLOCK_START + l * BLOCK_NAMES.len() + k)
                    .data_mut()
                    .fill(0.0);
            }
        }
        let x = window(5, &c);
        let t = m.tokens(&x).unwrap();
        let z = m.embed(&[&x], 1).unwrap().remove(0);
        for j in 0..c.d_model {
            let mean = (0..c.n_patches()).map(|p| t.get(p, j)).sum::<f64>() / c.n_patches() as f64;
            assert!((z[j] as f64 - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn embedding_ignores_batch_composition() {
        let c = EncoderConfig::default();
        let m = EncoderModel::<f32>::init(c, 4).unwrap();
        let ws: Vec<Vec<f32>> = (0..5).map(|s| window(s, &c)).collect();
        let refs: Vec<&[f32]> = ws.iter().map(|w| w.as_slice()).collect();
        let together = m.embed(&refs, 64).unwrap();
        for (i, w) in refs.iter().enumerate() {
            assert_eq!(m.encode(w).unwrap(), together[i]);
        }
        let reversed: Vec<&[f32]> = refs.iter().rev().copied().collect();
        let rev = m.embed(&reversed, 3).unwrap();
        assert_eq!(rev[0], together[4]);
    }

    #[test]
    fn bad_window_length_is_rejected() {
        let m = EncoderModel::<f32>::init(small(), 0).unwrap();
        assert!(m.encode(&[0.0; 5]).is_err());
    }

    #[test]
    fn dropout_zero_is_identity_and_positive_perturbs() {
        let c = small();
        let m = EncoderModel::<f64>::init(c, 0).unwrap();
        let x = window(1, &c);
        let run = |p: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut d = Dropout { p, rng: &mut rng };
            let mut g = Graph::new();
            let vars = m.bind(&mut g, false);
            let xi = g.constant(m.input(&[&x]).unwrap());
            let z = m.encode_graph(&mut g, &vars, xi, 1, Some(&mut d)).unwrap();
            g.value(z).data().to_vec()
        };
        let plain: Vec<f64> = m.encode(&x).unwrap().iter().map(|&v| v as f64).collect();
        let z0 = run(0.0);
        for (a, b) in z0.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_ne!(run(0.5), z0);
    }
}
