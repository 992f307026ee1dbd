//! Hand-crafted feature families and the linear probe used to score them.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use pheno_numerics::Tensor;

use crate::dataio::Window;
use crate::{CoreError, Result};

/// Row-major flattening of a `T×D` window.
pub fn raw_features(window: &Window) -> Vec<f32> {
    window.data.clone()
}

/// Stacks equally sized feature rows into an `N×dim` matrix.
pub fn feature_matrix(rows: &[Vec<f32>]) -> Result<Tensor<f32>> {
    let dim = rows.first().ok_or(CoreError::Empty("feature set"))?.len();
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        if r.len() != dim {
            return Err(CoreError::Config("ragged feature rows".into()));
        }
        data.extend_from_slice(r);
    }
    Ok(Tensor::matrix(rows.len(), dim, data)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k×dim`, row-major, rows orthonormal.
    pub components: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    /// Top-`k` eigenvectors of the sample covariance. When `dim` exceeds
    /// `N`, the `N×N` Gram matrix gives the same nonzero spectrum more
    /// cheaply. Each component's largest-magnitude entry is positive.
    pub fn fit(x: &Tensor<f32>, k: usize) -> Result<Self> {
        let (n, dim) = (x.rows(), x.cols());
        if k == 0 || n < 2 || k > (n - 1).min(dim) {
            return Err(CoreError::Config(format!(
                "PCA with k={k} needs 1 ≤ k ≤ min(N-1, dim) (N={n}, dim={dim})"
            )));
        }
        let mut mean = vec![0.0f64; dim];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let xc = DMatrix::from_fn(n, dim, |r, c| x.get(r, c) as f64 - mean[c]);
        let denom = (n - 1) as f64;

        let (values, vectors) = if dim <= n {
            let cov = xc.tr_mul(&xc) / denom;
            let eig = SymmetricEigen::new(cov);
            (eig.eigenvalues, eig.eigenvectors)
        } else {
            let gram = &xc * xc.transpose() / denom;
            let eig = SymmetricEigen::new(gram);
            // Xᵀu / ‖Xᵀu‖ maps Gram eigenvectors to covariance eigenvectors.
            let mut v = xc.tr_mul(&eig.eigenvectors);
            for mut col in v.column_iter_mut() {
                let norm = col.norm();
                if norm > 0.0 {
                    col /= norm;
                }
            }
            (eig.eigenvalues, v)
        };
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let total: f64 = (0..dim).map(|c| xc.column(c).norm_squared()).sum::<f64>() / denom;

        let mut components = Vec::with_capacity(k * dim);
        let mut ratios = Vec::with_capacity(k);
        for &i in order.iter().take(k) {
            let col = vectors.column(i);
            let pivot = col.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            components.extend(col.iter().map(|v| v * sign));
            ratios.push(if total > 0.0 {
                (values[i].max(0.0) / total).clamp(0.0, 1.0)
            } else {
                0.0
            });
        }
        Ok(Self {
            mean,
            components,
            explained_variance_ratio: ratios,
        })
    }

    pub fn k(&self) -> usize {
        self.explained_variance_ratio.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `components · (x − mean)`.
    pub fn transform_one(&self, x: &[f32]) -> Vec<f32> {
        let d = self.dim();
        (0..self.k())
            .map(|r| {
                self.components[r * d..(r + 1) * d]
                    .iter()
                    .zip(x.iter().zip(&self.mean))
                    .map(|(c, (&v, m))| c * (v as f64 - m))
                    .sum::<f64>() as f32
            })
            .collect()
    }

    pub fn transform(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        if x.cols() != self.dim() {
            return Err(CoreError::Config(format!(
                "PCA expects {} columns, got {}",
                self.dim(),
                x.cols()
            )));
        }
        let mut out = Vec::with_capacity(x.rows() * self.k());
        for r in 0..x.rows() {
            out.extend(self.transform_one(x.row(r)));
        }
        Ok(Tensor::matrix(x.rows(), self.k(), out)?)
    }

    /// `mean + componentsᵀ · y`.
    pub fn inverse_one(&self, y: &[f32]) -> Vec<f64> {
        let d = self.dim();
        let mut out = self.mean.clone();
        for (r, &v) in y.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(&self.components[r * d..(r + 1) * d]) {
                *o += c * v as f64;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveletFeatureConfig {
    /// Haar dilations in frames.
    pub scales: Vec<usize>,
    /// Post-PCA dimension.
    pub pca_dim: usize,
}

impl Default for WaveletFeatureConfig {
    fn default() -> Self {
        Self {
            scales: vec![1, 2, 4, 8],
            pca_dim: 64,
        }
    }
}

impl WaveletFeatureConfig {
    pub fn validate(&self, window_len: usize) -> Result<()> {
        match self.scales.iter().max() {
            None => Err(CoreError::Config("wavelet scales are empty".into())),
            Some(&0) => Err(CoreError::Config("wavelet scale 0".into())),
            Some(&s) if 2 * s > window_len => Err(CoreError::Config(format!(
                "wavelet scale {s} needs windows of at least {} frames, got {window_len}",
                2 * s
            ))),
            _ if self.scales.contains(&0) => Err(CoreError::Config("wavelet scale 0".into())),
            _ => Ok(()),
        }
    }

    pub fn raw_dim(&self, channels: usize) -> usize {
        channels * self.scales.len() * 2
    }
}

/// Haar difference responses `mean x[t, t+s) − mean x[t+s, t+2s)` over all
/// valid `t`, for one channel.
pub fn haar_responses(x: &[f64], s: usize) -> Vec<f64> {
    if x.len() < 2 * s || s == 0 {
        return Vec::new();
    }
    let mut prefix = vec![0.0; x.len() + 1];
    for (i, &v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let sum = |a: usize, b: usize| prefix[b] - prefix[a];
    (0..=x.len() - 2 * s)
        .map(|t| (sum(t, t + s) - sum(t + s, t + 2 * s)) / s as f64)
        .collect()
}

/// Per channel, per scale: mean |response| and response variance.
/// Layout is channel-major, then scale, then `[mean_abs, var]`.
pub fn wavelet_features(window: &Window, cfg: &WaveletFeatureConfig) -> Result<Vec<f32>> {
    cfg.validate(window.frames)?;
    let (t, d) = (window.frames, window.channels);
    let mut out = Vec::with_capacity(cfg.raw_dim(d));
    let mut channel = vec![0.0f64; t];
    for c in 0..d {
        for (f, v) in channel.iter_mut().enumerate() {
            *v = window.data[f * d + c] as f64;
        }
        for &s in &cfg.scales {
            let r = haar_responses(&channel, s);
            let n = r.len() as f64;
            let mean_abs = r.iter().map(|v| v.abs()).sum::<f64>() / n;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            out.push(mean_abs as f32);
            out.push(var as f32);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lambda: f64,
    pub lr: f64,
    pub max_iter: usize,
    /// Stop once every gradient entry is below this in magnitude.
    pub grad_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            lr: 0.01,
            max_iter: 2000,
            grad_tol: 1e-5,
        }
    }
}

/// L2-regularized multinomial logistic regression on standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// `C×dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
}

/// Dot product with independent partial sums so it vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

impl LinearProbe {
    /// Minimizes mean cross-entropy + λ‖W‖² with full-batch Adam.
    pub fn fit(x: &Tensor<f32>, y: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let (n, dim) = (x.rows(), x.cols());
        if n != y.len() || n == 0 {
            return Err(CoreError::Config(format!("probe has {n} rows and {} labels", y.len())));
        }
        if y.iter().any(|&l| l >= classes) {
            return Err(CoreError::Config("probe label outside class range".into()));
        }
        let mut present = vec![false; classes];
        y.iter().for_each(|&l| present[l] = true);
        if present.iter().filter(|&&p| p).count() < 2 {
            return Err(CoreError::Config("probe training set has a single class".into()));
        }

        let mut mean = vec![0.0f64; dim];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut std = vec![0.0f64; dim];
        for r in 0..n {
            for ((s, &v), m) in std.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v as f64 - m) * (v as f64 - m);
            }
        }
        std.iter_mut()
            .for_each(|s| *s = (*s / n as f64).sqrt().max(crate::dataio::STD_FLOOR));
        let xs: Vec<f64> = (0..n)
            .flat_map(|r| {
                let (mean, std) = (&mean, &std);
                x.row(r).iter().enumerate().map(move |(c, &v)| (v as f64 - mean[c]) / std[c])
            })
            .collect();

        let np = classes * dim + classes;
        let mut theta = vec![0.0f64; np];
        let (mut m1, mut m2) = (vec![0.0f64; np], vec![0.0f64; np]);
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut grad = vec![0.0f64; np];
        let mut p = vec![0.0f64; classes];
        let mut iterations = 0;
        for it in 1..=cfg.max_iter {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for r in 0..n {
                let row = &xs[r * dim..(r + 1) * dim];
                for (c, pc) in p.iter_mut().enumerate() {
                    *pc = dot(&theta[c * dim..(c + 1) * dim], row) + theta[classes * dim + c];
                }
                softmax_in_place(&mut p);
                p[y[r]] -= 1.0;
                for (c, &e) in p.iter().enumerate() {
                    let e = e / n as f64;
                    for (g, &v) in grad[c * dim..(c + 1) * dim].iter_mut().zip(row) {
                        *g += e * v;
                    }
                    grad[classes * dim + c] += e;
                }
            }
            for (g, &w) in grad[..classes * dim].iter_mut().zip(&theta) {
                *g += 2.0 * cfg.lambda * w;
            }
            iterations = it;
            if grad.iter().all(|g| g.abs() < cfg.grad_tol) {
                break;
            }
            let (c1, c2) = (1.0 - b1.powi(it as i32), 1.0 - b2.powi(it as i32));
            for i in 0..np {
                m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
                m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
                theta[i] -= cfg.lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
            }
            if !theta.iter().all(|v| v.is_finite()) {
                return Err(CoreError::NonFiniteLoss { epoch: 0, step: it });
            }
        }
        let bias = theta.split_off(classes * dim);
        Ok(Self {
            weights: theta,
            bias,
            feature_mean: mean,
            feature_std: std,
            lambda: cfg.lambda,
            iterations,
        })
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let dim = self.feature_mean.len();
        let xs: Vec<f64> = x
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(&v, (m, s))| (v as f64 - m) / s)
            .collect();
        (0..self.classes())
            .map(|c| dot(&self.weights[c * dim..(c + 1) * dim], &xs) + self.bias[c])
            .collect()
    }

    /// Argmax of the logits; ties go to the lowest class code.
    pub fn predict(&self, x: &[f32]) -> usize {
        let l = self.logits(x);
        let mut best = 0;
        for (i, &v) in l.iter().enumerate() {
            if v > l[best] {
                best = i;
            }
        }
        best
    }

    pub fn predict_all(&self, x: &Tensor<f32>) -> Vec<usize> {
        (0..x.rows()).map(|r| self.predict(x.row(r))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn window(frames: usize, channels: usize, f: impl Fn(usize, usize) -> f32) -> Window {
        let mut data = Vec::with_capacity(frames * channels);
        for t in 0..frames {
            for c in 0..channels {
                data.push(f(t, c));
            }
        }
        Window {
            session_id: "s".into(),
            cohort_id: "c".into(),
            start_frame: 0,
            frames,
            channels,
            data,
            behavior: crate::dataio::BehaviorLabel::Idle,
            genotype: "WT".into(),
        }
    }

    #[test]
    fn raw_features_flatten_row_major() {
        let w = window(32, 69, |t, c| (t * 100 + c) as f32);
        let f = raw_features(&w);
        assert_eq!(f.len(), 2208);
        assert_eq!(f[69 * 5 + 7], 507.0);
        assert!(raw_features(&window(32, 69, |_, _| 0.0)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pca_rank_one_and_centering() {
        let rows: Vec<Vec<f32>> = (0..50).map(|i| vec![i as f32, 2.0 * i as f32 + 1.0]).collect();
        let x = feature_matrix(&rows).unwrap();
        let m = PcaModel::fit(&x, 1).unwrap();
        assert!(m.explained_variance_ratio[0] >= 0.999);
        let mean: Vec<f32> = m.mean.iter().map(|&v| v as f32).collect();
        assert!(m.transform_one(&mean)[0].abs() < 1e-6);
        assert!(PcaModel::fit(&x, 3).is_err());
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|j| rng.random::<f32>() * (j + 1) as f32).collect())
            .collect()
    }

    #[test]
    fn pca_full_rank_reconstructs() {
        for (n, d) in [(40, 6), (5, 12)] {
            let rows = random_rows(n, d, 3);
            let x = feature_matrix(&rows).unwrap();
            let k = (n - 1).min(d);
            let m = PcaModel::fit(&x, k).unwrap();
            for i in 0..k {
                for j in 0..k {
                    let ci = &m.components[i * d..(i + 1) * d];
                    let cj = &m.components[j * d..(j + 1) * d];
                    let dp: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
                    assert!((dp - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6);
                }
            }
            assert!(m.explained_variance_ratio.windows(2).all(|w| w[0] >= w[1]));
            assert!(m.explained_variance_ratio.iter().sum::<f64>() <= 1.0 + 1e-6);
            // k = dim (or N-1 spanning every centered row) reconstructs exactly.
            for r in &rows {
                let back = m.inverse_one(&m.transform_one(r));
                for (a, b) in back.iter().zip(r) {
                    assert!((a - *b as f64).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn wavelet_dims_and_constant_channels() {
        let cfg = WaveletFeatureConfig::default();
        let w = window(32, 69, |_, c| c as f32 * 3.0);
        let f = wavelet_features(&w, &cfg).unwrap();
        assert_eq!(f.len(), 552);
        assert!(f.iter().all(|&v| v == 0.0));
        assert!(wavelet_features(&window(15, 2, |_, _| 0.0), &cfg).is_err());
    }

    #[test]
    fn square_wave_peaks_at_its_scale() {
        for s in [1usize, 2, 4, 8] {
            let x: Vec<f64> = (0..32).map(|t| if (t / s) % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let scores: Vec<f64> = [1usize, 2, 4, 8]
                .iter()
                .map(|&q| {
                    let r = haar_responses(&x, q);
                    r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64
                })
                .collect();
            let own = [1, 2, 4, 8].iter().position(|&q| q == s).unwrap();
            for (i, &v) in scores.iter().enumerate() {
                if i != own {
                    assert!(scores[own] > v, "scale {s}: {scores:?}");
                }
            }
        }
    }

    #[test]
    fn haar_matches_brute_force() {
        let x: Vec<f64> = (0..20).map(|t| ((t * t) as f64).sin()).collect();
        for s in 1..=10 {
            let r = haar_responses(&x, s);
            for (t, &v) in r.iter().enumerate() {
                let a: f64 = x[t..t + s].iter().sum::<f64>() / s as f64;
                let b: f64 = x[t + s..t + 2 * s].iter().sum::<f64>() / s as f64;
                assert!((v - (a - b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probe_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..100 {
            let c = i % 2;
            let off = if c == 0 { -3.0 } else { 3.0 };
            rows.push(vec![off + rng.random::<f32>(), rng.random::<f32>()]);
            y.push(c);
        }
        let x = feature_matrix(&rows).unwrap();
        let p = LinearProbe::fit(&x, &y, 2, &ProbeConfig::default()).unwrap();
        assert_eq!(p.predict_all(&x), y);
        let again = LinearProbe::fit(&x, &y, 2, &ProbeConfig::default()).unwrap();
        assert_eq!(p, again);
        assert!(LinearProbe::fit(&x, &vec![1; 100], 2, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn heavy_regularization_collapses_to_bias_class() {
        let rows: Vec<Vec<f32>> = (0..30).map(|i| vec![i as f32]).collect();
        // Class 1 is the majority, so the bias prefers it.
        let y: Vec<usize> = (0..30).map(|i| usize::from(i % 3 != 0)).collect();
        let x = feature_matrix(&rows).unwrap();
        let cfg = ProbeConfig {
            lambda: 1e6,
            ..ProbeConfig::default()
        };
        let p = LinearProbe::fit(&x, &y, 2, &cfg).unwrap();
        assert!(p.weights.iter().all(|w| w.abs() < 1e-4));
        assert!(p.predict_all(&x).iter().all(|&c| c == 1));
    }
}
