//! Supervised and unsupervised metrics, 2D projection and genotype
//! enrichment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pheno_numerics::Tensor;

use crate::baselines::PcaModel;
use crate::{CoreError, Result};

pub const DEFAULT_K: usize = 9;
pub const DEFAULT_MAX_ITER: usize = 300;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(CoreError::Config(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(CoreError::Empty("prediction set"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Rows are truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    /// Row-normalized counts; rows listed in `empty_rows` stay zero.
    pub normalized: Vec<Vec<f64>>,
    pub empty_rows: Vec<usize>,
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    check_lengths(preds.len(), labels.len())?;
    let mut counts = vec![vec![0u64; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(CoreError::Config(format!(
                "class index {} outside 0..{classes}",
                p.max(l)
            )));
        }
        counts[l][p] += 1;
    }
    let mut empty_rows = Vec::new();
    let normalized = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: u64 = row.iter().sum();
            if n == 0 {
                empty_rows.push(i);
                vec![0.0; classes]
            } else {
                row.iter().map(|&c| c as f64 / n as f64).collect()
            }
        })
        .collect();
    Ok(ConfusionMatrix {
        counts,
        normalized,
        empty_rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub assignments: Vec<usize>,
    /// `k×d`, row-major.
    pub centroids: Vec<f64>,
    pub dim: usize,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    pub silhouette: Option<f64>,
    pub nmi_vs_labels: Option<f64>,
}

impl ClusteringResult {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f32]) -> usize {
        nearest(x, &self.centroids, self.dim, self.k).0
    }

    pub fn centroids_tensor(&self) -> Tensor<f32> {
        Tensor::matrix(
            self.k,
            self.dim,
            self.centroids.iter().map(|&v| v as f32).collect(),
        )
        .expect("k×d")
    }
}

fn sq_dist(x: &[f32], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let d = a as f64 - b;
            d * d
        })
        .sum()
}

fn nearest(x: &[f32], centroids: &[f64], d: usize, k: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..k {
        let dist = sq_dist(x, &centroids[c * d..(c + 1) * d]);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

/// Index `i` with `cum[i-1] ≤ u·total < cum[i]`.
fn weighted_pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return (rng.random::<f64>() * weights.len() as f64) as usize;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// k-means++ seeding followed by Lloyd iterations until the assignments stop
/// changing or `max_iter` is reached. Empty clusters take the point farthest
/// from its centroid.
pub fn kmeans<R: AsRef<[f32]>>(x: &[R], k: usize, seed: u64, max_iter: usize) -> Result<ClusteringResult> {
    let n = x.len();
    if k == 0 || n < k {
        return Err(CoreError::Config(format!("k-means needs N ≥ k ≥ 1 (N={n}, k={k})")));
    }
    let d = x[0].as_ref().len();
    if x.iter().any(|r| r.as_ref().len() != d) {
        return Err(CoreError::Config("ragged k-means input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![0.0f64; k * d];
    let first = ((rng.random::<f64>() * n as f64) as usize).min(n - 1);
    let set = |cents: &mut [f64], c: usize, p: &[f32]| {
        for (dst, &v) in cents[c * d..(c + 1) * d].iter_mut().zip(p) {
            *dst = v as f64;
        }
    };
    set(&mut centroids, 0, x[first].as_ref());
    let mut d2: Vec<f64> = x.iter().map(|p| sq_dist(p.as_ref(), &centroids[..d])).collect();
    for c in 1..k {
        let i = weighted_pick(&d2, &mut rng);
        set(&mut centroids, c, x[i].as_ref());
        for (j, p) in x.iter().enumerate() {
            d2[j] = d2[j].min(sq_dist(p.as_ref(), &centroids[c * d..(c + 1) * d]));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for (i, p) in x.iter().enumerate() {
            let (c, dd) = nearest(p.as_ref(), &centroids, d, k);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            dist[i] = dd;
        }
        let inertia: f64 = dist.iter().sum();
        if let Some(&prev) = trace.last() {
            assert!(
                inertia <= prev + 1e-9 * prev.abs().max(1.0),
                "k-means inertia increased from {prev} to {inertia}"
            );
        }
        trace.push(inertia);
        if !changed || iterations == max_iter {
            break;
        }
        iterations += 1;

        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (p, &c) in x.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, &v) in sums[c * d..(c + 1) * d].iter_mut().zip(p.as_ref()) {
                *s += v as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
        // Repair: the farthest point (lowest index on ties) becomes the centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("n ≥ 1");
                set(&mut centroids, c, x[far].as_ref());
                dist[far] = 0.0;
            }
        }
    }
    let inertia = *trace.last().expect("one assignment pass");
    Ok(ClusteringResult {
        k,
        assignments,
        centroids,
        dim: d,
        inertia,
        inertia_trace: trace,
        iterations,
        silhouette: None,
        nmi_vs_labels: None,
    })
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette with Euclidean distance. Points in singleton clusters
/// score 0, as do points with `a = b = 0`.
pub fn silhouette<R: AsRef<[f32]>>(x: &[R], assignments: &[usize]) -> Result<f64> {
    check_lengths(x.len(), assignments.len())?;
    let k = assignments.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignments {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(CoreError::Config("silhouette needs at least two clusters".into()));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0f64; k];
    for (i, p) in x.iter().enumerate() {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (j, q) in x.iter().enumerate() {
            if i != j {
                sums[assignments[j]] += dist(p.as_ref(), q.as_ref());
            }
        }
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / x.len() as f64)
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(A;B) / sqrt(H(A)·H(B))`; 0 when either entropy is 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let n = a.len() as f64;
    let mut joint = vec![0.0f64; ka * kb];
    let mut ca = vec![0.0f64; ka];
    let mut cb = vec![0.0f64; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1.0;
        ca[x] += 1.0;
        cb[y] += 1.0;
    }
    let (ha, hb) = (entropy(&ca, n), entropy(&cb, n));
    if ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let j = joint[x * kb + y];
            if j > 0.0 {
                mi += j / n * (j * n / (ca[x] * cb[y])).ln();
            }
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Two-component PCA basis fitted on L2-normalized embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection2d {
    pub mean: Vec<f32>,
    /// `2×d`, row-major.
    pub components: Vec<f32>,
}

fn l2_normalize(z: &[f32]) -> Vec<f32> {
    let n = z.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    if n == 0.0 {
        z.to_vec()
    } else {
        z.iter().map(|&v| (v as f64 / n) as f32).collect()
    }
}

impl Projection2d {
    pub fn fit<R: AsRef<[f32]>>(embeddings: &[R]) -> Result<Self> {
        if embeddings.len() < 2 {
            return Err(CoreError::Config("projection needs at least two embeddings".into()));
        }
        let d = embeddings[0].as_ref().len();
        let mut data = Vec::with_capacity(embeddings.len() * d);
        for z in embeddings {
            data.extend(l2_normalize(z.as_ref()));
        }
        let x = Tensor::matrix(embeddings.len(), d, data)?;
        let pca = PcaModel::fit(&x, 2.min(d).min(embeddings.len() - 1))?;
        let mut components: Vec<f32> = pca.components.iter().map(|&v| v as f32).collect();
        components.resize(2 * d, 0.0);
        Ok(Self {
            mean: pca.mean.iter().map(|&v| v as f32).collect(),
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, z: &[f32]) -> [f32; 2] {
        let u = l2_normalize(z);
        let d = self.dim();
        let mut out = [0.0f32; 2];
        for (r, o) in out.iter_mut().enumerate() {
            let comp = &self.components[r * d..(r + 1) * d];
            *o = u
                .iter()
                .zip(&self.mean)
                .zip(comp)
                .map(|((&x, &m), &c)| (x as f64 - m as f64) * c as f64)
                .sum::<f64>() as f32;
        }
        out
    }
}

/// Fits a projection and applies it to the same embeddings.
pub fn project_2d<R: AsRef<[f32]>>(embeddings: &[R]) -> Result<(Projection2d, Vec<[f32; 2]>)> {
    let p = Projection2d::fit(embeddings)?;
    let coords = embeddings.iter().map(|z| p.transform(z.as_ref())).collect();
    Ok((p, coords))
}

/// Genotype composition per behavior class (or per cluster).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    /// Row-normalized; rows in `empty_rows` stay zero.
    pub fractions: Vec<Vec<f64>>,
    pub empty_rows: Vec<usize>,
}

/// `row_of[i]` is the behavior or cluster of window `i`, `genotype_of[i]`
/// its genotype index.
pub fn enrichment(
    row_of: &[usize],
    genotype_of: &[usize],
    rows: Vec<String>,
    cols: Vec<String>,
) -> Result<EnrichmentMatrix> {
    if row_of.len() != genotype_of.len() {
        return Err(CoreError::Config(format!(
            "length mismatch: {} vs {}",
            row_of.len(),
            genotype_of.len()
        )));
    }
    let (r, c) = (rows.len(), cols.len());
    let mut counts = vec![vec![0u64; c]; r];
    for (&i, &g) in row_of.iter().zip(genotype_of) {
        if i >= r || g >= c {
            return Err(CoreError::Config(format!("enrichment index ({i}, {g}) outside {r}×{c}")));
        }
        counts[i][g] += 1;
    }
    let mut empty_rows = Vec::new();
    let fractions = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: u64 = row.iter().sum();
            if n == 0 {
                empty_rows.push(i);
                vec![0.0; c]
            } else {
                row.iter().map(|&v| v as f64 / n as f64).collect()
            }
        })
        .collect();
    Ok(EnrichmentMatrix {
        rows,
        cols,
        counts,
        fractions,
        empty_rows,
    })
}

/// Mean squared difference over every cell of the rows that are non-empty
/// in `truth`.
pub fn enrichment_mse(predicted: &EnrichmentMatrix, truth: &EnrichmentMatrix) -> Result<f64> {
    let shape = |m: &EnrichmentMatrix| (m.fractions.len(), m.cols.len());
    if shape(predicted) != shape(truth) {
        return Err(CoreError::Config(format!(
            "enrichment shapes differ: {:?} vs {:?}",
            shape(predicted),
            shape(truth)
        )));
    }
    let mut sum = 0.0;
    let mut cells = 0usize;
    for (i, (p, t)) in predicted.fractions.iter().zip(&truth.fractions).enumerate() {
        if truth.empty_rows.contains(&i) {
            continue;
        }
        for (a, b) in p.iter().zip(t) {
            sum += (a - b) * (a - b);
            cells += 1;
        }
    }
    if cells == 0 {
        return Err(CoreError::Empty("enrichment matrix"));
    }
    Ok(sum / cells as f64)
}

/// Evenly spaced subsample of at most `max` indices out of `n`.
pub fn stride_subsample(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|i| i * n / max).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let l = vec![0, 1, 2, 2, 1];
        assert_eq!(accuracy(&l, &l).unwrap(), 1.0);
        let c = confusion(&l, &l, 3).unwrap();
        for (i, row) in c.normalized.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(accuracy(&l, &l[..2]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn uniform_random_predictions_hit_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (classes, chance) in [(9usize, 1.0 / 9.0), (3, 1.0 / 3.0)] {
            let p: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..classes)).collect();
            let l: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..classes)).collect();
            assert!((accuracy(&p, &l).unwrap() - chance).abs() < 0.02);
        }
    }

    #[test]
    fn confusion_flags_empty_rows() {
        let c = confusion(&[0, 1, 1], &[0, 0, 2], 3).unwrap();
        assert_eq!(c.empty_rows, vec![1]);
        assert_eq!(c.normalized[0], vec![0.5, 0.5, 0.0]);
        assert!(confusion(&[3], &[0], 3).is_err());
    }

    #[test]
    fn silhouette_hand_example() {
        let x = vec![vec![0.0f32, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        let s = silhouette(&x, &[0, 0, 1, 1]).unwrap();
        // a = 1, b = (10 + √101)/2 for every point.
        let b = (10.0 + 101f64.sqrt()) / 2.0;
        assert!((s - (b - 1.0) / b).abs() < 1e-12);
        assert!((s - 0.9005).abs() < 1e-3);
    }

    #[test]
    fn silhouette_conventions() {
        let same = vec![vec![1.0f32, 1.0]; 4];
        assert_eq!(silhouette(&same, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(silhouette(&same, &[0, 0, 0, 0]).is_err());
        let x = vec![vec![0.0f32], vec![1.0], vec![5.0]];
        // Point 2 is a singleton and contributes 0.
        let s = silhouette(&x, &[0, 0, 1]).unwrap();
        let expected = ((5.0 - 1.0) / 5.0 + (4.0 - 1.0) / 4.0) / 3.0;
        assert!((s - expected).abs() < 1e-12);
    }

    #[test]
    fn nmi_conventions() {
        let a: Vec<usize> = (0..100).map(|i| i % 4).collect();
        assert!((nmi(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&a, &vec![0; 100]).unwrap(), 0.0);
        let perm: Vec<usize> = a.iter().map(|&v| 3 - v).collect();
        assert!((nmi(&a, &perm).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmi_of_independent_partitions_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..9)).collect();
        let b: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..9)).collect();
        assert!(nmi(&a, &b).unwrap() < 0.02);
    }

    #[test]
    fn kmeans_splits_a_long_rectangle() {
        let x = vec![vec![0.0f32, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        let r = kmeans(&x, 2, 3, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        assert!((r.inertia - 1.0).abs() < 1e-12);
        assert!(kmeans(&x, 5, 0, 10).is_err());
    }

    #[test]
    fn kmeans_duplicated_data_doubles_inertia() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f32>> = (0..200)
            .map(|i| {
                let c = (i % 3) as f32 * 4.0;
                vec![c + rng.random::<f32>(), c - rng.random::<f32>()]
            })
            .collect();
        let dup: Vec<Vec<f32>> = x.iter().flat_map(|p| [p.clone(), p.clone()]).collect();
        let a = kmeans(&x, 3, 9, DEFAULT_MAX_ITER).unwrap();
        let b = kmeans(&dup, 3, 9, DEFAULT_MAX_ITER).unwrap();
        for (u, v) in a.centroids.iter().zip(&b.centroids) {
            assert!((u - v).abs() < 1e-9);
        }
        assert!((2.0 * a.inertia - b.inertia).abs() < 1e-9 * b.inertia);
    }

    #[test]
    fn kmeans_repairs_empty_clusters() {
        // Three identical points and one outlier; k = 3 forces duplicates.
        let x = vec![vec![0.0f32], vec![0.0], vec![0.0], vec![9.0]];
        let r = kmeans(&x, 3, 1, DEFAULT_MAX_ITER).unwrap();
        assert!(r.inertia.abs() < 1e-12);
    }

    #[test]
    fn projection_of_centered_unit_points_preserves_distances() {
        let x = vec![vec![1.0f32, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let x: Vec<Vec<f32>> = x
            .iter()
            .map(|p| {
                let (c, s) = (0.3f32.cos(), 0.3f32.sin());
                vec![c * p[0] - s * p[1], s * p[0] + c * p[1]]
            })
            .collect();
        let (_, coords) = project_2d(&x).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let d0 = dist(&x[i], &x[j]);
                let d1 = dist(&coords[i], &coords[j]);
                assert!((d0 - d1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_ignores_embedding_scale() {
        let x: Vec<Vec<f32>> = (0..20)
            .map(|i| (0..8).map(|j| ((i * 7 + j * 3) as f32).sin()).collect())
            .collect();
        let (p, coords) = project_2d(&x).unwrap();
        let scaled: Vec<f32> = x[4].iter().map(|v| v * 5.0).collect();
        let c = p.transform(&scaled);
        assert!((c[0] - coords[4][0]).abs() < 1e-6 && (c[1] - coords[4][1]).abs() < 1e-6);
        assert_eq!(p.transform(&x[3]), p.transform(&x[3].clone()));
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn enrichment_rows() {
        let single = enrichment(&[0, 1, 1], &[0, 0, 0], names(2), names(3)).unwrap();
        assert_eq!(single.fractions, vec![vec![1.0, 0.0, 0.0]; 2]);
        let balanced = enrichment(&[0, 0, 1, 1], &[0, 1, 0, 1], names(3), names(2)).unwrap();
        assert_eq!(balanced.fractions[0], vec![0.5, 0.5]);
        assert_eq!(balanced.empty_rows, vec![2]);
    }

    #[test]
    fn enrichment_mse_limits() {
        let p = enrichment(&[0, 1], &[0, 1], names(2), names(2)).unwrap();
        let t = enrichment(&[0, 1], &[1, 0], names(2), names(2)).unwrap();
        assert_eq!(enrichment_mse(&p, &p).unwrap(), 0.0);
        assert_eq!(enrichment_mse(&p, &t).unwrap(), 1.0);
        let other = enrichment(&[0], &[0], names(2), names(3)).unwrap();
        assert!(enrichment_mse(&p, &other).is_err());
    }
}
