use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pheno_numerics::{Graph, ParamStore, Scalar, Tensor, Var};

use super::xavier;
use crate::dataio::NUM_BEHAVIORS;
use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadTask {
    Behavior,
    Genotype,
    UnifiedGenotype,
}

impl HeadTask {
    pub fn name(self) -> &'static str {
        match self {
            Self::Behavior => "behavior",
            Self::Genotype => "genotype",
            Self::UnifiedGenotype => "unified_genotype",
        }
    }

    fn check_classes(self, c: usize) -> Result<()> {
        let ok = match self {
            Self::Behavior => c == NUM_BEHAVIORS,
            Self::Genotype => (2..=3).contains(&c),
            Self::UnifiedGenotype => c >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!(
                "{} head cannot have {c} classes",
                self.name()
            )))
        }
    }
}

/// Linear map `logits = W z + b` with `W ∈ R^{C×d}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead<S: Scalar = f32> {
    pub task: HeadTask,
    pub classes: Vec<String>,
    /// `weight` `C×d` and `bias` `1×C`.
    pub params: ParamStore<S>,
}

impl<S: Scalar> ClassifierHead<S> {
    /// Xavier-uniform weights and zero bias.
    pub fn init(task: HeadTask, classes: Vec<String>, d_model: usize, seed: u64) -> Result<Self> {
        task.check_classes(classes.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = classes.len();
        let mut params = ParamStore::new();
        params.push("weight", xavier(&mut rng, c, d_model));
        params.push("bias", Tensor::zeros(&[1, c]));
        Ok(Self {
            task,
            classes,
            params,
        })
    }

    /// All-zero weights and bias: every class starts at the same logit.
    pub fn zeroed(task: HeadTask, classes: Vec<String>, d_model: usize) -> Result<Self> {
        task.check_classes(classes.len())?;
        let c = classes.len();
        let mut params = ParamStore::new();
        params.push("weight", Tensor::zeros(&[c, d_model]));
        params.push("bias", Tensor::zeros(&[1, c]));
        Ok(Self {
            task,
            classes,
            params,
        })
    }

    pub fn from_params(task: HeadTask, classes: Vec<String>, params: ParamStore<S>) -> Result<Self> {
        task.check_classes(classes.len())?;
        let c = classes.len();
        let shapes_ok = params.len() == 2
            && params.name(0) == "weight"
            && params.name(1) == "bias"
            && params.get(0).rows() == c
            && params.get(1).shape() == [1, c];
        if !shapes_ok {
            return Err(CoreError::Checkpoint(format!(
                "{} head tensors do not match {c} classes",
                task.name()
            )));
        }
        Ok(Self {
            task,
            classes,
            params,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn d_model(&self) -> usize {
        self.params.get(0).cols()
    }

    pub fn cast<T: Scalar>(&self) -> ClassifierHead<T> {
        ClassifierHead {
            task: self.task,
            classes: self.classes.clone(),
            params: self.params.cast(),
        }
    }

    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> Vec<Var> {
        (0..2)
            .map(|i| {
                if trainable {
                    g.param(self.params.shared(i))
                } else {
                    g.constant_shared(self.params.shared(i))
                }
            })
            .collect()
    }

    /// `z·Wᵀ + b` for a `B×d` embedding matrix.
    pub fn logits_graph(&self, g: &mut Graph<S>, vars: &[Var], z: Var) -> Result<Var> {
        let wt = g.transpose(vars[0]);
        let l = g.matmul(z, wt)?;
        Ok(g.add(l, vars[1])?)
    }

    /// Logits of one embedding.
    pub fn logits(&self, z: &[f32]) -> Result<Vec<f32>> {
        let (w, b) = (self.params.get(0), self.params.get(1));
        if z.len() != w.cols() {
            return Err(CoreError::Config(format!(
                "embedding has {} entries, head expects {}",
                z.len(),
                w.cols()
            )));
        }
        Ok((0..w.rows())
            .map(|c| {
                let dot: f64 = w
                    .row(c)
                    .iter()
                    .zip(z)
                    .map(|(&wv, &zv)| wv.as_f64() * zv as f64)
                    .sum();
                (dot + b.data()[c].as_f64()) as f32
            })
            .collect())
    }
}

/// `W z + b`.
pub fn head_logits(z: &[f32], head: &ClassifierHead) -> Result<Vec<f32>> {
    head.logits(z)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f64> = logits.iter().map(|&l| ((l - m) as f64).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| (v / s) as f32).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn class_counts_are_checked() {
        assert!(ClassifierHead::<f32>::init(HeadTask::Behavior, classes(9), 4, 0).is_ok());
        assert!(ClassifierHead::<f32>::init(HeadTask::Behavior, classes(3), 4, 0).is_err());
        assert!(ClassifierHead::<f32>::init(HeadTask::Genotype, classes(4), 4, 0).is_err());
        assert!(ClassifierHead::<f32>::init(HeadTask::UnifiedGenotype, classes(7), 4, 0).is_ok());
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let mut h = ClassifierHead::<f32>::init(HeadTask::Behavior, classes(9), 4, 0).unwrap();
        h.params.get_mut(0).data_mut().fill(0.0);
        let l = head_logits(&[1.0, -2.0, 3.0, 0.5], &h).unwrap();
        assert!(l.iter().all(|&v| v == 0.0));
        for p in softmax(&l) {
            assert!((p - 1.0 / 9.0).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_embedding_gives_bias() {
        let mut h = ClassifierHead::<f32>::init(HeadTask::Genotype, classes(3), 4, 1).unwrap();
        h.params.get_mut(1).data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        assert_eq!(head_logits(&[0.0; 4], &h).unwrap(), vec![0.5, -1.0, 2.0]);
        assert!(head_logits(&[0.0; 3], &h).is_err());
    }

    #[test]
    fn doubling_a_row_flips_argmax() {
        let mut h = ClassifierHead::<f32>::init(HeadTask::Genotype, classes(2), 2, 0).unwrap();
        h.params.get_mut(0).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.5]);
        let z = [2.0, 1.0];
        // Row contributions w_c·z: 2.0 and 1.5.
        let before = head_logits(&z, &h).unwrap();
        assert_eq!(argmax(&before), 0);
        let w = h.params.get_mut(0).data_mut();
        w[2] *= 2.0;
        w[3] *= 2.0;
        let after = head_logits(&z, &h).unwrap();
        assert_eq!(after[1], 2.0 * before[1]);
        assert_eq!(argmax(&after), 1);
    }

    #[test]
    fn graph_logits_match_direct() {
        let h = ClassifierHead::<f32>::init(HeadTask::Behavior, classes(9), 4, 3).unwrap();
        let z = [0.3f32, -0.7, 1.1, 0.0];
        let mut g = Graph::new();
        let v = h.bind(&mut g, false);
        let zv = g.constant(Tensor::row_vector(z.to_vec()));
        let l = h.logits_graph(&mut g, &v, zv).unwrap();
        let direct = h.logits(&z).unwrap();
        for (a, b) in g.value(l).data().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
