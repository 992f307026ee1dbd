//! Central-difference gradient verification (run in `f64`).

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Graph, Result, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub eps: f64,
    /// Coordinates checked when the parameters hold more than this many.
    pub max_coords: usize,
    /// Floor applied to the denominator of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_coords: 256,
            floor: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// (param index, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences. `f` receives a fresh graph with every tensor in `params`
/// bound as a trainable leaf, in order.
pub fn gradcheck<F>(f: F, params: &[Tensor<f64>], opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    gradcheck_with(f, params, opts, |_| {})
}

#[doc(hidden)]
pub fn gradcheck_with<F, P>(
    f: F,
    params: &[Tensor<f64>],
    opts: GradcheckOptions,
    prepare: P,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    P: Fn(&mut Graph<f64>),
{
    let eval = |ps: &[Arc<Tensor<f64>>], with_grad: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        prepare(&mut g);
        let vars: Vec<Var> = ps.iter().map(|p| g.param(Arc::clone(p))).collect();
        let out = f(&mut g, &vars)?;
        let value = g.value(out).data()[0];
        if !with_grad {
            return Ok((value, Vec::new()));
        }
        let grads = g.backward(out)?;
        let gs = vars
            .iter()
            .zip(ps)
            .map(|(&v, p)| grads.get_or_zeros(v, p))
            .collect();
        Ok((value, gs))
    };

    let mut ps: Vec<Arc<Tensor<f64>>> = params.iter().cloned().map(Arc::new).collect();
    let (_, analytic) = eval(&ps, true)?;

    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, p| {
            let o = *acc;
            *acc += p.len();
            Some(o)
        })
        .collect();
    let total: usize = params.iter().map(|p| p.len()).sum();
    let coords: Vec<usize> = if total <= opts.max_coords {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut v = sample(&mut rng, total, opts.max_coords).into_vec();
        v.sort_unstable();
        v
    };

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        coords_checked: coords.len(),
        worst: None,
    };
    for flat in coords {
        let pi = offsets.partition_point(|&o| o <= flat) - 1;
        let k = flat - offsets[pi];
        let orig = ps[pi].data()[k];

        Arc::make_mut(&mut ps[pi]).data_mut()[k] = orig + opts.eps;
        let (fp, _) = eval(&ps, false)?;
        Arc::make_mut(&mut ps[pi]).data_mut()[k] = orig - opts.eps;
        let (fm, _) = eval(&ps, false)?;
        Arc::make_mut(&mut ps[pi]).data_mut()[k] = orig;

        let numeric = (fp - fm) / (2.0 * opts.eps);
        let a = analytic[pi].data()[k];
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        let rel = (a - numeric).abs() / denom;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((pi, k, a, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Fault;

    #[test]
    fn quadratic_form_is_exact() {
        let a = Tensor::matrix(3, 3, vec![2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 3.0]).unwrap();
        let x = Tensor::matrix(3, 1, vec![0.4, -1.2, 0.7]).unwrap();
        let rep = gradcheck(
            |g, v| {
                let ax = g.matmul(v[0], v[1])?;
                let xt = g.transpose(v[1]);
                g.matmul(xt, ax)
            },
            &[a, x],
            GradcheckOptions::default(),
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-9, "{rep:?}");
    }

    #[test]
    fn corrupted_gelu_is_detected() {
        let x = Tensor::matrix(2, 3, vec![0.3, -1.1, 2.0, 0.9, -0.2, 1.4]).unwrap();
        let f = |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.gelu(v[0]);
            Ok(g.sum(y))
        };
        let good = gradcheck(f, &[x.clone()], GradcheckOptions::default()).unwrap();
        assert!(good.max_rel_error < 1e-6);
        let bad = gradcheck_with(f, &[x], GradcheckOptions::default(), |g| {
            g.inject_fault(Fault::GeluReverse)
        })
        .unwrap();
        assert!(bad.max_rel_error > 1e-2);
    }
}
