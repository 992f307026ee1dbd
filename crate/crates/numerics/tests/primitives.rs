use std::sync::Arc;

use pheno_numerics::{
    adam_step, gradcheck, AdamConfig, AdamState, GradcheckOptions, Graph, ParamStore, Tensor, Var,
};
use proptest::prelude::*;

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn check<F>(f: F, params: &[Tensor<f64>]) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> pheno_numerics::Result<Var>,
{
    gradcheck(f, params, GradcheckOptions::default())
        .unwrap()
        .max_rel_error
}

// A fixed random projection turns any tensor into a scalar with a
// non-trivial upstream gradient.
fn project(g: &mut Graph<f64>, x: Var) -> pheno_numerics::Result<Var> {
    let t = g.value(x);
    let w: Vec<f64> = (0..t.len()).map(|i| ((i * 7 + 3) as f64).sin()).collect();
    let w = g.constant(Tensor::new(t.shape().to_vec(), w).unwrap());
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_reverse_rule(a in mat(3, 4), b in mat(4, 2)) {
        let e = check(|g, v| { let y = g.matmul(v[0], v[1])?; project(g, y) }, &[a, b]);
        prop_assert!(e < 1e-4, "rel error {e}");
    }

    #[test]
    fn add_and_broadcast_reverse_rule(a in mat(3, 4), b in mat(1, 4), c in mat(3, 4)) {
        let e = check(|g, v| {
            let y = g.add(v[0], v[1])?;
            let y = g.add(y, v[2])?;
            let y = g.sub(y, v[2])?;
            let y = g.mul(y, v[2])?;
            project(g, y)
        }, &[a, b, c]);
        prop_assert!(e < 1e-4, "rel error {e}");
    }

    #[test]
    fn scale_and_mul_row_reverse_rule(a in mat(3, 4), b in mat(1, 4)) {
        let e = check(|g, v| {
            let y = g.mul(v[0], v[1])?;
            let y = g.scale(y, -1.7);
            project(g, y)
        }, &[a, b]);
        prop_assert!(e < 1e-4, "rel error {e}");
    }

    #[test]
    fn layer_norm_reverse_rule(a in mat(3, 6)) {
        let e = check(|g, v| { let y = g.layer_norm(v[0], 1e-5); project(g, y) }, &[a]);
        prop_assert!(e < 1e-4, "rel error {e}");
    }

    #[test]
    fn gelu_reverse_rule(a in mat(2, 5)) {
        let e = check(|g, v| { let y = g.gelu(v[0]); project(g, y) }, &[a]);
        prop_assert!(e < 1e-4, "rel error {e}");
    }

    #[test]
    fn softmax_reverse_rule(a in mat(3, 4)) {
        let e = check(|g, v| { let y = g.softmax(v[0]); project(g, y) }, &[a]);
        prop_assert!(e < 1e-4, "rel error {e}");
    }

    #[test]
    fn mean_over_axis_reverse_rule(a in mat(4, 3)) {
        let e = check(|g, v| {
            let r = g.mean_over_axis(v[0], 0)?;
            let c = g.mean_over_axis(v[0], 1)?;
            let x = project(g, r)?;
            let y = project(g, c)?;
            g.add(x, y)
        }, &[a]);
        prop_assert!(e < 1e-4, "rel error {e}");
    }

    #[test]
    fn gather_transpose_concat_slice_reverse_rule(a in mat(3, 4), b in mat(2, 4)) {
        let e = check(|g, v| {
            let s = g.embedding_slice(v[0], &[2, 0, 2])?;
            let st = g.concat(&[s, v[1]], 0)?;
            let t = g.transpose(st);
            let l = g.slice_cols(t, 1, 3)?;
            let r = g.slice_cols(t, 0, 2)?;
            let c = g.concat(&[l, r], 1)?;
            project(g, c)
        }, &[a, b]);
        prop_assert!(e < 1e-4, "rel error {e}");
    }

    #[test]
    fn cross_entropy_and_mse_reverse_rule(a in mat(3, 5), b in mat(3, 5)) {
        let e = check(|g, v| {
            let ce = g.cross_entropy(v[0], &[0, 4, 2])?;
            let m = g.mse(v[0], v[1])?;
            g.add(ce, m)
        }, &[a, b]);
        prop_assert!(e < 1e-4, "rel error {e}");
    }

    #[test]
    fn softmax_is_a_distribution(a in mat(4, 7)) {
        let mut g = Graph::<f64>::new();
        let x = g.constant(a.cast::<f32>().cast());
        let y = g.softmax(x);
        let t = g.value(y);
        for r in 0..4 {
            let s: f64 = t.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            prop_assert!(t.row(r).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn layer_norm_moments(a in mat(3, 16)) {
        for r in 0..3 {
            let row = a.row(r);
            let m = row.iter().sum::<f64>() / 16.0;
            prop_assume!(row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 16.0 > 0.1);
        }
        let mut g = Graph::<f64>::new();
        let x = g.constant(a);
        let y = g.layer_norm(x, 1e-5);
        let t = g.value(y);
        for r in 0..3 {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            prop_assert!(mean.abs() < 1e-5);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn adam_with_zero_lr_is_identity(a in mat(2, 3), gr in mat(2, 3)) {
        let mut p = ParamStore::new();
        p.push("w", a.clone());
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &[gr], &mut st, 0.0).unwrap();
        prop_assert_eq!(p.get(0), &a);
    }
}

#[test]
fn softmax_cross_entropy_composition_matches_finite_differences() {
    // sum(softmax(w) · onehot) fed through −log: the gradient must be
    // softmax(w) − onehot.
    let w = Tensor::matrix(1, 4, vec![0.3, -0.8, 1.2, 0.1]).unwrap();
    let onehot = Tensor::matrix(1, 4, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    let mut g = Graph::<f64>::new();
    let wv = g.param(Arc::new(w.clone()));
    let loss = g.cross_entropy(wv, &[2]).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic = grads.get(wv).unwrap().data().to_vec();

    let ce = |w: &[f64]| {
        let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = w.iter().map(|v| (v - m).exp()).sum();
        -((w[2] - m).exp() / z).ln()
    };
    let eps = 1e-6;
    for k in 0..4 {
        let mut p = w.data().to_vec();
        p[k] += eps;
        let fp = ce(&p);
        p[k] -= 2.0 * eps;
        let fm = ce(&p);
        let numeric = (fp - fm) / (2.0 * eps);
        assert!((numeric - analytic[k]).abs() < 1e-8);
        let m = w.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = w.data().iter().map(|v| (v - m).exp()).sum();
        let p_k = (w.data()[k] - m).exp() / z;
        assert!((analytic[k] - (p_k - onehot.data()[k])).abs() < 1e-12);
    }
}
