use crate::{NumericsError, ParamStore, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moments and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new<S: Scalar>(params: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = (0..params.len())
            .map(|i| vec![0.0; params.get(i).len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update.
///
/// A non-finite gradient leaves both the parameters and the state untouched
/// and is reported as an error.
pub fn adam_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &[Tensor<S>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(NumericsError::Invalid(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.get(i).shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "adam_step",
                left: params.get(i).shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(NumericsError::NonFiniteGradient(params.name(i).to_string()));
        }
    }

    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (i, g) in grads.iter().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = params.get_mut(i);
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            let gv = gv.as_f64();
            *mv = beta1 * *mv + (1.0 - beta1) * gv;
            *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            let step = lr * mhat / (vhat.sqrt() + eps);
            if step != 0.0 {
                *pv = S::of(pv.as_f64() - step);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[f64]) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.push("w", Tensor::row_vector(vals.to_vec()));
        p
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = store(&[1.0, -2.0, 0.5]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let g = Tensor::row_vector(vec![0.3, -7.0, 1e-3]);
        adam_step(&mut p, &[g], &mut st, 0.01).unwrap();
        let d = p.get(0).data();
        assert!((d[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((d[1] - (-2.0 + 0.01)).abs() < 1e-6);
        assert!((d[2] - (0.5 - 0.01)).abs() < 1e-4);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = store(&[1.0, 2.0]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &[Tensor::row_vector(vec![0.0, 0.0])], &mut st, 0.1).unwrap();
        assert_eq!(p.get(0).data(), &[1.0, 2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let mut p = store(&[1.0]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let err = adam_step(&mut p, &[Tensor::row_vector(vec![f64::NAN])], &mut st, 0.1);
        assert!(matches!(err, Err(NumericsError::NonFiniteGradient(_))));
        assert_eq!(st.t, 0);
        assert_eq!(p.get(0).data(), &[1.0]);
    }

    #[test]
    fn two_steps_are_reproducible() {
        let run = || {
            let mut p = store(&[0.1, 0.2]);
            let mut st = AdamState::new(&p, AdamConfig::default());
            for k in 0..2 {
                let g = Tensor::row_vector(vec![0.5 - k as f64, 1.5]);
                adam_step(&mut p, &[g], &mut st, 1e-2).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }
}
