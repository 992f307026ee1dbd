use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pheno_core::dataio::BehaviorLabel;
use pheno_core::encoder::{ClassifierHead, EncoderConfig, EncoderModel, HeadTask};
use pheno_numerics::{gradcheck_with, Fault, GradcheckOptions, GradcheckReport, Graph};

const BATCH: usize = 3;

fn check(seed: u64, fault: Option<Fault>) -> GradcheckReport {
    let cfg = EncoderConfig::default();
    let model = EncoderModel::<f64>::init(cfg, seed).unwrap();
    let head =
        ClassifierHead::<f64>::init(HeadTask::Behavior, BehaviorLabel::names(), cfg.d_model, seed + 1)
            .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let windows: Vec<Vec<f32>> = (0..BATCH)
        .map(|_| (0..cfg.window_values()).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect())
        .collect();
    let labels: Vec<usize> = (0..BATCH).map(|_| rng.random_range(0..9)).collect();
    let refs: Vec<&[f32]> = windows.iter().map(|w| w.as_slice()).collect();
    let input = model.input(&refs).unwrap();

    let mut params = model.params.tensors();
    params.extend(head.params.tensors());
    let n_enc = model.params.len();
    let f = |g: &mut Graph<f64>, vars: &[pheno_numerics::Var]| {
        let x = g.constant(input.clone());
        let z = model.encode_graph(g, &vars[..n_enc], x, BATCH, None).map_err(num)?;
        let logits = head.logits_graph(g, &vars[n_enc..], z).map_err(num)?;
        g.cross_entropy(logits, &labels)
    };
    let opts = GradcheckOptions {
        seed,
        ..GradcheckOptions::default()
    };
    gradcheck_with(f, &params, opts, |g| {
        if let Some(fault) = fault {
            g.inject_fault(fault);
        }
    })
    .unwrap()
}

fn num(e: pheno_core::CoreError) -> pheno_numerics::NumericsError {
    match e {
        pheno_core::CoreError::Numerics(n) => n,
        other => panic!("unexpected encoder error: {other}"),
    }
}

#[test]
fn encoder_head_cross_entropy_gradients_match_central_differences() {
    let start = Instant::now();
    for seed in 0..5 {
        let r = check(seed, None);
        assert!(
            r.max_rel_error < 1e-4,
            "seed {seed}: max relative error {} at {:?}",
            r.max_rel_error,
            r.worst
        );
    }
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn reversed_gelu_derivative_is_detected() {
    let r = check(0, Some(Fault::GeluReverse));
    assert!(r.max_rel_error > 1e-2, "fault went unnoticed: {}", r.max_rel_error);
}
