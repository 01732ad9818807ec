mod common;

use capsule_core::diffusion::{
    build_schedule, fit, ActionNormalizer, Example, Policy, PolicyKind, Sampler, ScheduleKind, TrainConfig,
};
use capsule_core::nn::{Activation, Adam, Mlp};
use capsule_core::observation::PROPRIO_DIM;
use common::*;
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn schedule_coefficients_satisfy_their_definitions() {
    for steps in [1, 2, 10, 100, 1000] {
        assert!(schedule_identity_worst(steps) < 1e-12, "K = {steps}");
    }
}

#[test]
fn forward_noise_variance_matches_schedule() {
    for k in [1, 50, 100] {
        let e = noise_variance_error(100, k, 200_000, k as u64);
        assert!(e < 0.02, "k = {k}: {e}");
    }
}

#[test]
fn constant_denoiser_is_a_fixed_point() {
    for (i, steps) in [1, 2, 3, 10, 50, 100, 250].into_iter().enumerate() {
        assert!(fixed_point_holds(steps, i as u64), "K = {steps}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    for kind in [PolicyKind::Diffusion, PolicyKind::Regression] {
        let worst = (0..100).map(|s| gradient_check(kind, s)).fold(0.0, f64::max);
        assert!(worst < 1e-4, "{kind:?}: {worst}");
    }
}

#[test]
fn mlp_matches_numpy_reference() {
    let mut net = Mlp::zeros(&[3, 4, 2], Activation::Gelu).unwrap();
    for (i, p) in net.params_mut().iter_mut().enumerate() {
        *p = (0.7 * i as f64 + 0.3).sin();
    }
    let x = Array2::from_shape_vec((2, 3), vec![0.5, -1.2, 2.0, 0.0, 0.3, -0.7]).unwrap();
    let y = net.forward(x.view()).unwrap();
    let numpy = [-2.4211395008259133, 0.6722628070058463, -1.3609607624204638, -0.4638511526945639];
    for (a, b) in y.iter().zip(numpy) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn adam_minimizes_a_quadratic() {
    let target = [3.0, -2.0, 0.5];
    let mut p = vec![0.0; 3];
    let mut opt = Adam::new(3, 0.05);
    for _ in 0..2000 {
        let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
        opt.step(&mut p, &g).unwrap();
    }
    for (x, t) in p.iter().zip(target) {
        assert!((x - t).abs() < 1e-3);
    }
}

#[test]
fn training_overfits_a_single_example() {
    let cfg = tiny_policy_config(PolicyKind::Regression, 1);
    let mut p = Policy::new(cfg, ActionNormalizer::identity()).unwrap();
    let obs = blank_observation(vec![0.2; PROPRIO_DIM], "one");
    let ex = Example {
        features: p.stack.featurize(&obs).unwrap(),
        chunk: (0..p.chunk_dim()).map(|i| (i as f64 * 0.37).sin() * 0.8).collect(),
    };
    let tc = TrainConfig {
        steps: 1500,
        batch: 4,
        lr: 1e-2,
        ema: 0.0,
        ..TrainConfig::default()
    };
    let losses = fit(&mut p, &[ex.clone()], &tc).unwrap();
    assert!(losses.last().unwrap() < &1e-4, "{}", losses.last().unwrap());
    let out = p.sample_normalized(&ex.features, Sampler::Ancestral, 1, &mut rng(0)).unwrap();
    for (a, b) in out.iter().zip(&ex.chunk) {
        assert!((a - b).abs() < 0.02);
    }
}

#[test]
fn diffusion_keeps_both_modes_and_regression_averages() {
    let fx = TwoModeFixture::new();
    let diff = fx.train(PolicyKind::Diffusion, 3000);
    let f = &fx.data[0].features;
    let mut r = rng(11);
    let x = diff.sample_normalized(f, Sampler::Ancestral, 1000, &mut r).unwrap();
    let (plus, minus) = mode_counts(&x);
    assert!(plus + minus >= 900, "{plus} + {minus}");
    assert!(plus >= 250 && minus >= 250, "{plus} / {minus}");

    let anc = diff.sample_normalized(f, Sampler::Ancestral, 10_000, &mut r).unwrap();
    let fast = diff.sample_normalized(f, Sampler::FastDeterministic, 10_000, &mut r).unwrap();
    let gap = mean_distance(&anc, &fast);
    assert!(gap < 0.05, "fast sampler mean is {gap} away");

    let reg = fx.train(PolicyKind::Regression, 3000);
    let y = reg.sample_normalized(f, Sampler::Ancestral, 1, &mut r).unwrap();
    assert!(y.iter().all(|v| v.abs() < 0.15));
}

proptest! {
    #[test]
    fn last_reverse_step_returns_clean_estimate(
        x0 in prop::collection::vec(-1.0f64..1.0, 5),
        xk in prop::collection::vec(-5.0f64..5.0, 5),
        z in prop::collection::vec(-5.0f64..5.0, 5),
        steps in 1usize..300,
    ) {
        let s = build_schedule(steps, ScheduleKind::Cosine).unwrap();
        prop_assert_eq!(s.posterior_step(1, &x0, &xk, &z).unwrap(), x0);
    }

    #[test]
    fn forward_noise_is_affine_in_signal_and_noise(
        a in prop::collection::vec(-1.0f64..1.0, 4),
        eps in prop::collection::vec(-3.0f64..3.0, 4),
        k in 1usize..=100,
    ) {
        let s = build_schedule(100, ScheduleKind::Cosine).unwrap();
        let x = s.forward_noise(&a, k, &eps).unwrap();
        let (sa, sn) = s.noise_coefficients(k);
        prop_assert!((sa * sa + sn * sn - 1.0).abs() < 1e-12);
        for i in 0..4 {
            prop_assert!((x[i] - (sa * a[i] + sn * eps[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn samples_stay_in_the_unit_box(seed in 0u64..1000) {
        let p = Policy::new(tiny_policy_config(PolicyKind::Diffusion, seed), ActionNormalizer::identity()).unwrap();
        let f = p.stack.featurize(&blank_observation(vec![0.5; PROPRIO_DIM], "go")).unwrap();
        for sampler in [Sampler::Ancestral, Sampler::FastDeterministic] {
            let x = p.sample_normalized(&f, sampler, 4, &mut rng(seed)).unwrap();
            prop_assert!(x.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
