//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use capsule_core::arm::{forward_kinematics, ArmState, DhTable, JointLimits, N_JOINTS};
use capsule_core::dataset::{DemoSource, Demonstration, TrajectoryRecord};
use capsule_core::diffusion::{
    build_schedule, train_policy, ActionNormalizer, ConditioningStack, Draws, Example, Features, Keep,
    Policy, PolicyConfig, PolicyKind, Sampler, ScheduleKind, StackConfig, TrainConfig,
};
use capsule_core::observation::{tokenize, Observation, PROPRIO_DIM};
use capsule_core::sim::{CameraFrame, SubtaskResult, TaskKind, TaskOutcome, TaskSpec, WaterFraction, WaterLine};
use capsule_core::{Action, Dipole, PhysicalConstants, Pose};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

// ---- magnetics ----

/// `3 μ0 M m / (2π r⁴)` written out with μ0 = 4π·10⁻⁷.
pub fn coaxial_oracle(big: f64, small: f64, dist: f64) -> f64 {
    3.0 * (4.0 * PI * 1e-7) * big * small / (2.0 * PI * dist * dist * dist * dist)
}

/// Worst relative error of |F| against the closed form over `n` coaxial,
/// co-aligned pairs placed and oriented at random.
pub fn coaxial_worst(n: usize, seed: u64) -> f64 {
    let c = PhysicalConstants::default();
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let u = unit(&mut rng);
        let big = rng.random_range(1.0..200.0);
        let small = rng.random_range(0.01..1.0);
        let dist = rng.random_range(0.03..0.3);
        let p = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let src = Dipole::new(u * big, p).unwrap();
        let tgt = Dipole::new(u * small, p + u * dist).unwrap();
        let f = c.dipole_wrench(&src, &tgt).unwrap().force;
        worst = worst.max(rel(f.norm(), coaxial_oracle(big, small, dist)));
        // attractive: the force on the target points back at the source
        assert!(f.dot(&u) < 0.0);
    }
    worst
}

/// Worst relative error between the analytic force and a central finite
/// difference of `−U` over `n` arbitrary pairs.
pub fn energy_gradient_worst(n: usize, seed: u64) -> f64 {
    let c = PhysicalConstants::default();
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let big = unit(&mut rng) * rng.random_range(1.0..200.0);
        let small = unit(&mut rng) * rng.random_range(0.01..1.0);
        let p = Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let dist = rng.random_range(0.03..0.3);
        let q = p + unit(&mut rng) * dist;
        let src = Dipole::new(big, p).unwrap();
        let f = c.dipole_wrench(&src, &Dipole::new(small, q).unwrap()).unwrap().force;
        let h = 1e-5 * dist;
        let u = |x: Vector3<f64>| c.interaction_energy(&src, &Dipole::new(small, x).unwrap()).unwrap();
        let fd = Vector3::from_fn(|i, _| {
            let e = Vector3::ith(i, h);
            -(u(q + e) - u(q - e)) / (2.0 * h)
        });
        worst = worst.max((f - fd).norm() / f.norm());
    }
    worst
}

/// Coaxial force at M = 119.6 A·m², m = 0.126 A·m², r = 0.15 m, by hand:
/// 3·μ0/(2π) = 6·10⁻⁷, M·m = 15.0696, r⁴ = 5.0625·10⁻⁴.
pub const SPOT_FORCE: f64 = 6e-7 * 15.0696 / 5.0625e-4;

// ---- kinematics ----

fn dh_matrix(theta: f64, a: f64, alpha: f64, d: f64) -> Matrix4<f64> {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    Matrix4::new(
        ct, -st * ca, st * sa, a * ct,
        st, ct * ca, -ct * sa, a * st,
        0.0, sa, ca, d,
        0.0, 0.0, 0.0, 1.0,
    )
}

/// Matrix chain over the stock seven-link table, typed in independently.
pub fn fk_oracle(q: &[f64; N_JOINTS]) -> Matrix4<f64> {
    let h = PI / 2.0;
    let alpha = [-h, h, h, -h, -h, h, 0.0];
    let d = [0.34, 0.0, 0.4, 0.0, 0.4, 0.0, 0.126];
    (0..N_JOINTS).fold(Matrix4::identity(), |t, i| t * dh_matrix(q[i], 0.0, alpha[i], d[i]))
}

/// Worst position or rotation-matrix entry error over `n` joint vectors
/// drawn inside the limits.
pub fn fk_worst(n: usize, seed: u64) -> f64 {
    let (dh, lim) = (DhTable::default(), JointLimits::default());
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let q: [f64; N_JOINTS] = std::array::from_fn(|i| rng.random_range(lim.lower[i]..=lim.upper[i]));
        let pose = forward_kinematics(&dh, &lim, &ArmState { joints: q }).unwrap();
        worst = worst.max(pose_vs_matrix(&pose, &fk_oracle(&q)));
    }
    worst
}

pub fn pose_vs_matrix(pose: &Pose, m: &Matrix4<f64>) -> f64 {
    let r: Matrix3<f64> = pose.orientation.to_rotation_matrix().into_inner();
    let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    let dr = (r - m.fixed_view::<3, 3>(0, 0)).abs().max();
    dr.max((pose.position - t).abs().max())
}

/// At q = 0 with `a = 0` every offset lies along the accumulated z axis and
/// the twists cancel when they sum to zero, so the TCP sits at `Σ d` with
/// identity orientation.
pub fn fk_zero_error(dh: &DhTable) -> f64 {
    let alpha_sum: f64 = dh.rows.iter().map(|r| r.alpha).sum();
    assert!(alpha_sum.abs() < 1e-15 && dh.rows.iter().all(|r| r.a == 0.0 && r.theta_offset == 0.0));
    let height: f64 = dh.rows.iter().map(|r| r.d).sum();
    let pose = forward_kinematics(dh, &JointLimits::default(), &ArmState::zeros()).unwrap();
    let m = Matrix4::new_translation(&Vector3::new(0.0, 0.0, height));
    pose_vs_matrix(&pose, &m)
}

// ---- schedule ----

/// Worst deviation of the stored coefficients from their defining products
/// and ratios.
pub fn schedule_identity_worst(steps: usize) -> f64 {
    let s = build_schedule(steps, ScheduleKind::Cosine).unwrap();
    let f = |k: usize| (((k as f64 / steps as f64) + 0.008) / 1.008 * PI / 2.0).cos().powi(2);
    let mut worst = (s.alpha_bar[0] - 1.0).abs();
    let mut prod = 1.0;
    for k in 1..=steps {
        prod *= s.alpha[k];
        let sig2 = s.beta[k] * (1.0 - s.alpha_bar[k - 1]) / (1.0 - s.alpha_bar[k]);
        for e in [
            (s.alpha_bar[k] - prod).abs(),
            (s.alpha_bar[k] - f(k) / f(0)).abs(),
            (s.alpha[k] + s.beta[k] - 1.0).abs(),
            (s.sigma[k] * s.sigma[k] - sig2).abs(),
            ((s.alpha_bar[k] > s.alpha_bar[k - 1]) as u8 as f64),
        ] {
            worst = worst.max(e);
        }
    }
    worst
}

/// Relative error of the empirical variance (around the clean-signal mean)
/// of `forward_noise` at step `k` against `1 − ᾱ_k`.
pub fn noise_variance_error(steps: usize, k: usize, samples: usize, seed: u64) -> f64 {
    let s = build_schedule(steps, ScheduleKind::Cosine).unwrap();
    let mut rng = rng(seed);
    let a = [0.7, -0.4, 0.0];
    let mut worst: f64 = 0.0;
    for (j, aj) in a.iter().enumerate() {
        let mut sum2 = 0.0;
        for _ in 0..samples {
            let eps: Vec<f64> = (0..a.len()).map(|_| rng.sample(StandardNormal)).collect();
            let x = s.forward_noise(&a, k, &eps).unwrap();
            let m = s.alpha_bar[k].sqrt() * aj;
            sum2 += (x[j] - m) * (x[j] - m);
        }
        worst = worst.max(rel(sum2 / samples as f64, 1.0 - s.alpha_bar[k]));
    }
    worst
}

// ---- diffusion ----

/// Policy whose denoiser ignores its input and answers `target`.
pub fn constant_policy(steps: usize, target: &[f64]) -> Policy {
    let cfg = PolicyConfig {
        chunk_len: target.len() / 7,
        steps,
        fast_steps: steps.min(5),
        hidden: vec![8],
        time_dim: 4,
        ..PolicyConfig::default()
    };
    let mut p = Policy::new(cfg, ActionNormalizer::identity()).unwrap();
    let params = p.net.params_mut();
    params.iter_mut().for_each(|v| *v = 0.0);
    let n = params.len();
    params[n - target.len()..].copy_from_slice(target);
    p
}

pub fn blank_observation(proprio: Vec<f64>, text: &str) -> Observation {
    Observation {
        frames: [CameraFrame::filled(8, 8, 0.3), CameraFrame::filled(8, 8, 0.6)],
        proprio,
        control_frequency: 10.0,
        instruction: tokenize(text),
    }
}

/// True when ancestral sampling with the constant denoiser lands exactly on
/// the clamped target for every sample.
pub fn fixed_point_holds(steps: usize, seed: u64) -> bool {
    let mut rng = rng(seed);
    let target: Vec<f64> = (0..14).map(|_| rng.random_range(-1.5..1.5)).collect();
    let p = constant_policy(steps, &target);
    let f = p.stack.featurize(&blank_observation(vec![0.1; PROPRIO_DIM], "hold")).unwrap();
    let x = p.sample_normalized(&f, Sampler::Ancestral, 8, &mut rng).unwrap();
    x.rows()
        .into_iter()
        .all(|r| r.iter().zip(&target).all(|(v, t)| v.to_bits() == t.clamp(-1.0, 1.0).to_bits()))
}

pub fn tiny_policy_config(kind: PolicyKind, seed: u64) -> PolicyConfig {
    PolicyConfig {
        kind,
        chunk_len: 2,
        steps: 10,
        fast_steps: 3,
        time_dim: 4,
        hidden: vec![6],
        stack: StackConfig {
            image_dim: 2,
            text_dim: 2,
            text_buckets: 8,
            proprio_freqs: 3,
            proprio_hidden: 4,
            proprio_dim: 3,
            freq_dim: 2,
            ..StackConfig::default()
        },
        seed,
        ..PolicyConfig::default()
    }
}

fn random_features<R: Rng>(stack: &ConditioningStack, rng: &mut R) -> Features {
    let c = stack.cfg;
    let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    Features {
        image: v(2 * c.image_dim),
        text: v(c.text_dim),
        proprio: v(stack.fourier.out_dim()),
        frequency: v(c.freq_dim),
    }
}

/// Worst componentwise `|g − fd| / max(|g|, |fd|, 1e-6)` over every
/// trainable parameter of one random small instance.
pub fn gradient_check(kind: PolicyKind, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut p = Policy::new(tiny_policy_config(kind, seed), ActionNormalizer::identity()).unwrap();
    let batch: Vec<Example> = (0..3)
        .map(|_| Example {
            features: random_features(&p.stack, &mut rng),
            chunk: (0..p.chunk_dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let refs: Vec<&Example> = batch.iter().collect();
    let bit = |rng: &mut ChaCha8Rng| if rng.random_bool(0.3) { 0.0 } else { 1.0 };
    let draws = Draws {
        keep: (0..3)
            .map(|_| Keep {
                image: bit(&mut rng),
                text: bit(&mut rng),
                proprio: bit(&mut rng),
            })
            .collect(),
        k: (0..3).map(|_| rng.random_range(1..=p.cfg.steps)).collect(),
        eps: Array2::from_shape_simple_fn((3, p.chunk_dim()), || rng.sample(StandardNormal)),
    };
    let out = p.loss_with_draws(&refs, &draws).unwrap();
    let cmp = |g: f64, fd: f64| (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..p.net.n_params() {
        let v = p.net.params()[i];
        p.net.params_mut()[i] = v + h;
        let up = p.loss_with_draws(&refs, &draws).unwrap().loss;
        p.net.params_mut()[i] = v - h;
        let down = p.loss_with_draws(&refs, &draws).unwrap().loss;
        p.net.params_mut()[i] = v;
        worst = worst.max(cmp(out.net_grad[i], (up - down) / (2.0 * h)));
    }
    for i in 0..p.stack.proprio_mlp.n_params() {
        let v = p.stack.proprio_mlp.params()[i];
        p.stack.proprio_mlp.params_mut()[i] = v + h;
        let up = p.loss_with_draws(&refs, &draws).unwrap().loss;
        p.stack.proprio_mlp.params_mut()[i] = v - h;
        let down = p.loss_with_draws(&refs, &draws).unwrap().loss;
        p.stack.proprio_mlp.params_mut()[i] = v;
        worst = worst.max(cmp(out.proprio_grad[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Four proprio contexts; each is paired with an all-(+1) chunk and an
/// all-(−1) chunk equally often.
pub struct TwoModeFixture {
    pub cfg: PolicyConfig,
    pub data: Vec<Example>,
}

impl TwoModeFixture {
    pub fn new() -> Self {
        let cfg = PolicyConfig::default();
        let stack = ConditioningStack::new(cfg.stack, cfg.seed).unwrap();
        let mut rng = rng(5);
        let d = cfg.chunk_dim();
        let ctx: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..PROPRIO_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let data = (0..256)
            .map(|i| {
                let obs = blank_observation(ctx[i % 4].clone(), "pick a side");
                let s = if (i / 4) % 2 == 0 { 1.0 } else { -1.0 };
                Example {
                    features: stack.featurize(&obs).unwrap(),
                    chunk: vec![s; d],
                }
            })
            .collect();
        Self { cfg, data }
    }

    pub fn train(&self, kind: PolicyKind, steps: usize) -> Policy {
        let cfg = PolicyConfig {
            kind,
            ..self.cfg.clone()
        };
        let tc = TrainConfig {
            steps,
            ..TrainConfig::default()
        };
        train_policy(&cfg, ActionNormalizer::identity(), None, Some((&self.data, &tc)))
            .unwrap()
            .0
    }
}

/// Samples whose RMS distance to the all-(+1) and all-(−1) chunks is below 0.3.
pub fn mode_counts(x: &Array2<f64>) -> (usize, usize) {
    let rms = |r: ndarray::ArrayView1<f64>, c: f64| (r.iter().map(|v| (v - c).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
    let plus = x.rows().into_iter().filter(|r| rms(*r, 1.0) < 0.3).count();
    let minus = x.rows().into_iter().filter(|r| rms(*r, -1.0) < 0.3).count();
    (plus, minus)
}

/// RMS over chunk entries of the difference between two sample means.
pub fn mean_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (ma, mb) = (Policy::mean_row(a), Policy::mean_row(b));
    (ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / ma.len() as f64).sqrt()
}

// ---- dataset ----

/// Any finite double, spread over many binades, signs and a few specials.
pub fn wild_f64<R: Rng>(rng: &mut R) -> f64 {
    match rng.random_range(0..10) {
        0 => 0.0,
        1 => -0.0,
        2 => f64::from_bits(rng.random_range(1..1u64 << 52)),
        3 => f64::MAX * rng.random_range(-1.0..1.0),
        _ => rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-12..6)),
    }
}

pub fn random_task<R: Rng>(rng: &mut R) -> TaskSpec {
    let kind = TaskKind::ALL[rng.random_range(0..4)];
    let water = WaterFraction::ALL[rng.random_range(0..3)];
    TaskSpec::new(kind, water)
}

/// Synthetic demonstration with arbitrary numeric content.
pub fn random_demo<R: Rng>(rng: &mut R, task: TaskSpec, flagged: bool) -> Demonstration {
    let n = rng.random_range(1..40);
    let side = rng.random_range(1..6);
    let frames: Vec<CameraFrame> = (0..2 * n)
        .map(|_| CameraFrame {
            width: side,
            height: side,
            intensity: (0..side * side).map(|_| rng.random::<f32>()).collect(),
        })
        .collect();
    let records = (0..n)
        .map(|i| {
            let mut pose = || {
                Pose::new(
                    Vector3::from_fn(|_, _| wild_f64(rng)),
                    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(
                        nalgebra::Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0) + 1e-3),
                    )),
                )
            };
            let (magnet_pose, capsule_pose) = (pose(), pose());
            TrajectoryRecord {
                timestamp: wild_f64(rng),
                joints: ArmState {
                    joints: std::array::from_fn(|_| wild_f64(rng)),
                },
                magnet_pose,
                capsule_pose,
                action: Action::from_slice(&(0..7).map(|_| wild_f64(rng)).collect::<Vec<_>>()).unwrap(),
                frames: [2 * i, 2 * i + 1],
                water: WaterLine {
                    fraction: task.water,
                    surface_height: wild_f64(rng),
                },
                ik_flagged: rng.random_bool(0.2),
            }
        })
        .collect();
    let subtasks = task
        .subtask_names()
        .iter()
        .map(|s| SubtaskResult {
            name: s.to_string(),
            done: rng.random_bool(0.5),
        })
        .collect();
    Demonstration {
        task,
        instruction: format!("move \"it\" {}\u{e9}\\n {}", rng.random::<u32>(), n),
        seed: rng.random(),
        source: if rng.random_bool(0.5) { DemoSource::Scripted } else { DemoSource::Teleop },
        records,
        frames,
        outcome: TaskOutcome {
            task,
            subtasks,
            success: rng.random_bool(0.5),
        },
        flagged,
    }
}

/// Every number in a demonstration as raw bits, in a fixed order.
pub fn demo_bits(d: &Demonstration) -> Vec<u64> {
    let mut out = vec![d.seed];
    for r in &d.records {
        out.push(r.timestamp.to_bits());
        out.extend(r.joints.joints.iter().map(|v| v.to_bits()));
        out.extend(r.magnet_pose.to_array().iter().map(|v| v.to_bits()));
        out.extend(r.capsule_pose.to_array().iter().map(|v| v.to_bits()));
        out.extend(r.action.to_array().iter().map(|v| v.to_bits()));
        out.push(r.water.surface_height.to_bits());
        out.extend(r.frames.iter().map(|v| *v as u64));
        out.push(r.ik_flagged as u64);
    }
    for f in &d.frames {
        out.push(f.width as u64);
        out.push(f.height as u64);
        out.extend(f.intensity.iter().map(|v| v.to_bits() as u64));
    }
    out
}
