use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::expert::{ExpertConfig, ScriptedExpert};
use super::instructions::{augment_instructions, InstructionTemplate};
use super::record::{DemoSource, Demonstration, Recorder};
use crate::diffusion::{ActionNormalizer, ConditioningStack, Example};
use crate::env::{proprio_vector, EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::observation::{tokenize, Observation};
use crate::sim::{TaskKind, TaskSpec, WaterFraction};

/// One scripted rollout, recorded until the expert has finished its plan
/// and the task checker agrees, or the time budget runs out (then flagged).
pub fn scripted_demo(
    cfg: &EnvConfig,
    task: TaskSpec,
    instruction: &str,
    seed: u64,
    expert: &ExpertConfig,
) -> Result<Demonstration> {
    let mut env = Environment::new(cfg.clone(), task, instruction, seed)?;
    let mut ex = ScriptedExpert::new(&env, expert.clone(), seed);
    let mut rec = Recorder::new(DemoSource::Scripted);
    loop {
        let a = ex.act(&env);
        rec.push(&env, a)?;
        if env.done() || (ex.finished() && env.outcome()?.success) {
            break;
        }
        env.step(&a)?;
    }
    rec.finish(&env)
}

/// `count` demos of one task on seeds `seed0..`, instructions drawn from
/// the task's paraphrases. Runs in parallel across seeds.
pub fn collect_scripted(
    cfg: &EnvConfig,
    task: TaskSpec,
    count: usize,
    seed0: u64,
    expert: &ExpertConfig,
) -> Result<Vec<Demonstration>> {
    let template = InstructionTemplate::for_task(&task);
    let texts = augment_instructions(&template, template.variety().min(100), seed0)?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let text = &texts[i as usize % texts.len()];
            scripted_demo(cfg, task, text, seed0 + i, expert)
        })
        .collect()
}

/// Perturbed copy of `base` for the broad corpus: drag, friction, magnet
/// strength, capsule mass and expert noise vary per seed.
pub fn randomized_setup(base: &EnvConfig, expert: &ExpertConfig, seed: u64) -> (EnvConfig, ExpertConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6574_7261_696e);
    let mut cfg = base.clone();
    let mut scale = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let d = &mut cfg.sim.drag;
    d.linear_water *= scale(0.8, 1.25);
    d.linear_air *= scale(0.8, 1.25);
    d.angular_water *= scale(0.8, 1.25);
    d.angular_air *= scale(0.8, 1.25);
    cfg.sim.wall_friction *= scale(0.7, 1.3);
    cfg.sim.magnet_moment *= scale(0.9, 1.1);
    cfg.sim.capsule.mass *= scale(0.95, 1.05);
    let mut ex = expert.clone();
    let noise = scale(0.5, 2.0);
    ex.noise_linear *= noise;
    ex.noise_angular *= noise;
    (cfg, ex)
}

/// The broad corpus: `count` demos over every task family and water line on
/// randomized physics. Flagged demos are dropped.
pub fn pretrain_corpus(base: &EnvConfig, expert: &ExpertConfig, count: usize, seed0: u64) -> Result<Vec<Demonstration>> {
    let demos: Result<Vec<Demonstration>> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let seed = seed0 + i;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kind = TaskKind::ALL[rng.random_range(0..TaskKind::ALL.len())];
            let water = WaterFraction::ALL[rng.random_range(0..WaterFraction::ALL.len())];
            let task = TaskSpec::new(kind, water);
            let template = InstructionTemplate::for_task(&task);
            let text = augment_instructions(&template, 100, seed)?[rng.random_range(0..100)].clone();
            let (cfg, ex) = randomized_setup(base, expert, seed);
            scripted_demo(&cfg, task, &text, seed, &ex)
        })
        .collect();
    Ok(demos?.into_iter().filter(|d| !d.flagged).collect())
}

/// What the policy saw at record `i`.
pub fn observation_at(demo: &Demonstration, i: usize, cfg: &EnvConfig) -> Observation {
    let r = &demo.records[i];
    let [a, b] = demo.record_frames(i);
    Observation {
        frames: [a.clone(), b.clone()],
        proprio: proprio_vector(cfg, &r.joints, &r.magnet_pose, &r.capsule_pose),
        control_frequency: cfg.control_hz,
        instruction: tokenize(&demo.instruction),
    }
}

/// Normalizer over every action in the demos.
pub fn fit_normalizer(demos: &[Demonstration]) -> Result<ActionNormalizer> {
    ActionNormalizer::fit(demos.iter().flat_map(|d| d.records.iter().map(|r| &r.action)))
}

/// One (observation, chunk) pair per record; chunks running past the end
/// repeat the final action.
pub fn examples_from_demos(
    demos: &[Demonstration],
    stack: &ConditioningStack,
    normalizer: &ActionNormalizer,
    cfg: &EnvConfig,
    chunk_len: usize,
) -> Result<Vec<Example>> {
    if chunk_len == 0 {
        return Err(Error::validation("chunk length must be positive"));
    }
    let per_demo: Result<Vec<Vec<Example>>> = demos
        .par_iter()
        .map(|demo| {
            let n = demo.records.len();
            (0..n)
                .map(|i| {
                    let features = stack.featurize(&observation_at(demo, i, cfg))?;
                    let chunk = (i..i + chunk_len)
                        .flat_map(|j| normalizer.normalize(&demo.records[j.min(n - 1)].action))
                        .collect();
                    Ok(Example { features, chunk })
                })
                .collect()
        })
        .collect();
    Ok(per_demo?.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn randomized_setup_is_seeded() {
        let base = EnvConfig::default();
        let ex = ExpertConfig::default();
        let (a, _) = randomized_setup(&base, &ex, 4);
        let (b, _) = randomized_setup(&base, &ex, 4);
        let (c, _) = randomized_setup(&base, &ex, 5);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
