use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::diffusion::{Policy, Sampler};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::sim::{TaskKind, TaskSpec};

/// Anything that picks an action at each control tick.
pub trait Controller {
    fn reset(&mut self, env: &Environment) -> Result<()>;
    fn act(&mut self, env: &Environment) -> Result<Action>;
}

/// Always [`Action::IDLE`].
#[derive(Debug, Clone, Copy, Default)]
pub struct IdleController;

impl Controller for IdleController {
    fn reset(&mut self, _env: &Environment) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _env: &Environment) -> Result<Action> {
        Ok(Action::IDLE)
    }
}

/// Plays a fixed action list, then idles.
#[derive(Debug, Clone)]
pub struct ReplayController {
    actions: Vec<Action>,
    next: usize,
}

impl ReplayController {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions, next: 0 }
    }
}

impl Controller for ReplayController {
    fn reset(&mut self, _env: &Environment) -> Result<()> {
        self.next = 0;
        Ok(())
    }

    fn act(&mut self, _env: &Environment) -> Result<Action> {
        let a = self.actions.get(self.next).copied().unwrap_or(Action::IDLE);
        self.next += 1;
        Ok(a)
    }
}

/// Receding-horizon chunk execution: sample a chunk, run its first
/// `replan` actions, sample again.
#[derive(Debug, Clone)]
pub struct PolicyController<'a> {
    policy: &'a Policy,
    sampler: Sampler,
    replan: usize,
    queue: Vec<Action>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl<'a> PolicyController<'a> {
    pub fn new(policy: &'a Policy, sampler: Sampler, replan: usize) -> Result<Self> {
        if replan == 0 || replan > policy.cfg.chunk_len {
            return Err(Error::validation(format!(
                "replan interval {replan} must be in 1..={}",
                policy.cfg.chunk_len
            )));
        }
        Ok(Self {
            policy,
            sampler,
            replan,
            queue: Vec::new(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }
}

impl Controller for PolicyController<'_> {
    fn reset(&mut self, env: &Environment) -> Result<()> {
        self.queue.clear();
        self.cursor = 0;
        self.rng = ChaCha8Rng::seed_from_u64(env.seed() ^ 0x6576_616c);
        Ok(())
    }

    fn act(&mut self, env: &Environment) -> Result<Action> {
        if self.queue.is_empty() || self.cursor >= self.replan {
            self.queue = self
                .policy
                .act(&env.observe(), self.sampler, &env.config().bounds, &mut self.rng)?;
            self.cursor = 0;
        }
        let a = self.queue[self.cursor];
        self.cursor += 1;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub success: bool,
    pub subtasks: Vec<bool>,
    pub ticks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub subtask_names: Vec<String>,
    /// Successes per sub-task, in `subtask_names` order.
    pub subtask_successes: Vec<usize>,
    pub successes: usize,
    pub trials: usize,
    pub success_rate: f64,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub per_trial: Vec<TrialResult>,
}

impl EvalReport {
    pub fn from_trials(task: &TaskSpec, trials: Vec<TrialResult>, config_hash: &str) -> Self {
        let names: Vec<String> = task.subtask_names().iter().map(|s| s.to_string()).collect();
        let subtask_successes = (0..names.len())
            .map(|i| trials.iter().filter(|t| t.subtasks.get(i).copied().unwrap_or(false)).count())
            .collect();
        let successes = trials.iter().filter(|t| t.success).count();
        let n = trials.len();
        Self {
            task: task.label(),
            subtask_names: names,
            subtask_successes,
            successes,
            trials: n,
            success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
            seeds: trials.iter().map(|t| t.seed).collect(),
            config_hash: config_hash.to_string(),
            per_trial: trials,
        }
    }

    /// Totals agree with the per-trial outcomes.
    pub fn is_consistent(&self) -> bool {
        let Ok(task) = TaskSpec::parse(&self.task) else {
            return false;
        };
        let again = EvalReport::from_trials(&task, self.per_trial.clone(), &self.config_hash);
        again.successes == self.successes
            && again.subtask_successes == self.subtask_successes
            && again.trials == self.trials
            && (0.0..=1.0).contains(&self.success_rate)
            && again.success_rate == self.success_rate
    }
}

/// One closed-loop trial; stops at the first tick where the task succeeds.
pub fn run_trial<C: Controller>(
    ctrl: &mut C,
    cfg: &EnvConfig,
    task: TaskSpec,
    instruction: &str,
    seed: u64,
) -> Result<TrialResult> {
    let mut env = Environment::new(cfg.clone(), task, instruction, seed)?;
    ctrl.reset(&env)?;
    let mut outcome = env.outcome()?;
    while !outcome.success && !env.done() {
        let a = ctrl.act(&env)?;
        env.step(&a)?;
        outcome = env.outcome()?;
    }
    Ok(TrialResult {
        seed,
        success: outcome.success,
        subtasks: outcome.subtasks.iter().map(|s| s.done).collect(),
        ticks: env.ticks(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub sampler: Sampler,
    /// Ticks executed from each chunk before re-planning.
    pub replan: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            sampler: Sampler::FastDeterministic,
            replan: 8,
        }
    }
}

/// Policy closed loop over `seeds`, trials run in parallel.
pub fn run_eval(
    policy: &Policy,
    cfg: &EnvConfig,
    task: TaskSpec,
    instruction: &str,
    seeds: &[u64],
    opts: &EvalOptions,
    config_hash: &str,
) -> Result<EvalReport> {
    PolicyController::new(policy, opts.sampler, opts.replan)?;
    let trials: Result<Vec<TrialResult>> = seeds
        .par_iter()
        .map(|seed| {
            let mut ctrl = PolicyController::new(policy, opts.sampler, opts.replan)?;
            run_trial(&mut ctrl, cfg, task, instruction, *seed)
        })
        .collect();
    Ok(EvalReport::from_trials(&task, trials?, config_hash))
}

/// Trial counts per task and water line used when none are given.
pub fn default_trials(kind: TaskKind) -> usize {
    match kind {
        TaskKind::Rotation => 10,
        _ => 5,
    }
}

/// Long-form success table: one row per sub-task plus a `total` row per report.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("task,subtask,successes,trials,rate\n");
    for r in reports {
        let rows = r
            .subtask_names
            .iter()
            .zip(&r.subtask_successes)
            .map(|(n, k)| (n.as_str(), *k))
            .chain([("total", r.successes)]);
        for (name, k) in rows {
            let rate = if r.trials == 0 { 0.0 } else { k as f64 / r.trials as f64 };
            out.push_str(&format!("{},{name},{k},{},{rate:.3}\n", r.task, r.trials));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{TaskKind, WaterFraction};

    #[test]
    fn report_totals() {
        let task = TaskSpec::new(TaskKind::Rotation, WaterFraction::OneHalf);
        let t = |seed, s: [bool; 3]| TrialResult {
            seed,
            success: s.iter().all(|v| *v),
            subtasks: s.to_vec(),
            ticks: 1,
        };
        let r = EvalReport::from_trials(&task, vec![t(0, [true; 3]), t(1, [true, false, false])], "abc");
        assert_eq!((r.successes, r.trials), (1, 2));
        assert_eq!(r.subtask_successes, vec![2, 1, 1]);
        assert_eq!(r.success_rate, 0.5);
        assert!(r.is_consistent());
        let csv = reports_to_csv(&[r]);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.contains("rotation@one_half,total,1,2,0.500"));
    }
}
