use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Config;
use super::eval::{run_eval, EvalReport};
use crate::dataset::{examples_from_demos, fit_normalizer, Demonstration, InstructionTemplate};
use crate::diffusion::{train_policy, ActionNormalizer, Example, Policy, PolicyConfig, PolicyKind};
use crate::error::{Error, Result};
use crate::sim::TaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Diffusion policy, pretrained then fine-tuned.
    Ours,
    /// Chunk regression under the same pretrain and fine-tune regime.
    Regress,
    /// Diffusion policy trained on the fine-tuning set only.
    Scratch,
    /// Diffusion policy trained on the broad corpus only.
    PretrainedOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [Self::Ours, Self::Regress, Self::Scratch, Self::PretrainedOnly];

    pub fn id(&self) -> &'static str {
        match self {
            Self::Ours => "ours",
            Self::Regress => "regress",
            Self::Scratch => "scratch",
            Self::PretrainedOnly => "pretrained_only",
        }
    }

    pub fn uses_pretrain(&self) -> bool {
        !matches!(self, Self::Scratch)
    }

    pub fn uses_finetune(&self) -> bool {
        !matches!(self, Self::PretrainedOnly)
    }

    pub fn policy_kind(&self) -> PolicyKind {
        match self {
            Self::Regress => PolicyKind::Regression,
            _ => PolicyKind::Diffusion,
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode '{s}'")))
    }
}

/// Examples for both stages, built with one normalizer fit on the union so
/// every mode sees the same action scaling.
pub struct AblationData {
    pub policy: PolicyConfig,
    pub pretrain: Vec<Example>,
    pub finetune: Vec<Example>,
    pub normalizer: ActionNormalizer,
}

impl AblationData {
    pub fn build(cfg: &Config, pretrain: &[Demonstration], finetune: &[Demonstration]) -> Result<Self> {
        let all: Vec<Demonstration> = pretrain.iter().chain(finetune).cloned().collect();
        if all.is_empty() {
            return Err(Error::validation("ablation needs demonstrations"));
        }
        let normalizer = fit_normalizer(&all)?;
        // the frozen encoders depend on the config seed only, so one stack
        // featurizes for every mode and kind
        let stack = Policy::new(cfg.policy.clone(), normalizer.clone())?.stack;
        let chunk = cfg.policy.chunk_len;
        Ok(Self {
            policy: cfg.policy.clone(),
            pretrain: examples_from_demos(pretrain, &stack, &normalizer, &cfg.env, chunk)?,
            finetune: examples_from_demos(finetune, &stack, &normalizer, &cfg.env, chunk)?,
            normalizer,
        })
    }
}

/// Trains the policy a mode calls for.
pub fn train_mode(mode: AblationMode, cfg: &Config, data: &AblationData) -> Result<Policy> {
    if mode.uses_pretrain() && data.pretrain.is_empty() {
        return Err(Error::validation(format!("mode {mode} needs a pretraining corpus")));
    }
    if mode.uses_finetune() && data.finetune.is_empty() {
        return Err(Error::validation(format!("mode {mode} needs a fine-tuning set")));
    }
    let pc = PolicyConfig {
        kind: mode.policy_kind(),
        ..data.policy.clone()
    };
    let pre = mode.uses_pretrain().then_some((data.pretrain.as_slice(), &cfg.pretrain));
    let fine = mode.uses_finetune().then_some((data.finetune.as_slice(), &cfg.finetune));
    Ok(train_policy(&pc, data.normalizer.clone(), pre, fine)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub config_hash: String,
    pub tasks: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, mode: AblationMode, task: &str) -> Option<&EvalReport> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.report.task == task)
            .map(|r| &r.report)
    }

    pub fn modes(&self) -> Vec<AblationMode> {
        let mut v: Vec<AblationMode> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.mode) {
                v.push(r.mode);
            }
        }
        v
    }

    /// One line per mode, one `successes/trials` column per task.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode");
        for t in &self.tasks {
            out.push(',');
            out.push_str(t);
        }
        out.push('\n');
        for m in self.modes() {
            out.push_str(m.id());
            for t in &self.tasks {
                out.push(',');
                if let Some(r) = self.get(m, t) {
                    out.push_str(&format!("{}/{}", r.successes, r.trials));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Trains each mode once on the shared data, then evaluates it on every
/// task over `seeds`.
pub fn run_ablation(
    cfg: &Config,
    modes: &[AblationMode],
    tasks: &[TaskSpec],
    data: &AblationData,
    seeds: &[u64],
) -> Result<AblationTable> {
    if modes.is_empty() || tasks.is_empty() {
        return Err(Error::validation("ablation needs at least one mode and one task"));
    }
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for &mode in modes {
        let policy = train_mode(mode, cfg, data)?;
        for &task in tasks {
            let text = InstructionTemplate::for_task(&task).canonical();
            let report = run_eval(&policy, &cfg.env, task, &text, seeds, &cfg.eval, &hash)?;
            log::info!("{mode} {}: {}/{}", task.label(), report.successes, report.trials);
            rows.push(AblationRow { mode, report });
        }
    }
    Ok(AblationTable {
        config_hash: hash,
        tasks: tasks.iter().map(|t| t.label()).collect(),
        rows,
    })
}
