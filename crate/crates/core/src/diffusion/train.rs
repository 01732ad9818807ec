use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::{ActionNormalizer, Example, Policy, PolicyConfig, PolicyKind};
use crate::error::{Error, Result};
use crate::nn::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    pub lr_floor: f64,
    /// Decay of the parameter moving average that becomes the result; 0 disables it.
    pub ema: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch: 64,
            lr: 1e-3,
            lr_floor: 0.1,
            ema: 0.999,
            seed: 0,
        }
    }
}

/// Minibatch Adam on the denoising (or regression) loss. Returns the
/// per-step loss curve.
pub fn fit(policy: &mut Policy, data: &[Example], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if cfg.batch == 0 {
        return Err(Error::validation("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_net = Adam::new(policy.net.n_params(), cfg.lr);
    let mut opt_prop = Adam::new(policy.stack.proprio_mlp.n_params(), cfg.lr);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut ema_net = policy.net.params().to_vec();
    let mut ema_prop = policy.stack.proprio_mlp.params().to_vec();
    for step in 0..cfg.steps {
        let progress = step as f64 / cfg.steps.max(1) as f64;
        let lr = cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        opt_net.lr = lr;
        opt_prop.lr = lr;
        let batch: Vec<&Example> = (0..cfg.batch).map(|_| &data[rng.random_range(0..data.len())]).collect();
        let out = policy.denoising_loss(&batch, &mut rng).map_err(|e| match e {
            Error::TrainingFault { reason, .. } => Error::TrainingFault { step, reason },
            other => other,
        })?;
        opt_net.step(policy.net.params_mut(), &out.net_grad)?;
        opt_prop.step(policy.stack.proprio_mlp.params_mut(), &out.proprio_grad)?;
        if !policy.is_finite() {
            return Err(Error::TrainingFault {
                step,
                reason: "parameters became non-finite".into(),
            });
        }
        losses.push(out.loss);
        // bias-free warm start: the average tracks raw weights early on
        let decay = cfg.ema.min((1.0 + step as f64) / (10.0 + step as f64));
        blend(&mut ema_net, policy.net.params(), decay);
        blend(&mut ema_prop, policy.stack.proprio_mlp.params(), decay);
    }
    if cfg.ema > 0.0 {
        policy.net.params_mut().copy_from_slice(&ema_net);
        policy.stack.proprio_mlp.params_mut().copy_from_slice(&ema_prop);
    }
    Ok(losses)
}

fn blend(avg: &mut [f64], cur: &[f64], decay: f64) {
    for (a, c) in avg.iter_mut().zip(cur) {
        *a = decay * *a + (1.0 - decay) * c;
    }
}

/// Fresh policy of the configured kind, optionally pretrained on one corpus,
/// then trained on `finetune`. The normalizer comes from `normalizer`.
pub fn train_policy(
    cfg: &PolicyConfig,
    normalizer: ActionNormalizer,
    pretrain: Option<(&[Example], &TrainConfig)>,
    finetune: Option<(&[Example], &TrainConfig)>,
) -> Result<(Policy, Vec<f64>)> {
    if pretrain.is_none() && finetune.is_none() {
        return Err(Error::validation("nothing to train on"));
    }
    let mut policy = Policy::new(cfg.clone(), normalizer)?;
    let mut curve = Vec::new();
    for (data, tc) in pretrain.into_iter().chain(finetune) {
        curve.extend(fit(&mut policy, data, tc)?);
    }
    Ok((policy, curve))
}

/// Same encoder stack and hidden widths, direct chunk regression.
pub fn regression_baseline(
    cfg: &PolicyConfig,
    normalizer: ActionNormalizer,
    data: &[Example],
    tc: &TrainConfig,
) -> Result<(Policy, Vec<f64>)> {
    let cfg = PolicyConfig {
        kind: PolicyKind::Regression,
        ..cfg.clone()
    };
    train_policy(&cfg, normalizer, None, Some((data, tc)))
}
