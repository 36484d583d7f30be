use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::active::ActiveConfig;
use crate::augment::AugmentConfig;
use crate::datasets::BatchSpec;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ArchSpec;

/// Everything a run needs besides the data and the oracle.
///
/// Field names double as configuration keys: `steps`, `batch.labeled`,
/// `loss.tau`, `active.b_smp` and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Joint-phase steps `K`. Warm-up steps come on top.
    pub steps: u64,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Warm-up epochs `t_wp`, each one pass of unlabeled batches over the pool.
    pub warmup_epochs: u64,
    /// Evaluate every this many joint steps (and after the last one); 0 only at the end.
    pub eval_every: u64,
    /// Checkpoint every this many joint steps; 0 only at query events.
    pub checkpoint_every: u64,
    pub seed: u64,
    /// Per-query oracle timeout; 0 waits forever.
    pub oracle_timeout_ms: u64,
    pub batch: BatchConfig,
    pub loss: LossConfig,
    pub active: ActiveConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1 << 20,
            lr0: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_epochs: 15,
            eval_every: 1024,
            checkpoint_every: 0,
            seed: 0,
            oracle_timeout_ms: 0,
            batch: BatchConfig::default(),
            loss: LossConfig::default(),
            active: ActiveConfig::default(),
            augment: AugmentConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchConfig {
    pub labeled: usize,
    pub unlabeled: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            labeled: 64,
            unlabeled: 448,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Temperature shared by both contrastive losses unless overridden below.
    pub tau: f64,
    pub tau_unsupervised: Option<f64>,
    pub tau_supervised: Option<f64>,
    pub confidence_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        LossConfig {
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            lambda4: w.lambda4,
            tau: 0.07,
            tau_unsupervised: None,
            tau_supervised: None,
            confidence_threshold: 0.95,
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda4: self.lambda4,
        }
    }

    pub fn tau_unsupervised(&self) -> f64 {
        self.tau_unsupervised.unwrap_or(self.tau)
    }

    pub fn tau_supervised(&self) -> f64 {
        self.tau_supervised.unwrap_or(self.tau)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `conv:16,32,64,128` or `mlp:64,64`.
    pub backbone: String,
    pub projection_hidden: usize,
    pub projection_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: "conv:16,32,64,128".into(),
            projection_hidden: 128,
            projection_dim: 128,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self) -> Result<ArchSpec> {
        ArchSpec::parse(&self.backbone, self.projection_hidden, self.projection_dim)
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be at least 1"));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::config("lr0 must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        self.batch_spec().validate()?;
        self.loss.weights().validate()?;
        for (key, tau) in [
            ("loss.tau_unsupervised", self.loss.tau_unsupervised()),
            ("loss.tau_supervised", self.loss.tau_supervised()),
        ] {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::config(format!("{key} must be positive")));
            }
        }
        let c = self.loss.confidence_threshold;
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::config("loss.confidence_threshold must be in [0, 1]"));
        }
        self.active.validate()?;
        self.model.arch()?;
        Ok(())
    }

    pub fn batch_spec(&self) -> BatchSpec {
        BatchSpec {
            labeled_batch_size: self.batch.labeled,
            unlabeled_batch_size: self.batch.unlabeled,
            seed: self.seed,
        }
    }

    /// Labels the schedule can collect within `steps` joint steps.
    pub fn reachable_labels(&self) -> usize {
        let events = (self.steps.saturating_sub(1) / self.active.b_smp) as usize;
        let queried = events.saturating_mul(self.active.queries_per_event);
        self.active.budget.min(self.active.n0.saturating_add(queried))
    }
}
