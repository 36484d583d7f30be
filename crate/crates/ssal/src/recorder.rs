use std::path::PathBuf;
use std::sync::Arc;

use ssal_core::oracle::{LabelAnswer, LabelQuery};
use ssal_core::trainer::{CheckpointReason, EvalRecord, RunObserver, StepReport, TrainerState};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::labeler::LabelQueue;
use crate::metrics::MetricsWriter;

fn observer_err(e: crate::Error) -> ssal_core::Error {
    ssal_core::Error::Observer(e.to_string())
}

/// Writes metrics and checkpoints for one run and mirrors progress into the
/// label service status.
pub struct RunRecorder {
    config: RunConfig,
    metrics: MetricsWriter,
    checkpoint_path: PathBuf,
    status: Option<Arc<LabelQueue>>,
    /// Write a `step` line every this many steps; 0 disables them.
    pub step_log_every: u64,
}

impl RunRecorder {
    pub fn new(config: RunConfig, metrics: MetricsWriter, checkpoint_path: PathBuf) -> Self {
        RunRecorder {
            config,
            metrics,
            checkpoint_path,
            status: None,
            step_log_every: 0,
        }
    }

    pub fn with_status(mut self, queue: Arc<LabelQueue>) -> Self {
        queue.update_status(|s| {
            s.budget = self.config.train.active.budget;
            s.total_steps = self.config.train.steps;
        });
        self.status = Some(queue);
        self
    }
}

impl RunObserver for RunRecorder {
    fn on_step(&mut self, r: &StepReport<'_>) -> ssal_core::Result<()> {
        if let Some(q) = &self.status {
            q.update_status(|s| {
                s.step = r.step + 1;
                s.phase = Some(r.phase);
                s.labels_collected = r.split.labeled_count();
            });
        }
        if self.step_log_every > 0 && r.step.is_multiple_of(self.step_log_every) {
            self.metrics.step(r).map_err(observer_err)?;
        }
        Ok(())
    }

    fn on_answer(&mut self, q: &LabelQuery, a: &LabelAnswer) -> ssal_core::Result<()> {
        if let Some(queue) = &self.status {
            queue.update_status(|s| s.labels_collected += 1);
        }
        log::info!("query {} (image {}) labeled {}", q.query_id, q.dataset_index, a.label);
        self.metrics.answer(q, a).map_err(observer_err)
    }

    fn on_eval(&mut self, rec: &EvalRecord) -> ssal_core::Result<()> {
        if let Some(q) = &self.status {
            q.update_status(|s| s.test_accuracy = Some(rec.accuracy));
        }
        log::info!(
            "step {:>7}  acc {:.4}  labels {:>4}  lr {:.5}  confident {:.3}",
            rec.step,
            rec.accuracy,
            rec.labels,
            rec.lr,
            rec.confident_fraction
        );
        self.metrics.eval(rec).map_err(observer_err)
    }

    fn checkpoint(&mut self, state: &TrainerState, reason: CheckpointReason) -> ssal_core::Result<()> {
        if reason == CheckpointReason::Final {
            if let Some(q) = &self.status {
                q.update_status(|s| s.finished = true);
            }
        }
        Checkpoint::capture(state, &self.config, reason)
            .save(&self.checkpoint_path)
            .map_err(observer_err)
    }
}
