//! The training run: contrastive warm-up, then joint training on the weighted
//! sum of the four losses, with label queries on a fixed batch schedule.
//!
//! A run is a loop over a [`TrainerState`]. Every random draw is derived from
//! the run seed and the step counters, so the state carries no generator
//! state and a run resumed from a checkpoint continues exactly as the
//! uninterrupted run would.

mod config;

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;
use core::time::Duration;

use serde::{Deserialize, Serialize};

pub use config::{BatchConfig, LossConfig, ModelConfig, TrainConfig};

use crate::active::{select_queries, should_query};
use crate::augment::{self, Augmenter};
use crate::datasets::{init_split, next_labeled_batch, next_unlabeled_batch, Dataset, SplitState};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{
    cross_entropy_logits, pseudo_label_loss_logits, sup_contrastive_loss, unsup_contrastive_loss, LossParts,
};
use crate::model::{ArchSpec, EncoderNet, Mode, ParamGroup, Sgd};
use crate::oracle::{LabelAnswer, LabelQuery, Oracle};
use crate::rng::{self, Stream, StreamRng};
use crate::tensor::Matrix;

const EVAL_CHUNK: usize = 256;

/// `lr0 · cos(7πk / 16K)`.
pub fn cosine_lr(k: u64, total: u64, lr0: f64) -> Result<f64> {
    if total == 0 || k > total {
        return Err(Error::domain(alloc::format!("step {k} outside 0..={total}")));
    }
    Ok(lr0 * (7.0 * PI * k as f64 / (16.0 * total as f64)).cos())
}

/// Fraction of test images whose argmax prediction (eval mode, no
/// augmentation) equals the hidden label.
pub fn evaluate<F: num_traits::Float>(net: &EncoderNet<F>, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (c, chunk) in test.images().chunks(EVAL_CHUNK).enumerate() {
        let x = net.input_matrix(chunk)?;
        let pass = net.forward_pass(&x, Mode::Eval)?;
        for (i, p) in pass.probabilities().iter().enumerate() {
            if Some(p.argmax()) == test.hidden_label(c * EVAL_CHUNK + i) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Joint,
}

/// Step counters. Together with the seed they determine every random draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    /// Unlabeled batches per epoch, fixed when the run starts.
    pub steps_per_epoch: u64,
    pub warmup_steps_total: u64,
    pub warmup_steps_done: u64,
    /// Joint steps completed (`k`).
    pub steps_done: u64,
    /// Joint step at which the last query event ran.
    pub last_query_event: Option<u64>,
    pub query_events: u64,
}

impl Progress {
    /// Batch counter across both phases; keys the batch and augmentation streams.
    fn global_batch(&self) -> u64 {
        match self.phase() {
            Phase::Warmup => self.warmup_steps_done,
            Phase::Joint => self.warmup_steps_total + self.steps_done,
        }
    }

    pub fn phase(&self) -> Phase {
        if self.warmup_steps_done < self.warmup_steps_total {
            Phase::Warmup
        } else {
            Phase::Joint
        }
    }
}

/// Everything that changes during a run.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub net: EncoderNet<f32>,
    pub optimizer: Sgd<f32>,
    pub split: SplitState,
    pub progress: Progress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub lr: f64,
    pub losses: LossParts<f64>,
    pub confident: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StepReport<'a> {
    pub phase: Phase,
    /// Index within the phase.
    pub step: u64,
    pub epoch: u64,
    pub outcome: StepOutcome,
    pub split: &'a SplitState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub accuracy: f64,
    pub labels: usize,
    pub losses: LossParts<f64>,
    pub confident_fraction: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointReason {
    Periodic,
    QueryEvent,
    Abort,
    Final,
}

/// Hooks for metrics, checkpoints and live status. Every method defaults to a no-op.
pub trait RunObserver {
    fn on_step(&mut self, _report: &StepReport<'_>) -> Result<()> {
        Ok(())
    }

    fn on_answer(&mut self, _query: &LabelQuery, _answer: &LabelAnswer) -> Result<()> {
        Ok(())
    }

    fn on_eval(&mut self, _record: &EvalRecord) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _state: &TrainerState, _reason: CheckpointReason) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

impl<T: RunObserver + ?Sized> RunObserver for &mut T {
    fn on_step(&mut self, report: &StepReport<'_>) -> Result<()> {
        (**self).on_step(report)
    }

    fn on_answer(&mut self, query: &LabelQuery, answer: &LabelAnswer) -> Result<()> {
        (**self).on_answer(query, answer)
    }

    fn on_eval(&mut self, record: &EvalRecord) -> Result<()> {
        (**self).on_eval(record)
    }

    fn checkpoint(&mut self, state: &TrainerState, reason: CheckpointReason) -> Result<()> {
        (**self).checkpoint(state, reason)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: TrainerState,
    /// Evaluations made during this call, in step order.
    pub history: Vec<EvalRecord>,
    pub final_accuracy: f64,
}

// Augmentation stream roles within one batch.
const ROLE_UNLABELED_PAIR: u64 = 0;
const ROLE_UNLABELED_WEAK_STRONG: u64 = 1;
const ROLE_LABELED_PAIR: u64 = 2;
const ROLE_LABELED_WEAK: u64 = 3;

fn augment_rng(seed: u64, batch: u64, role: u64, slot: usize) -> StreamRng {
    rng::stream(seed, Stream::Augment, &[batch, role, slot as u64])
}

fn dropout_seed(seed: u64, batch: u64, pass: u64) -> u64 {
    rng::derive_seed(seed, Stream::Dropout, &[batch, pass])
}

/// Views of one step stacked into a single forward pass.
#[derive(Default)]
struct Stack {
    views: Vec<Image>,
}

impl Stack {
    fn push_all(&mut self, views: impl IntoIterator<Item = Image>) -> Range<usize> {
        let start = self.views.len();
        self.views.extend(views);
        start..self.views.len()
    }
}

fn add_scaled(dst: &mut Matrix<f32>, rows: &Range<usize>, src: &Matrix<f32>, w: f64) {
    let cols = dst.cols();
    let w = w as f32;
    let out = &mut dst.data_mut()[rows.start * cols..rows.end * cols];
    for (d, &s) in out.iter_mut().zip(src.data()) {
        *d += w * s;
    }
}

/// Runs training for one configuration over fixed train and test sets.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    arch: ArchSpec,
    train: &'a Dataset,
    test: &'a Dataset,
    augmenter: Augmenter,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, train: &'a Dataset, test: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let shape = train
            .image_shape()
            .ok_or_else(|| Error::config("training set is empty"))?;
        if test.image_shape().is_some_and(|s| s != shape) || test.num_classes() != train.num_classes() {
            return Err(Error::config("test set does not match the training set's shape or classes"));
        }
        if cfg.active.budget > train.len() {
            return Err(Error::config(alloc::format!(
                "active.budget {} exceeds the training set size {}",
                cfg.active.budget,
                train.len()
            )));
        }
        let augmenter = Augmenter::new(&cfg.augment, shape.0, shape.1)?;
        let arch = cfg.model.arch()?;
        Ok(Trainer {
            cfg,
            arch,
            train,
            test,
            augmenter,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn augmenter(&self) -> &Augmenter {
        &self.augmenter
    }

    /// Fresh network plus the initial `n0` labels drawn through `oracle`.
    pub fn initial_state<O: Oracle + ?Sized>(&self, oracle: &mut O) -> Result<TrainerState> {
        let split = init_split(self.train, self.cfg.active.n0, oracle, self.cfg.seed)?;
        let shape = self.train.image_shape().unwrap_or_default();
        let net = EncoderNet::new(self.arch.clone(), shape, self.train.num_classes(), self.cfg.seed)?;
        let optimizer = Sgd::new(&net, self.cfg.momentum as f32, self.cfg.weight_decay as f32);
        let steps_per_epoch = (split.pool().len() / self.cfg.batch.unlabeled).max(1) as u64;
        Ok(TrainerState {
            net,
            optimizer,
            split,
            progress: Progress {
                steps_per_epoch,
                warmup_steps_total: self.cfg.warmup_epochs * steps_per_epoch,
                ..Progress::default()
            },
        })
    }

    /// Check that a restored state belongs to this configuration and data.
    pub fn check_state(&self, state: &TrainerState) -> Result<()> {
        if state.net.arch() != &self.arch
            || Some(state.net.input_shape()) != self.train.image_shape()
            || state.net.num_classes() != self.train.num_classes()
        {
            return Err(Error::State("checkpoint network does not match the configured model".into()));
        }
        if state.optimizer.velocity().len() != state.net.num_params() {
            return Err(Error::State("optimizer state does not match the network".into()));
        }
        if state.split.total() != self.train.len() || !state.split.is_conserved() {
            return Err(Error::State("checkpoint split does not match the training set".into()));
        }
        if state.progress.steps_per_epoch == 0 || state.progress.steps_done > self.cfg.steps {
            return Err(Error::State("checkpoint progress is inconsistent with the configuration".into()));
        }
        Ok(())
    }

    fn contrastive_views(&self, images: &[&Image], batch: u64, role: u64) -> Vec<Image> {
        let mut out = Vec::with_capacity(2 * images.len());
        for (i, img) in images.iter().enumerate() {
            let (a, b) = self
                .augmenter
                .contrastive_pair(img, &mut augment_rng(self.cfg.seed, batch, role, i));
            out.push(a);
            out.push(b);
        }
        out
    }

    /// One warm-up step: `λ1 · L_uc` on contrastive pairs of an unlabeled
    /// batch, at constant `lr0`, updating the backbone and projection head only.
    pub fn warmup_step(&self, state: &mut TrainerState) -> Result<StepOutcome> {
        let batch = state.progress.global_batch();
        let spec = self.cfg.batch_spec();
        let items = next_unlabeled_batch(&state.split, self.train, &spec, batch)?;
        let images: Vec<&Image> = items.iter().map(|u| u.image).collect();
        let views = self.contrastive_views(&images, batch, ROLE_UNLABELED_PAIR);
        let net = &state.net;
        let x = net.input_matrix(&views)?;
        let pass = net.forward_pass(&x, Mode::Train { dropout_seed: dropout_seed(self.cfg.seed, batch, 0) })?;
        let uc = unsup_contrastive_loss(pass.z(), self.cfg.loss.tau_unsupervised() as f32)?;
        let losses = LossParts {
            unsup_contrastive: uc.value as f64,
            ..LossParts::default()
        };
        losses.check_finite()?;
        let rows = 0..uc.grad.rows();
        let mut dz = Matrix::zeros(rows.end, uc.grad.cols());
        add_scaled(&mut dz, &rows, &uc.grad, self.cfg.loss.lambda1);
        let grads = net.backward(&pass, Some(&dz), None);
        let lr = self.cfg.lr0;
        state.optimizer.step(
            &mut state.net,
            &grads,
            lr as f32,
            &[ParamGroup::Backbone, ParamGroup::Projection],
        )?;
        state.progress.warmup_steps_done += 1;
        Ok(StepOutcome {
            lr,
            losses,
            confident: 0,
        })
    }

    /// One joint step on all four losses at `cosine_lr(k)`. Terms with zero
    /// weight are skipped and reported as 0.
    pub fn joint_step(&self, state: &mut TrainerState) -> Result<StepOutcome> {
        let k = state.progress.steps_done;
        let lr = cosine_lr(k, self.cfg.steps, self.cfg.lr0)?;
        let batch = state.progress.global_batch();
        let seed = self.cfg.seed;
        let w = self.cfg.loss.weights();
        let spec = self.cfg.batch_spec();
        let unlabeled = next_unlabeled_batch(&state.split, self.train, &spec, batch)?;
        let labeled = next_labeled_batch(&state.split, self.train, &spec, batch)?;
        let u_images: Vec<&Image> = unlabeled.iter().map(|u| u.image).collect();
        let l_images: Vec<&Image> = labeled.iter().map(|l| l.image).collect();
        let labels: Vec<usize> = labeled.iter().map(|l| l.label).collect();

        let mut stack = Stack::default();
        let mut weak_views = Vec::new();
        let uc_rows = (w.lambda1 > 0.0)
            .then(|| stack.push_all(self.contrastive_views(&u_images, batch, ROLE_UNLABELED_PAIR)));
        let pl_rows = (w.lambda4 > 0.0).then(|| {
            let mut strong = Vec::with_capacity(u_images.len());
            for (i, img) in u_images.iter().enumerate() {
                let mut r = augment_rng(seed, batch, ROLE_UNLABELED_WEAK_STRONG, i);
                let (weak, s) = self.augmenter.weak_strong_pair(img, &mut r);
                weak_views.push(weak);
                strong.push(s);
            }
            stack.push_all(strong)
        });
        let sc_rows =
            (w.lambda3 > 0.0).then(|| stack.push_all(self.contrastive_views(&l_images, batch, ROLE_LABELED_PAIR)));
        let ce_rows = (w.lambda2 > 0.0).then(|| {
            stack.push_all(l_images.iter().enumerate().map(|(i, img)| {
                augment::apply(
                    &self.augmenter.weak,
                    img,
                    &mut augment_rng(seed, batch, ROLE_LABELED_WEAK, i),
                )
            }))
        });

        let mut losses = LossParts::<f64>::default();
        let mut confident = 0;
        if !stack.views.is_empty() {
            let net = &state.net;
            let pass = net.forward_pass(
                &net.input_matrix(&stack.views)?,
                Mode::Train { dropout_seed: dropout_seed(seed, batch, 0) },
            )?;
            let mut dz = Matrix::zeros(pass.z().rows(), pass.z().cols());
            let mut dlogits = Matrix::zeros(pass.logits().rows(), pass.logits().cols());
            if let Some(rows) = &uc_rows {
                let tau = self.cfg.loss.tau_unsupervised() as f32;
                let g = unsup_contrastive_loss(&pass.z().slice_rows(rows.start, rows.end), tau)?;
                losses.unsup_contrastive = g.value as f64;
                add_scaled(&mut dz, rows, &g.grad, w.lambda1);
            }
            if let Some(rows) = &pl_rows {
                let weak_pass = net.forward_pass(
                    &net.input_matrix(&weak_views)?,
                    Mode::Train { dropout_seed: dropout_seed(seed, batch, 1) },
                )?;
                let out = pseudo_label_loss_logits(
                    &weak_pass.probabilities(),
                    &pass.logits().slice_rows(rows.start, rows.end),
                    self.cfg.loss.confidence_threshold as f32,
                )?;
                losses.pseudo_label = out.loss.value as f64;
                confident = out.confident;
                add_scaled(&mut dlogits, rows, &out.loss.grad, w.lambda4);
            }
            if let Some(rows) = &sc_rows {
                let tau = self.cfg.loss.tau_supervised() as f32;
                let g = sup_contrastive_loss(&pass.z().slice_rows(rows.start, rows.end), &labels, tau)?;
                losses.sup_contrastive = g.value as f64;
                add_scaled(&mut dz, rows, &g.grad, w.lambda3);
            }
            if let Some(rows) = &ce_rows {
                let g = cross_entropy_logits(&pass.logits().slice_rows(rows.start, rows.end), &labels)?;
                losses.supervised = g.value as f64;
                add_scaled(&mut dlogits, rows, &g.grad, w.lambda2);
            }
            losses.check_finite()?;
            let grads = net.backward(&pass, Some(&dz), Some(&dlogits));
            state.optimizer.step(
                &mut state.net,
                &grads,
                lr as f32,
                &[ParamGroup::Backbone, ParamGroup::Projection, ParamGroup::Classifier],
            )?;
        } else {
            let zeros = vec![0.0; state.net.num_params()];
            state.optimizer.step(
                &mut state.net,
                &zeros,
                lr as f32,
                &[ParamGroup::Backbone, ParamGroup::Projection, ParamGroup::Classifier],
            )?;
        }
        state.progress.steps_done += 1;
        Ok(StepOutcome { lr, losses, confident })
    }

    /// Select, ask and record the queries of the event at joint step `k`.
    fn query_event<O: Oracle + ?Sized, R: RunObserver + ?Sized>(
        &self,
        state: &mut TrainerState,
        oracle: &mut O,
        observer: &mut R,
        k: u64,
    ) -> Result<()> {
        let picks = select_queries(
            &state.net,
            self.train,
            &state.split,
            &self.augmenter,
            &self.cfg.active,
            self.cfg.seed,
            k,
        )?;
        let timeout = (self.cfg.oracle_timeout_ms > 0).then(|| Duration::from_millis(self.cfg.oracle_timeout_ms));
        for index in picks {
            let query = state.split.issue_query(self.train, index)?;
            let answer = oracle.ask(&query, timeout)?;
            state.split.record_answer(&query, &answer)?;
            observer.on_answer(&query, &answer)?;
        }
        Ok(())
    }

    /// Train from `state` to the end of the run. On error the observer gets
    /// an `Abort` checkpoint of the last consistent state before the error is
    /// returned.
    pub fn run<O: Oracle + ?Sized, R: RunObserver + ?Sized>(
        &self,
        mut state: TrainerState,
        oracle: &mut O,
        observer: &mut R,
    ) -> Result<RunOutcome> {
        self.check_state(&state)?;
        let mut history = Vec::new();
        match self.drive(&mut state, oracle, observer, &mut history) {
            Ok(final_accuracy) => Ok(RunOutcome {
                state,
                history,
                final_accuracy,
            }),
            Err(e) => {
                observer.checkpoint(&state, CheckpointReason::Abort)?;
                Err(e)
            }
        }
    }

    fn drive<O: Oracle + ?Sized, R: RunObserver + ?Sized>(
        &self,
        state: &mut TrainerState,
        oracle: &mut O,
        observer: &mut R,
        history: &mut Vec<EvalRecord>,
    ) -> Result<f64> {
        let spe = state.progress.steps_per_epoch;
        while state.progress.phase() == Phase::Warmup {
            let step = state.progress.warmup_steps_done;
            let outcome = self.warmup_step(state)?;
            observer.on_step(&StepReport {
                phase: Phase::Warmup,
                step,
                epoch: step / spe,
                outcome,
                split: &state.split,
            })?;
        }

        let total = self.cfg.steps;
        let mut last = None;
        while state.progress.steps_done < total {
            let k = state.progress.steps_done;
            let epoch = self.cfg.warmup_epochs + k / spe;
            if state.progress.last_query_event != Some(k)
                && should_query(k, epoch, &self.cfg.active, state.split.labeled_count(), self.cfg.warmup_epochs)
            {
                self.query_event(state, oracle, observer, k)?;
                state.progress.last_query_event = Some(k);
                state.progress.query_events += 1;
                observer.checkpoint(state, CheckpointReason::QueryEvent)?;
            }
            let outcome = self.joint_step(state)?;
            observer.on_step(&StepReport {
                phase: Phase::Joint,
                step: k,
                epoch,
                outcome,
                split: &state.split,
            })?;
            let done = k + 1;
            if done == total || (self.cfg.eval_every > 0 && done.is_multiple_of(self.cfg.eval_every)) {
                let record = EvalRecord {
                    step: done,
                    accuracy: evaluate(&state.net, self.test)?,
                    labels: state.split.labeled_count(),
                    losses: outcome.losses,
                    confident_fraction: outcome.confident as f64 / self.cfg.batch.unlabeled as f64,
                    lr: outcome.lr,
                };
                observer.on_eval(&record)?;
                history.push(record);
                last = Some(record.accuracy);
            }
            if self.cfg.checkpoint_every > 0 && done.is_multiple_of(self.cfg.checkpoint_every) {
                observer.checkpoint(state, CheckpointReason::Periodic)?;
            }
        }
        observer.checkpoint(state, CheckpointReason::Final)?;
        match last {
            Some(acc) => Ok(acc),
            None => evaluate(&state.net, self.test),
        }
    }
}

/// Build a trainer, draw the initial labels and train to the end.
pub fn run<O: Oracle + ?Sized, R: RunObserver + ?Sized>(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    oracle: &mut O,
    observer: &mut R,
) -> Result<RunOutcome> {
    let trainer = Trainer::new(cfg.clone(), train, test)?;
    let state = trainer.initial_state(oracle)?;
    trainer.run(state, oracle, observer)
}
