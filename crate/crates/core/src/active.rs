//! Query strategies over the unlabeled pool and the query schedule.
//!
//! Margin sampling scores each candidate by the gap between its two most
//! probable classes, predicted on a weakly augmented copy in eval mode, and
//! queries the smallest gaps first. Ties go to the lower pool index.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{self, Augmenter};
use crate::datasets::{Dataset, SplitState};
use crate::error::{Error, Result};
use crate::model::{EncoderNet, Mode, ProbVector};
use crate::rng::{self, Stream, StreamRng};

/// Forward-pass chunk size while scoring the pool.
const SCORING_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Margin,
    Entropy,
    Random,
}

impl core::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "margin" => Ok(Strategy::Margin),
            "entropy" => Ok(Strategy::Entropy),
            "random" => Ok(Strategy::Random),
            other => Err(Error::config(format!("unknown query strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveConfig {
    /// Initial random labels.
    pub n0: usize,
    /// Joint-phase batches between query events.
    pub b_smp: u64,
    /// Total labels to collect, including the initial `n0`.
    pub budget: usize,
    pub queries_per_event: usize,
    /// Candidates scored per event; 0 scores the whole pool.
    pub scoring_pool_size: usize,
    pub strategy: Strategy,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            n0: 20,
            b_smp: 64,
            budget: 100,
            queries_per_event: 1,
            scoring_pool_size: 0,
            strategy: Strategy::Margin,
        }
    }
}

impl ActiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 || self.b_smp == 0 || self.queries_per_event == 0 {
            return Err(Error::config("active.n0, active.b_smp and active.queries_per_event must be at least 1"));
        }
        if self.budget < self.n0 {
            return Err(Error::config(format!(
                "active.budget {} is smaller than active.n0 {}",
                self.budget, self.n0
            )));
        }
        Ok(())
    }
}

/// Acquisition score of one pool candidate; lower is queried first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginScore {
    pub pool_index: usize,
    pub margin: f64,
}

/// Top-1 minus top-2 probability.
pub fn margin<F: Float>(probs: &ProbVector<F>) -> Result<F> {
    if probs.probs.len() < 2 {
        return Err(Error::domain("margin needs at least two classes"));
    }
    let (mut first, mut second) = (F::neg_infinity(), F::neg_infinity());
    for &p in &probs.probs {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    Ok(first - second)
}

/// Shannon entropy in nats.
pub fn entropy<F: Float>(probs: &ProbVector<F>) -> F {
    probs
        .probs
        .iter()
        .filter(|&&p| p > F::zero())
        .fold(F::zero(), |acc, &p| acc - p * p.ln())
}

/// True iff warm-up is over, budget remains, and `step` (joint-phase batches
/// so far) is a positive multiple of `B_smp`.
pub fn should_query(step: u64, epoch: u64, cfg: &ActiveConfig, labels_so_far: usize, warmup_epochs: u64) -> bool {
    epoch >= warmup_epochs && labels_so_far < cfg.budget && step > 0 && step.is_multiple_of(cfg.b_smp)
}

/// RNG for the weak view used to score `index` at query event `event`.
/// Candidates get independent streams, so scores do not depend on pool order.
pub fn scoring_rng(seed: u64, event: u64, index: usize) -> StreamRng {
    rng::stream(seed, Stream::Scoring, &[event, index as u64])
}

fn candidates(state: &SplitState, cfg: &ActiveConfig, seed: u64, event: u64) -> Vec<usize> {
    let pool = state.pool();
    if cfg.scoring_pool_size == 0 || cfg.scoring_pool_size >= pool.len() {
        return pool.to_vec();
    }
    let mut rng = rng::stream(seed, Stream::Scoring, &[event, u64::MAX]);
    let mut all = pool.to_vec();
    let (picked, _) = all.partial_shuffle(&mut rng, cfg.scoring_pool_size);
    let mut c = picked.to_vec();
    c.sort_unstable();
    c
}

/// Score the candidates of query event `event` (eval mode, weak views).
pub fn score_pool<F: Float>(
    net: &EncoderNet<F>,
    ds: &Dataset,
    state: &SplitState,
    augmenter: &Augmenter,
    cfg: &ActiveConfig,
    seed: u64,
    event: u64,
) -> Result<Vec<MarginScore>> {
    let cands = candidates(state, cfg, seed, event);
    let mut scores = Vec::with_capacity(cands.len());
    for chunk in cands.chunks(SCORING_CHUNK) {
        let views: Vec<_> = chunk
            .iter()
            .map(|&i| augment::apply(&augmenter.weak, ds.image(i), &mut scoring_rng(seed, event, i)))
            .collect();
        let x = net.input_matrix(&views)?;
        let pass = net.forward_pass(&x, Mode::Eval)?;
        for (&index, probs) in chunk.iter().zip(pass.probabilities()) {
            let score = match cfg.strategy {
                Strategy::Entropy => -entropy(&probs),
                _ => margin(&probs)?,
            };
            scores.push(MarginScore {
                pool_index: index,
                margin: score.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(scores)
}

/// The `k` lowest scores, ties broken by lower pool index.
pub fn lowest_scores(scores: &[MarginScore], k: usize) -> Vec<usize> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.margin.total_cmp(&b.margin).then(a.pool_index.cmp(&b.pool_index)));
    sorted.into_iter().take(k).map(|s| s.pool_index).collect()
}

/// Pool indices to query at event `event`. Empty when the pool is empty or
/// the budget is spent.
pub fn select_queries<F: Float>(
    net: &EncoderNet<F>,
    ds: &Dataset,
    state: &SplitState,
    augmenter: &Augmenter,
    cfg: &ActiveConfig,
    seed: u64,
    event: u64,
) -> Result<Vec<usize>> {
    let remaining = cfg.budget.saturating_sub(state.labeled_count());
    let k = cfg.queries_per_event.min(remaining).min(state.pool().len());
    if k == 0 {
        return Ok(Vec::new());
    }
    match cfg.strategy {
        Strategy::Random => {
            let mut pool = state.pool().to_vec();
            let mut rng = rng::stream(seed, Stream::RandomQuery, &[event]);
            let (picked, _) = pool.partial_shuffle(&mut rng, k);
            Ok(picked.to_vec())
        }
        Strategy::Margin | Strategy::Entropy => {
            let scores = score_pool(net, ds, state, augmenter, cfg, seed, event)?;
            Ok(lowest_scores(&scores, k))
        }
    }
}
