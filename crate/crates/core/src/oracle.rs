//! Label oracles: the source of ground-truth labels for queried samples.

use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::Dataset;
use crate::image::Image;

/// A request for the label of one training image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelQuery {
    pub query_id: u64,
    pub dataset_index: usize,
    pub image: Image,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSource {
    Simulated,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAnswer {
    pub query_id: u64,
    pub label: usize,
    /// Milliseconds since the Unix epoch; 0 when the oracle has no clock.
    pub answered_at_ms: u64,
    pub source: AnswerSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("no answer for query {query_id} within the timeout")]
    Timeout { query_id: u64 },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("answer for query {got} does not match query {expected}")]
    Mismatched { expected: u64, got: u64 },
    #[error("oracle unavailable: {0}")]
    Unavailable(String),
}

pub trait Oracle {
    /// Answer `query`, waiting at most `timeout` when the oracle is not immediate.
    fn ask(&mut self, query: &LabelQuery, timeout: Option<Duration>) -> Result<LabelAnswer, OracleError>;
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    fn ask(&mut self, query: &LabelQuery, timeout: Option<Duration>) -> Result<LabelAnswer, OracleError> {
        (**self).ask(query, timeout)
    }
}

/// Answers from the dataset's hidden ground truth, immediately.
#[derive(Debug, Clone, Copy)]
pub struct SimulatedOracle<'a> {
    dataset: &'a Dataset,
}

impl<'a> SimulatedOracle<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        SimulatedOracle { dataset }
    }
}

impl Oracle for SimulatedOracle<'_> {
    fn ask(&mut self, query: &LabelQuery, _timeout: Option<Duration>) -> Result<LabelAnswer, OracleError> {
        let label = self
            .dataset
            .hidden_label(query.dataset_index)
            .ok_or_else(|| OracleError::Unavailable(alloc::format!("no image {}", query.dataset_index)))?;
        Ok(LabelAnswer {
            query_id: query.query_id,
            label,
            answered_at_ms: 0,
            source: AnswerSource::Simulated,
        })
    }
}

/// Check an answer against the query it claims to answer.
pub fn validate_answer(query: &LabelQuery, answer: &LabelAnswer) -> Result<(), OracleError> {
    if answer.query_id != query.query_id {
        return Err(OracleError::Mismatched {
            expected: query.query_id,
            got: answer.query_id,
        });
    }
    if answer.label >= query.class_names.len() {
        return Err(OracleError::LabelOutOfRange {
            label: answer.label,
            num_classes: query.class_names.len(),
        });
    }
    Ok(())
}
