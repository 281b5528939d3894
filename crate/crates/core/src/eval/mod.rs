//! Evaluation metrics: single-object grounding accuracy, multi-object F1,
//! instance-mask AP, BLEU-4, CIDEr and their IoU-gated captioning variants.

mod detection;
mod grounding;
mod language;

pub use detection::{detection_ap, DetectedMask, GtMask, SceneDetections, SceneGt, AP_THRESHOLDS};
pub use grounding::{grounding_accuracy, multi_grounding_f1, GroundingGt, GroundingPrediction, ScoredBox};
pub use language::{
    bleu4, cider, iou_gated_caption_metrics, sentence_bleu4, tokenize_caption, CaptionGt, CaptionPrediction,
};

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction for query {0:?} has no ground truth")]
    UnknownQuery(String),
    #[error("query {0:?} appears more than once")]
    DuplicateQuery(String),
    #[error("query {query:?} needs exactly one ground-truth box, has {found}")]
    NotSingleTarget { query: String, found: usize },
    #[error("non-finite or out-of-range score {score} for {query:?}")]
    BadScore { query: String, score: f64 },
    #[error("{0}")]
    Mismatch(String),
}

/// Named metric values with integer support counts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn count(&mut self, name: impl Into<String>, value: u64) {
        self.counts.insert(name.into(), value);
    }

    /// Adds another report's entries, prefixing their names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &MetricReport) {
        for (k, v) in &other.metrics {
            self.metrics.insert(format!("{prefix}{k}"), *v);
        }
        for (k, v) in &other.counts {
            self.counts.insert(format!("{prefix}{k}"), *v);
        }
    }
}

/// Metric name for a threshold, e.g. `Acc@0.25`.
pub fn at(name: &str, threshold: f64) -> String {
    format!("{name}@{threshold}")
}

pub(crate) fn check_score(query: &str, score: f64) -> Result<(), EvalError> {
    if score.is_finite() && (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(EvalError::BadScore {
            query: query.to_string(),
            score,
        })
    }
}

/// Reads one JSON record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Ok(out)
}
