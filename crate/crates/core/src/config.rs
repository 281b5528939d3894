//! Single JSON configuration file shared by all pipeline stages. Every field
//! has a default, so `{}` is a valid config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::{SelectionParams, WORD_CAP};
use crate::llm::LiveConfig;
use crate::relations::RelationParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid value for {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub scenes: Option<PathBuf>,
    /// Template library file; the built-in library when absent.
    pub templates: Option<PathBuf>,
    /// Directory of prompt files; built-in prompts fill any gaps.
    pub prompts: Option<PathBuf>,
    /// Replay store directory.
    pub cache: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub selection: SelectionParams,
    pub relations: RelationParams,
    /// Captions must have fewer words than this.
    pub word_cap: usize,
    pub seed: Option<u64>,
    /// Anchors per scene; all instances when absent.
    pub anchors_per_scene: Option<usize>,
    /// Probability of appending "(with grounding)" to grounding-task questions.
    pub grounding_rate: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            selection: SelectionParams::default(),
            relations: RelationParams::default(),
            word_cap: WORD_CAP,
            seed: None,
            anchors_per_scene: None,
            grounding_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Similarity temperature for the text and referent matrices.
    pub eta: f64,
    pub lambda_cls: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub dice_eps: f64,
    pub clasp_queries: usize,
    pub instruct_queries: usize,
    /// Mask IoU a query must exceed to count as a referent positive.
    pub referent_iou: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            lambda_cls: 1.0,
            gamma: 2.0,
            alpha: 0.25,
            dice_eps: 1.0,
            clasp_queries: 150,
            instruct_queries: 100,
            referent_iou: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub score_filter: f64,
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            score_filter: 0.3,
            thresholds: vec![0.25, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub paths: Paths,
    pub pipeline: PipelineConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
    pub llm: LiveConfig,
}

impl Config {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let config: Config = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> Result<(), ConfigError> {
            Err(ConfigError::Invalid {
                field,
                reason: reason.into(),
            })
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let sel = &self.pipeline.selection;
        if !(sel.radius > 0.0 && sel.radius.is_finite()) {
            return bad("pipeline.selection.radius", "must be positive");
        }
        if !(sel.shrink_step > 0.0 && sel.shrink_step.is_finite()) {
            return bad("pipeline.selection.shrink_step", "must be positive");
        }
        if sel.max_objects == 0 {
            return bad("pipeline.selection.max_objects", "must be at least 1");
        }
        let (lo, hi) = sel.keep_prob;
        if !(unit(lo) && unit(hi) && lo <= hi) {
            return bad("pipeline.selection.keep_prob", "need 0 <= lo <= hi <= 1");
        }
        if self.pipeline.word_cap == 0 {
            return bad("pipeline.word_cap", "must be positive");
        }
        if !unit(self.pipeline.grounding_rate) {
            return bad("pipeline.grounding_rate", "must lie in [0, 1]");
        }
        let loss = &self.loss;
        if !(loss.eta > 0.0 && loss.eta.is_finite()) {
            return bad("loss.eta", "must be positive");
        }
        if !(loss.lambda_cls >= 0.0 && loss.gamma >= 0.0 && unit(loss.alpha)) {
            return bad("loss", "lambda_cls and gamma must be >= 0, alpha in [0, 1]");
        }
        if !(loss.dice_eps > 0.0) {
            return bad("loss.dice_eps", "must be positive");
        }
        if !unit(loss.referent_iou) {
            return bad("loss.referent_iou", "must lie in [0, 1]");
        }
        if !unit(self.eval.score_filter) {
            return bad("eval.score_filter", "must lie in [0, 1]");
        }
        if self.eval.thresholds.is_empty() || !self.eval.thresholds.iter().all(|&t| unit(t)) {
            return bad("eval.thresholds", "need at least one value in [0, 1]");
        }
        if self.llm.max_in_flight == 0 {
            return bad("llm.max_in_flight", "must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = Config::from_json_str("{}").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.pipeline.selection.radius, 2.0);
        assert_eq!(c.pipeline.selection.max_objects, 15);
        assert_eq!(c.pipeline.selection.keep_prob, (0.6, 0.9));
        assert_eq!(c.pipeline.word_cap, 256);
        assert_eq!((c.loss.eta, c.loss.lambda_cls, c.loss.gamma, c.loss.alpha), (0.1, 1.0, 2.0, 0.25));
        assert_eq!((c.loss.clasp_queries, c.loss.instruct_queries), (150, 100));
        assert_eq!(c.eval.score_filter, 0.3);
        assert_eq!(c.eval.thresholds, vec![0.25, 0.5]);
    }

    #[test]
    fn round_trip_and_partial_override() {
        let c = Config::from_json_str(r#"{"pipeline": {"selection": {"radius": 3.0}, "seed": 7}}"#).unwrap();
        assert_eq!(c.pipeline.selection.radius, 3.0);
        assert_eq!(c.pipeline.selection.max_objects, 15);
        assert_eq!(c.pipeline.seed, Some(7));
        assert_eq!(Config::from_json_str(&c.to_json_pretty()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_ranges() {
        for text in [
            r#"{"loss": {"eta": 0}}"#,
            r#"{"pipeline": {"selection": {"keep_prob": [0.9, 0.6]}}}"#,
            r#"{"eval": {"thresholds": []}}"#,
            r#"{"eval": {"score_filter": 1.5}}"#,
        ] {
            assert!(matches!(Config::from_json_str(text), Err(ConfigError::Invalid { .. })), "{text}");
        }
        assert!(matches!(Config::from_json_str("{"), Err(ConfigError::Parse(_))));
    }
}
