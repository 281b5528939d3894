use serde::{Deserialize, Serialize};

use super::GroundedCaption;
use crate::tokenize::Tokenizer;

/// Corpus-level counts and the ratios derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub texts: u64,
    pub tokens: u64,
    pub correspondences: u64,
    pub tokens_per_text: f64,
    /// Correspondences per token, as a fraction.
    pub corr_per_token: f64,
}

impl CorpusStats {
    pub fn from_counts(texts: u64, tokens: u64, correspondences: u64) -> Self {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Self {
            texts,
            tokens,
            correspondences,
            tokens_per_text: ratio(tokens, texts),
            corr_per_token: ratio(correspondences, tokens),
        }
    }

    pub fn corr_per_token_percent(&self) -> f64 {
        100.0 * self.corr_per_token
    }

    /// Combines two partial reports; the counts add, ratios are recomputed.
    pub fn merge(&self, other: &CorpusStats) -> CorpusStats {
        CorpusStats::from_counts(
            self.texts + other.texts,
            self.tokens + other.tokens,
            self.correspondences + other.correspondences,
        )
    }
}

pub fn corpus_stats<'a, I>(corpus: I, tokenizer: &dyn Tokenizer) -> CorpusStats
where
    I: IntoIterator<Item = &'a GroundedCaption>,
{
    let (mut texts, mut tokens, mut corrs) = (0u64, 0u64, 0u64);
    for c in corpus {
        texts += 1;
        tokens += tokenizer.count(&c.text) as u64;
        corrs += c.correspondences.len() as u64;
    }
    CorpusStats::from_counts(texts, tokens, corrs)
}
