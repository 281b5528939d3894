//! Phrase-level alignment mathematics on explicit dense matrices: scaled
//! similarities, bipartite matching, sigmoid focal and dice losses, the
//! combined pre-training and referent losses, referent targets and
//! phrase-to-mask decoding.

mod container;
mod decode;
mod gradcheck;
mod hungarian;
mod losses;
mod targets;

pub use container::{read_matrix, read_matrix_json, write_matrix, write_matrix_json, MAGIC};
pub use decode::{decode_phrase_masks, DecodeMode};
pub use gradcheck::{
    grad_check, numeric_gradient, DiceObjective, Differentiable, FocalObjective,
    SimilarityFocalObjective,
};
pub use hungarian::{hungarian_match, Assignment};
pub use losses::{
    clasp_loss, dice_grad, dice_loss, focal_grad, llm_loss, referent_loss, sigmoid,
    sigmoid_focal_loss, FocalParams, LossReport,
};
pub use targets::{referent_positive_targets, referent_targets, CorrespondenceTargets, TargetLabel, TargetRole};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("{instances} ground-truth instances but only {queries} queries")]
    TooFewQueries { instances: usize, queries: usize },
    #[error("role pair {0:?} x {1:?} has no similarity")]
    Roles(EmbeddingRole, EmbeddingRole),
    #[error("matrix container: {0}")]
    Container(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingRole {
    PMask,
    QMask,
    PText,
    QText,
    RText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityRole {
    SMask,
    SText,
    SRef,
}

impl SimilarityRole {
    /// Left and right embedding roles forming this similarity.
    pub fn operands(self) -> (EmbeddingRole, EmbeddingRole) {
        match self {
            SimilarityRole::SMask => (EmbeddingRole::PMask, EmbeddingRole::QMask),
            SimilarityRole::SText => (EmbeddingRole::PText, EmbeddingRole::QText),
            SimilarityRole::SRef => (EmbeddingRole::RText, EmbeddingRole::QText),
        }
    }

    fn from_operands(a: EmbeddingRole, b: EmbeddingRole) -> Option<Self> {
        [SimilarityRole::SMask, SimilarityRole::SText, SimilarityRole::SRef]
            .into_iter()
            .find(|r| r.operands() == (a, b))
    }
}

fn check_finite(m: ArrayView2<f64>) -> Result<(), AlignError> {
    match m.indexed_iter().find(|(_, v)| !v.is_finite()) {
        Some(((row, col), _)) => Err(AlignError::NonFinite { row, col }),
        None => Ok(()),
    }
}

/// Rows are points, phrases, queries or referents depending on the role;
/// columns are embedding channels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    role: EmbeddingRole,
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(role: EmbeddingRole, data: Array2<f64>) -> Result<Self, AlignError> {
        check_finite(data.view())?;
        Ok(Self { role, data })
    }

    pub fn role(&self) -> EmbeddingRole {
        self.role
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub role: SimilarityRole,
    pub eta: f64,
    pub data: Array2<f64>,
}

/// `S = A Bᵀ / η`. The role pair must be one of (P_mask, Q_mask),
/// (P_text, Q_text) or (R_text, Q_text).
pub fn scaled_similarity(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    eta: f64,
) -> Result<SimilarityMatrix, AlignError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(AlignError::Temperature(eta));
    }
    let role = SimilarityRole::from_operands(a.role, b.role).ok_or(AlignError::Roles(a.role, b.role))?;
    if a.data.ncols() != b.data.ncols() {
        return Err(AlignError::Shape(format!(
            "embedding widths {} and {}",
            a.data.ncols(),
            b.data.ncols()
        )));
    }
    Ok(SimilarityMatrix {
        role,
        eta,
        data: a.data.dot(&b.data.t()) / eta,
    })
}

/// Temperature used for a role under the configured η: the text and referent
/// similarities are divided by η, mask logits are left unscaled.
pub fn role_temperature(role: SimilarityRole, eta: f64) -> f64 {
    match role {
        SimilarityRole::SMask => 1.0,
        SimilarityRole::SText | SimilarityRole::SRef => eta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn emb(role: EmbeddingRole, data: Array2<f64>) -> EmbeddingMatrix {
        EmbeddingMatrix::new(role, data).unwrap()
    }

    #[test]
    fn unit_and_orthogonal() {
        let a = emb(EmbeddingRole::PText, array![[1.0, 0.0]]);
        let b = emb(EmbeddingRole::QText, array![[1.0, 0.0], [0.0, 1.0]]);
        let s = scaled_similarity(&a, &b, 0.1).unwrap();
        assert_eq!(s.role, SimilarityRole::SText);
        assert!((s.data[[0, 0]] - 10.0).abs() < 1e-12);
        assert_eq!(s.data[[0, 1]], 0.0);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let s = scaled_similarity(&emb(EmbeddingRole::RText, a.clone()), &emb(EmbeddingRole::QText, b.clone()), 0.1)
            .unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a[[i, k]] * b[[j, k]];
                }
                assert!((s.data[[i, j]] - acc / 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = emb(EmbeddingRole::PMask, array![[1.0, 0.0]]);
        let b = emb(EmbeddingRole::QMask, array![[1.0, 0.0, 0.0]]);
        assert!(matches!(scaled_similarity(&a, &b, 1.0), Err(AlignError::Shape(_))));
        assert!(matches!(scaled_similarity(&a, &a, 1.0), Err(AlignError::Roles(..))));
        assert_eq!(
            scaled_similarity(&a, &b, 0.0).unwrap_err(),
            AlignError::Temperature(0.0)
        );
        assert!(EmbeddingMatrix::new(EmbeddingRole::PMask, array![[f64::NAN]]).is_err());
    }
}
