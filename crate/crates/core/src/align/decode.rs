use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::losses::sigmoid;
use super::AlignError;
use crate::scene::PointSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Each phrase takes its single best query.
    OneToOne,
    /// Each phrase takes every query scoring at least τ after the sigmoid.
    OneToMany,
}

/// Point masks for each phrase (or referent). `scores` is phrases × queries,
/// `s_mask` points × queries; a query's mask is the points with positive
/// logit, i.e. sigmoid above 0.5.
pub fn decode_phrase_masks(
    scores: ArrayView2<f64>,
    s_mask: ArrayView2<f64>,
    mode: DecodeMode,
    tau: f64,
) -> Result<Vec<PointSet>, AlignError> {
    if scores.ncols() != s_mask.ncols() {
        return Err(AlignError::Shape(format!(
            "{} scored queries vs {} mask queries",
            scores.ncols(),
            s_mask.ncols()
        )));
    }
    let query_mask = |q: usize| -> Vec<usize> {
        s_mask
            .column(q)
            .iter()
            .enumerate()
            .filter(|(_, &z)| z > 0.0)
            .map(|(i, _)| i)
            .collect()
    };
    let mut out = Vec::with_capacity(scores.nrows());
    for row in scores.outer_iter() {
        let picked: Vec<usize> = match mode {
            DecodeMode::OneToOne => {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(None::<(usize, f64)>, |acc, (q, &s)| match acc {
                        Some((_, b)) if b >= s => acc,
                        _ => Some((q, s)),
                    });
                best.map(|(q, _)| q).into_iter().collect()
            }
            DecodeMode::OneToMany => row
                .iter()
                .enumerate()
                .filter(|(_, &s)| sigmoid(s) >= tau)
                .map(|(q, _)| q)
                .collect(),
        };
        let points: Vec<usize> = picked.into_iter().flat_map(query_mask).collect();
        out.push(PointSet::new(points));
    }
    Ok(out)
}
