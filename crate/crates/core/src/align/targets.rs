use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::AlignError;
use crate::scene::{mask_iou, PointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRole {
    TText,
    TRef,
}

/// Binary targets with an ignore mask of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceTargets {
    pub role: TargetRole,
    pub targets: Array2<f64>,
    pub ignore: Array2<bool>,
}

impl CorrespondenceTargets {
    pub fn new(role: TargetRole, targets: Array2<f64>, ignore: Array2<bool>) -> Result<Self, AlignError> {
        if targets.dim() != ignore.dim() {
            return Err(AlignError::Shape(format!(
                "targets {:?} vs ignore {:?}",
                targets.dim(),
                ignore.dim()
            )));
        }
        if let Some(((row, col), _)) = targets.indexed_iter().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(AlignError::Shape(format!("non-binary target at ({row}, {col})")));
        }
        Ok(Self { role, targets, ignore })
    }

    /// Targets with nothing ignored.
    pub fn dense(role: TargetRole, targets: Array2<f64>) -> Result<Self, AlignError> {
        let ignore = Array2::from_elem(targets.dim(), false);
        Self::new(role, targets, ignore)
    }

    /// Targets from id lists: entry (i, j) is 1 when `rows[i]` contains `j`.
    pub fn from_lists(role: TargetRole, rows: &[Vec<usize>], cols: usize) -> Result<Self, AlignError> {
        let mut t = Array2::zeros((rows.len(), cols));
        for (i, row) in rows.iter().enumerate() {
            for &j in row {
                if j >= cols {
                    return Err(AlignError::Shape(format!("column {j} out of {cols}")));
                }
                t[[i, j]] = 1.0;
            }
        }
        Self::dense(role, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLabel {
    Positive,
    Ignored,
}

/// A query is a positive for the object when its mask IoU with the object
/// strictly exceeds `threshold`; every other query is left out of the loss.
pub fn referent_positive_targets(query_masks: &[PointSet], gt_mask: &PointSet, threshold: f64) -> Vec<TargetLabel> {
    query_masks
        .iter()
        .map(|q| {
            if mask_iou(q, gt_mask) > threshold {
                TargetLabel::Positive
            } else {
                TargetLabel::Ignored
            }
        })
        .collect()
}

/// Referent × query targets for a list of referents, each a union of object
/// masks.
pub fn referent_targets(query_masks: &[PointSet], referents: &[PointSet], threshold: f64) -> CorrespondenceTargets {
    let shape = (referents.len(), query_masks.len());
    let mut targets = Array2::zeros(shape);
    let mut ignore = Array2::from_elem(shape, true);
    for (r, gt) in referents.iter().enumerate() {
        for (q, label) in referent_positive_targets(query_masks, gt, threshold).into_iter().enumerate() {
            if label == TargetLabel::Positive {
                targets[[r, q]] = 1.0;
                ignore[[r, q]] = false;
            }
        }
    }
    CorrespondenceTargets {
        role: TargetRole::TRef,
        targets,
        ignore,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Query and ground truth with `inter` shared points and a union of 100.
    fn pair(inter: usize) -> (PointSet, PointSet) {
        let gt = PointSet::new((0..60).collect());
        let q = PointSet::new((60 - inter..100).collect());
        (q, gt)
    }

    #[test]
    fn strict_threshold() {
        for (inter, expected) in [
            (29, TargetLabel::Ignored),
            (30, TargetLabel::Ignored),
            (31, TargetLabel::Positive),
        ] {
            let (q, gt) = pair(inter);
            assert_eq!(mask_iou(&q, &gt), inter as f64 / 100.0);
            assert_eq!(referent_positive_targets(&[q], &gt, 0.3), vec![expected]);
        }
        let gt = PointSet::new(vec![1, 2, 3]);
        assert_eq!(referent_positive_targets(&[gt.clone()], &gt, 0.3), vec![TargetLabel::Positive]);
    }

    #[test]
    fn targets_matrix() {
        let qs = vec![PointSet::new(vec![0, 1]), PointSet::new(vec![5, 6])];
        let refs = vec![PointSet::new(vec![0, 1]), PointSet::new(vec![9])];
        let t = referent_targets(&qs, &refs, 0.3);
        assert_eq!(t.targets, ndarray::array![[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(t.ignore, ndarray::array![[false, true], [true, true]]);
    }
}
