use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{at, check_score, EvalError, MetricReport};
use crate::align::hungarian_match;
use crate::geometry::{box_iou, Box3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: Box3,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingPrediction {
    pub query_id: String,
    pub boxes: Vec<ScoredBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingGt {
    pub query_id: String,
    pub boxes: Vec<Box3>,
}

/// Pairs every ground-truth query with its predictions (empty when absent).
fn join<'a>(
    preds: &'a [GroundingPrediction],
    gts: &'a [GroundingGt],
) -> Result<Vec<(&'a GroundingGt, &'a [ScoredBox])>, EvalError> {
    let mut by_query: BTreeMap<&str, &[ScoredBox]> = BTreeMap::new();
    for p in preds {
        for b in &p.boxes {
            check_score(&p.query_id, b.score)?;
        }
        if by_query.insert(&p.query_id, &p.boxes).is_some() {
            return Err(EvalError::DuplicateQuery(p.query_id.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    for g in gts {
        if !seen.insert(g.query_id.as_str()) {
            return Err(EvalError::DuplicateQuery(g.query_id.clone()));
        }
    }
    if let Some(q) = by_query.keys().find(|q| !seen.contains(*q)) {
        return Err(EvalError::UnknownQuery(q.to_string()));
    }
    Ok(gts
        .iter()
        .map(|g| (g, by_query.get(g.query_id.as_str()).copied().unwrap_or(&[])))
        .collect())
}

/// `Acc@t`: share of queries whose highest-scoring box has IoU ≥ t with the
/// single ground-truth box. A query without predictions is a miss.
pub fn grounding_accuracy(
    preds: &[GroundingPrediction],
    gts: &[GroundingGt],
    thresholds: &[f64],
) -> Result<MetricReport, EvalError> {
    let joined = join(preds, gts)?;
    let mut hits = vec![0u64; thresholds.len()];
    for (gt, boxes) in &joined {
        if gt.boxes.len() != 1 {
            return Err(EvalError::NotSingleTarget {
                query: gt.query_id.clone(),
                found: gt.boxes.len(),
            });
        }
        let top = boxes.iter().fold(None::<&ScoredBox>, |best, b| match best {
            Some(x) if x.score >= b.score => Some(x),
            _ => Some(b),
        });
        if let Some(top) = top {
            let iou = box_iou(&top.bbox, &gt.boxes[0]);
            for (h, &t) in hits.iter_mut().zip(thresholds) {
                if iou >= t {
                    *h += 1;
                }
            }
        }
    }
    let n = joined.len();
    let mut report = MetricReport::default();
    for (&t, h) in thresholds.iter().zip(hits) {
        report.set(at("Acc", t), if n == 0 { 0.0 } else { h as f64 / n as f64 });
    }
    report.count("queries", n as u64);
    Ok(report)
}

/// Per-query F1 averaged over queries. Predictions scoring below
/// `score_filter` are dropped, the rest are matched one-to-one to the
/// ground-truth boxes maximising total IoU, and a matched pair counts as a
/// true positive when its IoU is at least t. A query with neither ground
/// truth nor surviving predictions scores 1.
pub fn multi_grounding_f1(
    preds: &[GroundingPrediction],
    gts: &[GroundingGt],
    score_filter: f64,
    thresholds: &[f64],
) -> Result<MetricReport, EvalError> {
    let joined = join(preds, gts)?;
    let mut sums = vec![0.0f64; thresholds.len()];
    for (gt, boxes) in &joined {
        let kept: Vec<&ScoredBox> = boxes.iter().filter(|b| b.score >= score_filter).collect();
        let (np, ng) = (kept.len(), gt.boxes.len());
        if np == 0 && ng == 0 {
            for s in &mut sums {
                *s += 1.0;
            }
            continue;
        }
        let iou = Array2::from_shape_fn((np, ng), |(i, j)| box_iou(&kept[i].bbox, &gt.boxes[j]));
        let assignment = hungarian_match((-&iou).view());
        for (s, &t) in sums.iter_mut().zip(thresholds) {
            let tp = assignment.pairs.iter().filter(|&&(i, j)| iou[[i, j]] >= t).count();
            let (fp, fn_) = (np - tp, ng - tp);
            *s += 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
        }
    }
    let n = joined.len();
    let mut report = MetricReport::default();
    for (&t, s) in thresholds.iter().zip(sums) {
        report.set(at("F1", t), if n == 0 { 0.0 } else { s / n as f64 });
    }
    report.count("queries", n as u64);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn bx(x0: f64, x1: f64) -> Box3 {
        Box3::new(Vec3::new(x0, 0.0, 0.0), Vec3::new(x1, 1.0, 1.0)).unwrap()
    }

    fn pred(q: &str, boxes: &[(Box3, f64)]) -> GroundingPrediction {
        GroundingPrediction {
            query_id: q.into(),
            boxes: boxes.iter().map(|&(bbox, score)| ScoredBox { bbox, score }).collect(),
        }
    }

    fn gt(q: &str, boxes: &[Box3]) -> GroundingGt {
        GroundingGt {
            query_id: q.into(),
            boxes: boxes.to_vec(),
        }
    }

    #[test]
    fn accuracy_cases() {
        // IoU of [0,2] and [1,3] along x is 1/3
        let gts = vec![gt("a", &[bx(0.0, 2.0)]), gt("b", &[bx(0.0, 2.0)]), gt("c", &[bx(0.0, 1.0)])];
        let preds = vec![
            pred("a", &[(bx(0.0, 2.0), 0.9)]),
            pred("b", &[(bx(5.0, 6.0), 0.2), (bx(1.0, 3.0), 0.8)]),
        ];
        let r = grounding_accuracy(&preds, &gts, &[0.25, 0.5]).unwrap();
        assert_eq!(r.get("Acc@0.25"), Some(2.0 / 3.0));
        assert_eq!(r.get("Acc@0.5"), Some(1.0 / 3.0));
        assert_eq!(
            grounding_accuracy(&[pred("zz", &[])], &gts, &[0.5]),
            Err(EvalError::UnknownQuery("zz".into()))
        );
        assert!(matches!(
            grounding_accuracy(&[], &[gt("a", &[])], &[0.5]),
            Err(EvalError::NotSingleTarget { .. })
        ));
    }

    #[test]
    fn f1_cases() {
        let g = [bx(0.0, 1.0), bx(3.0, 4.0)];
        let exact = vec![pred("q", &[(g[0], 0.9), (g[1], 0.9)])];
        let r = multi_grounding_f1(&exact, &[gt("q", &g)], 0.3, &[0.25, 0.5]).unwrap();
        assert_eq!(r.get("F1@0.5"), Some(1.0));

        let r = multi_grounding_f1(&[pred("e", &[(g[0], 0.1)])], &[gt("e", &[])], 0.3, &[0.5]).unwrap();
        assert_eq!(r.get("F1@0.5"), Some(1.0));

        let three = vec![pred("q", &[(g[0], 0.9), (g[1], 0.8), (bx(8.0, 9.0), 0.7)])];
        let r = multi_grounding_f1(&three, &[gt("q", &g)], 0.3, &[0.25]).unwrap();
        assert!((r.get("F1@0.25").unwrap() - 0.8).abs() < 1e-12);
    }
}
