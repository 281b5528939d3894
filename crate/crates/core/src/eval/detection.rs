use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{at, check_score, EvalError, MetricReport};
use crate::scene::{mask_iou, PointSet};

/// IoU thresholds averaged into `AP`: 0.5, 0.55, …, 0.95.
pub const AP_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedMask {
    pub label: String,
    pub mask: PointSet,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtMask {
    pub label: String,
    pub mask: PointSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDetections {
    pub scene_id: String,
    pub instances: Vec<DetectedMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGt {
    pub scene_id: String,
    pub instances: Vec<GtMask>,
}

/// Area under the precision-recall curve with precision made monotone
/// from the right (all-point interpolation). `hits` is in score order.
fn all_point_ap(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// One class at one threshold. Predictions are visited by descending score
/// and each takes the unmatched ground-truth mask of its scene with the
/// highest IoU, if that IoU is at least `threshold`.
fn class_ap(preds: &[(usize, &DetectedMask)], gts: &[Vec<&GtMask>], threshold: f64) -> f64 {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut hits = Vec::with_capacity(preds.len());
    for &(scene, p) in preds {
        let best = gts[scene]
            .iter()
            .enumerate()
            .filter(|(j, _)| !matched[scene][*j])
            .map(|(j, g)| (j, mask_iou(&p.mask, &g.mask)))
            .fold(None::<(usize, f64)>, |acc, (j, iou)| match acc {
                Some((_, b)) if b >= iou => acc,
                _ => Some((j, iou)),
            });
        match best {
            Some((j, iou)) if iou >= threshold => {
                matched[scene][j] = true;
                hits.push(true);
            }
            _ => hits.push(false),
        }
    }
    all_point_ap(&hits, n_gt)
}

/// Mask AP averaged over classes that have ground truth. Reports `AP`
/// (mean over 0.5:0.05:0.95), `AP@0.25` and `AP@0.5`.
pub fn detection_ap(preds: &[SceneDetections], gts: &[SceneGt]) -> Result<MetricReport, EvalError> {
    let scene_index: BTreeMap<&str, usize> = gts
        .iter()
        .enumerate()
        .map(|(i, g)| (g.scene_id.as_str(), i))
        .collect();
    if scene_index.len() != gts.len() {
        return Err(EvalError::Mismatch("duplicate ground-truth scene".into()));
    }
    let classes: BTreeSet<&str> = gts
        .iter()
        .flat_map(|g| g.instances.iter().map(|i| i.label.as_str()))
        .collect();
    let mut seen_pred_scenes = BTreeSet::new();
    let mut all_preds: Vec<(usize, &DetectedMask)> = Vec::new();
    for p in preds {
        let &scene = scene_index
            .get(p.scene_id.as_str())
            .ok_or_else(|| EvalError::UnknownQuery(p.scene_id.clone()))?;
        if !seen_pred_scenes.insert(scene) {
            return Err(EvalError::DuplicateQuery(p.scene_id.clone()));
        }
        for d in &p.instances {
            check_score(&p.scene_id, d.score)?;
            all_preds.push((scene, d));
        }
    }
    // stable: equal scores keep scene and input order
    all_preds.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut thresholds: Vec<f64> = AP_THRESHOLDS.to_vec();
    thresholds.push(0.25);
    let mut sums = vec![0.0f64; thresholds.len()];
    for class in &classes {
        let cls_preds: Vec<(usize, &DetectedMask)> =
            all_preds.iter().copied().filter(|(_, d)| d.label == *class).collect();
        let cls_gts: Vec<Vec<&GtMask>> = gts
            .iter()
            .map(|g| g.instances.iter().filter(|i| i.label == *class).collect())
            .collect();
        for (s, &t) in sums.iter_mut().zip(&thresholds) {
            *s += class_ap(&cls_preds, &cls_gts, t);
        }
    }
    let n = classes.len().max(1) as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let mut report = MetricReport::default();
    report.set("AP", mean[..AP_THRESHOLDS.len()].iter().sum::<f64>() / AP_THRESHOLDS.len() as f64);
    report.set(at("AP", 0.25), mean[AP_THRESHOLDS.len()]);
    report.set(at("AP", 0.5), mean[0]);
    report.count("classes", classes.len() as u64);
    report.count("gt_instances", gts.iter().map(|g| g.instances.len() as u64).sum());
    report.count("predictions", all_preds.len() as u64);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(label: &str, idx: &[usize]) -> GtMask {
        GtMask {
            label: label.into(),
            mask: PointSet::new(idx.to_vec()),
        }
    }

    fn det(label: &str, idx: &[usize], score: f64) -> DetectedMask {
        DetectedMask {
            label: label.into(),
            mask: PointSet::new(idx.to_vec()),
            score,
        }
    }

    #[test]
    fn perfect_and_empty() {
        let gts = vec![SceneGt {
            scene_id: "s".into(),
            instances: vec![gt("chair", &[0, 1]), gt("desk", &[2, 3, 4])],
        }];
        let perfect = vec![SceneDetections {
            scene_id: "s".into(),
            instances: vec![det("chair", &[0, 1], 0.9), det("desk", &[2, 3, 4], 0.8)],
        }];
        let r = detection_ap(&perfect, &gts).unwrap();
        assert_eq!((r.get("AP"), r.get("AP@0.25"), r.get("AP@0.5")), (Some(1.0), Some(1.0), Some(1.0)));
        let r = detection_ap(&[], &gts).unwrap();
        assert_eq!(r.get("AP"), Some(0.0));
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        let gts = vec![SceneGt {
            scene_id: "s".into(),
            instances: vec![gt("cup", &[0, 1]), gt("cup", &[5, 6])],
        }];
        let preds = vec![SceneDetections {
            scene_id: "s".into(),
            instances: vec![det("cup", &[0, 1], 0.9), det("cup", &[0, 1], 0.8), det("cup", &[5, 6], 0.7)],
        }];
        // hits T F T: precision 1, 1/2, 2/3 -> interpolated 1 then 2/3
        let r = detection_ap(&preds, &gts).unwrap();
        assert!((r.get("AP@0.5").unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }
}
