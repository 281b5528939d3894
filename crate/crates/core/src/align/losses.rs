use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::hungarian::{hungarian_match, Assignment};
use super::targets::{CorrespondenceTargets, TargetRole};
use super::AlignError;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha: 0.25,
        }
    }
}

fn focal_term(z: f64, positive: bool, fp: FocalParams) -> f64 {
    let p = sigmoid(z);
    if positive {
        // -ln p = softplus(-z)
        fp.alpha * (1.0 - p).powf(fp.gamma) * softplus(-z)
    } else {
        (1.0 - fp.alpha) * p.powf(fp.gamma) * softplus(z)
    }
}

fn focal_term_grad(z: f64, positive: bool, fp: FocalParams) -> f64 {
    let p = sigmoid(z);
    let g = fp.gamma;
    if positive {
        let ln_p = -softplus(-z);
        fp.alpha * (1.0 - p).powf(g) * (g * p * ln_p - (1.0 - p))
    } else {
        let ln_q = -softplus(z);
        (1.0 - fp.alpha) * p.powf(g) * (p - g * (1.0 - p) * ln_q)
    }
}

fn check_same(a: (usize, usize), b: (usize, usize), what: &str) -> Result<(), AlignError> {
    if a != b {
        return Err(AlignError::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Mean over non-ignored entries of `-α_t (1-p_t)^γ ln p_t`. Targets are
/// positive where `> 0.5`. With every entry ignored the loss is 0.
pub fn sigmoid_focal_loss(
    logits: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    ignore: Option<ArrayView2<bool>>,
    params: FocalParams,
) -> Result<f64, AlignError> {
    check_same(logits.dim(), targets.dim(), "focal targets")?;
    if let Some(ig) = ignore {
        check_same(logits.dim(), ig.dim(), "focal ignore mask")?;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((idx, &z), &t) in logits.indexed_iter().zip(targets.iter()) {
        if ignore.is_some_and(|ig| ig[idx]) {
            continue;
        }
        sum += focal_term(z, t > 0.5, params);
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Gradient of [`sigmoid_focal_loss`] with respect to the logits.
pub fn focal_grad(
    logits: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    ignore: Option<ArrayView2<bool>>,
    params: FocalParams,
) -> Result<Array2<f64>, AlignError> {
    check_same(logits.dim(), targets.dim(), "focal targets")?;
    let mut grad = Array2::zeros(logits.dim());
    let mut count = 0usize;
    for ((idx, &z), &t) in logits.indexed_iter().zip(targets.iter()) {
        if ignore.is_some_and(|ig| ig[idx]) {
            continue;
        }
        grad[idx] = focal_term_grad(z, t > 0.5, params);
        count += 1;
    }
    if count > 0 {
        grad /= count as f64;
    }
    Ok(grad)
}

fn dice_row(z: ArrayView1<f64>, t: ArrayView1<f64>, eps: f64) -> f64 {
    let (mut pt, mut ps, mut ts) = (0.0, 0.0, 0.0);
    for (&zi, &ti) in z.iter().zip(t.iter()) {
        let p = sigmoid(zi);
        pt += p * ti;
        ps += p;
        ts += ti;
    }
    1.0 - (2.0 * pt + eps) / (ps + ts + eps)
}

/// Mean over rows of `1 - (2 Σ p t + ε) / (Σ p + Σ t + ε)`. Rows are matched
/// pairs, columns points.
pub fn dice_loss(logits: ArrayView2<f64>, targets: ArrayView2<f64>, eps: f64) -> Result<f64, AlignError> {
    check_same(logits.dim(), targets.dim(), "dice targets")?;
    let rows = logits.nrows();
    if rows == 0 {
        return Ok(0.0);
    }
    let sum: f64 = logits
        .outer_iter()
        .zip(targets.outer_iter())
        .map(|(z, t)| dice_row(z, t, eps))
        .sum();
    Ok(sum / rows as f64)
}

/// Gradient of [`dice_loss`] with respect to the logits.
pub fn dice_grad(logits: ArrayView2<f64>, targets: ArrayView2<f64>, eps: f64) -> Result<Array2<f64>, AlignError> {
    check_same(logits.dim(), targets.dim(), "dice targets")?;
    let rows = logits.nrows();
    let mut grad = Array2::zeros(logits.dim());
    for (r, (z, t)) in logits.outer_iter().zip(targets.outer_iter()).enumerate() {
        let p: Vec<f64> = z.iter().map(|&x| sigmoid(x)).collect();
        let num = 2.0 * p.iter().zip(t.iter()).map(|(a, b)| a * b).sum::<f64>() + eps;
        let den = p.iter().sum::<f64>() + t.sum() + eps;
        for (c, (&pi, &ti)) in p.iter().zip(t.iter()).enumerate() {
            let dl_dp = -(2.0 * ti * den - num) / (den * den);
            grad[[r, c]] = dl_dp * pi * (1.0 - pi) / rows as f64;
        }
    }
    Ok(grad)
}

/// Loss total with its named components.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
    pub lambda_cls: f64,
    /// (query, instance) pairs chosen by the matching, by instance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub matched: Vec<(usize, usize)>,
}

/// Pre-training loss `L_mask(S_mask, T_mask) + λ_cls L_cls(S_text, T_text)`.
///
/// `s_mask` is points × queries, `gt_masks` points × instances (binary),
/// `s_text` phrases × queries. `phrase_targets` maps phrases to ground-truth
/// instances (phrases × instances); it becomes phrases × queries through the
/// matching, unmatched queries being negatives for every phrase.
///
/// The matching minimises focal + dice between each query column and each
/// instance column; `L_mask` is that same focal + dice averaged over the
/// matched pairs.
pub fn clasp_loss(
    s_mask: ArrayView2<f64>,
    s_text: ArrayView2<f64>,
    gt_masks: ArrayView2<f64>,
    phrase_targets: &CorrespondenceTargets,
    lambda_cls: f64,
    focal: FocalParams,
    dice_eps: f64,
) -> Result<LossReport, AlignError> {
    let (points, queries) = s_mask.dim();
    let instances = gt_masks.ncols();
    if gt_masks.nrows() != points {
        return Err(AlignError::Shape(format!(
            "S_mask has {points} points, ground truth {}",
            gt_masks.nrows()
        )));
    }
    if instances > queries {
        return Err(AlignError::TooFewQueries { instances, queries });
    }
    let phrases = s_text.nrows();
    if s_text.ncols() != queries {
        return Err(AlignError::Shape(format!(
            "S_text has {} queries, S_mask {queries}",
            s_text.ncols()
        )));
    }
    check_same(
        phrase_targets.targets.dim(),
        (phrases, instances),
        "phrase targets (phrases x instances)",
    )?;

    let pair_losses = |q: usize, k: usize| -> Result<(f64, f64), AlignError> {
        let z = s_mask.index_axis(Axis(1), q).insert_axis(Axis(0));
        let t = gt_masks.index_axis(Axis(1), k).insert_axis(Axis(0));
        Ok((
            sigmoid_focal_loss(z, t, None, focal)?,
            dice_loss(z, t, dice_eps)?,
        ))
    };
    let mut cost = Array2::zeros((queries, instances));
    for q in 0..queries {
        for k in 0..instances {
            let (f, d) = pair_losses(q, k)?;
            cost[[q, k]] = f + d;
        }
    }
    let assignment: Assignment = hungarian_match(cost.view());
    let mut matched: Vec<(usize, usize)> = assignment.pairs.clone();
    matched.sort_by_key(|&(_, k)| k);

    let (mut mask_focal, mut mask_dice) = (0.0, 0.0);
    for &(q, k) in &matched {
        let (f, d) = pair_losses(q, k)?;
        mask_focal += f;
        mask_dice += d;
    }
    if !matched.is_empty() {
        mask_focal /= matched.len() as f64;
        mask_dice /= matched.len() as f64;
    }

    let mut t_text = Array2::zeros((phrases, queries));
    let mut ignore = Array2::from_elem((phrases, queries), false);
    for &(q, k) in &matched {
        for p in 0..phrases {
            t_text[[p, q]] = phrase_targets.targets[[p, k]];
            ignore[[p, q]] = phrase_targets.ignore[[p, k]];
        }
    }
    let cls = sigmoid_focal_loss(s_text, t_text.view(), Some(ignore.view()), focal)?;

    let components: BTreeMap<String, f64> = [
        ("mask_focal".to_string(), mask_focal),
        ("mask_dice".to_string(), mask_dice),
        ("cls".to_string(), cls),
    ]
    .into();
    Ok(LossReport {
        total: mask_focal + mask_dice + lambda_cls * cls,
        components,
        lambda_cls,
        matched,
    })
}

/// Referent loss: sigmoid focal loss between `S_ref` (referents × queries,
/// already divided by η) and the referent correspondence.
pub fn referent_loss(
    s_ref: ArrayView2<f64>,
    t_ref: &CorrespondenceTargets,
    focal: FocalParams,
) -> Result<f64, AlignError> {
    if t_ref.role != TargetRole::TRef {
        return Err(AlignError::Shape("referent loss needs T_ref targets".into()));
    }
    sigmoid_focal_loss(s_ref, t_ref.targets.view(), Some(t_ref.ignore.view()), focal)
}

/// Instruction-tuning loss `L_lang + L_ref`; the language term is computed
/// elsewhere and passed in.
pub fn llm_loss(
    lang: f64,
    s_ref: ArrayView2<f64>,
    t_ref: &CorrespondenceTargets,
    focal: FocalParams,
) -> Result<LossReport, AlignError> {
    let r = referent_loss(s_ref, t_ref, focal)?;
    Ok(LossReport {
        total: lang + r,
        components: [("lang_placeholder".to_string(), lang), ("ref".to_string(), r)].into(),
        lambda_cls: 0.0,
        matched: Vec::new(),
    })
}
