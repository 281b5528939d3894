use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{at, EvalError, MetricReport};
use crate::geometry::{box_iou, Box3};
use crate::scene::ObjectId;
use crate::tokenize::{Tokenizer, WordPunct};

const MAX_N: usize = 4;
const CIDER_SIGMA: f64 = 6.0;

pub fn tokenize_caption(text: &str) -> Vec<String> {
    WordPunct.tokenize(text)
}

type Counts<'a> = HashMap<&'a [String], usize>;

fn ngram_counts(tokens: &[String], n: usize) -> Counts<'_> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Default, Clone, Copy)]
struct BleuStats {
    matches: [usize; MAX_N],
    totals: [usize; MAX_N],
    cand_len: usize,
    ref_len: usize,
}

fn bleu_stats(cand: &[String], refs: &[Vec<String>]) -> BleuStats {
    let mut s = BleuStats {
        cand_len: cand.len(),
        ..Default::default()
    };
    // closest reference length, shorter on ties
    s.ref_len = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(cand.len()), r))
        .unwrap_or(0);
    for n in 1..=MAX_N {
        let c = ngram_counts(cand, n);
        let mut max_ref: Counts = HashMap::new();
        for r in refs {
            for (g, k) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        s.totals[n - 1] = c.values().sum();
        s.matches[n - 1] = c.iter().map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    }
    s
}

/// Geometric mean of the modified precisions with add-one smoothing for
/// n ≥ 2, times the brevity penalty.
fn bleu_from(s: &BleuStats) -> f64 {
    if s.cand_len == 0 || s.matches[0] == 0 {
        return 0.0;
    }
    let mut log_sum = (s.matches[0] as f64 / s.totals[0] as f64).ln();
    for n in 1..MAX_N {
        log_sum += ((s.matches[n] + 1) as f64 / (s.totals[n] + 1) as f64).ln();
    }
    let bp = if s.cand_len > s.ref_len {
        1.0
    } else {
        (1.0 - s.ref_len as f64 / s.cand_len as f64).exp()
    };
    bp * (log_sum / MAX_N as f64).exp()
}

fn tokenize_refs(references: &[Vec<String>]) -> Vec<Vec<Vec<String>>> {
    references
        .iter()
        .map(|refs| refs.iter().map(|r| tokenize_caption(r)).collect())
        .collect()
}

fn check_aligned(candidates: &[String], references: &[Vec<String>]) -> Result<(), EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::Mismatch(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    Ok(())
}

/// Corpus BLEU-4: n-gram counts and lengths are summed over the corpus
/// before the precisions are formed.
pub fn bleu4(candidates: &[String], references: &[Vec<String>]) -> Result<f64, EvalError> {
    check_aligned(candidates, references)?;
    let refs = tokenize_refs(references);
    let mut total = BleuStats::default();
    for (c, r) in candidates.iter().zip(&refs) {
        let s = bleu_stats(&tokenize_caption(c), r);
        for n in 0..MAX_N {
            total.matches[n] += s.matches[n];
            total.totals[n] += s.totals[n];
        }
        total.cand_len += s.cand_len;
        total.ref_len += s.ref_len;
    }
    Ok(bleu_from(&total))
}

/// BLEU-4 of each candidate against its own references.
pub fn sentence_bleu4(candidates: &[String], references: &[Vec<String>]) -> Result<Vec<f64>, EvalError> {
    check_aligned(candidates, references)?;
    let refs = tokenize_refs(references);
    Ok(candidates
        .iter()
        .zip(&refs)
        .map(|(c, r)| bleu_from(&bleu_stats(&tokenize_caption(c), r)))
        .collect())
}

struct CiderVec {
    weights: [HashMap<Vec<String>, f64>; MAX_N],
    norms: [f64; MAX_N],
    /// Bigram count, used for the length penalty.
    length: f64,
}

fn cider_vec(tokens: &[String], df: &HashMap<Vec<String>, f64>, log_n: f64) -> CiderVec {
    let mut weights: [HashMap<Vec<String>, f64>; MAX_N] = Default::default();
    let mut norms = [0.0; MAX_N];
    let mut length = 0.0;
    for n in 1..=MAX_N {
        for (g, tf) in ngram_counts(tokens, n) {
            let d = df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
            let w = tf as f64 * (log_n - d);
            norms[n - 1] += w * w;
            if n == 2 {
                length += tf as f64;
            }
            weights[n - 1].insert(g.to_vec(), w);
        }
    }
    for x in &mut norms {
        *x = x.sqrt();
    }
    CiderVec { weights, norms, length }
}

fn cider_sim(h: &CiderVec, r: &CiderVec) -> f64 {
    let delta = h.length - r.length;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..MAX_N {
        let mut val = 0.0;
        for (g, &wh) in &h.weights[n] {
            let wr = r.weights[n].get(g).copied().unwrap_or(0.0);
            val += wh.min(wr) * wr;
        }
        if h.norms[n] != 0.0 && r.norms[n] != 0.0 {
            val /= h.norms[n] * r.norms[n];
        }
        total += val * penalty;
    }
    total / MAX_N as f64
}

/// Per-candidate CIDEr with tf-idf n-gram vectors (n = 1..4), document
/// frequencies taken over the reference sets, clipped candidate weights, a
/// gaussian length penalty with σ = 6 and a final factor of 10. The corpus
/// score is the mean of the returned values.
pub fn cider(candidates: &[String], references: &[Vec<String>]) -> Result<Vec<f64>, EvalError> {
    check_aligned(candidates, references)?;
    let refs = tokenize_refs(references);
    let mut df: HashMap<Vec<String>, f64> = HashMap::new();
    for set in &refs {
        let mut present: std::collections::HashSet<&[String]> = Default::default();
        for r in set {
            for n in 1..=MAX_N {
                present.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in present {
            *df.entry(g.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    let log_n = (refs.len().max(1) as f64).ln();
    Ok(candidates
        .iter()
        .zip(&refs)
        .map(|(c, set)| {
            if set.is_empty() {
                return 0.0;
            }
            let h = cider_vec(&tokenize_caption(c), &df, log_n);
            let sum: f64 = set.iter().map(|r| cider_sim(&h, &cider_vec(r, &df, log_n))).sum();
            10.0 * sum / set.len() as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionPrediction {
    pub object_id: ObjectId,
    pub bbox: Box3,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionGt {
    pub object_id: ObjectId,
    pub bbox: Box3,
    pub references: Vec<String>,
}

/// `B-4@t` and `C@t`: mean over ground-truth objects of the sentence BLEU-4
/// and CIDEr of the predicted caption, counted only when the predicted box
/// has IoU ≥ t with the object's box. Objects without a prediction, or
/// gated out, score 0.
pub fn iou_gated_caption_metrics(
    preds: &[CaptionPrediction],
    gts: &[CaptionGt],
    thresholds: &[f64],
) -> Result<MetricReport, EvalError> {
    let mut by_id: BTreeMap<ObjectId, &CaptionPrediction> = BTreeMap::new();
    for p in preds {
        if by_id.insert(p.object_id, p).is_some() {
            return Err(EvalError::DuplicateQuery(p.object_id.to_string()));
        }
    }
    if let Some(id) = by_id.keys().find(|id| !gts.iter().any(|g| g.object_id == **id)) {
        return Err(EvalError::UnknownQuery(id.to_string()));
    }
    let references: Vec<Vec<String>> = gts.iter().map(|g| g.references.clone()).collect();
    let candidates: Vec<String> = gts
        .iter()
        .map(|g| by_id.get(&g.object_id).map_or(String::new(), |p| p.caption.clone()))
        .collect();
    let ious: Vec<Option<f64>> = gts
        .iter()
        .map(|g| by_id.get(&g.object_id).map(|p| box_iou(&p.bbox, &g.bbox)))
        .collect();
    let bleu = sentence_bleu4(&candidates, &references)?;
    let cid = cider(&candidates, &references)?;
    let n = gts.len().max(1) as f64;
    let mut report = MetricReport::default();
    for &t in thresholds {
        let gate = |i: usize| matches!(ious[i], Some(iou) if iou >= t);
        let b: f64 = (0..gts.len()).filter(|&i| gate(i)).map(|i| bleu[i]).sum();
        let c: f64 = (0..gts.len()).filter(|&i| gate(i)).map(|i| cid[i]).sum();
        report.set(at("B-4", t), b / n);
        report.set(at("C", t), c / n);
    }
    report.count("objects", gts.len() as u64);
    report.count("predictions", preds.len() as u64);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> String {
        x.to_string()
    }

    #[test]
    fn bleu_identity_and_floor() {
        let c = vec![s("a brown wooden chair next to the desk")];
        let r = vec![vec![s("a brown wooden chair next to the desk")]];
        assert_eq!(bleu4(&c, &r).unwrap(), 1.0);
        let c = vec![s("one two three four five six seven eight")];
        let r = vec![vec![s("one nine three ten five eleven seven twelve")]];
        let b = bleu4(&c, &r).unwrap();
        assert!(b > 0.0 && b < 0.2, "{b}");
    }

    #[test]
    fn cider_properties() {
        let refs = vec![
            vec![s("a red chair by the window")],
            vec![s("a small table with a lamp")],
            vec![s("the bed is next to the wall")],
            vec![s("a tall bookshelf full of books")],
            vec![s("two pillows on a grey sofa")],
        ];
        let same: Vec<String> = refs.iter().map(|r| r[0].clone()).collect();
        let scores = cider(&same, &refs).unwrap();
        let mut other = same.clone();
        other[0] = s("a red chair near the door");
        let partial = cider(&other, &refs).unwrap();
        assert!(partial[0] < scores[0]);
        other[0] = s("zebra");
        assert_eq!(cider(&other, &refs).unwrap()[0], 0.0);
    }

    #[test]
    fn common_tokens_get_no_weight() {
        let refs = vec![vec![s("x a")], vec![s("x b")]];
        // "x" occurs in every reference set, so a candidate of only "x" scores 0
        assert_eq!(cider(&[s("x"), s("x")], &refs).unwrap(), vec![0.0, 0.0]);
    }
}
