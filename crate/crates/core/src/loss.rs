//! Training losses, evaluated forward-only.
//!
//! Probabilities are row-major `N x C`. Labels equal to [`IGNORE_CLASS`] are
//! skipped; class 0 (free space) is an ordinary class. Every log term clamps
//! its argument at [`PROB_CLAMP`] and counts how often that happened.
//! Reductions run in `f64` whatever the input scalar.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occlusion::{OcclusionLabel, IGNORE_CLASS};
use crate::scalar::Real;

pub const PROB_CLAMP: f64 = 1e-12;
const NORM_TOL: f64 = 1e-6;

/// A loss value and the number of log arguments clamped or ratios that were
/// undefined while computing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    pub value: f64,
    pub clamped: usize,
}

fn neg_log(p: f64, clamped: &mut usize) -> f64 {
    if p < PROB_CLAMP {
        *clamped += 1;
        -PROB_CLAMP.ln()
    } else {
        -p.ln()
    }
}

/// Labeled rows as `(row, class)`, after shape and normalization checks.
fn labeled_rows<T: Real>(probs: &[T], classes: usize, labels: &[u16]) -> Result<Vec<(usize, usize)>> {
    if classes == 0 || probs.len() != labels.len() * classes {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels x {classes} classes",
            probs.len(),
            labels.len()
        )));
    }
    let mut rows = Vec::with_capacity(labels.len());
    for (i, &l) in labels.iter().enumerate() {
        if l == IGNORE_CLASS {
            continue;
        }
        if usize::from(l) >= classes {
            return Err(Error::Shape(format!("label {l} at row {i} with {classes} classes")));
        }
        let sum: f64 = probs[i * classes..(i + 1) * classes].iter().map(|p| p.as_f64()).sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { row: i, sum });
        }
        rows.push((i, usize::from(l)));
    }
    if rows.is_empty() {
        return Err(Error::NoLabels);
    }
    Ok(rows)
}

/// Mean negative log-probability of the true class.
pub fn cross_entropy<T: Real>(probs: &[T], classes: usize, labels: &[u16]) -> Result<Loss> {
    let rows = labeled_rows(probs, classes, labels)?;
    let mut clamped = 0;
    let total: f64 = rows
        .iter()
        .map(|&(i, c)| neg_log(probs[i * classes + c].as_f64(), &mut clamped))
        .sum();
    Ok(Loss {
        value: total / rows.len() as f64,
        clamped,
    })
}

fn softmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let m = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|x| (x.as_f64() - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|x| x / s));
    }
    out
}

/// Cross-entropy of `softmax(logits)` and its gradient with respect to the
/// logits: `(softmax - onehot) / N` on labeled rows, zero elsewhere.
pub fn cross_entropy_logits<T: Real>(logits: &[T], classes: usize, labels: &[u16]) -> Result<(Loss, Vec<f64>)> {
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(Error::Shape(format!(
            "{} logits for {} labels x {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    let probs = softmax_rows(logits, classes);
    let loss = cross_entropy(&probs, classes, labels)?;
    let rows = labeled_rows(&probs, classes, labels)?;
    let n = rows.len() as f64;
    let mut grad = vec![0.0; logits.len()];
    for (i, c) in rows {
        for k in 0..classes {
            let onehot = if k == c { 1.0 } else { 0.0 };
            grad[i * classes + k] = (probs[i * classes + k] - onehot) / n;
        }
    }
    Ok((loss, grad))
}

/// Gradient of the Lovász extension of the Jaccard loss at sorted ground truth.
fn lovasz_grad(gt_sorted: &[bool]) -> Vec<f64> {
    let gts = gt_sorted.iter().filter(|&&g| g).count() as f64;
    let mut inter = gts;
    let mut union = gts;
    let mut prev = 0.0;
    gt_sorted
        .iter()
        .map(|&g| {
            if g {
                inter -= 1.0;
            } else {
                union += 1.0;
            }
            let j = 1.0 - inter / union;
            let d = j - prev;
            prev = j;
            d
        })
        .collect()
}

/// Lovász-Softmax averaged over the classes present in `labels`.
pub fn lovasz_softmax<T: Real>(probs: &[T], classes: usize, labels: &[u16]) -> Result<f64> {
    let rows = labeled_rows(probs, classes, labels)?;
    let mut present = vec![false; classes];
    for &(_, c) in &rows {
        present[c] = true;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for c in (0..classes).filter(|&c| present[c]) {
        let mut e: Vec<(f64, bool)> = rows
            .iter()
            .map(|&(i, l)| {
                let fg = l == c;
                let p = probs[i * classes + c].as_f64();
                ((if fg { 1.0 } else { 0.0 } - p).abs(), fg)
            })
            .collect();
        // Stable descending sort.
        e.sort_by(|a, b| b.0.total_cmp(&a.0));
        let fg: Vec<bool> = e.iter().map(|x| x.1).collect();
        let g = lovasz_grad(&fg);
        total += e.iter().zip(&g).map(|(x, w)| x.0 * w).sum::<f64>();
        count += 1;
    }
    Ok(total / count as f64)
}

/// `-ln(num / den)` with the ratio clamped into `[PROB_CLAMP, 1]`, or `None`
/// when `den` is zero.
fn log_ratio(num: f64, den: f64, clamped: &mut usize) -> Option<f64> {
    if den <= 0.0 {
        *clamped += 1;
        return None;
    }
    Some(neg_log((num / den).min(1.0), clamped))
}

/// Scene-level affinity: precision, recall and specificity of the occupied
/// (class != 0) soft mass, each as `-ln`. Undefined ratios are skipped and
/// counted in `clamped`.
pub fn geo_scal<T: Real>(probs: &[T], classes: usize, labels: &[u16]) -> Result<Loss> {
    let rows = labeled_rows(probs, classes, labels)?;
    let (mut inter, mut pred_occ, mut gt_occ, mut spec_num, mut gt_free) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(i, c) in &rows {
        let empty = probs[i * classes].as_f64();
        let occ = 1.0 - empty;
        pred_occ += occ;
        if c != 0 {
            gt_occ += 1.0;
            inter += occ;
        } else {
            gt_free += 1.0;
            spec_num += empty;
        }
    }
    let mut clamped = 0;
    let value = [(inter, pred_occ), (inter, gt_occ), (spec_num, gt_free)]
        .into_iter()
        .filter_map(|(n, d)| log_ratio(n, d, &mut clamped))
        .sum();
    Ok(Loss { value, clamped })
}

/// Class-level affinity: per class present in the labels, `-ln` of soft
/// precision, recall and specificity, averaged over those classes.
pub fn sem_scal<T: Real>(probs: &[T], classes: usize, labels: &[u16]) -> Result<Loss> {
    let rows = labeled_rows(probs, classes, labels)?;
    let n = rows.len() as f64;
    let mut clamped = 0;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..classes {
        let (mut nom, mut mass, mut tgt, mut spec) = (0.0, 0.0, 0.0, 0.0);
        for &(i, l) in &rows {
            let p = probs[i * classes + c].as_f64();
            mass += p;
            if l == c {
                tgt += 1.0;
                nom += p;
            } else {
                spec += 1.0 - p;
            }
        }
        if tgt == 0.0 {
            continue;
        }
        count += 1;
        total += [(nom, mass), (nom, tgt), (spec, n - tgt)]
            .into_iter()
            .filter_map(|(a, b)| if b > 0.0 { Some(neg_log((a / b).min(1.0), &mut clamped)) } else { None })
            .sum::<f64>();
    }
    Ok(Loss {
        value: total / count as f64,
        clamped,
    })
}

/// Mean binary cross-entropy of importance scores against occupancy.
pub fn rie_bce<T: Real>(scores: &[T], occupied: &[bool]) -> Result<Loss> {
    if scores.len() != occupied.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), occupied.len())));
    }
    if scores.is_empty() {
        return Err(Error::NoLabels);
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for (s, &y) in scores.iter().zip(occupied) {
        let s = s.as_f64();
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Shape(format!("score {s} outside [0, 1]")));
        }
        total += if y { neg_log(s, &mut clamped) } else { neg_log(1.0 - s, &mut clamped) };
    }
    Ok(Loss {
        value: total / scores.len() as f64,
        clamped,
    })
}

/// Gradient of [`rie_bce`] with respect to the scores, unclamped.
pub fn rie_bce_grad<T: Real>(scores: &[T], occupied: &[bool]) -> Vec<f64> {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(occupied)
        .map(|(s, &y)| {
            let s = s.as_f64();
            if y {
                -1.0 / (s * n)
            } else {
                1.0 / ((1.0 - s) * n)
            }
        })
        .collect()
}

/// Cross-entropy over `[Empty, NonOccluded, Occluded]`.
pub fn occlusion_ce<T: Real>(probs: &[T], labels: &[OcclusionLabel]) -> Result<Loss> {
    let l: Vec<u16> = labels.iter().map(|l| u16::from(l.code())).collect();
    cross_entropy(probs, 3, &l)
}

/// Per-term weights; the total is the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub ce: f64,
    pub lovasz: f64,
    pub geo_scal: f64,
    pub sem_scal: f64,
    pub rie_bce: f64,
    pub occlusion_ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            lovasz: 1.0,
            geo_scal: 1.0,
            sem_scal: 1.0,
            rie_bce: 1.0,
            occlusion_ce: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce: f64,
    pub lovasz: f64,
    pub geo_scal: f64,
    pub sem_scal: f64,
    pub rie_bce: f64,
    pub occlusion_ce: f64,
    pub total: f64,
    /// Clamped logs and skipped undefined ratios across all terms.
    pub clamped: usize,
}

/// Predictions and targets for one evaluation of the full objective.
pub struct LossInputs<'a, T> {
    pub sem_probs: &'a [T],
    pub sem_classes: usize,
    pub sem_labels: &'a [u16],
    pub occ_probs: &'a [T],
    pub occ_labels: &'a [OcclusionLabel],
    pub rie_scores: &'a [T],
    pub rie_labels: &'a [bool],
}

pub fn compute_losses<T: Real>(x: &LossInputs<'_, T>, w: &LossWeights) -> Result<LossReport> {
    let ce = cross_entropy(x.sem_probs, x.sem_classes, x.sem_labels)?;
    let lovasz = lovasz_softmax(x.sem_probs, x.sem_classes, x.sem_labels)?;
    let geo = geo_scal(x.sem_probs, x.sem_classes, x.sem_labels)?;
    let sem = sem_scal(x.sem_probs, x.sem_classes, x.sem_labels)?;
    let rie = rie_bce(x.rie_scores, x.rie_labels)?;
    let occ = occlusion_ce(x.occ_probs, x.occ_labels)?;
    let total = w.ce * ce.value
        + w.lovasz * lovasz
        + w.geo_scal * geo.value
        + w.sem_scal * sem.value
        + w.rie_bce * rie.value
        + w.occlusion_ce * occ.value;
    Ok(LossReport {
        ce: ce.value,
        lovasz,
        geo_scal: geo.value,
        sem_scal: sem.value,
        rie_bce: rie.value,
        occlusion_ce: occ.value,
        total,
        clamped: ce.clamped + geo.clamped + sem.clamped + rie.clamped + occ.clamped,
    })
}
