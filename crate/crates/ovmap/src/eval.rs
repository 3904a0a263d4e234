//! Instance-detection scoring on voxel sets.
//!
//! Predictions and ground truth are both instances with a class and a voxel
//! set. A prediction matches the unmatched ground-truth instance of the same
//! class with the highest voxel IoU, taken greedily in rank order (score
//! descending), and counts as a true positive when that IoU reaches the
//! threshold. Average precision integrates the precision envelope over every
//! achieved recall step; the mean over ground-truth classes is unweighted.

use std::collections::BTreeMap;

use crate::labels::ClassId;

/// One instance for scoring: a class, its voxels, and a ranking score.
/// Ground-truth instances ignore `score`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub class: ClassId,
    /// Sorted, deduplicated voxel indices.
    pub voxels: Vec<[i32; 3]>,
    pub score: f64,
}

impl EvalInstance {
    /// Normalizes the voxel list (sorts and deduplicates).
    pub fn new(class: ClassId, mut voxels: Vec<[i32; 3]>, score: f64) -> Self {
        voxels.sort_unstable();
        voxels.dedup();
        Self {
            class,
            voxels,
            score,
        }
    }
}

/// Intersection-over-union of two sorted voxel sets. Two empty sets have
/// no overlap to speak of, so the result is 0.
pub fn voxel_iou(a: &[[i32; 3]], b: &[[i32; 3]]) -> f64 {
    debug_assert!(a.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(b.windows(2).all(|w| w[0] < w[1]));
    let mut i = 0;
    let mut j = 0;
    let mut intersection = 0u64;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                intersection += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() as u64 + b.len() as u64 - intersection;
    if union == 0 {
        0.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Per-class scoring summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class: ClassId,
    pub ap: f64,
    pub gt_count: usize,
    pub prediction_count: usize,
    pub true_positives: usize,
}

/// Full evaluation over every class that appears in the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Reports sorted by class id.
    pub per_class: Vec<ClassReport>,
    /// Unweighted mean of per-class APs; `None` when the ground truth is
    /// empty.
    pub mean_ap: Option<f64>,
}

/// Ranks same-class predictions by score (ties keep input order) and
/// greedily matches each to the unmatched ground-truth instance with the
/// highest IoU at or above the threshold.
///
/// Returns one entry per ranked prediction: `true` for a true positive.
fn match_rank_order(
    predictions: &[&EvalInstance],
    gt: &[&EvalInstance],
    iou_threshold: f64,
) -> Vec<bool> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].score.total_cmp(&predictions[a].score));
    let mut claimed = vec![false; gt.len()];
    let mut outcomes = Vec::with_capacity(predictions.len());
    for &pi in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gt.iter().enumerate() {
            if claimed[gi] {
                continue;
            }
            let iou = voxel_iou(&predictions[pi].voxels, &g.voxels);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, _)) => {
                claimed[gi] = true;
                outcomes.push(true);
            }
            None => outcomes.push(false),
        }
    }
    outcomes
}

/// Average precision from ranked true/false-positive outcomes, integrating
/// the precision envelope over all recall steps.
fn ap_from_outcomes(outcomes: &[bool], gt_count: usize) -> f64 {
    if gt_count == 0 {
        return 0.0;
    }
    // precision[k] after rank k+1; envelope[k] = max precision at rank >= k.
    let mut precisions = Vec::with_capacity(outcomes.len());
    let mut tp = 0usize;
    for (rank, &hit) in outcomes.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precisions.push(tp as f64 / (rank + 1) as f64);
    }
    let mut envelope = precisions;
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let recall_step = 1.0 / gt_count as f64;
    let ap: f64 = outcomes
        .iter()
        .zip(&envelope)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| recall_step * p)
        .sum();
    // An empty sum is -0.0; normalize so reports print a plain zero.
    ap + 0.0
}

/// Average precision for one class, or `None` when that class has no
/// ground-truth instances (such classes are excluded from the mean).
pub fn average_precision(
    predictions: &[EvalInstance],
    gt: &[EvalInstance],
    class: ClassId,
    iou_threshold: f64,
) -> Option<f64> {
    let gt_class: Vec<&EvalInstance> = gt.iter().filter(|g| g.class == class).collect();
    if gt_class.is_empty() {
        return None;
    }
    let pred_class: Vec<&EvalInstance> = predictions.iter().filter(|p| p.class == class).collect();
    let outcomes = match_rank_order(&pred_class, &gt_class, iou_threshold);
    Some(ap_from_outcomes(&outcomes, gt_class.len()))
}

/// Unweighted mean of per-class APs; `None` for an empty table.
pub fn mean_ap(per_class: &BTreeMap<ClassId, f64>) -> Option<f64> {
    if per_class.is_empty() {
        return None;
    }
    Some(per_class.values().sum::<f64>() / per_class.len() as f64)
}

/// Scores predictions against ground truth over every ground-truth class.
/// Predicted classes that never occur in the ground truth are ignored.
pub fn evaluate(
    predictions: &[EvalInstance],
    gt: &[EvalInstance],
    iou_threshold: f64,
) -> Evaluation {
    let mut classes: Vec<ClassId> = gt
        .iter()
        .map(|g| g.class)
        .filter(|c| !c.is_none())
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let mut per_class = Vec::with_capacity(classes.len());
    let mut ap_table = BTreeMap::new();
    for class in classes {
        let gt_class: Vec<&EvalInstance> = gt.iter().filter(|g| g.class == class).collect();
        let pred_class: Vec<&EvalInstance> =
            predictions.iter().filter(|p| p.class == class).collect();
        let outcomes = match_rank_order(&pred_class, &gt_class, iou_threshold);
        let ap = ap_from_outcomes(&outcomes, gt_class.len());
        ap_table.insert(class, ap);
        per_class.push(ClassReport {
            class,
            ap,
            gt_count: gt_class.len(),
            prediction_count: pred_class.len(),
            true_positives: outcomes.iter().filter(|h| **h).count(),
        });
    }
    Evaluation {
        per_class,
        mean_ap: mean_ap(&ap_table),
    }
}
