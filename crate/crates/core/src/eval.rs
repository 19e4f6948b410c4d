//! CLEAR MOT, identity and single-threshold HOTA metrics over MOTChallenge records.
//!
//! Ground-truth rows with `conf == 0` are ignored. All metrics use IoU at a
//! fixed threshold `α`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::scenegen::{BBox, MotRecord};
use crate::tracker::hungarian;
use crate::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
const EPS: f64 = 1e-10;
const CONTINUATION_BONUS: f64 = 1000.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mota: f64,
    pub idf1: f64,
    pub idsw: usize,
    pub fp: usize,
    pub r#fn: usize,
    /// HOTA at the single IoU threshold.
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub num_gt: usize,
    pub num_pred: usize,
    pub iou_threshold: f64,
}

struct FrameData {
    gt_ids: Vec<usize>,
    pred_ids: Vec<usize>,
    /// `iou[g][p]`.
    iou: Vec<Vec<f64>>,
}

fn dense_ids(ids: impl Iterator<Item = u64>) -> HashMap<u64, usize> {
    let set: BTreeSet<u64> = ids.collect();
    set.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

fn group(records: &[MotRecord], keep: impl Fn(&MotRecord) -> bool, what: &str) -> Result<BTreeMap<usize, Vec<(u64, BBox)>>> {
    let mut out: BTreeMap<usize, Vec<(u64, BBox)>> = BTreeMap::new();
    for r in records.iter().filter(|r| keep(r)) {
        let frame = out.entry(r.frame).or_default();
        if frame.iter().any(|(id, _)| *id == r.id) {
            return Err(Error::Eval(format!("{what} id {} appears twice in frame {}", r.id, r.frame)));
        }
        frame.push((r.id, r.bbox));
    }
    Ok(out)
}

/// Scores `results` against `gt`; every result frame must lie within the ground-truth frame range.
pub fn evaluate(gt: &[MotRecord], results: &[MotRecord], iou_threshold: f64) -> Result<MetricReport> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Eval(format!("IoU threshold {iou_threshold} outside (0, 1]")));
    }
    let last_gt = gt.iter().map(|r| r.frame).max().unwrap_or(0);
    if let Some(r) = results.iter().find(|r| r.frame > last_gt) {
        return Err(Error::Eval(format!("result frame {} beyond last ground-truth frame {last_gt}", r.frame)));
    }
    let gt_frames = group(gt, |r| r.conf > 0.0, "ground-truth")?;
    let pred_frames = group(results, |_| true, "result")?;
    let gt_map = dense_ids(gt_frames.values().flatten().map(|(id, _)| *id));
    let pred_map = dense_ids(pred_frames.values().flatten().map(|(id, _)| *id));

    let frames: Vec<FrameData> = (1..=last_gt)
        .map(|f| {
            let g = gt_frames.get(&f).map_or(&[][..], Vec::as_slice);
            let p = pred_frames.get(&f).map_or(&[][..], Vec::as_slice);
            FrameData {
                gt_ids: g.iter().map(|(id, _)| gt_map[id]).collect(),
                pred_ids: p.iter().map(|(id, _)| pred_map[id]).collect(),
                iou: g.iter().map(|(_, gb)| p.iter().map(|(_, pb)| gb.iou(pb)).collect()).collect(),
            }
        })
        .collect();

    let num_gt: usize = frames.iter().map(|f| f.gt_ids.len()).sum();
    let num_pred: usize = frames.iter().map(|f| f.pred_ids.len()).sum();
    let (tp, idsw) = clear_mot(&frames, gt_map.len(), iou_threshold);
    let fp = num_pred - tp;
    let r#fn = num_gt - tp;
    let mota = 1.0 - (fp + r#fn + idsw) as f64 / num_gt.max(1) as f64;
    let idf1 = identity_f1(&frames, gt_map.len(), pred_map.len(), iou_threshold, num_gt, num_pred);
    let (deta, assa) = hota_terms(&frames, gt_map.len(), pred_map.len(), iou_threshold);
    Ok(MetricReport {
        mota,
        idf1,
        idsw,
        fp,
        r#fn,
        hota: (deta * assa).sqrt(),
        deta,
        assa,
        num_gt,
        num_pred,
        iou_threshold,
    })
}

/// Max-score matching with zero-score cells allowed, keeping pairs that pass `valid`.
fn max_score_matching(score: &[Vec<f64>], valid: impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
    let cost: Vec<Vec<f64>> = score.iter().map(|row| row.iter().map(|s| -s).collect()).collect();
    hungarian(&cost).into_iter().filter(|&(i, j)| valid(i, j)).collect()
}

/// True positives and identity switches, preferring to continue previous correspondences.
fn clear_mot(frames: &[FrameData], n_gt: usize, alpha: f64) -> (usize, usize) {
    let mut last_match: Vec<Option<usize>> = vec![None; n_gt];
    let (mut tp, mut idsw) = (0, 0);
    for f in frames {
        let ok = |g: usize, p: usize| f.iou[g][p] >= alpha - EPS;
        let score: Vec<Vec<f64>> = f
            .gt_ids
            .iter()
            .enumerate()
            .map(|(g, &gid)| {
                f.pred_ids
                    .iter()
                    .enumerate()
                    .map(|(p, &pid)| {
                        if !ok(g, p) {
                            0.0
                        } else if last_match[gid] == Some(pid) {
                            CONTINUATION_BONUS + f.iou[g][p]
                        } else {
                            f.iou[g][p]
                        }
                    })
                    .collect()
            })
            .collect();
        for (g, p) in max_score_matching(&score, ok) {
            let (gid, pid) = (f.gt_ids[g], f.pred_ids[p]);
            if last_match[gid].is_some_and(|prev| prev != pid) {
                idsw += 1;
            }
            last_match[gid] = Some(pid);
            tp += 1;
        }
    }
    (tp, idsw)
}

/// IDF1 from the best one-to-one mapping between ground-truth and result identities.
fn identity_f1(frames: &[FrameData], n_gt: usize, n_pred: usize, alpha: f64, num_gt: usize, num_pred: usize) -> f64 {
    if num_gt + num_pred == 0 {
        return 0.0;
    }
    let mut overlap = vec![vec![0.0; n_pred]; n_gt];
    for f in frames {
        for (g, &gid) in f.gt_ids.iter().enumerate() {
            for (p, &pid) in f.pred_ids.iter().enumerate() {
                if f.iou[g][p] >= alpha - EPS {
                    overlap[gid][pid] += 1.0;
                }
            }
        }
    }
    let idtp = max_score_matching(&overlap, |_, _| true).iter().fold(0.0, |acc, &(g, p)| acc + overlap[g][p]);
    2.0 * idtp / (num_gt + num_pred) as f64
}

/// `(DetA, AssA)` at one threshold with a global alignment score guiding per-frame matching.
fn hota_terms(frames: &[FrameData], n_gt: usize, n_pred: usize, alpha: f64) -> (f64, f64) {
    let mut potential = vec![vec![0.0; n_pred]; n_gt];
    let mut gt_count = vec![0.0; n_gt];
    let mut pred_count = vec![0.0; n_pred];
    for f in frames {
        let row_sum: Vec<f64> = f.iou.iter().map(|r| r.iter().sum()).collect();
        let col_sum: Vec<f64> = (0..f.pred_ids.len()).map(|p| f.iou.iter().map(|r| r[p]).sum()).collect();
        for (g, &gid) in f.gt_ids.iter().enumerate() {
            for (p, &pid) in f.pred_ids.iter().enumerate() {
                let denom = row_sum[g] + col_sum[p] - f.iou[g][p];
                if denom > EPS {
                    potential[gid][pid] += f.iou[g][p] / denom;
                }
            }
        }
        f.gt_ids.iter().for_each(|&g| gt_count[g] += 1.0);
        f.pred_ids.iter().for_each(|&p| pred_count[p] += 1.0);
    }
    let align = |g: usize, p: usize| potential[g][p] / (gt_count[g] + pred_count[p] - potential[g][p]);

    let mut matches = vec![vec![0.0; n_pred]; n_gt];
    let (mut tp, mut fn_, mut fp) = (0.0, 0.0, 0.0);
    for f in frames {
        let score: Vec<Vec<f64>> = f
            .gt_ids
            .iter()
            .enumerate()
            .map(|(g, &gid)| f.pred_ids.iter().enumerate().map(|(p, &pid)| align(gid, pid) * f.iou[g][p]).collect())
            .collect();
        let matched = max_score_matching(&score, |g, p| f.iou[g][p] >= alpha - EPS);
        tp += matched.len() as f64;
        fn_ += (f.gt_ids.len() - matched.len()) as f64;
        fp += (f.pred_ids.len() - matched.len()) as f64;
        for (g, p) in matched {
            matches[f.gt_ids[g]][f.pred_ids[p]] += 1.0;
        }
    }
    let deta = tp / (tp + fn_ + fp).max(1.0);
    let mut assa_sum = 0.0;
    for g in 0..n_gt {
        for p in 0..n_pred {
            let m = matches[g][p];
            if m > 0.0 {
                assa_sum += m * m / (gt_count[g] + pred_count[p] - m).max(1.0);
            }
        }
    }
    (deta, assa_sum / tp.max(1.0))
}

#[cfg(test)]
mod tests;
