//! Detection and tracking metrics: COCO-style AP, CLEAR MOTA, IDF1 and HOTA.
//!
//! Multi-video inputs are pooled: identities are made unique per video and
//! all frames are evaluated as one dataset.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox, DetectionSet};
use crate::matching::{hungarian, CostMatrix};
use crate::synth::GroundTruth;
use crate::tracker::TrackingResult;

/// Tolerance applied to every `IoU >= threshold` test.
pub const IOU_EPS: f64 = 1e-12;
pub const MATCH_IOU: f64 = 0.5;

/// Identity-tagged boxes of one frame.
pub type FrameBoxes = Vec<(u32, BBox)>;

/// Ground truth and predictions for one video.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequence {
    pub gt: Vec<FrameBoxes>,
    pub pred: Vec<FrameBoxes>,
}

impl Sequence {
    pub fn new(gt: Vec<FrameBoxes>, pred: Vec<FrameBoxes>) -> Self {
        Sequence { gt, pred }
    }

    pub fn from_tracking(result: &TrackingResult, gt: &GroundTruth) -> Self {
        Sequence {
            gt: gt
                .frames
                .iter()
                .map(|f| f.iter().map(|o| (o.id, o.bbox)).collect())
                .collect(),
            pred: result
                .frames
                .iter()
                .map(|f| f.iter().map(|t| (t.id, t.bbox)).collect())
                .collect(),
        }
    }

    fn num_frames(&self) -> usize {
        self.gt.len().max(self.pred.len())
    }

    fn frame(list: &[FrameBoxes], t: usize) -> &[(u32, BBox)] {
        list.get(t).map_or(&[], |f| f.as_slice())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub per_threshold: Vec<f64>,
}

pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// COCO-style AP@[0.50:0.95] with 101-point interpolation, pooled over all
/// frames. Returns zeros when there is no ground truth.
pub fn coco_ap(preds: &[DetectionSet], gts: &[Vec<BBox>]) -> ApReport {
    let num_gt: usize = gts.iter().map(Vec::len).sum();
    let mut dets: Vec<(usize, usize, f64)> = preds
        .iter()
        .enumerate()
        .flat_map(|(f, d)| d.scores.iter().enumerate().map(move |(i, &s)| (f, i, s)))
        .collect();
    dets.sort_by(|a, b| b.2.total_cmp(&a.2));

    let per_threshold: Vec<f64> = iou_thresholds()
        .into_iter()
        .map(|alpha| {
            if num_gt == 0 {
                return 0.0;
            }
            let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut recall = Vec::with_capacity(dets.len());
            let mut precision = Vec::with_capacity(dets.len());
            for &(f, i, _) in &dets {
                let pb = &preds[f].boxes[i];
                let frame_gt = gts.get(f).map_or(&[][..], |g| g.as_slice());
                let mut best: Option<(usize, f64)> = None;
                for (j, g) in frame_gt.iter().enumerate() {
                    if taken[f][j] {
                        continue;
                    }
                    let o = iou_unchecked(pb, g);
                    if o + IOU_EPS >= alpha && best.is_none_or(|(_, b)| o > b) {
                        best = Some((j, o));
                    }
                }
                match best {
                    Some((j, _)) => {
                        taken[f][j] = true;
                        tp += 1;
                    }
                    None => fp += 1,
                }
                recall.push(tp as f64 / num_gt as f64);
                precision.push(tp as f64 / (tp + fp) as f64);
            }
            for k in (0..precision.len().saturating_sub(1)).rev() {
                precision[k] = precision[k].max(precision[k + 1]);
            }
            let total: f64 = (0..=100)
                .map(|r| {
                    let r = r as f64 / 100.0;
                    let idx = recall.partition_point(|&x| x < r);
                    precision.get(idx).copied().unwrap_or(0.0)
                })
                .sum();
            total / 101.0
        })
        .collect();
    ApReport {
        ap: per_threshold.iter().sum::<f64>() / per_threshold.len() as f64,
        ap50: per_threshold[0],
        ap75: per_threshold[5],
        per_threshold,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClearReport {
    pub mota: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub num_gt: usize,
}

const INVALID_COST: f64 = 1e6;

/// CLEAR MOT at IoU 0.5. Matches from the previous frame are kept while they
/// stay above threshold; the rest is assigned by Hungarian matching.
pub fn clear_mota(seqs: &[Sequence]) -> ClearReport {
    let mut r = ClearReport::default();
    for seq in seqs {
        let mut prev: HashMap<u32, u32> = HashMap::new();
        let mut last: HashMap<u32, u32> = HashMap::new();
        for t in 0..seq.num_frames() {
            let gt = Sequence::frame(&seq.gt, t);
            let pr = Sequence::frame(&seq.pred, t);
            let mut gt_used = vec![false; gt.len()];
            let mut pr_used = vec![false; pr.len()];
            let mut matches: Vec<(usize, usize)> = Vec::new();
            for (gi, (gid, gb)) in gt.iter().enumerate() {
                let Some(&pid) = prev.get(gid) else { continue };
                if let Some(pi) = pr.iter().position(|(id, _)| *id == pid) {
                    if !pr_used[pi] && iou_unchecked(gb, &pr[pi].1) + IOU_EPS >= MATCH_IOU {
                        gt_used[gi] = true;
                        pr_used[pi] = true;
                        matches.push((gi, pi));
                    }
                }
            }
            let free_gt: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
            let free_pr: Vec<usize> = (0..pr.len()).filter(|&i| !pr_used[i]).collect();
            if !free_gt.is_empty() && !free_pr.is_empty() {
                let cost = CostMatrix::from_fn(free_gt.len(), free_pr.len(), |i, j| {
                    let o = iou_unchecked(&gt[free_gt[i]].1, &pr[free_pr[j]].1);
                    if o + IOU_EPS >= MATCH_IOU {
                        1.0 - o
                    } else {
                        INVALID_COST
                    }
                })
                .expect("finite costs");
                for (i, j) in hungarian(&cost).pairs {
                    if cost.get(i, j) < INVALID_COST {
                        matches.push((free_gt[i], free_pr[j]));
                    }
                }
            }
            let mut current = HashMap::new();
            for &(gi, pi) in &matches {
                let (gid, pid) = (gt[gi].0, pr[pi].0);
                if last.get(&gid).is_some_and(|&p| p != pid) {
                    r.idsw += 1;
                }
                last.insert(gid, pid);
                current.insert(gid, pid);
            }
            prev = current;
            r.tp += matches.len();
            r.fn_ += gt.len() - matches.len();
            r.fp += pr.len() - matches.len();
            r.num_gt += gt.len();
        }
    }
    r.mota = if r.num_gt == 0 {
        0.0
    } else {
        1.0 - (r.fn_ + r.fp + r.idsw) as f64 / r.num_gt as f64
    };
    r
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdReport {
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// IDF1 from the best global one-to-one mapping of predicted to true
/// identities (overlap counted at IoU 0.5).
pub fn idf1(seqs: &[Sequence]) -> IdReport {
    let mut r = IdReport::default();
    for seq in seqs {
        let mut gt_ids: Vec<u32> = seq.gt.iter().flatten().map(|(id, _)| *id).collect();
        let mut pr_ids: Vec<u32> = seq.pred.iter().flatten().map(|(id, _)| *id).collect();
        gt_ids.sort_unstable();
        gt_ids.dedup();
        pr_ids.sort_unstable();
        pr_ids.dedup();
        let n_gt: usize = seq.gt.iter().map(Vec::len).sum();
        let n_pr: usize = seq.pred.iter().map(Vec::len).sum();
        let mut overlap = vec![0usize; gt_ids.len() * pr_ids.len()];
        for t in 0..seq.num_frames() {
            for (gid, gb) in Sequence::frame(&seq.gt, t) {
                for (pid, pb) in Sequence::frame(&seq.pred, t) {
                    if iou_unchecked(gb, pb) + IOU_EPS >= MATCH_IOU {
                        let gi = gt_ids.binary_search(gid).unwrap();
                        let pi = pr_ids.binary_search(pid).unwrap();
                        overlap[gi * pr_ids.len() + pi] += 1;
                    }
                }
            }
        }
        let mut idtp = 0;
        if !gt_ids.is_empty() && !pr_ids.is_empty() {
            let cost = CostMatrix::from_fn(gt_ids.len(), pr_ids.len(), |i, j| {
                -(overlap[i * pr_ids.len() + j] as f64)
            })
            .expect("finite costs");
            idtp = hungarian(&cost)
                .pairs
                .iter()
                .map(|&(i, j)| overlap[i * pr_ids.len() + j])
                .sum();
        }
        r.idtp += idtp;
        r.idfn += n_gt - idtp;
        r.idfp += n_pr - idtp;
    }
    let denom = 2 * r.idtp + r.idfp + r.idfn;
    r.idf1 = if denom == 0 {
        0.0
    } else {
        2.0 * r.idtp as f64 / denom as f64
    };
    r
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HotaAlpha {
    pub alpha: f64,
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HotaReport {
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub per_alpha: Vec<HotaAlpha>,
}

pub fn hota_alphas() -> Vec<f64> {
    (1..=19).map(|i| (5 * i) as f64 / 100.0).collect()
}

/// HOTA with its DetA/AssA decomposition, following the published reference
/// evaluator: one association-aware Hungarian matching per frame, then
/// thresholded at each α.
pub fn hota(seqs: &[Sequence]) -> HotaReport {
    // global identities: (sequence, id) -> dense index
    let mut gt_index: HashMap<(usize, u32), usize> = HashMap::new();
    let mut pr_index: HashMap<(usize, u32), usize> = HashMap::new();
    for (s, seq) in seqs.iter().enumerate() {
        for (id, _) in seq.gt.iter().flatten() {
            let n = gt_index.len();
            gt_index.entry((s, *id)).or_insert(n);
        }
        for (id, _) in seq.pred.iter().flatten() {
            let n = pr_index.len();
            pr_index.entry((s, *id)).or_insert(n);
        }
    }
    let (ng, np) = (gt_index.len(), pr_index.len());
    let alphas = hota_alphas();
    let mut gt_count = vec![0.0; ng];
    let mut pr_count = vec![0.0; np];
    let mut potential = vec![0.0; ng * np];

    struct Frame {
        g: Vec<usize>,
        p: Vec<usize>,
        sim: Vec<f64>,
    }
    let mut frames = Vec::new();
    for (s, seq) in seqs.iter().enumerate() {
        for t in 0..seq.num_frames() {
            let gt = Sequence::frame(&seq.gt, t);
            let pr = Sequence::frame(&seq.pred, t);
            let g: Vec<usize> = gt.iter().map(|(id, _)| gt_index[&(s, *id)]).collect();
            let p: Vec<usize> = pr.iter().map(|(id, _)| pr_index[&(s, *id)]).collect();
            let mut sim = vec![0.0; g.len() * p.len()];
            for (i, (_, gb)) in gt.iter().enumerate() {
                for (j, (_, pb)) in pr.iter().enumerate() {
                    sim[i * p.len() + j] = iou_unchecked(gb, pb);
                }
            }
            let row_sum: Vec<f64> = (0..g.len())
                .map(|i| (0..p.len()).map(|j| sim[i * p.len() + j]).sum())
                .collect();
            let col_sum: Vec<f64> = (0..p.len())
                .map(|j| (0..g.len()).map(|i| sim[i * p.len() + j]).sum())
                .collect();
            for i in 0..g.len() {
                for j in 0..p.len() {
                    let s_ij = sim[i * p.len() + j];
                    let denom = row_sum[i] + col_sum[j] - s_ij;
                    if denom > f64::EPSILON {
                        potential[g[i] * np + p[j]] += s_ij / denom;
                    }
                }
            }
            g.iter().for_each(|&i| gt_count[i] += 1.0);
            p.iter().for_each(|&j| pr_count[j] += 1.0);
            frames.push(Frame { g, p, sim });
        }
    }
    let global: Vec<f64> = (0..ng * np)
        .map(|k| {
            let (i, j) = (k / np, k % np);
            let denom = gt_count[i] + pr_count[j] - potential[k];
            if denom > 0.0 {
                potential[k] / denom
            } else {
                0.0
            }
        })
        .collect();

    let mut tp = vec![0usize; alphas.len()];
    let mut fn_ = vec![0usize; alphas.len()];
    let mut fp = vec![0usize; alphas.len()];
    let mut matches = vec![vec![0.0; ng * np]; alphas.len()];
    for fr in &frames {
        let (n_g, n_p) = (fr.g.len(), fr.p.len());
        let pairs = if n_g > 0 && n_p > 0 {
            let cost = CostMatrix::from_fn(n_g, n_p, |i, j| {
                -(global[fr.g[i] * np + fr.p[j]] * fr.sim[i * n_p + j])
            })
            .expect("finite costs");
            hungarian(&cost).pairs
        } else {
            Vec::new()
        };
        for (a, &alpha) in alphas.iter().enumerate() {
            let mut hits = 0;
            for &(i, j) in &pairs {
                if fr.sim[i * n_p + j] >= alpha - f64::EPSILON {
                    hits += 1;
                    matches[a][fr.g[i] * np + fr.p[j]] += 1.0;
                }
            }
            tp[a] += hits;
            fn_[a] += n_g - hits;
            fp[a] += n_p - hits;
        }
    }

    let per_alpha: Vec<HotaAlpha> = alphas
        .iter()
        .enumerate()
        .map(|(a, &alpha)| {
            let m = &matches[a];
            let mut ass_sum = 0.0;
            for k in 0..ng * np {
                if m[k] > 0.0 {
                    let (i, j) = (k / np, k % np);
                    let denom = (gt_count[i] + pr_count[j] - m[k]).max(1.0);
                    ass_sum += m[k] * (m[k] / denom);
                }
            }
            let assa = ass_sum / (tp[a].max(1) as f64);
            let deta = tp[a] as f64 / ((tp[a] + fn_[a] + fp[a]).max(1) as f64);
            HotaAlpha {
                alpha,
                hota: (deta * assa).sqrt(),
                deta,
                assa,
                tp: tp[a],
                fn_: fn_[a],
                fp: fp[a],
            }
        })
        .collect();
    let mean = |f: fn(&HotaAlpha) -> f64| per_alpha.iter().map(f).sum::<f64>() / alphas.len() as f64;
    HotaReport {
        hota: mean(|h| h.hota),
        deta: mean(|h| h.deta),
        assa: mean(|h| h.assa),
        per_alpha,
    }
}

/// Everything reported for one evaluation run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub hota: f64,
    pub deta: f64,
    pub assa: f64,
    pub mota: f64,
    pub idf1: f64,
    pub clear: ClearReport,
    pub identity: IdReport,
}

/// Tracking metrics on `seqs` plus AP on the scored detections (one
/// `DetectionSet` per frame, frames concatenated across videos).
pub fn evaluate(seqs: &[Sequence], detections: &[DetectionSet]) -> MetricsReport {
    let gts: Vec<Vec<BBox>> = seqs
        .iter()
        .flat_map(|s| s.gt.iter().map(|f| f.iter().map(|(_, b)| *b).collect()))
        .collect();
    let ap = coco_ap(detections, &gts);
    let h = hota(seqs);
    let clear = clear_mota(seqs);
    let identity = idf1(seqs);
    MetricsReport {
        ap: ap.ap,
        ap50: ap.ap50,
        ap75: ap.ap75,
        hota: h.hota,
        deta: h.deta,
        assa: h.assa,
        mota: clear.mota,
        idf1: identity.idf1,
        clear,
        identity,
    }
}

/// Parses `frame,id,x1,y1,w,h[,...]` rows (frames counted from 1) into
/// per-frame boxes. Extra columns are ignored; blank lines and lines
/// starting with `#` are skipped.
pub fn read_mot_csv(text: &str) -> Result<Vec<FrameBoxes>> {
    let mut frames: Vec<FrameBoxes> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("line {}: {what}: {line}", n + 1));
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 6 {
            return Err(bad("expected at least 6 columns"));
        }
        let frame: usize = cols[0].parse().map_err(|_| bad("bad frame"))?;
        let id: u32 = cols[1].parse().map_err(|_| bad("bad id"))?;
        let mut v = [0.0; 4];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = cols[2 + k].parse().map_err(|_| bad("bad coordinate"))?;
        }
        if frame == 0 {
            return Err(bad("frames are counted from 1"));
        }
        let b = BBox::from_corners(v[0], v[1], v[0] + v[2], v[1] + v[3]);
        if !b.is_valid() {
            return Err(bad("degenerate box"));
        }
        if frames.len() < frame {
            frames.resize(frame, Vec::new());
        }
        frames[frame - 1].push((id, b));
    }
    Ok(frames)
}

/// Ground truth as `frame,id,x1,y1,w,h,1,visible` rows.
pub fn gt_to_mot_csv(gt: &GroundTruth) -> String {
    let mut s = String::new();
    for (t, frame) in gt.frames.iter().enumerate() {
        for o in frame {
            let [x1, y1, _, _] = o.bbox.corners();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},1,{}",
                t + 1,
                o.id,
                x1,
                y1,
                o.bbox.w,
                o.bbox.h,
                u8::from(o.visible)
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64) -> BBox {
        BBox::new(cx, 0.5, 0.1, 0.1)
    }

    #[test]
    fn csv_round_trip() {
        let text = "1,4,0.1,0.2,0.3,0.4,0.9\n# note\n\n3,5,0.5,0.5,0.25,0.25\n";
        let f = read_mot_csv(text).unwrap();
        assert_eq!(f.len(), 3);
        assert!(f[1].is_empty());
        assert_eq!(f[0][0].0, 4);
        assert!((f[0][0].1.cx - 0.25).abs() < 1e-12);
        assert!(read_mot_csv("0,1,0,0,1,1").is_err());
        assert!(read_mot_csv("1,1,0,0").is_err());
    }

    #[test]
    fn perfect_tracking_scores_one() {
        let gt: Vec<FrameBoxes> = (0..3).map(|_| vec![(1, b(0.2)), (2, b(0.6))]).collect();
        let seq = Sequence::new(gt.clone(), gt.clone());
        let h = hota(std::slice::from_ref(&seq));
        assert!((h.hota - 1.0).abs() < 1e-12 && (h.deta - 1.0).abs() < 1e-12);
        assert_eq!(clear_mota(std::slice::from_ref(&seq)).mota, 1.0);
        assert_eq!(idf1(std::slice::from_ref(&seq)).idf1, 1.0);
        let dets: Vec<DetectionSet> = gt
            .iter()
            .map(|f| DetectionSet::new(f.iter().map(|x| x.1).collect(), vec![0.9; f.len()]).unwrap())
            .collect();
        let boxes: Vec<Vec<BBox>> = gt.iter().map(|f| f.iter().map(|x| x.1).collect()).collect();
        let ap = coco_ap(&dets, &boxes);
        assert!(ap.per_threshold.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn empty_predictions_score_zero() {
        let gt: Vec<FrameBoxes> = (0..3).map(|_| vec![(1, b(0.2))]).collect();
        let seq = Sequence::new(gt, vec![Vec::new(); 3]);
        let s = std::slice::from_ref(&seq);
        assert_eq!(hota(s).hota, 0.0);
        assert_eq!(idf1(s).idf1, 0.0);
        let m = clear_mota(s);
        assert_eq!(m.mota, 0.0);
        assert_eq!(m.fn_, 3);
        let ap = coco_ap(&vec![DetectionSet::default(); 3], &vec![vec![b(0.2)]; 3]);
        assert_eq!(ap.ap, 0.0);
    }

    #[test]
    fn all_missed_with_false_positives_goes_negative() {
        let gt: Vec<FrameBoxes> = vec![vec![(1, b(0.2))], vec![(1, b(0.2))]];
        let pred: Vec<FrameBoxes> = vec![vec![(5, b(0.8))], vec![(5, b(0.8))]];
        let m = clear_mota(&[Sequence::new(gt, pred)]);
        assert_eq!(m.mota, -1.0);
    }

    #[test]
    fn hota_identity_holds_per_alpha() {
        let gt: Vec<FrameBoxes> = (0..4).map(|t| vec![(1, b(0.2 + 0.01 * t as f64)), (2, b(0.6))]).collect();
        let pred: Vec<FrameBoxes> = (0..4)
            .map(|t| vec![(7 + (t % 2) as u32, b(0.205 + 0.01 * t as f64)), (3, b(0.62))])
            .collect();
        let h = hota(&[Sequence::new(gt, pred)]);
        for a in &h.per_alpha {
            assert_eq!(a.hota, (a.deta * a.assa).sqrt());
        }
    }
}
