//! Minimum-cost assignment and the set-prediction loss built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, boxes_to_tensor, BBox};
use crate::tensor::{Tape, Var};

/// Dense cost matrix, rows are predictions and columns ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "cost matrix {rows}x{cols} given {} entries",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("cost matrix has non-finite entries".into()));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..rows * cols).map(|k| f(k / cols.max(1), k % cols.max(1))).collect();
        CostMatrix::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn transposed(&self) -> CostMatrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// Injective `(row, col)` pairs, sorted by row.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    /// Sum of matched costs, accumulated in row order.
    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(r, c)| costs.get(r, c)).sum()
    }

    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Minimum-cost assignment of size `min(rows, cols)` (shortest augmenting
/// paths with dual potentials, O(n²m)). Rows are inserted in index order, so
/// equal-cost optima resolve the same way on every call.
pub fn hungarian(costs: &CostMatrix) -> Assignment {
    if costs.rows == 0 || costs.cols == 0 {
        return Assignment::default();
    }
    if costs.rows > costs.cols {
        let t = hungarian(&costs.transposed());
        let mut pairs: Vec<_> = t.pairs.into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return Assignment { pairs };
    }
    let (n, m) = (costs.rows, costs.cols);
    let a = |i: usize, j: usize| costs.get(i - 1, j - 1);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<_> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    Assignment { pairs }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Relative weights of the classification, L1 and GIoU terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub focal: f64,
    pub l1: f64,
    pub giou: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            focal: 2.0,
            l1: 5.0,
            giou: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.focal, self.l1, self.giou]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Config(format!("loss weights must be nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Binary focal loss of a probability against a 0/1 target.
pub fn focal_loss(prob: f64, target: bool, params: FocalParams) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Contract(format!(
            "focal loss needs a probability in (0, 1), got {prob}"
        )));
    }
    let FocalParams { alpha, gamma } = params;
    Ok(if target {
        -alpha * (1.0 - prob).powf(gamma) * prob.ln()
    } else {
        -(1.0 - alpha) * prob.powf(gamma) * (1.0 - prob).ln()
    })
}

/// Focal-style matching cost of calling a prediction with this logit positive.
pub fn focal_match_cost(logit: f64, params: FocalParams) -> f64 {
    let p = geometry::sigmoid(logit);
    let FocalParams { alpha, gamma } = params;
    let pos = alpha * (1.0 - p).powf(gamma) * -(p + 1e-8).ln();
    let neg = (1.0 - alpha) * p.powf(gamma) * -(1.0 - p + 1e-8).ln();
    pos - neg
}

/// Summed sigmoid focal loss over `[n, 1]` logits with 0/1 targets.
pub fn sigmoid_focal_sum<'t>(
    logits: Var<'t>,
    targets: &[f64],
    params: FocalParams,
) -> Result<Var<'t>> {
    let tape = logits.tape();
    let n = logits.numel();
    if targets.len() != n {
        return Err(Error::Contract(format!(
            "{} focal targets for {n} logits",
            targets.len()
        )));
    }
    let logits = logits.reshape(&[n])?;
    let t = tape.constant_from(&[n], targets.to_vec())?;
    let one_minus_t = tape.constant_from(&[n], targets.iter().map(|v| 1.0 - v).collect())?;
    let p = logits.sigmoid();
    let q = logits.neg().sigmoid();
    // -ln p = softplus(-x), -ln(1-p) = softplus(x)
    let pos = q
        .powf(params.gamma)
        .mul(logits.neg().softplus())?
        .scale(params.alpha);
    let neg = p
        .powf(params.gamma)
        .mul(logits.softplus())?
        .scale(1.0 - params.alpha);
    Ok(t.mul(pos)?.add(one_minus_t.mul(neg)?)?.sum())
}

/// Weighted loss terms; `total` is the weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub focal: Var<'t>,
    pub l1: Var<'t>,
    pub giou: Var<'t>,
}

/// Loss for predictions with fixed targets: focal on every row (positive iff
/// a target exists), L1 and `1 - GIoU` on the rows that have one.
pub fn assigned_loss<'t>(
    boxes: Var<'t>,
    logits: Var<'t>,
    targets: &[Option<BBox>],
    weights: &LossWeights,
    focal: FocalParams,
) -> Result<LossParts<'t>> {
    let tape = boxes.tape();
    let n = boxes.shape()[0];
    if targets.len() != n || logits.numel() != n {
        return Err(Error::Contract(format!(
            "{} targets for {n} boxes and {} logits",
            targets.len(),
            logits.numel()
        )));
    }
    let labels: Vec<f64> = targets.iter().map(|t| f64::from(t.is_some() as u8)).collect();
    let focal_term = sigmoid_focal_sum(logits, &labels, focal)?;
    let (rows, gts): (Vec<usize>, Vec<BBox>) = targets
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|b| (i, b)))
        .unzip();
    let (l1, giou_term) = if rows.is_empty() {
        (tape.scalar(0.0), tape.scalar(0.0))
    } else {
        let pred = boxes.gather_rows(&rows)?;
        let gt = tape.constant(&boxes_to_tensor(&gts));
        let l1 = pred.sub(gt)?.abs().sum();
        let g = geometry::giou_var(pred, gt)?;
        let giou_term = g.neg().add_scalar(1.0).sum();
        (l1, giou_term)
    };
    let total = focal_term
        .scale(weights.focal)
        .add(l1.scale(weights.l1))?
        .add(giou_term.scale(weights.giou))?;
    Ok(LossParts {
        total,
        focal: focal_term,
        l1,
        giou: giou_term,
    })
}

/// Matching cost between predictions (values only) and ground truth.
pub fn matching_costs(
    pred_boxes: &[BBox],
    pred_logits: &[f64],
    gts: &[BBox],
    weights: &LossWeights,
    focal: FocalParams,
) -> Result<CostMatrix> {
    CostMatrix::from_fn(pred_boxes.len(), gts.len(), |i, j| {
        let cls = focal_match_cost(pred_logits[i], focal);
        let l1 = pred_boxes[i].l1(&gts[j]);
        let g = geometry::giou(&pred_boxes[i], &gts[j]).unwrap_or(-1.0);
        weights.focal * cls + weights.l1 * l1 + weights.giou * (1.0 - g)
    })
}

/// Hungarian-matched set loss: matched predictions regress to their ground
/// truth, unmatched ones are pushed to background. Returns the unnormalized
/// sum and the matching; gradients do not flow through the matching.
pub fn set_criterion<'t>(
    boxes: Var<'t>,
    logits: Var<'t>,
    gts: &[BBox],
    weights: &LossWeights,
    focal: FocalParams,
) -> Result<(LossParts<'t>, Assignment)> {
    let n = boxes.shape()[0];
    if n == 0 && !gts.is_empty() {
        return Err(Error::Contract("set criterion needs predictions".into()));
    }
    let pred_boxes = geometry::tensor_rows_to_boxes(&boxes.to_vec());
    let pred_logits = logits.to_vec();
    let costs = matching_costs(&pred_boxes, &pred_logits, gts, weights, focal)?;
    let assignment = hungarian(&costs);
    let mut targets = vec![None; n];
    for &(r, c) in &assignment.pairs {
        targets[r] = Some(gts[c]);
    }
    let parts = assigned_loss(boxes, logits, &targets, weights, focal)?;
    Ok((parts, assignment))
}

/// Convenience for tests and tools: the set loss of plain predictions.
pub fn set_criterion_value(
    boxes: &[BBox],
    logits: &[f64],
    gts: &[BBox],
    weights: &LossWeights,
    focal: FocalParams,
) -> Result<(f64, Assignment)> {
    let tape = Tape::new();
    let b = tape.constant(&boxes_to_tensor(boxes));
    let l = tape.constant_from(&[logits.len(), 1], logits.to_vec())?;
    let (parts, a) = set_criterion(b, l, gts, weights, focal)?;
    Ok((parts.total.item()?, a))
}
