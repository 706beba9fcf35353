//! Boxes, overlap measures and sine-cosine encodings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{self, Tensor, Var};

/// Clamp applied to box coordinates before any logit transform.
pub const LOGIT_EPS: f64 = 1e-4;
pub const DEFAULT_TEMPERATURE: f64 = 10_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box {0:?}: width and height must be positive")]
    Degenerate(BBox),
    #[error("encoding dimension {dim} must be a positive multiple of {multiple}")]
    Dimension { dim: usize, multiple: usize },
    #[error("detection set has {boxes} boxes but {scores} scores")]
    Length { boxes: usize, scores: usize },
    #[error("score {0} outside [0, 1]")]
    Score(f64),
}

/// Normalized center-format box `(cx, cy, w, h)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox {
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn validate(self) -> Result<Self, GeometryError> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(GeometryError::Degenerate(self))
        }
    }

    /// Coordinates clamped into `[LOGIT_EPS, 1 - LOGIT_EPS]`.
    pub fn clamp_unit(self) -> Self {
        let c = |v: f64| v.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
        BBox::new(c(self.cx), c(self.cy), c(self.w), c(self.h))
    }

    pub fn l1(&self, other: &BBox) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

fn overlap(a: &BBox, b: &BBox) -> (f64, f64, f64) {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let enclosing = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    (inter, union, enclosing)
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    a.validate()?;
    b.validate()?;
    let (inter, union, _) = overlap(a, b);
    Ok(inter / union)
}

/// Generalized IoU: `iou - |C \ (A ∪ B)| / |C|` with `C` the enclosing box.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    a.validate()?;
    b.validate()?;
    let (inter, union, enclosing) = overlap(a, b);
    let (ca, cb) = (a.corners(), b.corners());
    let hull = [
        ca[0].min(cb[0]),
        ca[1].min(cb[1]),
        ca[2].max(cb[2]),
        ca[3].max(cb[3]),
    ];
    let penalty = if hull == ca || hull == cb {
        0.0
    } else {
        (enclosing - union) / enclosing
    };
    Ok(inter / union - penalty)
}

/// IoU for boxes already known to be valid; zero for degenerate input.
pub fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    if !a.is_valid() || !b.is_valid() {
        return 0.0;
    }
    let (inter, union, _) = overlap(a, b);
    inter / union
}

/// Interleaved `[sin(v·ω₀), cos(v·ω₀), sin(v·ω₁), ...]` with
/// `ωᵢ = temperature^(-2i/dim)`.
pub fn sincos_pe(value: f64, dim: usize, temperature: f64) -> Result<Vec<f64>, GeometryError> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(GeometryError::Dimension { dim, multiple: 2 });
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let omega = temperature.powf(-(2.0 * i as f64) / dim as f64);
        let (s, c) = (value * omega).sin_cos();
        out.push(s);
        out.push(c);
    }
    Ok(out)
}

/// Four `sincos_pe` blocks of `dim / 4`, one per box coordinate, each
/// coordinate multiplied by `scale` first.
pub fn anchor_pe_scaled(
    b: &BBox,
    dim: usize,
    scale: f64,
    temperature: f64,
) -> Result<Vec<f64>, GeometryError> {
    if dim == 0 || !dim.is_multiple_of(4) || !(dim / 4).is_multiple_of(2) {
        return Err(GeometryError::Dimension { dim, multiple: 8 });
    }
    let mut out = Vec::with_capacity(dim);
    for v in b.to_array() {
        out.extend(sincos_pe(v * scale, dim / 4, temperature)?);
    }
    Ok(out)
}

pub fn anchor_pe(b: &BBox, dim: usize) -> Result<Vec<f64>, GeometryError> {
    anchor_pe_scaled(b, dim, 1.0, DEFAULT_TEMPERATURE)
}

pub fn inverse_sigmoid(p: f64) -> f64 {
    let p = p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(logit(anchor) + delta)` per coordinate; the anchor is clamped
/// into `[LOGIT_EPS, 1 - LOGIT_EPS]` first, so `delta = 0` returns the
/// (clamped) anchor.
pub fn inverse_sigmoid_refine(anchor: &BBox, delta: [f64; 4]) -> BBox {
    let a = anchor.to_array();
    BBox::from_array(std::array::from_fn(|i| {
        sigmoid(inverse_sigmoid(a[i]) + delta[i])
    }))
}

/// Predicted boxes and their confidences.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub boxes: Vec<BBox>,
    pub scores: Vec<f64>,
}

impl DetectionSet {
    pub fn new(boxes: Vec<BBox>, scores: Vec<f64>) -> Result<Self, GeometryError> {
        if boxes.len() != scores.len() {
            return Err(GeometryError::Length {
                boxes: boxes.len(),
                scores: scores.len(),
            });
        }
        if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(GeometryError::Score(s));
        }
        Ok(DetectionSet { boxes, scores })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

pub fn boxes_to_tensor(boxes: &[BBox]) -> Tensor {
    let data = boxes.iter().flat_map(|b| b.to_array()).collect();
    Tensor::new(&[boxes.len(), 4], data).expect("nonempty box list")
}

pub fn tensor_rows_to_boxes(data: &[f64]) -> Vec<BBox> {
    data.chunks_exact(4)
        .map(|c| BBox::new(c[0], c[1], c[2], c[3]))
        .collect()
}

/// Per-row GIoU between two `[n, 4]` center-format box tensors, as `[n, 1]`.
pub fn giou_var<'t>(a: Var<'t>, b: Var<'t>) -> tensor::Result<Var<'t>> {
    let corners = |v: Var<'t>| -> tensor::Result<[Var<'t>; 4]> {
        let cx = v.slice(1, 0, 1)?;
        let cy = v.slice(1, 1, 2)?;
        let hw = v.slice(1, 2, 3)?.scale(0.5);
        let hh = v.slice(1, 3, 4)?.scale(0.5);
        Ok([cx.sub(hw)?, cy.sub(hh)?, cx.add(hw)?, cy.add(hh)?])
    };
    let [ax1, ay1, ax2, ay2] = corners(a)?;
    let [bx1, by1, bx2, by2] = corners(b)?;
    let area_a = ax2.sub(ax1)?.mul(ay2.sub(ay1)?)?;
    let area_b = bx2.sub(bx1)?.mul(by2.sub(by1)?)?;
    let iw = ax2.minimum(bx2)?.sub(ax1.maximum(bx1)?)?.relu();
    let ih = ay2.minimum(by2)?.sub(ay1.maximum(by1)?)?.relu();
    let inter = iw.mul(ih)?;
    let union = area_a.add(area_b)?.sub(inter)?;
    let cw = ax2.maximum(bx2)?.sub(ax1.minimum(bx1)?)?;
    let ch = ay2.maximum(by2)?.sub(ay1.minimum(by1)?)?;
    let enclosing = cw.mul(ch)?;
    let iou = inter.div(union)?;
    let penalty = enclosing.sub(union)?.div(enclosing)?;
    iou.sub(penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_hand_cases() {
        let a = BBox::from_corners(0.0, 0.0, 2.0, 2.0);
        let b = BBox::from_corners(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b).unwrap() - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let far = BBox::from_corners(5.0, 5.0, 6.0, 6.0);
        assert_eq!(iou(&a, &far).unwrap(), 0.0);
    }

    #[test]
    fn giou_hand_cases() {
        let a = BBox::from_corners(0.0, 0.0, 1.0, 1.0);
        let b = BBox::from_corners(2.0, 0.0, 3.0, 1.0);
        assert!((giou(&a, &b).unwrap() + 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(giou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_boxes_are_errors() {
        let ok = BBox::new(0.5, 0.5, 0.1, 0.1);
        let flat = BBox::new(0.5, 0.5, 0.0, 0.1);
        assert!(matches!(iou(&ok, &flat), Err(GeometryError::Degenerate(_))));
        assert!(giou(&flat, &ok).is_err());
    }

    #[test]
    fn giou_equals_iou_for_nested_spans() {
        let outer = BBox::new(0.5, 0.5, 0.4, 0.4);
        let inner = BBox::new(0.45, 0.55, 0.1, 0.2);
        assert_eq!(giou(&outer, &inner).unwrap(), iou(&outer, &inner).unwrap());
    }

    #[test]
    fn sincos_cases() {
        let pe = sincos_pe(0.0, 8, DEFAULT_TEMPERATURE).unwrap();
        for pair in pe.chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
        let pe = sincos_pe(0.5, 8, DEFAULT_TEMPERATURE).unwrap();
        assert!((pe[0] - 0.479426).abs() < 1e-6);
        let pe = sincos_pe(123.4, 16, DEFAULT_TEMPERATURE).unwrap();
        assert!(pe.iter().all(|v| v.abs() <= 1.0));
        assert!(sincos_pe(1.0, 7, DEFAULT_TEMPERATURE).is_err());
    }

    #[test]
    fn anchor_pe_is_blockwise() {
        let b = BBox::new(0.5, 0.5, 0.1, 0.2);
        let pe = anchor_pe(&b, 32).unwrap();
        let mut manual = Vec::new();
        for v in [0.5, 0.5, 0.1, 0.2] {
            manual.extend(sincos_pe(v, 8, DEFAULT_TEMPERATURE).unwrap());
        }
        assert_eq!(pe, manual);

        let z = anchor_pe(&BBox::new(0.0, 0.0, 0.3, 0.4), 32).unwrap();
        let zero = sincos_pe(0.0, 8, DEFAULT_TEMPERATURE).unwrap();
        assert_eq!(&z[0..8], zero.as_slice());
        assert_eq!(&z[8..16], zero.as_slice());
        assert_ne!(pe, anchor_pe(&BBox::new(0.3, 0.7, 0.2, 0.1), 32).unwrap());
        assert!(anchor_pe(&b, 30).is_err());
    }

    #[test]
    fn refine_cases() {
        let a = BBox::new(0.5, 0.3, 0.2, 0.4);
        let same = inverse_sigmoid_refine(&a, [0.0; 4]);
        for (x, y) in same.to_array().iter().zip(a.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
        let moved = inverse_sigmoid_refine(&a, [3f64.ln(), 0.0, 0.0, 0.0]);
        assert!((moved.cx - 0.75).abs() < 1e-12);
        let more = inverse_sigmoid_refine(&a, [2.0, 0.0, 0.0, 0.0]);
        assert!(more.cx > moved.cx);
        let edge = inverse_sigmoid_refine(&BBox::new(0.0, 1.0, 0.5, 0.5), [0.0; 4]);
        assert!((edge.cx - LOGIT_EPS).abs() < 1e-12 && (edge.cy - (1.0 - LOGIT_EPS)).abs() < 1e-12);
    }

    #[test]
    fn corner_round_trip() {
        let b = BBox::new(0.3141, 0.2718, 0.1618, 0.0577);
        let [x1, y1, x2, y2] = b.corners();
        let r = BBox::from_corners(x1, y1, x2, y2);
        for (x, y) in r.to_array().iter().zip(b.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn detection_set_validation() {
        let b = BBox::new(0.5, 0.5, 0.1, 0.1);
        assert!(DetectionSet::new(vec![b], vec![0.5, 0.2]).is_err());
        assert!(DetectionSet::new(vec![b], vec![1.5]).is_err());
        assert_eq!(DetectionSet::new(vec![b], vec![0.5]).unwrap().len(), 1);
    }

    #[test]
    fn giou_var_matches_scalar() {
        let tape = crate::tensor::Tape::new();
        let a = [BBox::new(0.4, 0.5, 0.2, 0.3), BBox::new(0.2, 0.2, 0.1, 0.1)];
        let b = [BBox::new(0.5, 0.5, 0.2, 0.2), BBox::new(0.7, 0.8, 0.1, 0.3)];
        let va = tape.constant(&boxes_to_tensor(&a));
        let vb = tape.constant(&boxes_to_tensor(&b));
        let g = giou_var(va, vb).unwrap().to_vec();
        for i in 0..2 {
            assert!((g[i] - giou(&a[i], &b[i]).unwrap()).abs() < 1e-12);
        }
    }
}
