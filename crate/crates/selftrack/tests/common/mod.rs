//! Oracles and fixtures shared by the integration tests and the acceptance
//! suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selftrack::evaluation::{clear_mota, coco_ap, hota, idf1, FrameBoxes, Sequence};
use selftrack::geometry::{BBox, DetectionSet};
use selftrack::matching::CostMatrix;
use selftrack::model::{Model, ModelConfig, Query, QueryKind};
use selftrack::synth::{generate, ClipSample, SceneConfig};
use selftrack::tensor::gradcheck::within;
use selftrack::tensor::gradcheck::Tolerance;
use selftrack::tensor::{ParamId, Tape};
use selftrack::tracker::{QueryOutput, Tracker, TrackerConfig};
use selftrack::training::{clip_loss, ClipContext, ClipMode, TrainConfig};

/// Minimum total cost over every injective assignment of the smaller side.
pub fn brute_force_min(c: &CostMatrix) -> f64 {
    fn go(c: &CostMatrix, row: usize, used: &mut Vec<bool>, acc: f64, transpose: bool, best: &mut f64) {
        let (rows, cols) = if transpose { (c.cols(), c.rows()) } else { (c.rows(), c.cols()) };
        if row == rows {
            *best = best.min(acc);
            return;
        }
        for col in 0..cols {
            if !used[col] {
                used[col] = true;
                let v = if transpose { c.get(col, row) } else { c.get(row, col) };
                go(c, row + 1, used, acc + v, transpose, best);
                used[col] = false;
            }
        }
    }
    let transpose = c.rows() > c.cols();
    let cols = c.rows().max(c.cols());
    let mut best = f64::INFINITY;
    go(c, 0, &mut vec![false; cols], 0.0, transpose, &mut best);
    if c.rows() == 0 || c.cols() == 0 {
        0.0
    } else {
        best
    }
}

/// Integer-valued random cost matrix (sums are exact in f64).
pub fn random_costs(rng: &mut ChaCha8Rng) -> CostMatrix {
    let rows = rng.random_range(1..=6);
    let cols = rng.random_range(1..=6);
    let data = (0..rows * cols).map(|_| rng.random_range(0..50) as f64).collect();
    CostMatrix::new(rows, cols, data).unwrap()
}

pub fn corners(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    BBox::from_corners(x1, y1, x2, y2)
}

/// Name, computed value and hand-computed value of each committed
/// three-frame metric scenario.
pub fn metric_oracles() -> Vec<(&'static str, f64, f64)> {
    let a = corners(0.1, 0.1, 0.3, 0.3);
    let b = corners(0.6, 0.6, 0.8, 0.8);
    let far = corners(0.1, 0.7, 0.2, 0.8);

    // 4 GT boxes, one false positive in frame 2, one miss in frame 3.
    let mota_seq = Sequence::new(
        vec![vec![(1, a), (2, b)], vec![(1, a)], vec![(1, a)]],
        vec![vec![(1, a), (2, b)], vec![(1, a), (3, far)], vec![]],
    );
    // One object over two frames, the tracker switches id; frame 3 empty.
    let idf1_seq = Sequence::new(
        vec![vec![(1, a)], vec![(1, a)], vec![]],
        vec![vec![(1, a)], vec![(2, a)], vec![]],
    );
    // One GT and one detection at IoU 0.6 in frame 1; frames 2 and 3 empty.
    let gt = corners(0.2, 0.2, 0.6, 0.6);
    let det = corners(0.2, 0.2, 0.44, 0.6);
    let ap = coco_ap(
        &[
            DetectionSet { boxes: vec![det], scores: vec![0.9] },
            DetectionSet::default(),
            DetectionSet::default(),
        ],
        &[vec![gt], vec![], vec![]],
    );
    vec![
        ("MOTA", clear_mota(&[mota_seq]).mota, 0.5),
        ("IDF1", idf1(&[idf1_seq]).idf1, 0.5),
        ("AP", ap.ap, 0.3),
    ]
}

/// Two objects over ten frames, detected perfectly, ids reshuffled every
/// frame.
pub fn reshuffled_ids() -> Sequence {
    let a = corners(0.1, 0.1, 0.3, 0.3);
    let b = corners(0.6, 0.6, 0.8, 0.8);
    let gt: Vec<FrameBoxes> = (0..10).map(|_| vec![(1, a), (2, b)]).collect();
    let pred = (0..10u32)
        .map(|t| vec![(2 * t + 1, a), (2 * t + 2, b)])
        .collect();
    Sequence::new(gt, pred)
}

/// Largest `|HOTA_α − √(DetA_α·AssA_α)|` over the thresholds.
pub fn hota_identity_error(seqs: &[Sequence]) -> f64 {
    hota(seqs)
        .per_alpha
        .iter()
        .map(|a| (a.hota - (a.deta * a.assa).sqrt()).abs())
        .fold(0.0, f64::max)
}

/// Feeds one track the scores `[0.9, 0.3 × k, 0.9]` (a proposal on the
/// first frame, then its own track query) and returns the distinct ids
/// emitted.
pub fn reid_trace_ids(k: usize) -> Vec<u32> {
    let mut tr = Tracker::new(TrackerConfig::default());
    let mut ids = Vec::new();
    let mut scores = vec![0.9];
    scores.extend(std::iter::repeat_n(0.3, k));
    scores.push(0.9);
    for s in scores {
        let mut outs: Vec<QueryOutput> = tr
            .queries()
            .iter()
            .map(|q| output(QueryKind::Track, q.id, s))
            .collect();
        if tr.queries().is_empty() {
            outs.push(output(QueryKind::Proposal, None, s));
        }
        for e in tr.step(&outs).unwrap() {
            if !ids.contains(&e.id) {
                ids.push(e.id);
            }
        }
    }
    ids
}

pub fn output(kind: QueryKind, id: Option<u32>, score: f64) -> QueryOutput {
    QueryOutput {
        kind,
        id,
        bbox: BBox::new(0.5, 0.5, 0.2, 0.2),
        score,
        content: vec![0.0; 8],
    }
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        d: 16,
        n_heads: 2,
        ffn_dim: 16,
        n_enc_layers: 1,
        n_dec_layers: 2,
        detect_depth: 2,
        track_depth: 2,
        n_det: 6,
        n_learned: 3,
        image_width: 32,
        image_height: 32,
        ..ModelConfig::default()
    }
}

/// A clip of `frames` frames with `objects` moving objects at 32×32.
pub fn tiny_clip(frames: usize, objects: usize, seed: u64) -> ClipSample {
    let v = generate(&SceneConfig {
        num_objects: objects,
        num_frames: frames,
        width: 32,
        height: 32,
        seed,
        ..SceneConfig::default()
    })
    .unwrap();
    ClipSample { frames: v.frames, gt: v.gt.frames }
}

/// Relative error of the analytic clip-loss gradient against central
/// differences at `coords` random parameter coordinates. Returns
/// `(name, analytic, numeric, passed)` per coordinate.
pub fn clip_loss_spot_check(
    model: &mut Model,
    clip: &ClipSample,
    mode: ClipMode,
    coords: usize,
    seed: u64,
    rel_tol: f64,
) -> Vec<(String, f64, f64, bool)> {
    let cfg = TrainConfig::default();
    let ctx = ClipContext::default();
    let loss_at = |m: &Model| {
        let tape = Tape::new();
        clip_loss(m, &tape, clip, mode, &ctx, &cfg).unwrap().total.item().unwrap()
    };
    {
        let tape = Tape::new();
        let loss = clip_loss(model, &tape, clip, mode, &ctx, &cfg).unwrap();
        let store = model.params_mut();
        store.zero_grads();
        tape.backward_into(loss.total, store).unwrap();
    }
    let ids: Vec<ParamId> = model.params().ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < coords && attempts < 1000 {
        attempts += 1;
        let id = ids[rng.random_range(0..ids.len())];
        let n = model.params().get(id).numel();
        let j = rng.random_range(0..n);
        let analytic = model.params().get(id).grad().map_or(0.0, |g| g[j]);
        if analytic.abs() < 1e-6 {
            continue;
        }
        let h = 1e-5;
        let orig = model.params().get(id).data()[j];
        model.params_mut().get_mut(id).data_mut()[j] = orig + h;
        let up = loss_at(model);
        model.params_mut().get_mut(id).data_mut()[j] = orig - h;
        let down = loss_at(model);
        model.params_mut().get_mut(id).data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        let (ok, _, _) = within(analytic, numeric, Tolerance { step: h, rel: rel_tol, abs: 1e-9 });
        out.push((format!("{}[{j}]", model.params().name(id)), analytic, numeric, ok));
    }
    out
}

pub fn query(kind: QueryKind, pos: BBox, d: usize, seed: u64) -> Query {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Query {
        kind,
        pos,
        content: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        id: None,
        score: 0.0,
    }
}
