//! Clip-based training: tracking label assignment, the joint clip loss,
//! AdamW, and the prior-injection recipes.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;
use crate::geometry::{BBox, DetectionSet};
use crate::matching::{
    assigned_loss, hungarian, matching_costs, set_criterion, FocalParams, LossWeights,
};
use crate::model::{
    DecodeOutput, Model, ModelConfig, QueryKind, QueryPart, QuerySet, QuerySource,
    DETECT_QUERY_PREFIX,
};
use crate::synth::{ClipSample, Video};
use crate::tensor::{ParamStore, Tape, Var};
use crate::tracker::{evaluate_videos, InferenceOptions, ProposalSource, TrackerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    /// Detect queries and track queries trained jointly.
    Standard,
    /// Detection-only phase, then standard fine-tuning.
    DetPretrain,
    /// Detect queries copied from a detector and frozen.
    QueryPretrain,
    /// Standard plus a matched loss against a detector's boxes.
    Distill,
    /// Proposals from a frozen detector.
    FrozenAnchorProposal,
    /// Proposals from the model's own detection-only pass.
    SelfProposal,
}

impl Recipe {
    pub fn needs_teacher(self) -> bool {
        matches!(
            self,
            Recipe::QueryPretrain | Recipe::Distill | Recipe::FrozenAnchorProposal
        )
    }

    /// Proposal source used at inference by models trained with this recipe.
    pub fn proposal_source(self) -> ProposalSource {
        match self {
            Recipe::FrozenAnchorProposal => ProposalSource::FrozenAnchor,
            Recipe::SelfProposal => ProposalSource::SelfProposal,
            _ => ProposalSource::LearnableAnchor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub recipe: Recipe,
    pub clip_len: usize,
    pub lambda_prop: f64,
    pub epochs: usize,
    /// Detection-only epochs run before `epochs` by `det_pretrain`.
    pub pretrain_epochs: usize,
    pub lr: f64,
    /// Learning-rate multiplier of the encoder stem.
    pub stem_lr_scale: f64,
    pub weight_decay: f64,
    /// Fraction of the epochs after which the learning rate drops.
    pub decay_at: f64,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Maximum global gradient norm; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub distill_weight: f64,
    /// Teacher confidence above which a teacher box becomes a pseudo label.
    pub distill_threshold: f64,
    pub freeze_detect_queries: bool,
    pub weights: LossWeights,
    pub focal: FocalParams,
    /// Validation every this many epochs; 0 evaluates only after training.
    pub eval_every: usize,
    /// Probability of dropping each propagated track query during training.
    pub track_drop_prob: f64,
    /// Probability per frame of propagating the highest-scoring unmatched
    /// output as an identity-less track query whose target is background.
    pub track_insert_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            recipe: Recipe::SelfProposal,
            clip_len: 5,
            lambda_prop: 0.5,
            epochs: 30,
            pretrain_epochs: 10,
            lr: 1e-3,
            stem_lr_scale: 0.1,
            weight_decay: 1e-4,
            decay_at: 0.8,
            decay_factor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 0.1,
            seed: 0,
            distill_weight: 1.0,
            distill_threshold: 0.5,
            freeze_detect_queries: false,
            weights: LossWeights::default(),
            focal: FocalParams::default(),
            eval_every: 0,
            track_drop_prob: 0.1,
            track_insert_prob: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len < 2 {
            return Err(Error::Config(format!(
                "clip length {} leaves nothing to track",
                self.clip_len
            )));
        }
        if !(self.lambda_prop >= 0.0) || !(self.distill_weight >= 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.track_drop_prob) || !(0.0..=1.0).contains(&self.track_insert_prob) {
            return Err(Error::Config("track augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.decay_at) {
            return Err(Error::Config("invalid learning-rate schedule".into()));
        }
        self.weights.validate()
    }

    /// Learning rate of `epoch` within a phase of `epochs` epochs.
    pub fn lr_at(&self, epoch: usize, epochs: usize) -> f64 {
        let drop = (self.decay_at * epochs as f64).floor() as usize;
        if epoch >= drop && epochs > 1 {
            self.lr * self.decay_factor
        } else {
            self.lr
        }
    }
}

/// Target of each tracking-pass query: `(identity, box)` or background.
///
/// Track queries keep the ground truth carrying their identity; track
/// queries without an identity (inserted false positives) are background.
/// Objects no track query carries are matched by Hungarian assignment
/// against the remaining (detect, proposal and learned-anchor) queries.
pub fn assign_tracking_labels(
    kinds: &[QueryKind],
    ids: &[Option<u32>],
    boxes: &[BBox],
    logits: &[f64],
    gts: &[(u32, BBox)],
    weights: &LossWeights,
    focal: FocalParams,
) -> Result<Vec<Option<(u32, BBox)>>> {
    let n = kinds.len();
    if ids.len() != n || boxes.len() != n || logits.len() != n {
        return Err(Error::Contract("label assignment inputs disagree in length".into()));
    }
    let mut seen = HashSet::new();
    for (id, _) in gts {
        if !seen.insert(*id) {
            return Err(Error::Data(format!("identity {id} appears twice in one frame")));
        }
    }
    let mut targets = vec![None; n];
    let mut tracked = HashSet::new();
    for i in 0..n {
        if kinds[i] != QueryKind::Track {
            continue;
        }
        let Some(id) = ids[i] else { continue };
        tracked.insert(id);
        targets[i] = gts.iter().find(|g| g.0 == id).copied();
    }
    let newborn: Vec<(u32, BBox)> = gts.iter().filter(|g| !tracked.contains(&g.0)).copied().collect();
    let free: Vec<usize> = (0..n).filter(|&i| kinds[i] != QueryKind::Track).collect();
    if !newborn.is_empty() && !free.is_empty() {
        let fb: Vec<BBox> = free.iter().map(|&i| boxes[i]).collect();
        let fl: Vec<f64> = free.iter().map(|&i| logits[i]).collect();
        let nb: Vec<BBox> = newborn.iter().map(|g| g.1).collect();
        let costs = matching_costs(&fb, &fl, &nb, weights, focal)?;
        for (r, c) in hungarian(&costs).pairs {
            targets[free[r]] = Some(newborn[c]);
        }
    }
    Ok(targets)
}

/// Scalar terms of one clip.
#[derive(Clone, Copy, Debug)]
pub struct ClipLoss<'t> {
    pub total: Var<'t>,
    pub motr: Var<'t>,
    pub prop: Var<'t>,
    pub distill: Var<'t>,
    pub num_gt: usize,
}

/// Per-clip inputs that do not come from the model being trained.
#[derive(Clone, Debug, Default)]
pub struct ClipContext {
    /// Teacher detections per frame (frozen-anchor proposals, distillation).
    pub teacher: Option<Vec<DetectionSet>>,
    /// Seed of the track-query drop and insertion; `None` propagates every
    /// matched query and nothing else.
    pub augment_seed: Option<u64>,
}

/// How the clip is run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipMode {
    /// Detection-only pass with set loss, no track queries.
    DetectionOnly,
    Tracking { source: ProposalSource, distill: bool },
}

impl ClipMode {
    pub fn for_recipe(recipe: Recipe) -> Self {
        ClipMode::Tracking {
            source: recipe.proposal_source(),
            distill: recipe == Recipe::Distill,
        }
    }
}

fn sum_layers<'t>(
    tape: &'t Tape,
    out: &DecodeOutput<'t>,
    mut f: impl FnMut(Var<'t>, Var<'t>) -> Result<Var<'t>>,
) -> Result<Var<'t>> {
    let mut acc = tape.scalar(0.0);
    for layer in &out.layers {
        acc = acc.add(f(layer.boxes, layer.logits)?)?;
    }
    Ok(acc)
}

/// Joint loss of one clip: the tracking loss summed over frames and decoder
/// layers and divided by the clip's ground-truth count, plus `lambda_prop`
/// times the equally normalized set loss of the detection-only pass.
pub fn clip_loss<'t>(
    model: &Model,
    tape: &'t Tape,
    clip: &ClipSample,
    mode: ClipMode,
    ctx: &ClipContext,
    config: &TrainConfig,
) -> Result<ClipLoss<'t>> {
    if clip.frames.is_empty() || clip.frames.len() != clip.gt.len() {
        return Err(Error::Contract("clip loss needs frames with ground truth".into()));
    }
    let (w, f) = (&config.weights, config.focal);
    let num_gt: usize = clip.gt.iter().map(Vec::len).sum();
    let mut motr = tape.scalar(0.0);
    let mut prop = tape.scalar(0.0);
    let mut distill = tape.scalar(0.0);
    let mut tracks: Option<QueryPart<'t>> = None;
    let mut aug = ctx.augment_seed.map(ChaCha8Rng::seed_from_u64);
    for (t, image) in clip.frames.iter().enumerate() {
        let gts: Vec<(u32, BBox)> = clip.gt[t].iter().map(|o| (o.id, o.bbox)).collect();
        let gt_boxes: Vec<BBox> = gts.iter().map(|g| g.1).collect();
        let teacher = ctx.teacher.as_ref().map(|v| &v[t]);
        let (source, use_distill) = match mode {
            ClipMode::DetectionOnly => {
                let mem = model.encode_frame(tape, image)?;
                let det = model.detection_pass(tape, &mem)?;
                let l = sum_layers(tape, &det.decode, |b, l| {
                    Ok(set_criterion(b, l, &gt_boxes, w, f)?.0.total)
                })?;
                prop = prop.add(l)?;
                continue;
            }
            ClipMode::Tracking { source, distill } => (source, distill),
        };
        let source = match source {
            ProposalSource::LearnableAnchor => QuerySource::Learned,
            ProposalSource::SelfProposal => QuerySource::SelfProposal,
            ProposalSource::FrozenAnchor => QuerySource::External(
                teacher.ok_or_else(|| Error::Config("frozen-anchor proposals need teacher detections".into()))?,
            ),
        };
        let mut set = QuerySet::new();
        if let Some(p) = tracks.take() {
            set.push(p);
        }
        let out = model.forward_frame(tape, image, set, source)?;
        let dec = &out.tracking;
        let last = dec.last();
        let targets = assign_tracking_labels(
            &dec.kinds,
            &dec.ids,
            &last.boxes(),
            &last.logits.to_vec(),
            &gts,
            w,
            f,
        )?;
        let boxes_only: Vec<Option<BBox>> = targets.iter().map(|t| t.map(|x| x.1)).collect();
        motr = motr.add(sum_layers(tape, dec, |b, l| {
            Ok(assigned_loss(b, l, &boxes_only, w, f)?.total)
        })?)?;
        if let Some(det) = &out.detection {
            prop = prop.add(sum_layers(tape, &det.decode, |b, l| {
                Ok(set_criterion(b, l, &gt_boxes, w, f)?.0.total)
            })?)?;
        }
        if use_distill {
            let t_dets = teacher.ok_or_else(|| Error::Config("distillation needs teacher detections".into()))?;
            let pseudo: Vec<BBox> = t_dets
                .boxes
                .iter()
                .zip(&t_dets.scores)
                .filter(|(_, &s)| s >= config.distill_threshold)
                .map(|(b, _)| *b)
                .collect();
            let rows: Vec<usize> = (0..dec.len()).filter(|&i| dec.kinds[i] == QueryKind::Detect).collect();
            if !rows.is_empty() {
                distill = distill.add(sum_layers(tape, dec, |b, l| {
                    let (b, l) = (b.gather_rows(&rows)?, l.gather_rows(&rows)?);
                    Ok(set_criterion(b, l, &pseudo, w, f)?.0.total)
                })?)?;
            }
        }
        let mut carried: Vec<(usize, Option<u32>)> =
            (0..dec.len()).filter_map(|i| targets[i].map(|g| (i, Some(g.0)))).collect();
        if let Some(rng) = aug.as_mut() {
            carried.retain(|_| !rng.random_bool(config.track_drop_prob));
            if rng.random_bool(config.track_insert_prob) {
                let scores = last.scores();
                let false_positive = (0..dec.len())
                    .filter(|&i| targets[i].is_none() && dec.kinds[i] != QueryKind::Track)
                    .max_by(|&a, &b| scores[a].total_cmp(&scores[b]));
                carried.extend(false_positive.map(|i| (i, None)));
            }
        }
        if !carried.is_empty() {
            let keep: Vec<usize> = carried.iter().map(|c| c.0).collect();
            tracks = Some(QueryPart {
                kind: QueryKind::Track,
                anchors: last.boxes.detach().gather_rows(&keep)?,
                content: dec.content.gather_rows(&keep)?,
                ids: carried.into_iter().map(|c| c.1).collect(),
            });
        }
    }
    let norm = 1.0 / num_gt.max(1) as f64;
    let motr = motr.scale(norm);
    let prop = prop.scale(norm);
    let distill = distill.scale(norm);
    let total = motr
        .add(prop.scale(config.lambda_prop))?
        .add(distill.scale(config.distill_weight))?;
    Ok(ClipLoss {
        total,
        motr,
        prop,
        distill,
        num_gt,
    })
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(c: &TrainConfig) -> Self {
        AdamW::new(c.beta1, c.beta2, c.adam_eps, c.weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every unfrozen parameter from its accumulated gradient
    /// (missing gradients count as zero), at `lr` times its learning-rate scale.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        if self.m.len() != store.len() {
            self.m = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.is_frozen(id) {
                continue;
            }
            let plr = lr * store.lr_scale(id);
            let k = id.index();
            let t = store.get_mut(id);
            let grad = t.grad().map(<[f64]>::to_vec);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *p -= plr * self.weight_decay * *p + plr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Scales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let ids: Vec<_> = store.ids().collect();
    let norm = ids
        .iter()
        .filter_map(|&id| store.get(id).grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for id in ids {
            let t = store.get_mut(id);
            if let Some(g) = t.grad() {
                let scaled: Vec<f64> = g.iter().map(|x| x * s).collect();
                t.zero_grad();
                t.accumulate_grad(&scaled);
            }
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_motr: f64,
    pub loss_prop: f64,
    pub loss_distill: f64,
    #[serde(rename = "AP_val")]
    pub ap_val: Option<f64>,
    #[serde(rename = "HOTA_val")]
    pub hota_val: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochRecord>,
    /// Validation metrics of the final model, when validation data was given.
    pub metrics: Option<MetricsReport>,
}

/// Inference options matching a recipe.
pub fn inference_options<'a>(recipe: Recipe, teacher: Option<&'a Model>) -> InferenceOptions<'a> {
    InferenceOptions {
        source: recipe.proposal_source(),
        teacher,
        disable_track_queries: false,
    }
}

struct Phase {
    name: &'static str,
    mode: ClipMode,
    epochs: usize,
}

/// Trains a fresh model with `recipe`. `teacher` is the frozen detector
/// required by `query_pretrain`, `distill` and `frozen_anchor_proposal`.
/// `on_epoch` sees every log record as soon as it is produced.
pub fn train(
    config: &TrainConfig,
    model_config: &ModelConfig,
    clips: &[ClipSample],
    val: &[Video],
    tracker: TrackerConfig,
    teacher: Option<&Model>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::Data("no training clips".into()));
    }
    let recipe = config.recipe;
    if recipe.needs_teacher() && teacher.is_none() {
        return Err(Error::Config(format!("recipe {recipe:?} needs a teacher checkpoint")));
    }
    let mut model = Model::new(model_config.clone())?;
    for id in model.stem_params() {
        model.params_mut().set_lr_scale(id, config.stem_lr_scale);
    }
    if recipe == Recipe::QueryPretrain {
        let t = teacher.expect("checked above");
        model
            .params_mut()
            .copy_from(t.params(), |n| n.starts_with(DETECT_QUERY_PREFIX))?;
    }
    if recipe == Recipe::QueryPretrain || config.freeze_detect_queries {
        for id in model.detect_query_params() {
            model.params_mut().set_frozen(id, true);
        }
    }
    let mut contexts: Vec<ClipContext> = match teacher {
        Some(t) if matches!(recipe, Recipe::Distill | Recipe::FrozenAnchorProposal) => clips
            .iter()
            .map(|c| {
                let dets = c.frames.iter().map(|f| t.detect(f)).collect::<Result<Vec<_>>>()?;
                Ok(ClipContext { teacher: Some(dets), augment_seed: None })
            })
            .collect::<Result<_>>()?,
        _ => vec![ClipContext::default(); clips.len()],
    };
    let mut phases = Vec::new();
    if recipe == Recipe::DetPretrain {
        phases.push(Phase {
            name: "detection",
            mode: ClipMode::DetectionOnly,
            epochs: config.pretrain_epochs,
        });
    }
    phases.push(Phase {
        name: "tracking",
        mode: ClipMode::for_recipe(recipe),
        epochs: config.epochs,
    });

    let opts = inference_options(recipe, teacher);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..clips.len()).collect();
    for phase in &phases {
        let mut opt = AdamW::from_config(config);
        for epoch in 0..phase.epochs {
            let lr = config.lr_at(epoch, phase.epochs);
            order.shuffle(&mut rng);
            let mut sums = [0.0f64; 4];
            for &ci in &order {
                contexts[ci].augment_seed = Some(rng.random());
                let tape = Tape::new();
                let loss = clip_loss(&model, &tape, &clips[ci], phase.mode, &contexts[ci], config)?;
                let vals = [
                    loss.total.item()?,
                    loss.motr.item()?,
                    loss.prop.item()?,
                    loss.distill.item()?,
                ];
                if !vals[0].is_finite() {
                    return Err(Error::Contract(format!(
                        "non-finite loss in {} epoch {epoch}",
                        phase.name
                    )));
                }
                for (s, v) in sums.iter_mut().zip(vals) {
                    *s += v;
                }
                let store = model.params_mut();
                store.zero_grads();
                tape.backward_into(loss.total, store)?;
                clip_grad_norm(store, config.grad_clip);
                opt.step(store, lr);
            }
            let n = clips.len() as f64;
            let validate = !val.is_empty()
                && phase.mode != ClipMode::DetectionOnly
                && config.eval_every > 0
                && (epoch + 1) % config.eval_every == 0;
            let metrics = if validate {
                Some(evaluate_videos(&model, val, tracker, &opts)?)
            } else {
                None
            };
            let rec = EpochRecord {
                phase: phase.name.into(),
                epoch,
                lr,
                loss: sums[0] / n,
                loss_motr: sums[1] / n,
                loss_prop: sums[2] / n,
                loss_distill: sums[3] / n,
                ap_val: metrics.as_ref().map(|m| m.ap),
                hota_val: metrics.as_ref().map(|m| m.hota),
            };
            on_epoch(&rec);
            log.push(rec);
        }
    }
    model.reset_counters();
    let metrics = if val.is_empty() {
        None
    } else {
        Some(evaluate_videos(&model, val, tracker, &opts)?)
    };
    model.reset_counters();
    Ok(TrainOutcome { model, log, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("p", crate::tensor::Tensor::scalar(0.0));
        store.get_mut(id).accumulate_grad(&[1.0]);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
        opt.step(&mut store, 1e-3);
        assert!((store.get(id).data()[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adamw_zero_grad_zero_decay_is_identity() {
        let mut store = ParamStore::new();
        let id = store.add("p", crate::tensor::Tensor::vector(&[0.3, -2.0]));
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.0);
        opt.step(&mut store, 1e-3);
        assert_eq!(store.get(id).data(), &[0.3, -2.0]);
    }

    #[test]
    fn adamw_decay_only_shrinks() {
        let mut store = ParamStore::new();
        let id = store.add("p", crate::tensor::Tensor::vector(&[2.0]));
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 1e-4);
        opt.step(&mut store, 1e-3);
        assert!((store.get(id).data()[0] - 2.0 * (1.0 - 1e-3 * 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn labels_follow_identities() {
        let b = |x: f64| BBox::new(x, 0.5, 0.1, 0.1);
        let kinds = [QueryKind::Track, QueryKind::Proposal, QueryKind::LearnedAnchor];
        let ids = [Some(7), None, None];
        let boxes = [b(0.2), b(0.5), b(0.8)];
        let logits = [0.0; 3];
        let w = LossWeights::default();
        let f = FocalParams::default();
        let t = assign_tracking_labels(&kinds, &ids, &boxes, &logits, &[(7, b(0.21)), (8, b(0.79))], &w, f)
            .unwrap();
        assert_eq!(t[0].unwrap().0, 7);
        assert!(t[1].is_none());
        assert_eq!(t[2].unwrap().0, 8);
        let t = assign_tracking_labels(&kinds, &ids, &boxes, &logits, &[(8, b(0.5))], &w, f).unwrap();
        assert!(t[0].is_none());
        assert_eq!(t[1].unwrap().0, 8);
        assert!(assign_tracking_labels(&kinds, &ids, &boxes, &logits, &[(8, b(0.5)), (8, b(0.6))], &w, f)
            .is_err());
    }

    #[test]
    fn schedule_drops_late() {
        let c = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        assert_eq!(c.lr_at(7, 10), 1e-3);
        assert!((c.lr_at(8, 10) - 1e-4).abs() < 1e-18);
    }
}
