//! The tracking transformer: a patch encoder, one decoder shared by a
//! detection-only pass and a tracking pass, box and class heads, and the
//! construction of proposal queries from the model's own detections.

pub mod layers;

use std::cell::Cell;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, anchor_pe_scaled, sincos_pe, BBox, DetectionSet, LOGIT_EPS};
use crate::tensor::{load_checkpoint, save_checkpoint, ParamId, ParamStore, Tape, Tensor, Var};
use layers::{Attention, DecoderLayer, EncoderLayer, Init, Linear, Mlp};

pub const CONFIG_FILE: &str = "model.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Content dimension.
    pub d: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    /// Number of decoder layers with their own weights.
    pub n_dec_layers: usize,
    /// Layers run by the detection-only pass.
    pub detect_depth: usize,
    /// Layers run by the tracking pass.
    pub track_depth: usize,
    pub n_det: usize,
    pub n_learned: usize,
    /// Proposal threshold on detection confidence.
    pub c_prop: f64,
    pub channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Side of the square patches turned into encoder tokens.
    pub patch: usize,
    pub ffn_dim: usize,
    /// Adds a Gaussian bias centered on each query's anchor to the
    /// cross-attention logits.
    pub locality_prior: bool,
    /// Multiplier applied to box coordinates and confidences before the
    /// sine-cosine encodings.
    pub pe_scale: f64,
    pub temperature: f64,
    /// Initial foreground probability of the class head.
    pub prior_prob: f64,
    /// Proposal boxes enter the tracking pass as constants.
    pub detach_proposal_boxes: bool,
    pub init_anchor_size: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 3,
            detect_depth: 3,
            track_depth: 3,
            n_det: 60,
            n_learned: 10,
            c_prop: 0.05,
            channels: 3,
            image_height: 64,
            image_width: 64,
            patch: 8,
            ffn_dim: 128,
            locality_prior: true,
            pe_scale: TAU,
            temperature: geometry::DEFAULT_TEMPERATURE,
            prior_prob: 0.01,
            detach_proposal_boxes: true,
            init_anchor_size: 0.15,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || !self.d.is_multiple_of(8) {
            return bad(format!("d = {} must be a positive multiple of 8", self.d));
        }
        if self.n_heads == 0 || !self.d.is_multiple_of(self.n_heads) {
            return bad(format!("d = {} not divisible by {} heads", self.d, self.n_heads));
        }
        if self.detect_depth > self.n_dec_layers || self.track_depth > self.n_dec_layers {
            return bad(format!(
                "depths {}/{} exceed {} decoder layers",
                self.detect_depth, self.track_depth, self.n_dec_layers
            ));
        }
        if !(0.0..=1.0).contains(&self.c_prop) {
            return bad(format!("c_prop = {} outside [0, 1]", self.c_prop));
        }
        if self.n_det == 0 {
            return bad("at least one detect query is required".into());
        }
        if self.patch == 0
            || !self.image_height.is_multiple_of(self.patch)
            || !self.image_width.is_multiple_of(self.patch)
        {
            return bad(format!(
                "patch {} does not tile {}x{}",
                self.patch, self.image_height, self.image_width
            ));
        }
        if !(self.prior_prob > 0.0 && self.prior_prob < 1.0) {
            return bad(format!("prior_prob = {} outside (0, 1)", self.prior_prob));
        }
        if !(self.init_anchor_size > 0.0 && self.init_anchor_size < 1.0) {
            return bad("init_anchor_size must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch, self.image_width / self.patch)
    }

    pub fn num_tokens(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Detect,
    Proposal,
    LearnedAnchor,
    Track,
}

/// A decoder query as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub kind: QueryKind,
    pub pos: BBox,
    pub content: Vec<f64>,
    pub id: Option<u32>,
    pub score: f64,
}

/// Queries of one kind living on a tape: `[k, 4]` anchors and `[k, d]`
/// content.
#[derive(Clone, Debug)]
pub struct QueryPart<'t> {
    pub kind: QueryKind,
    pub anchors: Var<'t>,
    pub content: Var<'t>,
    pub ids: Vec<Option<u32>>,
}

impl<'t> QueryPart<'t> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Constant part built from plain queries; `None` for an empty list.
    pub fn from_queries(tape: &'t Tape, kind: QueryKind, queries: &[Query]) -> Result<Option<Self>> {
        if queries.is_empty() {
            return Ok(None);
        }
        let d = queries[0].content.len();
        let anchors = queries.iter().flat_map(|q| q.pos.to_array()).collect();
        let content: Vec<f64> = queries.iter().flat_map(|q| q.content.iter().copied()).collect();
        if content.len() != d * queries.len() {
            return Err(Error::Contract("queries disagree on content size".into()));
        }
        Ok(Some(QueryPart {
            kind,
            anchors: tape.constant_from(&[queries.len(), 4], anchors)?,
            content: tape.constant_from(&[queries.len(), d], content)?,
            ids: queries.iter().map(|q| q.id).collect(),
        }))
    }
}

/// Ordered concatenation of query parts.
#[derive(Clone, Debug, Default)]
pub struct QuerySet<'t> {
    pub parts: Vec<QueryPart<'t>>,
}

impl<'t> QuerySet<'t> {
    pub fn new() -> Self {
        QuerySet { parts: Vec::new() }
    }

    pub fn push(&mut self, part: QueryPart<'t>) {
        if !part.is_empty() {
            self.parts.push(part);
        }
    }

    pub fn extend(&mut self, other: QuerySet<'t>) {
        self.parts.extend(other.parts);
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(QueryPart::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kinds(&self) -> Vec<QueryKind> {
        self.parts
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.kind, p.len()))
            .collect()
    }

    pub fn ids(&self) -> Vec<Option<u32>> {
        self.parts.iter().flat_map(|p| p.ids.iter().copied()).collect()
    }

    /// Stacked `(anchors, content)`; `None` when empty.
    pub fn stack(&self) -> Result<Option<(Var<'t>, Var<'t>)>> {
        match self.parts.len() {
            0 => Ok(None),
            1 => Ok(Some((self.parts[0].anchors, self.parts[0].content))),
            _ => {
                let a: Vec<_> = self.parts.iter().map(|p| p.anchors).collect();
                let c: Vec<_> = self.parts.iter().map(|p| p.content).collect();
                Ok(Some((Var::concat(&a, 0)?, Var::concat(&c, 0)?)))
            }
        }
    }

    pub fn to_queries(&self) -> Vec<Query> {
        let mut out = Vec::with_capacity(self.len());
        for p in &self.parts {
            let boxes = geometry::tensor_rows_to_boxes(&p.anchors.to_vec());
            let content = p.content.to_vec();
            let d = content.len() / p.len();
            for (i, b) in boxes.into_iter().enumerate() {
                out.push(Query {
                    kind: p.kind,
                    pos: b,
                    content: content[i * d..(i + 1) * d].to_vec(),
                    id: p.ids[i],
                    score: 0.0,
                });
            }
        }
        out
    }
}

/// Encoded tokens of one frame.
#[derive(Clone, Debug)]
pub struct EncoderFeatures<'t> {
    /// `[tokens, d]`.
    pub tokens: Var<'t>,
    /// `[tokens, d]` positional encoding.
    pub pos: Var<'t>,
    key: Var<'t>,
    frame_id: u64,
}

impl EncoderFeatures<'_> {
    pub fn frame_id(&self) -> u64 {
        self.frame_id
    }
}

/// Boxes and logits produced by one decoder layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerOutput<'t> {
    /// `[n, 4]`.
    pub boxes: Var<'t>,
    /// `[n, 1]`.
    pub logits: Var<'t>,
}

impl LayerOutput<'_> {
    pub fn boxes(&self) -> Vec<BBox> {
        geometry::tensor_rows_to_boxes(&self.boxes.to_vec())
    }

    pub fn scores(&self) -> Vec<f64> {
        self.logits.to_vec().into_iter().map(geometry::sigmoid).collect()
    }
}

/// Output of one decoder invocation, aligned index-wise with its input.
#[derive(Clone, Debug)]
pub struct DecodeOutput<'t> {
    /// One entry per layer run; a single head-only entry for depth 0.
    pub layers: Vec<LayerOutput<'t>>,
    /// `[n, d]` content after the last layer.
    pub content: Var<'t>,
    pub kinds: Vec<QueryKind>,
    pub ids: Vec<Option<u32>>,
    /// Decoder and head parameters this call read.
    pub params: Vec<ParamId>,
}

impl<'t> DecodeOutput<'t> {
    pub fn last(&self) -> &LayerOutput<'t> {
        self.layers.last().expect("at least one layer output")
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn detections(&self) -> DetectionSet {
        let last = self.last();
        DetectionSet {
            boxes: last.boxes(),
            scores: last.scores(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DetectionOutput<'t> {
    pub decode: DecodeOutput<'t>,
    pub set: DetectionSet,
}

/// Where the non-track queries of the tracking pass come from.
#[derive(Clone, Copy, Debug)]
pub enum QuerySource<'a> {
    /// Learned detect queries, no detection-only pass.
    Learned,
    /// Proposals from the model's own detection-only pass.
    SelfProposal,
    /// Proposals from externally supplied detections.
    External(&'a DetectionSet),
}

#[derive(Clone, Debug)]
pub struct FrameOutput<'t> {
    pub detection: Option<DetectionOutput<'t>>,
    pub tracking: DecodeOutput<'t>,
    pub num_tracks: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub encoder: u64,
    pub decoder: u64,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    stem: Linear,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    query_pos: Mlp,
    box_head: Mlp,
    class_head: Linear,
    det_content: ParamId,
    det_anchor: ParamId,
    prop_content: ParamId,
    learned_content: ParamId,
    learned_anchor: ParamId,
    token_xy: Vec<[f64; 2]>,
    enc_pos: Tensor,
    encoder_calls: Cell<u64>,
    decoder_calls: Cell<u64>,
    serial: Cell<u64>,
}

/// Parameter name prefixes of the detect queries.
pub const DETECT_QUERY_PREFIX: &str = "query.detect.";
pub const STEM_PREFIX: &str = "encoder.stem.";

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let d = config.d;
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let patch_dim = config.channels * config.patch * config.patch;
        let stem = Linear::new(&mut init, "encoder.stem", patch_dim, d);
        let encoder = (0..config.n_enc_layers)
            .map(|i| EncoderLayer::new(&mut init, &format!("encoder.{i}"), d, config.n_heads, config.ffn_dim))
            .collect();
        let decoder = (0..config.n_dec_layers)
            .map(|i| DecoderLayer::new(&mut init, &format!("decoder.{i}"), d, config.n_heads, config.ffn_dim))
            .collect();
        let query_pos = Mlp::new(&mut init, "decoder.query_pos", [d, d, d]);
        let box_head = Mlp::new(&mut init, "head.box", [d, d, 4]);
        let class_head = Linear::new(&mut init, "head.class", d, 1);

        let det_content = init.normal(format!("{DETECT_QUERY_PREFIX}content"), &[config.n_det, d], 0.1);
        let det_anchor = init.store.add(
            format!("{DETECT_QUERY_PREFIX}anchor"),
            grid_anchor_logits(config.n_det, config.init_anchor_size),
        );
        let prop_content = init.normal("query.proposal.content".into(), &[1, d], 0.1);
        let n_learned = config.n_learned.max(1);
        let learned_content = init.normal("query.learned.content".into(), &[n_learned, d], 0.1);
        let learned_anchor = init.store.add(
            "query.learned.anchor".to_string(),
            grid_anchor_logits(n_learned, config.init_anchor_size),
        );
        for id in box_head.fc2.ids() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let prior_bias = -((1.0 - config.prior_prob) / config.prior_prob).ln();
        store.get_mut(class_head.b).data_mut().fill(prior_bias);

        let (gh, gw) = config.grid();
        let token_xy: Vec<[f64; 2]> = (0..gh)
            .flat_map(|y| (0..gw).map(move |x| [(x as f64 + 0.5) / gw as f64, (y as f64 + 0.5) / gh as f64]))
            .collect();
        let mut pos = Vec::with_capacity(token_xy.len() * d);
        for [x, y] in &token_xy {
            pos.extend(sincos_pe(x * config.pe_scale, d / 2, config.temperature)?);
            pos.extend(sincos_pe(y * config.pe_scale, d / 2, config.temperature)?);
        }
        let enc_pos = Tensor::new(&[token_xy.len(), d], pos)?;
        Ok(Model {
            config,
            store,
            stem,
            encoder,
            decoder,
            query_pos,
            box_head,
            class_head,
            det_content,
            det_anchor,
            prop_content,
            learned_content,
            learned_anchor,
            token_xy,
            enc_pos,
            encoder_calls: Cell::new(0),
            decoder_calls: Cell::new(0),
            serial: Cell::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Changes the pass depths of an existing model.
    pub fn set_depths(&mut self, detect: usize, track: usize) -> Result<()> {
        let mut c = self.config.clone();
        c.detect_depth = detect;
        c.track_depth = track;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    pub fn set_c_prop(&mut self, c_prop: f64) -> Result<()> {
        let mut c = self.config.clone();
        c.c_prop = c_prop;
        c.validate()?;
        self.config = c;
        Ok(())
    }

    pub fn counters(&self) -> Counters {
        Counters {
            encoder: self.encoder_calls.get(),
            decoder: self.decoder_calls.get(),
        }
    }

    pub fn reset_counters(&self) {
        self.encoder_calls.set(0);
        self.decoder_calls.set(0);
    }

    /// Ids of the detect-query parameters.
    pub fn detect_query_params(&self) -> [ParamId; 2] {
        [self.det_content, self.det_anchor]
    }

    pub fn stem_params(&self) -> [ParamId; 2] {
        self.stem.ids()
    }

    /// Every parameter a decoder invocation reads.
    pub fn decoder_params(&self) -> Vec<ParamId> {
        let mut v: Vec<ParamId> = self.decoder.iter().flat_map(DecoderLayer::ids).collect();
        v.extend(self.query_pos.ids());
        v.extend(self.box_head.ids());
        v.extend(self.class_head.ids());
        v
    }

    pub fn cross_attention(&self, layer: usize) -> &Attention {
        &self.decoder[layer].cross_attn
    }

    /// `[tokens, channels * patch * patch]` rows, channel-major inside a patch.
    pub fn patchify(&self, image: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let expect = [c.channels, c.image_height, c.image_width];
        if image.shape() != expect {
            return Err(Error::Contract(format!(
                "image shape {:?}, model expects {:?}",
                image.shape(),
                expect
            )));
        }
        let (gh, gw) = c.grid();
        let p = c.patch;
        let dim = c.channels * p * p;
        let data = image.data();
        let mut out = Vec::with_capacity(gh * gw * dim);
        for ty in 0..gh {
            for tx in 0..gw {
                for ch in 0..c.channels {
                    for y in 0..p {
                        let row = (ch * c.image_height + ty * p + y) * c.image_width + tx * p;
                        out.extend_from_slice(&data[row..row + p]);
                    }
                }
            }
        }
        Ok(Tensor::new(&[gh * gw, dim], out)?)
    }

    /// Runs the encoder once for a new frame. Features from earlier frames
    /// become stale and are rejected by the decoder passes.
    pub fn encode_frame<'t>(&self, tape: &'t Tape, image: &Tensor) -> Result<EncoderFeatures<'t>> {
        let patches = tape.constant(&self.patchify(image)?);
        let pos = tape.constant(&self.enc_pos);
        let mut x = self.stem.forward(tape, &self.store, patches)?;
        for layer in &self.encoder {
            x = layer.forward(tape, &self.store, x, pos)?;
        }
        self.encoder_calls.set(self.encoder_calls.get() + 1);
        let frame_id = self.serial.get() + 1;
        self.serial.set(frame_id);
        Ok(EncoderFeatures {
            tokens: x,
            pos,
            key: x.add(pos)?,
            frame_id,
        })
    }

    fn check_fresh(&self, mem: &EncoderFeatures<'_>) -> Result<()> {
        if mem.frame_id != self.serial.get() {
            return Err(Error::Contract(format!(
                "encoder features of frame {} used while frame {} is current",
                mem.frame_id,
                self.serial.get()
            )));
        }
        Ok(())
    }

    fn locality_bias(&self, anchors: &[BBox]) -> Vec<f64> {
        let (gh, gw) = self.config.grid();
        let mut out = Vec::with_capacity(anchors.len() * self.token_xy.len());
        for b in anchors {
            let sx = 0.5 * b.w + 1.0 / gw as f64;
            let sy = 0.5 * b.h + 1.0 / gh as f64;
            for [x, y] in &self.token_xy {
                let dx = (x - b.cx) / sx;
                let dy = (y - b.cy) / sy;
                out.push(-0.5 * (dx * dx + dy * dy));
            }
        }
        out
    }

    /// Runs `depth` shared decoder layers on `queries`. Each layer refines the
    /// previous layer's boxes, which are detached between layers.
    pub fn decode<'t>(
        &self,
        tape: &'t Tape,
        queries: &QuerySet<'t>,
        mem: &EncoderFeatures<'t>,
        depth: usize,
    ) -> Result<DecodeOutput<'t>> {
        self.check_fresh(mem)?;
        if depth > self.decoder.len() {
            return Err(Error::Config(format!(
                "depth {depth} exceeds {} decoder layers",
                self.decoder.len()
            )));
        }
        let Some((anchors, content)) = queries.stack()? else {
            return Err(Error::Contract("decode needs at least one query".into()));
        };
        self.decoder_calls.set(self.decoder_calls.get() + 1);
        let store = &self.store;
        let n = queries.len();
        let d = self.config.d;
        let mut layers = Vec::with_capacity(depth.max(1));
        let mut x = content;
        let mut anchor = anchors;
        if depth == 0 {
            layers.push(LayerOutput {
                boxes: anchors,
                logits: self.class_head.forward(tape, store, content)?,
            });
        }
        for layer in &self.decoder[..depth] {
            let boxes: Vec<BBox> = geometry::tensor_rows_to_boxes(&anchor.to_vec())
                .into_iter()
                .map(BBox::clamp_unit)
                .collect();
            let mut pe = Vec::with_capacity(n * d);
            for b in &boxes {
                pe.extend(anchor_pe_scaled(b, d, self.config.pe_scale, self.config.temperature)?);
            }
            let pos = self
                .query_pos
                .forward(tape, store, tape.constant_from(&[n, d], pe)?)?;
            let bias = if self.config.locality_prior {
                Some(tape.constant_from(&[n, self.token_xy.len()], self.locality_bias(&boxes))?)
            } else {
                None
            };
            x = layer.forward(tape, store, x, pos, mem.key, mem.key, bias)?;
            let delta = self.box_head.forward(tape, store, x.add(pos)?)?;
            let refined = anchor.logit(LOGIT_EPS).add(delta)?.sigmoid();
            let logits = self.class_head.forward(tape, store, x)?;
            layers.push(LayerOutput {
                boxes: refined,
                logits,
            });
            anchor = refined.detach();
        }
        let mut params: Vec<ParamId> = self.decoder[..depth].iter().flat_map(DecoderLayer::ids).collect();
        if depth > 0 {
            params.extend(self.query_pos.ids());
            params.extend(self.box_head.ids());
        }
        params.extend(self.class_head.ids());
        Ok(DecodeOutput {
            layers,
            content: x,
            kinds: queries.kinds(),
            ids: queries.ids(),
            params,
        })
    }

    /// The learned detect queries; anchors are stored as logits.
    pub fn detect_queries<'t>(&self, tape: &'t Tape) -> QuerySet<'t> {
        let mut set = QuerySet::new();
        set.push(QueryPart {
            kind: QueryKind::Detect,
            anchors: tape.param(&self.store, self.det_anchor).sigmoid(),
            content: tape.param(&self.store, self.det_content),
            ids: vec![None; self.config.n_det],
        });
        set
    }

    /// Detection-only decoder pass over the detect queries.
    pub fn detection_pass<'t>(&self, tape: &'t Tape, mem: &EncoderFeatures<'t>) -> Result<DetectionOutput<'t>> {
        let decode = self.decode(tape, &self.detect_queries(tape), mem, self.config.detect_depth)?;
        let set = decode.detections();
        Ok(DetectionOutput { decode, set })
    }

    fn learned_part<'t>(&self, tape: &'t Tape) -> Option<QueryPart<'t>> {
        (self.config.n_learned > 0).then(|| QueryPart {
            kind: QueryKind::LearnedAnchor,
            anchors: tape.param(&self.store, self.learned_anchor).sigmoid(),
            content: tape.param(&self.store, self.learned_content),
            ids: vec![None; self.config.n_learned],
        })
    }

    fn proposal_content<'t>(&self, tape: &'t Tape, scores: &[f64]) -> Result<Var<'t>> {
        let d = self.config.d;
        let mut pe = Vec::with_capacity(scores.len() * d);
        for s in scores {
            pe.extend(sincos_pe(s * self.config.pe_scale, d, self.config.temperature)?);
        }
        let pe = tape.constant_from(&[scores.len(), d], pe)?;
        Ok(tape.param(&self.store, self.prop_content).add(pe)?)
    }

    /// Confident detections become proposal queries (detected box as anchor,
    /// shared embedding plus an encoding of the confidence as content),
    /// followed by the learned fallback anchors.
    pub fn build_proposals<'t>(&self, tape: &'t Tape, dets: &DetectionSet) -> Result<QuerySet<'t>> {
        let keep: Vec<usize> = (0..dets.len())
            .filter(|&k| dets.scores[k] >= self.config.c_prop)
            .collect();
        let mut set = QuerySet::new();
        if !keep.is_empty() {
            let boxes: Vec<BBox> = keep.iter().map(|&k| dets.boxes[k].clamp_unit()).collect();
            let scores: Vec<f64> = keep.iter().map(|&k| dets.scores[k]).collect();
            set.push(QueryPart {
                kind: QueryKind::Proposal,
                anchors: tape.constant(&geometry::boxes_to_tensor(&boxes)),
                content: self.proposal_content(tape, &scores)?,
                ids: vec![None; keep.len()],
            });
        }
        if let Some(p) = self.learned_part(tape) {
            set.push(p);
        }
        Ok(set)
    }

    /// Tracking decoder pass over track queries followed by `proposals`.
    pub fn tracking_pass<'t>(
        &self,
        tape: &'t Tape,
        proposals: QuerySet<'t>,
        tracks: QuerySet<'t>,
        mem: &EncoderFeatures<'t>,
    ) -> Result<DecodeOutput<'t>> {
        let mut all = tracks;
        all.extend(proposals);
        self.decode(tape, &all, mem, self.config.track_depth)
    }

    /// Encodes the frame once, builds the non-track queries from `source`
    /// and runs the tracking pass.
    pub fn forward_frame<'t>(
        &self,
        tape: &'t Tape,
        image: &Tensor,
        tracks: QuerySet<'t>,
        source: QuerySource<'_>,
    ) -> Result<FrameOutput<'t>> {
        let mem = self.encode_frame(tape, image)?;
        let num_tracks = tracks.len();
        let (detection, proposals) = match source {
            QuerySource::Learned => (None, self.detect_queries(tape)),
            QuerySource::External(dets) => (None, self.build_proposals(tape, dets)?),
            QuerySource::SelfProposal => {
                let det = self.detection_pass(tape, &mem)?;
                let mut props = self.build_proposals(tape, &det.set)?;
                if !self.config.detach_proposal_boxes {
                    let keep: Vec<usize> = (0..det.set.len())
                        .filter(|&k| det.set.scores[k] >= self.config.c_prop)
                        .collect();
                    if let Some(first) = props.parts.first_mut() {
                        if first.kind == QueryKind::Proposal {
                            first.anchors = det.decode.last().boxes.gather_rows(&keep)?;
                        }
                    }
                }
                (Some(det), props)
            }
        };
        let tracking = self.tracking_pass(tape, proposals, tracks, &mem)?;
        Ok(FrameOutput {
            detection,
            tracking,
            num_tracks,
        })
    }

    /// Detection-only inference on one image.
    pub fn detect(&self, image: &Tensor) -> Result<DetectionSet> {
        let tape = Tape::new();
        let mem = self.encode_frame(&tape, image)?;
        Ok(self.detection_pass(&tape, &mem)?.set)
    }

    /// Writes `model.json` plus the parameter checkpoint into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        let text = serde_json::to_string_pretty(&self.config).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        save_checkpoint(&self.store, dir).map_err(|e| Error::io(dir, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let config: ModelConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        let mut model = Model::new(config)?;
        load_checkpoint(&mut model.store, dir).map_err(|e| Error::io(dir, e))?;
        Ok(model)
    }
}

/// `[n, 4]` anchor logits with centers on a regular grid covering the image.
fn grid_anchor_logits(n: usize, size: f64) -> Tensor {
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let logit_size = geometry::inverse_sigmoid(size);
    let data = (0..n)
        .flat_map(|i| {
            let cx = ((i % cols) as f64 + 0.5) / cols as f64;
            let cy = ((i / cols) as f64 + 0.5) / rows as f64;
            [
                geometry::inverse_sigmoid(cx),
                geometry::inverse_sigmoid(cy),
                logit_size,
                logit_size,
            ]
        })
        .collect();
    Tensor::new(&[n, 4], data).expect("positive extents")
}
