//! Online inference: per-frame model calls and the track lifecycle
//! (spawn, propagate, deactivate, re-identify, retire).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate, MetricsReport, Sequence};
use crate::geometry::{BBox, DetectionSet};
use crate::synth::Video;
use crate::model::{Model, Query, QueryKind, QueryPart, QuerySet, QuerySource};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Entrance threshold for spawning a track.
    pub tau_en: f64,
    /// Exit threshold below which a track turns inactive.
    pub tau_ex: f64,
    /// Frames an inactive track may wait to be re-identified.
    pub t_reid: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            tau_en: 0.5,
            tau_ex: 0.5,
            t_reid: 20,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_en) || !(0.0..=1.0).contains(&self.tau_ex) {
            return Err(Error::Config(format!(
                "tracker thresholds {}/{} outside [0, 1]",
                self.tau_en, self.tau_ex
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Active,
    Inactive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackState {
    pub id: u32,
    pub query: Query,
    pub last_score: f64,
    pub status: TrackStatus,
    pub inactive_age: u32,
}

/// One decoder output, aligned with the query that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutput {
    pub kind: QueryKind,
    pub id: Option<u32>,
    pub bbox: BBox,
    pub score: f64,
    pub content: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackedBox {
    pub id: u32,
    pub bbox: BBox,
    pub score: f64,
}

/// Lifecycle state of one video.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tracker {
    pub config: TrackerConfig,
    pub tracks: Vec<TrackState>,
    next_id: u32,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Tracker {
            config,
            tracks: Vec::new(),
            next_id: 1,
        }
    }

    /// Track queries for the next tracking pass, in state order. Inactive
    /// tracks are included so they can be re-identified.
    pub fn queries(&self) -> Vec<Query> {
        self.tracks.iter().map(|t| t.query.clone()).collect()
    }

    /// Applies one frame of decoder outputs. The first `self.tracks.len()`
    /// outputs belong to the current tracks in order; the rest are
    /// candidates for new tracks. Returns the boxes emitted this frame.
    pub fn step(&mut self, outputs: &[QueryOutput]) -> Result<Vec<TrackedBox>> {
        let n_tracks = self.tracks.len();
        if outputs.len() < n_tracks {
            return Err(Error::Contract(format!(
                "{} outputs for {n_tracks} tracks",
                outputs.len()
            )));
        }
        let cfg = self.config;
        let mut emitted = Vec::new();
        let mut survivors = Vec::with_capacity(n_tracks);
        for (mut track, out) in self.tracks.drain(..).zip(outputs) {
            if out.id != Some(track.id) {
                return Err(Error::Contract(format!(
                    "output for id {:?} where track {} was expected",
                    out.id, track.id
                )));
            }
            track.last_score = out.score;
            if out.score >= cfg.tau_ex {
                track.status = TrackStatus::Active;
                track.inactive_age = 0;
                emitted.push(TrackedBox {
                    id: track.id,
                    bbox: out.bbox,
                    score: out.score,
                });
            } else {
                track.status = TrackStatus::Inactive;
                track.inactive_age += 1;
                if track.inactive_age > cfg.t_reid {
                    continue;
                }
            }
            track.query.pos = out.bbox;
            track.query.content.clone_from(&out.content);
            track.query.score = out.score;
            survivors.push(track);
        }
        for out in &outputs[n_tracks..] {
            if out.score < cfg.tau_en {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            emitted.push(TrackedBox {
                id,
                bbox: out.bbox,
                score: out.score,
            });
            survivors.push(TrackState {
                id,
                query: Query {
                    kind: QueryKind::Track,
                    pos: out.bbox,
                    content: out.content.clone(),
                    id: Some(id),
                    score: out.score,
                },
                last_score: out.score,
                status: TrackStatus::Active,
                inactive_age: 0,
            });
        }
        self.tracks = survivors;
        Ok(emitted)
    }

    /// Forgets every track; identities keep counting up.
    pub fn clear(&mut self) {
        self.tracks.clear();
    }
}

/// How proposals are produced during inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalSource {
    /// Learned detect queries (no detection-only pass).
    #[default]
    LearnableAnchor,
    /// Detections of a separate frozen detector.
    FrozenAnchor,
    /// The model's own detection-only pass.
    #[serde(rename = "self")]
    SelfProposal,
}

#[derive(Clone, Copy, Debug)]
pub struct InferenceOptions<'a> {
    pub source: ProposalSource,
    /// Detector for `ProposalSource::FrozenAnchor`.
    pub teacher: Option<&'a Model>,
    /// Runs every frame without track queries.
    pub disable_track_queries: bool,
}

impl Default for InferenceOptions<'_> {
    fn default() -> Self {
        InferenceOptions {
            source: ProposalSource::LearnableAnchor,
            teacher: None,
            disable_track_queries: false,
        }
    }
}

/// Per-frame identities plus every scored tracking-pass output (the latter
/// feeds detection AP).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    pub frames: Vec<Vec<TrackedBox>>,
    pub detections: Vec<DetectionSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub frames: usize,
    pub tracks: usize,
    pub boxes: usize,
}

impl TrackingResult {
    /// `frame,id,x1,y1,w,h,score` rows in normalized coordinates, frames
    /// counted from 1.
    pub fn to_mot_csv(&self) -> String {
        let mut s = String::new();
        for (t, frame) in self.frames.iter().enumerate() {
            for b in frame {
                let [x1, y1, _, _] = b.bbox.corners();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    t + 1,
                    b.id,
                    x1,
                    y1,
                    b.bbox.w,
                    b.bbox.h,
                    b.score
                );
            }
        }
        s
    }

    pub fn summary(&self) -> TrackingSummary {
        let mut ids: Vec<u32> = self.frames.iter().flatten().map(|b| b.id).collect();
        ids.sort_unstable();
        ids.dedup();
        TrackingSummary {
            frames: self.frames.len(),
            tracks: ids.len(),
            boxes: self.frames.iter().map(Vec::len).sum(),
        }
    }

    /// Writes `<stem>.csv` and `<stem>.json` (summary) into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, self.to_mot_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&self.summary()).expect("plain struct");
        fs::write(&json, text).map_err(|e| Error::io(&json, e))
    }
}

/// Runs the model over one frame and returns aligned outputs.
pub fn frame_outputs(
    model: &Model,
    image: &Tensor,
    tracks: &[Query],
    opts: &InferenceOptions<'_>,
) -> Result<Vec<QueryOutput>> {
    let tape = Tape::new();
    let mut set = QuerySet::new();
    if let Some(part) = QueryPart::from_queries(&tape, QueryKind::Track, tracks)? {
        set.push(part);
    }
    let teacher_dets;
    let source = match opts.source {
        ProposalSource::LearnableAnchor => QuerySource::Learned,
        ProposalSource::SelfProposal => QuerySource::SelfProposal,
        ProposalSource::FrozenAnchor => {
            let teacher = opts
                .teacher
                .ok_or_else(|| Error::Config("frozen-anchor proposals need a teacher".into()))?;
            teacher_dets = teacher.detect(image)?;
            QuerySource::External(&teacher_dets)
        }
    };
    let out = model.forward_frame(&tape, image, set, source)?;
    let dec = &out.tracking;
    let last = dec.last();
    let boxes = last.boxes();
    let scores = last.scores();
    let content = dec.content.to_vec();
    let d = model.config().d;
    Ok((0..dec.len())
        .map(|i| QueryOutput {
            kind: dec.kinds[i],
            id: dec.ids[i],
            bbox: boxes[i],
            score: scores[i],
            content: content[i * d..(i + 1) * d].to_vec(),
        })
        .collect())
}

/// Tracks through `frames`; the first frame runs without track queries.
pub fn run_video(
    model: &Model,
    frames: &[Tensor],
    config: TrackerConfig,
    opts: &InferenceOptions<'_>,
) -> Result<TrackingResult> {
    config.validate()?;
    let mut tracker = Tracker::new(config);
    let mut result = TrackingResult::default();
    for image in frames {
        if opts.disable_track_queries {
            tracker.clear();
        }
        let outputs = frame_outputs(model, image, &tracker.queries(), opts)?;
        result.detections.push(DetectionSet {
            boxes: outputs.iter().map(|o| o.bbox).collect(),
            scores: outputs.iter().map(|o| o.score).collect(),
        });
        result.frames.push(tracker.step(&outputs)?);
    }
    Ok(result)
}

/// Tracks every video and scores the result against its ground truth.
pub fn evaluate_videos(
    model: &Model,
    videos: &[Video],
    config: TrackerConfig,
    opts: &InferenceOptions<'_>,
) -> Result<MetricsReport> {
    let mut seqs = Vec::with_capacity(videos.len());
    let mut dets = Vec::new();
    for v in videos {
        let r = run_video(model, &v.frames, config, opts)?;
        seqs.push(Sequence::from_tracking(&r, &v.gt));
        dets.extend(r.detections);
    }
    Ok(evaluate(&seqs, &dets))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(kind: QueryKind, id: Option<u32>, score: f64) -> QueryOutput {
        QueryOutput {
            kind,
            id,
            bbox: BBox::new(0.5, 0.5, 0.1, 0.1),
            score,
            content: vec![0.0; 8],
        }
    }

    fn track_outputs(tr: &Tracker, scores: &[f64]) -> Vec<QueryOutput> {
        tr.tracks
            .iter()
            .zip(scores)
            .map(|(t, &s)| out(QueryKind::Track, Some(t.id), s))
            .collect()
    }

    #[test]
    fn spawn_then_emit() {
        let mut tr = Tracker::new(TrackerConfig::default());
        let e = tr.step(&[out(QueryKind::Proposal, None, 0.55)]).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].id, 1);
        let e = tr.step(&track_outputs(&tr, &[0.7])).unwrap();
        assert_eq!(e[0].id, 1);
        assert_eq!(tr.tracks[0].status, TrackStatus::Active);
    }

    #[test]
    fn removed_after_reid_window() {
        let mut tr = Tracker::new(TrackerConfig::default());
        tr.step(&[out(QueryKind::Proposal, None, 0.9)]).unwrap();
        for frame in 1..=21 {
            let e = tr.step(&track_outputs(&tr, &[0.4])).unwrap();
            assert!(e.is_empty());
            if frame < 21 {
                assert_eq!(tr.tracks.len(), 1);
                assert_eq!(tr.tracks[0].inactive_age, frame);
            }
        }
        assert!(tr.tracks.is_empty());
    }

    #[test]
    fn misaligned_outputs_are_rejected() {
        let mut tr = Tracker::new(TrackerConfig::default());
        tr.step(&[out(QueryKind::Proposal, None, 0.9)]).unwrap();
        assert!(tr.step(&[]).is_err());
        assert!(tr.step(&[out(QueryKind::Track, Some(9), 0.9)]).is_err());
    }

    #[test]
    fn csv_rows_are_one_based() {
        let r = TrackingResult {
            frames: vec![vec![TrackedBox {
                id: 3,
                bbox: BBox::new(0.5, 0.5, 0.2, 0.4),
                score: 0.8,
            }]],
            detections: vec![],
        };
        assert_eq!(r.to_mot_csv().trim(), "1,3,0.4,0.3,0.2,0.4,0.8");
    }
}
