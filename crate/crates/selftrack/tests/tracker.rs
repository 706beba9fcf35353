mod common;

use common::output;
use selftrack::model::{Model, QueryKind};
use selftrack::tracker::{run_video, InferenceOptions, ProposalSource, TrackStatus, Tracker, TrackerConfig};

#[test]
fn reactivation_within_window_keeps_the_id() {
    for k in [1, 5, 19, 20] {
        assert_eq!(common::reid_trace_ids(k), vec![1], "k = {k}");
    }
    assert_eq!(common::reid_trace_ids(21), vec![1, 2]);
}

#[test]
fn low_score_track_is_removed_on_frame_21() {
    let mut tr = Tracker::new(TrackerConfig::default());
    tr.step(&[output(QueryKind::Proposal, None, 0.9)]).unwrap();
    for frame in 1..=21 {
        assert_eq!(tr.tracks.len(), 1, "frame {frame}");
        let e = tr.step(&[output(QueryKind::Track, Some(1), 0.4)]).unwrap();
        assert!(e.is_empty());
        if frame <= 20 {
            assert_eq!(tr.tracks[0].status, TrackStatus::Inactive);
        }
    }
    assert!(tr.tracks.is_empty());
}

#[test]
fn spawns_need_the_entrance_threshold() {
    let mut tr = Tracker::new(TrackerConfig::default());
    let e = tr
        .step(&[
            output(QueryKind::Proposal, None, 0.49),
            output(QueryKind::Proposal, None, 0.55),
            output(QueryKind::LearnedAnchor, None, 0.8),
        ])
        .unwrap();
    assert_eq!(e.iter().map(|b| b.id).collect::<Vec<_>>(), vec![1, 2]);
}

#[test]
fn ids_are_never_reused() {
    let mut tr = Tracker::new(TrackerConfig { t_reid: 0, ..TrackerConfig::default() });
    let mut seen = Vec::new();
    for _ in 0..5 {
        for b in tr.step(&[output(QueryKind::Proposal, None, 0.9)]).unwrap() {
            assert!(!seen.contains(&b.id));
            seen.push(b.id);
        }
        let n = tr.tracks.len();
        let outs: Vec<_> = tr.queries().iter().map(|q| output(QueryKind::Track, q.id, 0.1)).collect();
        tr.step(&outs).unwrap();
        assert!(tr.tracks.len() < n || n == 0);
    }
}

#[test]
fn step_is_a_pure_function_of_state_and_outputs() {
    let mut a = Tracker::new(TrackerConfig::default());
    a.step(&[output(QueryKind::Proposal, None, 0.9), output(QueryKind::Proposal, None, 0.7)]).unwrap();
    let mut b = a.clone();
    let outs = vec![
        output(QueryKind::Track, Some(1), 0.3),
        output(QueryKind::Track, Some(2), 0.8),
        output(QueryKind::Proposal, None, 0.6),
    ];
    assert_eq!(a.step(&outs).unwrap(), b.step(&outs).unwrap());
    assert_eq!(a, b);
}

#[test]
fn misaligned_outputs_are_contract_errors() {
    let mut tr = Tracker::new(TrackerConfig::default());
    tr.step(&[output(QueryKind::Proposal, None, 0.9)]).unwrap();
    assert!(tr.step(&[]).is_err());
    assert!(tr.step(&[output(QueryKind::Track, Some(7), 0.9)]).is_err());
}

#[test]
fn run_video_edges() {
    let m = Model::new(common::tiny_model_config()).unwrap();
    let opts = InferenceOptions { source: ProposalSource::SelfProposal, teacher: None, disable_track_queries: false };
    let empty = run_video(&m, &[], TrackerConfig::default(), &opts).unwrap();
    assert!(empty.frames.is_empty());
    let clip = common::tiny_clip(3, 2, 1);
    let low = TrackerConfig { tau_en: 0.0, tau_ex: 0.0, t_reid: 20 };
    let one = run_video(&m, &clip.frames[..1], low, &opts).unwrap();
    let ids: Vec<u32> = one.frames[0].iter().map(|b| b.id).collect();
    assert_eq!(ids, (1..=ids.len() as u32).collect::<Vec<_>>());
    let no_tq = InferenceOptions { disable_track_queries: true, ..opts };
    let r = run_video(&m, &clip.frames, low, &no_tq).unwrap();
    let mut all: Vec<u32> = r.frames.iter().flatten().map(|b| b.id).collect();
    let n = all.len();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), n, "fresh ids every frame");
    let again = run_video(&m, &clip.frames, low, &no_tq).unwrap();
    assert_eq!(r, again);
}

#[test]
fn frozen_anchor_source_needs_a_teacher() {
    let m = Model::new(common::tiny_model_config()).unwrap();
    let opts = InferenceOptions { source: ProposalSource::FrozenAnchor, teacher: None, disable_track_queries: false };
    let clip = common::tiny_clip(1, 1, 2);
    assert!(run_video(&m, &clip.frames, TrackerConfig::default(), &opts).is_err());
    let t = m.clone();
    let opts = InferenceOptions { teacher: Some(&t), ..opts };
    run_video(&m, &clip.frames, TrackerConfig::default(), &opts).unwrap();
}
