//! The online track lifecycle driven by hand-written decoder outputs:
//! spawn above the entrance threshold, fall inactive below the exit
//! threshold, get re-identified inside the window, retire after it. A
//! later detection of the same object starts a fresh identity.
//!
//! ```bash
//! cargo run --example lifecycle
//! ```

use selftrack::geometry::BBox;
use selftrack::model::QueryKind;
use selftrack::tracker::{QueryOutput, Tracker, TrackerConfig};

fn output(kind: QueryKind, id: Option<u32>, score: f64) -> QueryOutput {
    QueryOutput {
        kind,
        id,
        bbox: BBox::new(0.5, 0.5, 0.2, 0.2),
        score,
        content: vec![0.0; 4],
    }
}

fn main() -> selftrack::Result<()> {
    let config = TrackerConfig { t_reid: 3, ..TrackerConfig::default() };
    let mut tracker = Tracker::new(config);
    let own_scores = [0.9, 0.2, 0.2, 0.8, 0.1, 0.1, 0.1, 0.1, 0.9];
    for (t, &score) in own_scores.iter().enumerate() {
        let mut outs: Vec<QueryOutput> = tracker
            .queries()
            .iter()
            .map(|q| output(QueryKind::Track, q.id, score))
            .collect();
        if t == 0 || t + 1 == own_scores.len() {
            outs.push(output(QueryKind::Proposal, None, score));
        }
        outs.push(output(QueryKind::Proposal, None, 0.3));
        let emitted = tracker.step(&outs)?;
        let states: Vec<String> = tracker
            .tracks
            .iter()
            .map(|s| format!("id {} {:?} age {}", s.id, s.status, s.inactive_age))
            .collect();
        let ids: Vec<u32> = emitted.iter().map(|e| e.id).collect();
        println!("frame {t}: score {score:.1} emitted {ids:?} tracks [{}]", states.join(", "));
    }
    Ok(())
}
