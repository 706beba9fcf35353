//! Counts encoder and decoder calls and frames per second for
//! self-proposal inference and the single-pass baseline.
//!
//! ```bash
//! cargo run --release --example profile -- 50
//! ```

use selftrack::harness::profile;
use selftrack::model::{Model, ModelConfig};
use selftrack::synth::DatasetSpec;
use selftrack::tracker::TrackerConfig;

fn main() -> selftrack::Result<()> {
    let frames: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let model = Model::new(ModelConfig::default())?;
    let data = DatasetSpec { val_seeds: vec![1000], val_frames: frames, ..DatasetSpec::default() };
    let r = profile(&model, &data.val_videos()?, frames, TrackerConfig::default())?;
    for (name, m) in [("self-proposal", &r.self_proposal), ("baseline", &r.baseline)] {
        println!(
            "{name:>13}: {} frames, encoder {} calls, decoder {} calls, {:.1} fps",
            m.frames, m.encoder_calls, m.decoder_calls, m.fps
        );
    }
    println!("overhead {:.1}%", 100.0 * r.overhead);
    Ok(())
}
