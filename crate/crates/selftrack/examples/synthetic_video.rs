//! Generates a synthetic video with a scheduled occlusion and exports a
//! small dataset to disk.
//!
//! ```bash
//! cargo run --example synthetic_video -- runs/data
//! ```

use selftrack::geometry::iou;
use selftrack::harness::{cmd_gen_data, Command, RunConfig};
use selftrack::synth::{generate, DatasetSpec, Lifetime, Occlusion, SceneConfig};

fn main() -> selftrack::Result<()> {
    let scene = SceneConfig {
        num_objects: 3,
        num_frames: 16,
        occlusions: vec![Occlusion { frame: 10, front: 1, back: 2 }],
        lifetimes: vec![Lifetime { id: 3, enter: 4, exit: 14 }],
        seed: 7,
        ..SceneConfig::default()
    };
    let video = generate(&scene)?;
    for (t, objects) in video.gt.frames.iter().enumerate() {
        let row: Vec<String> = objects
            .iter()
            .map(|o| format!("{}@({:.2},{:.2}){}", o.id, o.bbox.cx, o.bbox.cy, if o.visible { "" } else { "*" }))
            .collect();
        println!("frame {t:>2}: {}", row.join("  "));
    }
    let f = &video.gt.frames[10];
    let (a, b) = (f[0].bbox, f[1].bbox);
    println!("IoU of objects 1 and 2 at the occlusion frame: {:.3}", iou(&a, &b)?);

    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/synthetic".into());
    let cfg = RunConfig {
        command: Command::GenData,
        output_dir: out.clone().into(),
        data: DatasetSpec {
            train_seeds: vec![0, 1],
            val_seeds: vec![1000],
            train_frames: 20,
            val_frames: 20,
            ..DatasetSpec::default()
        },
        ..RunConfig::default()
    };
    let videos = cmd_gen_data(&cfg)?.unwrap_or(0);
    println!("wrote {videos} videos to {out}");
    Ok(())
}
