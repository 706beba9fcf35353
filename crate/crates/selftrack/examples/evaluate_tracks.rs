//! Scores tracker output stored as MOT-style CSV against ground truth.
//!
//! ```bash
//! cargo run --example evaluate_tracks
//! cargo run --example evaluate_tracks -- gt.csv pred.csv
//! ```

use selftrack::evaluation::{gt_to_mot_csv, hota, read_mot_csv, Sequence};
use selftrack::synth::{generate, SceneConfig};

fn demo_files() -> selftrack::Result<(String, String)> {
    let video = generate(&SceneConfig { num_objects: 3, num_frames: 30, seed: 3, ..SceneConfig::default() })?;
    let gt = gt_to_mot_csv(&video.gt);
    let mut pred = String::new();
    for line in gt.lines() {
        let mut cols: Vec<String> = line.split(',').map(String::from).collect();
        let frame: usize = cols[0].parse().unwrap_or(0);
        if cols[1] == "2" && frame > 15 {
            cols[1] = "7".into();
        }
        if cols[1] == "3" && frame.is_multiple_of(5) {
            continue;
        }
        let x: f64 = cols[2].parse().unwrap_or(0.0);
        cols[2] = format!("{}", x + 0.01);
        pred.push_str(&cols[..6].join(","));
        pred.push('\n');
    }
    Ok((gt, pred))
}

fn main() -> selftrack::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (gt_text, pred_text) = match args.as_slice() {
        [gt, pred] => (
            std::fs::read_to_string(gt).map_err(|e| selftrack::Error::io(gt, e))?,
            std::fs::read_to_string(pred).map_err(|e| selftrack::Error::io(pred, e))?,
        ),
        _ => demo_files()?,
    };
    let mut gt = read_mot_csv(&gt_text)?;
    let mut pred = read_mot_csv(&pred_text)?;
    let n = gt.len().max(pred.len());
    gt.resize(n, Vec::new());
    pred.resize(n, Vec::new());
    let seqs = [Sequence::new(gt, pred)];
    let clear = selftrack::evaluation::clear_mota(&seqs);
    let id = selftrack::evaluation::idf1(&seqs);
    let h = hota(&seqs);
    println!("MOTA {:.3} (FN {}, FP {}, IDSW {})", clear.mota, clear.fn_, clear.fp, clear.idsw);
    println!("IDF1 {:.3}", id.idf1);
    println!("HOTA {:.3} DetA {:.3} AssA {:.3}", h.hota, h.deta, h.assa);
    Ok(())
}
