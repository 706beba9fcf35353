//! Deterministic "dancing blobs" videos: near-identical soft-edged objects on
//! non-linear, crossing trajectories with scheduled occlusions.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

/// Two objects forced to overlap (IoU > 0.5) at `frame`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occlusion {
    pub frame: usize,
    pub front: u32,
    pub back: u32,
}

/// Frames `[enter, exit)` during which object `id` is in the scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lifetime {
    pub id: u32,
    pub enter: usize,
    pub exit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub num_objects: usize,
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    /// Normalized width/height range of objects.
    pub size_range: (f64, f64),
    /// Sinusoid amplitude range (normalized units).
    pub amplitude_range: (f64, f64),
    /// Angular frequency range (radians per frame).
    pub frequency_range: (f64, f64),
    /// Standard deviation of the per-frame random acceleration.
    pub accel_sigma: f64,
    pub occlusions: Vec<Occlusion>,
    /// Extra occlusion events drawn from the seed.
    pub random_occlusions: usize,
    /// Objects without an entry live for the whole video.
    pub lifetimes: Vec<Lifetime>,
    /// Per-object and per-frame color perturbation amplitude.
    pub color_jitter: f64,
    pub noise: f64,
    /// Width of the soft edge in pixels.
    pub edge_px: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            num_objects: 4,
            num_frames: 60,
            width: 64,
            height: 64,
            size_range: (0.16, 0.2),
            amplitude_range: (0.05, 0.2),
            frequency_range: (0.05, 0.2),
            accel_sigma: 0.0015,
            occlusions: Vec::new(),
            random_occlusions: 0,
            lifetimes: Vec::new(),
            color_jitter: 0.05,
            noise: 0.02,
            edge_px: 2.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_frames == 0 || self.width == 0 || self.height == 0 {
            return bad("scene needs at least one frame and a nonempty image".into());
        }
        let ranges = [self.size_range, self.amplitude_range, self.frequency_range];
        if ranges.iter().any(|r| r.0 < 0.0 || r.1 < r.0)
            || self.accel_sigma < 0.0
            || self.color_jitter < 0.0
            || self.noise < 0.0
            || self.edge_px <= 0.0
        {
            return bad("scene ranges must be nonnegative and ordered".into());
        }
        if self.size_range.0 <= 0.0 || self.size_range.1 >= 0.5 {
            return bad("object sizes must lie in (0, 0.5)".into());
        }
        if (!self.occlusions.is_empty() || self.random_occlusions > 0) && self.num_objects < 2 {
            return bad("an occlusion schedule needs at least two objects".into());
        }
        let k = self.num_objects as u32;
        for o in &self.occlusions {
            if o.front == o.back || o.front == 0 || o.back == 0 || o.front > k || o.back > k {
                return bad(format!("occlusion {o:?} names invalid objects"));
            }
            if o.frame >= self.num_frames {
                return bad(format!("occlusion {o:?} is past the last frame"));
            }
        }
        for l in &self.lifetimes {
            if l.id == 0 || l.id > k || l.enter >= l.exit || l.exit > self.num_frames {
                return bad(format!("invalid lifetime {l:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u32,
    pub bbox: BBox,
    /// False when at least half of the object is covered by objects in front.
    pub visible: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: Vec<Vec<GtObject>>,
}

impl GroundTruth {
    pub fn boxes(&self, frame: usize) -> Vec<BBox> {
        self.frames[frame].iter().map(|o| o.bbox).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    /// `[3, H, W]` images with values in `[0, 1]`.
    pub frames: Vec<Tensor>,
    pub gt: GroundTruth,
}

impl Video {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.5 * (lo + hi);
    }
    let span = hi - lo;
    let mut t = (x - lo).rem_euclid(2.0 * span);
    if t > span {
        t = 2.0 * span - t;
    }
    lo + t
}

struct Track {
    w: f64,
    h: f64,
    centers: Vec<(f64, f64)>,
    color: [f64; 3],
    depth: f64,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Renders a scene. Pure function of `config`.
pub fn generate(config: &SceneConfig) -> Result<Video> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let accel = Normal::new(0.0, config.accel_sigma.max(1e-12))
        .map_err(|e| Error::Config(e.to_string()))?;
    let t_max = config.num_frames;

    let mut tracks: Vec<Track> = (0..config.num_objects)
        .map(|_| {
            let w = uniform(&mut rng, config.size_range);
            let h = uniform(&mut rng, config.size_range);
            let base = (
                uniform(&mut rng, (0.5 * w, 1.0 - 0.5 * w)),
                uniform(&mut rng, (0.5 * h, 1.0 - 0.5 * h)),
            );
            let amp = (
                uniform(&mut rng, config.amplitude_range),
                uniform(&mut rng, config.amplitude_range),
            );
            let omega = (
                uniform(&mut rng, config.frequency_range),
                uniform(&mut rng, config.frequency_range),
            );
            let phase = (
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            );
            let mut vel = (0.0, 0.0);
            let mut drift = (0.0, 0.0);
            let mut centers = Vec::with_capacity(t_max);
            for t in 0..t_max {
                let tf = t as f64;
                let x = base.0 + amp.0 * (omega.0 * tf + phase.0).sin() + drift.0;
                let y = base.1 + amp.1 * (omega.1 * tf + phase.1).sin() + drift.1;
                centers.push((
                    reflect(x, 0.5 * w, 1.0 - 0.5 * w),
                    reflect(y, 0.5 * h, 1.0 - 0.5 * h),
                ));
                if config.accel_sigma > 0.0 {
                    vel.0 = 0.95 * vel.0 + accel.sample(&mut rng);
                    vel.1 = 0.95 * vel.1 + accel.sample(&mut rng);
                }
                drift.0 += vel.0;
                drift.1 += vel.1;
            }
            let j = config.color_jitter;
            let color = [
                0.9 + j * rng.random_range(-0.5..0.5),
                0.6 + j * rng.random_range(-0.5..0.5),
                0.3 + j * rng.random_range(-0.5..0.5),
            ];
            Track {
                w,
                h,
                centers,
                color,
                depth: rng.random_range(0.0..1.0),
            }
        })
        .collect();

    let mut occlusions = config.occlusions.clone();
    for _ in 0..config.random_occlusions {
        let k = config.num_objects as u32;
        let front = rng.random_range(1..=k);
        let mut back = rng.random_range(1..k);
        if back >= front {
            back += 1;
        }
        occlusions.push(Occlusion {
            frame: rng.random_range(0..t_max),
            front,
            back,
        });
    }
    apply_occlusions(&mut tracks, &occlusions, t_max)?;

    let alive = |id: u32, t: usize| -> bool {
        config
            .lifetimes
            .iter()
            .find(|l| l.id == id)
            .is_none_or(|l| t >= l.enter && t < l.exit)
    };

    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by(|&a, &b| tracks[a].depth.total_cmp(&tracks[b].depth));

    let (w_px, h_px) = (config.width, config.height);
    let mut frames = Vec::with_capacity(t_max);
    let mut gt = GroundTruth::default();
    for t in 0..t_max {
        let mut img = vec![0.15; CHANNELS * w_px * h_px];
        if config.noise > 0.0 {
            for v in img.iter_mut() {
                *v += config.noise * rng.random_range(-1.0..1.0);
            }
        }
        let frame_tint: [f64; 3] =
            std::array::from_fn(|_| config.color_jitter * rng.random_range(-0.5..0.5));
        let mut coverage: Vec<Vec<f64>> = vec![Vec::new(); tracks.len()];
        let mut owner = vec![usize::MAX; w_px * h_px];
        for &k in &order {
            let id = k as u32 + 1;
            if !alive(id, t) {
                continue;
            }
            let tr = &tracks[k];
            let (cx, cy) = tr.centers[t];
            let (rw, rh) = (0.5 * tr.w * w_px as f64, 0.5 * tr.h * h_px as f64);
            let (pcx, pcy) = (cx * w_px as f64, cy * h_px as f64);
            let x0 = ((pcx - rw - config.edge_px).floor().max(0.0)) as usize;
            let x1 = ((pcx + rw + config.edge_px).ceil() as usize).min(w_px);
            let y0 = ((pcy - rh - config.edge_px).floor().max(0.0)) as usize;
            let y1 = ((pcy + rh + config.edge_px).ceil() as usize).min(h_px);
            let mut px_count = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let dx = (x as f64 + 0.5 - pcx) / rw;
                    let dy = (y as f64 + 0.5 - pcy) / rh;
                    let rho = (dx.powi(4) + dy.powi(4)).powf(0.25);
                    let signed = (1.0 - rho) * rw.min(rh);
                    let alpha = (signed / config.edge_px + 0.5).clamp(0.0, 1.0);
                    if alpha <= 0.0 {
                        continue;
                    }
                    for c in 0..CHANNELS {
                        let i = (c * h_px + y) * w_px + x;
                        let col = tr.color[c] + frame_tint[c];
                        img[i] = (1.0 - alpha) * img[i] + alpha * col;
                    }
                    if alpha >= 0.5 {
                        owner[y * w_px + x] = k;
                        px_count += 1.0;
                    }
                }
            }
            coverage[k].push(px_count);
        }
        for v in img.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        let mut visible_px = vec![0.0; tracks.len()];
        for &o in &owner {
            if o != usize::MAX {
                visible_px[o] += 1.0;
            }
        }
        let mut objs = Vec::new();
        for (k, tr) in tracks.iter().enumerate() {
            let id = k as u32 + 1;
            if !alive(id, t) {
                continue;
            }
            let (cx, cy) = tr.centers[t];
            let full = coverage[k].last().copied().unwrap_or(0.0);
            objs.push(GtObject {
                id,
                bbox: BBox::new(cx, cy, tr.w, tr.h),
                visible: full > 0.0 && visible_px[k] >= 0.5 * full,
            });
        }
        frames.push(Tensor::new(&[CHANNELS, h_px, w_px], img)?);
        gt.frames.push(objs);
    }
    Ok(Video { frames, gt })
}

fn apply_occlusions(tracks: &mut [Track], events: &[Occlusion], t_max: usize) -> Result<()> {
    const WINDOW: usize = 4;
    for ev in events {
        let (f, b) = ((ev.front - 1) as usize, (ev.back - 1) as usize);
        let lo = ev.frame.saturating_sub(WINDOW);
        let hi = (ev.frame + WINDOW).min(t_max - 1);
        for t in lo..=hi {
            let weight = 1.0 - (t.abs_diff(ev.frame) as f64) / (WINDOW as f64 + 1.0);
            let target = tracks[f].centers[t];
            let (bw, bh) = (tracks[b].w, tracks[b].h);
            let cur = tracks[b].centers[t];
            let nx = cur.0 + weight * (target.0 - cur.0);
            let ny = cur.1 + weight * (target.1 - cur.1);
            tracks[b].centers[t] = (
                nx.clamp(0.5 * bw, 1.0 - 0.5 * bw),
                ny.clamp(0.5 * bh, 1.0 - 0.5 * bh),
            );
        }
        // the occluder is drawn in front during the event
        if tracks[f].depth <= tracks[b].depth {
            tracks[f].depth = tracks[b].depth + 1e-3;
        }
        let at = |k: usize| {
            let (cx, cy) = tracks[k].centers[ev.frame];
            BBox::new(cx, cy, tracks[k].w, tracks[k].h)
        };
        let overlap = iou_unchecked(&at(f), &at(b));
        if overlap <= 0.5 {
            return Err(Error::Config(format!(
                "occlusion {ev:?} reaches IoU {overlap:.3}; object sizes differ too much"
            )));
        }
    }
    Ok(())
}

/// One training sample: consecutive frames with their ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSample {
    pub frames: Vec<Tensor>,
    pub gt: Vec<Vec<GtObject>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub train_seeds: Vec<u64>,
    pub val_seeds: Vec<u64>,
    pub train_frames: usize,
    pub val_frames: usize,
    /// Inclusive range for the object count of each video.
    pub objects: (usize, usize),
    pub clip_len: usize,
    /// Template for every video; seed, frame count and object count are
    /// overridden per video.
    pub scene: SceneConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            train_seeds: (0..32).collect(),
            val_seeds: (1000..1008).collect(),
            train_frames: 60,
            val_frames: 120,
            objects: (3, 6),
            clip_len: 5,
            scene: SceneConfig {
                random_occlusions: 2,
                ..SceneConfig::default()
            },
        }
    }
}

pub struct Dataset {
    pub train_clips: Vec<ClipSample>,
    pub val_videos: Vec<Video>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let train: HashSet<_> = self.train_seeds.iter().collect();
        if self.val_seeds.iter().any(|s| train.contains(s)) {
            return Err(Error::Config("train and val seeds overlap".into()));
        }
        if self.clip_len == 0 || self.train_frames < self.clip_len {
            return Err(Error::Config(format!(
                "clip length {} does not fit {} train frames",
                self.clip_len, self.train_frames
            )));
        }
        if self.objects.0 > self.objects.1 {
            return Err(Error::Config("object range is reversed".into()));
        }
        Ok(())
    }

    pub fn scene_for(&self, seed: u64, frames: usize) -> SceneConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0b1e);
        let k = rng.random_range(self.objects.0..=self.objects.1);
        SceneConfig {
            num_objects: k,
            num_frames: frames,
            seed,
            random_occlusions: if k >= 2 { self.scene.random_occlusions } else { 0 },
            ..self.scene.clone()
        }
    }

    pub fn val_videos(&self) -> Result<Vec<Video>> {
        self.val_seeds
            .iter()
            .map(|&s| generate(&self.scene_for(s, self.val_frames)))
            .collect()
    }

    pub fn train_videos(&self) -> Result<Vec<Video>> {
        self.train_seeds
            .iter()
            .map(|&s| generate(&self.scene_for(s, self.train_frames)))
            .collect()
    }

    /// Train videos chopped into non-overlapping clips; val videos whole.
    pub fn split(&self) -> Result<Dataset> {
        self.validate()?;
        let train_clips = self
            .train_videos()?
            .iter()
            .flat_map(|v| chop(v, self.clip_len))
            .collect();
        Ok(Dataset {
            train_clips,
            val_videos: self.val_videos()?,
        })
    }
}

/// Non-overlapping clips of `clip_len` frames; a short tail is dropped.
pub fn chop(video: &Video, clip_len: usize) -> Vec<ClipSample> {
    (0..video.len() / clip_len)
        .map(|c| {
            let r = c * clip_len..(c + 1) * clip_len;
            ClipSample {
                frames: video.frames[r.clone()].to_vec(),
                gt: video.gt.frames[r].to_vec(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SceneConfig {
        SceneConfig {
            num_objects: 3,
            num_frames: 20,
            width: 32,
            height: 32,
            seed,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn same_seed_same_video() {
        let a = generate(&small(7)).unwrap();
        let b = generate(&small(7)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(8)).unwrap();
        assert_ne!(a.frames[0], c.frames[0]);
    }

    #[test]
    fn every_frame_has_all_objects_without_exits() {
        let v = generate(&small(1)).unwrap();
        for f in &v.gt.frames {
            assert_eq!(f.len(), 3);
            for o in f {
                let [x1, y1, x2, y2] = o.bbox.corners();
                assert!(x1 >= -1e-12 && y1 >= -1e-12 && x2 <= 1.0 + 1e-12 && y2 <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn scheduled_occlusion_overlaps() {
        let cfg = SceneConfig {
            occlusions: vec![Occlusion {
                frame: 10,
                front: 1,
                back: 2,
            }],
            ..small(3)
        };
        let v = generate(&cfg).unwrap();
        let f = &v.gt.frames[10];
        let a = f.iter().find(|o| o.id == 1).unwrap().bbox;
        let b = f.iter().find(|o| o.id == 2).unwrap().bbox;
        assert!(iou_unchecked(&a, &b) > 0.5);
        assert!(!f.iter().find(|o| o.id == 2).unwrap().visible);
    }

    #[test]
    fn occlusion_needs_two_objects() {
        let cfg = SceneConfig {
            num_objects: 1,
            occlusions: vec![Occlusion {
                frame: 1,
                front: 1,
                back: 2,
            }],
            ..small(3)
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn lifetimes_limit_presence() {
        let cfg = SceneConfig {
            lifetimes: vec![Lifetime {
                id: 2,
                enter: 5,
                exit: 10,
            }],
            ..small(4)
        };
        let v = generate(&cfg).unwrap();
        for (t, f) in v.gt.frames.iter().enumerate() {
            let has = f.iter().any(|o| o.id == 2);
            assert_eq!(has, (5..10).contains(&t));
            assert!(f.len() <= 3);
        }
    }

    #[test]
    fn split_into_clips() {
        let spec = DatasetSpec {
            train_seeds: vec![1, 2],
            val_seeds: vec![3],
            train_frames: 20,
            val_frames: 12,
            objects: (2, 3),
            clip_len: 5,
            scene: small(0),
        };
        let data = spec.split().unwrap();
        assert_eq!(data.train_clips.len(), 8);
        assert_eq!(data.val_videos.len(), 1);
        assert_eq!(data.val_videos[0].len(), 12);
        let video = generate(&spec.scene_for(1, 20)).unwrap();
        assert_eq!(data.train_clips[1].gt, video.gt.frames[5..10].to_vec());

        let overlapping = DatasetSpec {
            val_seeds: vec![2],
            ..spec
        };
        assert!(matches!(overlapping.split(), Err(Error::Config(_))));
    }
}
