//! Deterministic synthetic sequences of moving colored shapes, MOTChallenge CSV
//! and PPM/PGM image I/O, and id-colored overlays.

mod image_io;
mod mot;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nets::{Frame, DOWNSAMPLE};
use crate::numkernel::Tensor;
use crate::{Error, Result};

pub use image_io::{read_ppm, render_overlay, write_ppm, PALETTE};
pub use mot::{format_mot, parse_mot, read_mot, write_mot, MotRecord};

/// Axis-aligned box in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn from_center(center: (f64, f64), size: (f64, f64)) -> Self {
        let (h, w) = size;
        Self { left: center.0 - w / 2.0, top: center.1 - h / 2.0, width: w, height: h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.left + self.width).min(other.left + other.width) - self.left.max(other.left);
        let iy = (self.top + self.height).min(other.top + other.height) - self.top.max(other.top);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Intersection with `[0, width) × [0, height)`, `None` when empty.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        let l = self.left.max(0.0);
        let t = self.top.max(0.0);
        let r = (self.left + self.width).min(width);
        let b = (self.top + self.height).min(height);
        (r > l && b > t).then_some(BBox { left: l, top: t, width: r - l, height: b - t })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    Disc,
}

/// Initial placement of objects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Random,
    /// The first two objects meet at the frame center halfway through the sequence.
    Crossing,
    /// Objects never move.
    Static,
}

/// Missing JSON fields take their [`Default`] values; unknown fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive range.
    pub num_objects: (usize, usize),
    pub shapes: Vec<Shape>,
    /// Side (or diameter) range in pixels.
    pub size_range: (f64, f64),
    /// Speed range in pixels per frame.
    pub speed_range: (f64, f64),
    /// Fixed RGB colors cycled over objects; `None` spreads distinct hues.
    pub colors: Option<Vec<[f64; 3]>>,
    /// Inclusive range of the first frame an object is present.
    pub spawn_range: (usize, usize),
    /// Inclusive range of the first frame an object is gone; clipped to the sequence length.
    pub despawn_range: (usize, usize),
    pub noise_sigma: f64,
    pub bounce: bool,
    pub length: usize,
    pub seed: u64,
    pub layout: Layout,
}

const BACKGROUND: f64 = 0.35;

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            num_objects: (2, 4),
            shapes: vec![Shape::Rectangle, Shape::Disc],
            size_range: (14.0, 24.0),
            speed_range: (0.5, 2.5),
            colors: None,
            spawn_range: (0, 0),
            despawn_range: (usize::MAX, usize::MAX),
            noise_sigma: 0.03,
            bounce: true,
            length: 40,
            seed: 0,
            layout: Layout::Random,
        }
    }
}

impl SceneConfig {
    /// Named presets: `random`, `crossing`, `static`, `uniform-crossing`.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let base = Self { seed, ..Self::default() };
        Ok(match name {
            "random" => base,
            "crossing" => Self { num_objects: (2, 2), layout: Layout::Crossing, ..base },
            "static" => Self { num_objects: (1, 1), layout: Layout::Static, length: 30, ..base },
            "uniform-crossing" => Self {
                num_objects: (2, 2),
                layout: Layout::Crossing,
                shapes: vec![Shape::Rectangle],
                size_range: (16.0, 16.0),
                colors: Some(vec![[0.85, 0.85, 0.85]]),
                ..base
            },
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.width == 0 || self.height == 0 || self.width % DOWNSAMPLE != 0 || self.height % DOWNSAMPLE != 0 {
            return bad(format!("image size {}×{} must be positive multiples of {DOWNSAMPLE}", self.width, self.height));
        }
        let side = self.width.min(self.height) as f64;
        let (smin, smax) = self.size_range;
        if !(smin >= 8.0 && smin <= smax) {
            return bad(format!("size range ({smin}, {smax}) must satisfy 8 ≤ min ≤ max"));
        }
        if smax > side {
            return bad(format!("objects up to {smax} px do not fit a {}×{} frame", self.width, self.height));
        }
        let (vmin, vmax) = self.speed_range;
        if !(vmin >= 0.0 && vmin <= vmax && vmax <= side / 10.0) {
            return bad(format!("speed range ({vmin}, {vmax}) must satisfy 0 ≤ min ≤ max ≤ {}", side / 10.0));
        }
        if self.num_objects.0 > self.num_objects.1 {
            return bad("object count range is reversed".into());
        }
        if self.layout == Layout::Crossing && self.num_objects.0 < 2 {
            return bad("crossing layout needs at least two objects".into());
        }
        if self.shapes.is_empty() {
            return bad("no shapes allowed".into());
        }
        if let Some(c) = &self.colors {
            if c.is_empty() || c.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return bad("colors must be a non-empty list of RGB triples in [0, 1]".into());
            }
        }
        if self.spawn_range.0 > self.spawn_range.1 || self.despawn_range.0 > self.despawn_range.1 {
            return bad("spawn/despawn ranges are reversed".into());
        }
        if self.spawn_range.1 >= self.length {
            return bad("objects must spawn before the last frame".into());
        }
        if self.despawn_range.0 <= self.spawn_range.1 {
            return bad("objects must despawn after they spawn".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and non-negative".into());
        }
        if self.length == 0 {
            return bad("sequence length must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// One ground-truth box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtBox {
    pub id: u64,
    pub class: usize,
    pub bbox: BBox,
    /// False whenever the object's center is outside the image.
    pub visible: bool,
}

/// Per-frame ground truth; `frames[k]` belongs to frame index `k`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub frames: Vec<Vec<GtBox>>,
}

impl GroundTruth {
    pub fn to_records(&self) -> Vec<MotRecord> {
        let mut out = Vec::new();
        for (k, boxes) in self.frames.iter().enumerate() {
            for b in boxes {
                out.push(MotRecord { frame: k + 1, id: b.id, bbox: b.bbox, conf: if b.visible { 1.0 } else { 0.0 } });
            }
        }
        out
    }

    /// Rebuilds ground truth for `num_frames` frames; `conf > 0` marks a visible box.
    pub fn from_records(records: &[MotRecord], num_frames: usize) -> Result<Self> {
        let mut frames = vec![Vec::new(); num_frames];
        for r in records {
            let slot = frames
                .get_mut(r.frame - 1)
                .ok_or_else(|| Error::InvalidArgument(format!("ground truth frame {} beyond {num_frames} frames", r.frame)))?;
            slot.push(GtBox { id: r.id, class: 0, bbox: r.bbox, visible: r.conf > 0.0 });
        }
        Ok(Self { frames })
    }
}

/// Frames and their ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Frame>,
    pub gt: GroundTruth,
}

struct Object {
    shape: Shape,
    size: (f64, f64),
    color: [f64; 3],
    pos: (f64, f64),
    vel: (f64, f64),
    spawn: usize,
    despawn: usize,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn sample_objects(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Object> {
    let n = rng.random_range(cfg.num_objects.0..=cfg.num_objects.1);
    let hue0: f64 = rng.random();
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut objs = Vec::with_capacity(n);
    for k in 0..n {
        let shape = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
        let side = |rng: &mut ChaCha8Rng| rng.random_range(cfg.size_range.0..=cfg.size_range.1);
        let size = match shape {
            Shape::Rectangle => (side(rng), side(rng)),
            Shape::Disc => {
                let d = side(rng);
                (d, d)
            }
        };
        let color = match &cfg.colors {
            Some(list) => list[k % list.len()],
            None => hsv_to_rgb(hue0 + k as f64 / n as f64, 0.8, 0.95),
        };
        let pos = (rng.random_range(size.1 / 2.0..=w - size.1 / 2.0), rng.random_range(size.0 / 2.0..=h - size.0 / 2.0));
        let speed = rng.random_range(cfg.speed_range.0..=cfg.speed_range.1);
        let angle = rng.random_range(0.0..2.0 * PI);
        let spawn = rng.random_range(cfg.spawn_range.0..=cfg.spawn_range.1);
        let despawn = rng.random_range(cfg.despawn_range.0..=cfg.despawn_range.1).min(cfg.length);
        let vel = if cfg.layout == Layout::Static { (0.0, 0.0) } else { (speed * angle.cos(), speed * angle.sin()) };
        objs.push(Object { shape, size, color, pos, vel, spawn, despawn });
    }
    if cfg.layout == Layout::Crossing {
        place_crossing(cfg, rng, &mut objs);
    }
    objs
}

/// Aims the first two objects at the frame center, meeting halfway through their shared lifetime.
fn place_crossing(cfg: &SceneConfig, rng: &mut ChaCha8Rng, objs: &mut [Object]) {
    let center = (cfg.width as f64 / 2.0, cfg.height as f64 / 2.0);
    let start = objs[0].spawn.max(objs[1].spawn);
    let end = objs[0].despawn.min(objs[1].despawn);
    let meet = ((start + end.saturating_sub(1)) / 2) as f64;
    let a0 = rng.random_range(0.0..2.0 * PI);
    let a1 = a0 + rng.random_range(PI / 3.0..2.0 * PI / 3.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    for (obj, angle) in objs.iter_mut().take(2).zip([a0, a1]) {
        let half = obj.size.0.max(obj.size.1) / 2.0;
        let room = (cfg.width.min(cfg.height) as f64 / 2.0 - half).max(0.0);
        let reach = (meet - obj.spawn as f64).max(obj.despawn as f64 - 1.0 - meet).max(1.0);
        let speed = rng.random_range(cfg.speed_range.0..=cfg.speed_range.1).min(room / reach);
        obj.vel = (speed * angle.cos(), speed * angle.sin());
        let back = meet - obj.spawn as f64;
        obj.pos = (center.0 - obj.vel.0 * back, center.1 - obj.vel.1 * back);
    }
}

fn advance(obj: &mut Object, cfg: &SceneConfig) {
    obj.pos.0 += obj.vel.0;
    obj.pos.1 += obj.vel.1;
    if !cfg.bounce {
        return;
    }
    let reflect = |p: &mut f64, v: &mut f64, half: f64, limit: f64| {
        if *p < half {
            *p = 2.0 * half - *p;
            *v = -*v;
        } else if *p > limit - half {
            *p = 2.0 * (limit - half) - *p;
            *v = -*v;
        }
    };
    reflect(&mut obj.pos.0, &mut obj.vel.0, obj.size.1 / 2.0, cfg.width as f64);
    reflect(&mut obj.pos.1, &mut obj.vel.1, obj.size.0 / 2.0, cfg.height as f64);
}

fn paint(pixels: &mut [f64], cfg: &SceneConfig, obj: &Object) {
    let (w, h) = (cfg.width, cfg.height);
    let bbox = BBox::from_center(obj.pos, obj.size);
    let x0 = bbox.left.floor().max(0.0) as usize;
    let y0 = bbox.top.floor().max(0.0) as usize;
    let x1 = ((bbox.left + bbox.width).ceil().max(0.0) as usize).min(w);
    let y1 = ((bbox.top + bbox.height).ceil().max(0.0) as usize).min(h);
    let r = obj.size.0 / 2.0;
    for y in y0..y1 {
        let py = y as f64 + 0.5;
        for x in x0..x1 {
            let px = x as f64 + 0.5;
            let inside = match obj.shape {
                Shape::Rectangle => {
                    px >= bbox.left && px < bbox.left + bbox.width && py >= bbox.top && py < bbox.top + bbox.height
                }
                Shape::Disc => (px - obj.pos.0).powi(2) + (py - obj.pos.1).powi(2) < r * r,
            };
            if inside {
                for c in 0..3 {
                    pixels[(c * h + y) * w + x] = obj.color[c];
                }
            }
        }
    }
}

/// Renders a sequence; a pure function of `cfg`.
pub fn generate(cfg: &SceneConfig) -> Result<Sequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut objs = sample_objects(cfg, &mut rng);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let (w, h) = (cfg.width, cfg.height);
    let mut frames = Vec::with_capacity(cfg.length);
    let mut gt = GroundTruth::default();
    for t in 0..cfg.length {
        let mut pixels = vec![BACKGROUND; 3 * w * h];
        let mut boxes = Vec::new();
        for (k, obj) in objs.iter().enumerate() {
            if t < obj.spawn || t >= obj.despawn {
                continue;
            }
            paint(&mut pixels, cfg, obj);
            let full = BBox::from_center(obj.pos, obj.size);
            if let Some(bbox) = full.clamp_to(w as f64, h as f64) {
                let (cx, cy) = obj.pos;
                let visible = cx >= 0.0 && cy >= 0.0 && cx < w as f64 && cy < h as f64;
                boxes.push(GtBox { id: k as u64 + 1, class: 0, bbox, visible });
            }
        }
        if cfg.noise_sigma > 0.0 {
            for p in &mut pixels {
                *p += noise.sample(&mut rng);
            }
        }
        pixels.iter_mut().for_each(|p| *p = quantize(*p));
        frames.push(Frame::new(t, Tensor::new(&[3, h, w], pixels)?)?);
        gt.frames.push(boxes);
        for obj in &mut objs {
            if t >= obj.spawn {
                advance(obj, cfg);
            }
        }
    }
    Ok(Sequence { frames, gt })
}

const FRAMES_DIR: &str = "frames";
const GT_FILE: &str = "gt.csv";

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(FRAMES_DIR).join(format!("{:06}.ppm", index + 1))
}

/// Writes `frames/000001.ppm, ...` and `gt.csv` under `dir`.
pub fn save_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    let frames_dir = dir.join(FRAMES_DIR);
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io_at(&frames_dir, e))?;
    for f in &seq.frames {
        write_ppm(&frame_path(dir, f.index()), f)?;
    }
    write_mot(&dir.join(GT_FILE), &seq.gt.to_records())
}

/// Loads frames (and `gt.csv` when present) from a sequence directory.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let frames_dir = dir.join(FRAMES_DIR);
    let mut names: Vec<PathBuf> = std::fs::read_dir(&frames_dir)
        .map_err(|e| Error::io_at(&frames_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Image(format!("no frames in {}", frames_dir.display())));
    }
    let frames = names.iter().enumerate().map(|(i, p)| read_ppm(p, i)).collect::<Result<Vec<_>>>()?;
    let gt_path = dir.join(GT_FILE);
    let gt = if gt_path.exists() {
        GroundTruth::from_records(&read_mot(&gt_path)?, frames.len())?
    } else {
        GroundTruth { frames: vec![Vec::new(); frames.len()] }
    };
    Ok(Sequence { frames, gt })
}

/// A sequence directory itself, or its sorted subdirectories that hold frames.
pub fn sequence_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(FRAMES_DIR).is_dir() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io_at(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(FRAMES_DIR).is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!("{} holds no sequences", dir.display())));
    }
    Ok(dirs)
}
