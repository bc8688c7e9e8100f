//! Scene-biased synthetic video benchmark.
//!
//! Every video shows one sprite executing a class-specific motion program
//! over a procedurally textured background. Class information lives only in
//! the motion; the background is correlated with the class through `bias_rho`
//! and is therefore a shortcut a model can learn instead of motion.
//!
//! Videos are stored one per file in the BEVD layout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "BEVD"
//! 4       4     u32 version
//! 8       2     u16 T
//! 10      2     u16 H
//! 12      2     u16 W
//! 14      2     u16 C
//! 16      T·H·W·C u8 samples, frame-major then row-major, channels last
//! ```
//!
//! All integers are little-endian. A JSON manifest lists records and splits.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, Rng};
use crate::video::{sample_clip, ClipDims, Video, VideoClip};

pub const BEVD_MAGIC: [u8; 4] = *b"BEVD";
pub const BEVD_VERSION: u32 = 1;
pub const BEVD_HEADER_LEN: usize = 16;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Number of distinct motion programs (and hence the class ceiling).
pub const NUM_MOTIONS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestInbias,
    TestAntibias,
    TestActor,
    TestStatic,
}

impl Split {
    pub const ALL: [Split; 5] = [
        Split::Train,
        Split::TestInbias,
        Split::TestAntibias,
        Split::TestActor,
        Split::TestStatic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestInbias => "test_inbias",
            Split::TestAntibias => "test_antibias",
            Split::TestActor => "test_actor",
            Split::TestStatic => "test_static",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::UnknownSplit(s.to_string()))
    }
}

/// Motion program names, indexed by class.
pub const MOTION_NAMES: [&str; NUM_MOTIONS] = [
    "translate_left",
    "translate_right",
    "translate_up",
    "translate_down",
    "orbit_cw",
    "orbit_ccw",
    "oscillate",
    "expand_contract",
];

/// Background texture names, indexed by background id.
pub const TEXTURE_NAMES: [&str; NUM_MOTIONS] = [
    "h_stripes",
    "v_stripes",
    "diag_stripes",
    "checks",
    "dots",
    "rings",
    "gradient",
    "plaid",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    /// Training videos per class.
    pub videos_per_class: usize,
    /// Videos per class in each test split.
    pub test_videos_per_class: usize,
    /// Mean probability that a video shows its class background.
    pub bias_rho: f64,
    /// Per-class bias spans `bias_rho ± bias_spread/2`, linearly over classes.
    pub bias_spread: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Maximum background pan speed in pixels per frame; direction random.
    pub camera_pan: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            videos_per_class: 100,
            test_videos_per_class: 20,
            bias_rho: 0.95,
            bias_spread: 0.0,
            frames: 32,
            height: 64,
            width: 64,
            camera_pan: 0.25,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("dataset needs at least one class".into()));
        }
        if self.num_classes < 2 || self.num_classes > NUM_MOTIONS {
            return Err(Error::Config(format!(
                "num_classes must be in 2..={NUM_MOTIONS}, got {}",
                self.num_classes
            )));
        }
        if self.videos_per_class == 0 || self.frames < 2 || self.height < 8 || self.width < 8 {
            return Err(Error::Config(
                "videos_per_class ≥ 1, frames ≥ 2 and frames of at least 8×8 are required".into(),
            ));
        }
        if self.frames > u16::MAX as usize || self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return Err(Error::Config("dimensions exceed the u16 range of the file header".into()));
        }
        if !(0.0..=1.0).contains(&self.bias_rho) || !(0.0..=1.0).contains(&self.bias_spread) {
            return Err(Error::Config("bias_rho and bias_spread must lie in [0,1]".into()));
        }
        if !(self.camera_pan >= 0.0 && self.camera_pan.is_finite()) {
            return Err(Error::Config("camera_pan must be a finite non-negative speed".into()));
        }
        Ok(())
    }

    /// Per-class bias, clamped to `[0,1]`.
    pub fn class_bias(&self) -> Vec<f64> {
        let k = self.num_classes;
        (0..k)
            .map(|c| {
                let pos = if k > 1 { c as f64 / (k - 1) as f64 - 0.5 } else { 0.0 };
                (self.bias_rho + self.bias_spread * pos).clamp(0.0, 1.0)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub class_label: usize,
    /// Background texture id, or −1 for the plain actor-only background.
    pub background_id: i32,
    pub split: Split,
    /// Path relative to the manifest directory.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetManifest {
    pub version: u32,
    pub num_classes: usize,
    pub bias_rho: f64,
    pub class_bias: Vec<f64>,
    pub frames_per_video: usize,
    pub frame_size: (usize, usize),
    pub channels: usize,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub records: Vec<VideoRecord>,
    /// Directory the manifest was loaded from; not serialised.
    #[serde(skip)]
    pub root: PathBuf,
}

impl SyntheticDatasetManifest {
    pub fn dims(&self) -> ClipDims {
        ClipDims::new(self.frames_per_video, self.frame_size.0, self.frame_size.1, self.channels)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn record(&self, id: &str) -> Result<&VideoRecord> {
        self.records
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::UnknownRecord(id.to_string()))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = if dir.is_dir() { dir.join(MANIFEST_FILE) } else { dir.to_path_buf() };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::corrupt(&path, 0, format!("unsupported manifest version {}", m.version)));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn video_path(&self, record: &VideoRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn load_video(&self, record: &VideoRecord) -> Result<Video> {
        let path = self.video_path(record);
        let video = read_bevd(&path, &record.id)?;
        if video.dims != self.dims() {
            return Err(Error::corrupt(
                &path,
                8,
                format!("header dims {:?} disagree with manifest {:?}", video.dims.as_vec(), self.dims().as_vec()),
            ));
        }
        Ok(video)
    }

    /// Loads every video of a split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<(VideoRecord, Video)>> {
        let recs: Vec<&VideoRecord> = self.split(split).collect();
        let load = |r: &&VideoRecord| self.load_video(r).map(|v| ((*r).clone(), v));
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            recs.par_iter().map(load).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            recs.iter().map(load).collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipParams {
    pub length: usize,
    pub stride: usize,
}

impl Default for ClipParams {
    fn default() -> Self {
        Self { length: 8, stride: 2 }
    }
}

/// Reads one record and samples a clip from it.
pub fn load_clip(manifest: &SyntheticDatasetManifest, record_id: &str, params: ClipParams, rng: &mut Rng) -> Result<VideoClip> {
    let record = manifest.record(record_id)?;
    let video = manifest.load_video(record)?;
    sample_clip(&video, params.length, params.stride, rng)
}

pub fn encode_bevd(video: &Video) -> Vec<u8> {
    let d = video.dims;
    let mut out = Vec::with_capacity(BEVD_HEADER_LEN + video.data.len());
    out.extend_from_slice(&BEVD_MAGIC);
    out.extend_from_slice(&BEVD_VERSION.to_le_bytes());
    for v in [d.t, d.h, d.w, d.c] {
        out.extend_from_slice(&(v as u16).to_le_bytes());
    }
    out.extend_from_slice(&video.data);
    out
}

pub fn decode_bevd(bytes: &[u8], path: &Path, id: &str) -> Result<Video> {
    if bytes.len() < BEVD_HEADER_LEN {
        return Err(Error::corrupt(path, bytes.len() as u64, "truncated header"));
    }
    if bytes[0..4] != BEVD_MAGIC {
        return Err(Error::corrupt(path, 0, "bad magic, expected \"BEVD\""));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != BEVD_VERSION {
        return Err(Error::corrupt(path, 4, format!("unsupported version {version}")));
    }
    let dim = |i: usize| u16::from_le_bytes([bytes[8 + 2 * i], bytes[9 + 2 * i]]) as usize;
    let dims = ClipDims::new(dim(0), dim(1), dim(2), dim(3));
    if dims.len() == 0 {
        return Err(Error::corrupt(path, 8, "zero dimension in header"));
    }
    let body = &bytes[BEVD_HEADER_LEN..];
    if body.len() != dims.len() {
        let reason = if body.len() < dims.len() { "truncated frame data" } else { "trailing bytes after frame data" };
        return Err(Error::corrupt(
            path,
            (BEVD_HEADER_LEN + body.len().min(dims.len())) as u64,
            format!("{reason}: header promises {} bytes, found {}", dims.len(), body.len()),
        ));
    }
    Ok(Video {
        id: id.to_string(),
        dims,
        data: body.to_vec(),
    })
}

pub fn write_bevd(path: &Path, video: &Video) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_bevd(video)).map_err(|e| Error::io(path, e))
}

pub fn read_bevd(path: &Path, id: &str) -> Result<Video> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bevd(&bytes, path, id)
}

// ---------------------------------------------------------------------------
// Rendering

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpriteShape {
    Disc,
    Square,
    Diamond,
}

/// Class-independent sprite appearance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpriteParams {
    pub shape: SpriteShape,
    pub color: [f32; 3],
    /// Radius as a fraction of the frame height.
    pub radius: f64,
}

/// Trajectory parameters of a motion program, in frame-relative units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub program: usize,
    /// Start (or centre) position as fractions of width/height.
    pub origin: (f64, f64),
    /// Speed in frame heights per frame (translations), radians per frame
    /// (orbits) or cycles per frame (oscillate, expand-contract).
    pub speed: f64,
    pub phase: f64,
    /// Orbit radius or oscillation amplitude, fraction of frame height.
    pub extent: f64,
    /// Oscillation axis angle in radians.
    pub axis: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundParams {
    /// Texture id, `None` for plain mid-gray.
    pub texture: Option<usize>,
    pub hue_jitter: f64,
    pub scale: f64,
    pub phase: (f64, f64),
    /// Pan velocity in pixels per frame.
    pub pan: (f64, f64),
}

/// Everything needed to render one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoSpec {
    pub class_label: usize,
    pub sprite: SpriteParams,
    pub motion: MotionParams,
    pub background: BackgroundParams,
    /// When set, every frame repeats this frame of the moving video.
    pub static_frame: Option<usize>,
}

fn hsv(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

pub fn sample_sprite(rng: &mut Rng) -> SpriteParams {
    let shape = match rng.random_range(0..3) {
        0 => SpriteShape::Disc,
        1 => SpriteShape::Square,
        _ => SpriteShape::Diamond,
    };
    SpriteParams {
        shape,
        color: hsv(rng.random(), rng.random_range(0.7..1.0), rng.random_range(0.85..1.0)),
        radius: rng.random_range(0.09..0.14),
    }
}

pub fn sample_motion(program: usize, frames: usize, rng: &mut Rng) -> MotionParams {
    let span = (frames.max(2) - 1) as f64;
    let mut m = MotionParams {
        program,
        origin: (0.5, 0.5),
        speed: 0.0,
        phase: rng.random_range(0.0..std::f64::consts::TAU),
        extent: 0.0,
        axis: 0.0,
    };
    match program {
        0..=3 => {
            // Travel a random distance across the frame; the whole path stays inside.
            let dist = rng.random_range(0.35..0.55);
            m.speed = dist / span;
            let along = rng.random_range(0.2..=0.8 - dist);
            let across = rng.random_range(0.25..0.75);
            let start = match program {
                0 | 2 => 1.0 - along,
                _ => along,
            };
            m.origin = if program < 2 { (start, across) } else { (across, start) };
        }
        4 | 5 => {
            m.extent = rng.random_range(0.15..0.22);
            m.origin = (rng.random_range(0.4..0.6), rng.random_range(0.4..0.6));
            m.speed = rng.random_range(0.18..0.3);
        }
        6 => {
            m.extent = rng.random_range(0.15..0.22);
            m.origin = (rng.random_range(0.4..0.6), rng.random_range(0.4..0.6));
            m.speed = rng.random_range(1.0 / 14.0..1.0 / 9.0);
            m.axis = rng.random_range(0.0..std::f64::consts::TAU);
        }
        _ => {
            m.extent = rng.random_range(0.45..0.6);
            m.origin = (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7));
            m.speed = rng.random_range(1.0 / 14.0..1.0 / 9.0);
        }
    }
    m
}

/// Sprite centre `(x, y)` in frame fractions and radius scale at frame `t`.
pub fn sprite_state(m: &MotionParams, t: usize) -> (f64, f64, f64) {
    let tf = t as f64;
    let (ox, oy) = m.origin;
    let tau = std::f64::consts::TAU;
    match m.program {
        0 => (ox - m.speed * tf, oy, 1.0),
        1 => (ox + m.speed * tf, oy, 1.0),
        2 => (ox, oy - m.speed * tf, 1.0),
        3 => (ox, oy + m.speed * tf, 1.0),
        // Image y grows downwards, so increasing angle is clockwise on screen.
        4 | 5 => {
            let dir = if m.program == 4 { 1.0 } else { -1.0 };
            let a = m.phase + dir * m.speed * tf;
            (ox + m.extent * a.cos(), oy + m.extent * a.sin(), 1.0)
        }
        6 => {
            let s = m.extent * (tau * m.speed * tf + m.phase).sin();
            (ox + s * m.axis.cos(), oy + s * m.axis.sin(), 1.0)
        }
        _ => (ox, oy, 1.0 + m.extent * (tau * m.speed * tf + m.phase).sin()),
    }
}

pub fn sample_background(texture: Option<usize>, pan_max: f64, rng: &mut Rng) -> BackgroundParams {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = if pan_max > 0.0 { rng.random_range(0.0..=pan_max) } else { 0.0 };
    BackgroundParams {
        texture,
        hue_jitter: rng.random_range(-0.025..0.025),
        scale: rng.random_range(0.8..1.25),
        phase: (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
        pan: (speed * angle.cos(), speed * angle.sin()),
    }
}

/// Texture intensity pattern in `[0,1]` at normalised coordinates.
fn pattern(texture: usize, u: f64, v: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let wave = |x: f64| 0.5 + 0.5 * (tau * x).sin();
    match texture {
        0 => wave(v),
        1 => wave(u),
        2 => wave((u + v) * 0.7071),
        3 => {
            let a = (u.rem_euclid(1.0) < 0.5) ^ (v.rem_euclid(1.0) < 0.5);
            if a { 1.0 } else { 0.0 }
        }
        4 => {
            let (du, dv) = (u.rem_euclid(1.0) - 0.5, v.rem_euclid(1.0) - 0.5);
            if du * du + dv * dv < 0.09 { 1.0 } else { 0.0 }
        }
        5 => wave(((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt() * 1.5),
        6 => (u * 0.25).rem_euclid(1.0),
        _ => 0.5 * wave(u) + 0.5 * wave(v * 1.3),
    }
}

fn render_background(bg: &BackgroundParams, num_textures: usize, t: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.5f32; h * w * 3];
    let Some(tex) = bg.texture else {
        return out;
    };
    let hue = tex as f64 / num_textures as f64 + bg.hue_jitter;
    let dark = hsv(hue, 0.75, 0.35);
    let light = hsv(hue, 0.55, 0.85);
    // One texture period spans a fifth of the frame height.
    let period = h as f64 / 5.0 * bg.scale;
    let (sx, sy) = (bg.pan.0 * t as f64, bg.pan.1 * t as f64);
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + sx) / period + bg.phase.0;
            let v = (y as f64 + sy) / period + bg.phase.1;
            let p = pattern(tex, u, v) as f32;
            let px = &mut out[(y * w + x) * 3..(y * w + x) * 3 + 3];
            for ch in 0..3 {
                px[ch] = dark[ch] + (light[ch] - dark[ch]) * p;
            }
        }
    }
    out
}

/// Soft coverage in `[0,1]` of the sprite over an `h×w` frame at time `t`.
pub fn sprite_mask(sprite: &SpriteParams, motion: &MotionParams, t: usize, h: usize, w: usize) -> Vec<f32> {
    let (cx, cy, scale) = sprite_state(motion, t);
    let (cx, cy) = (cx * w as f64, cy * h as f64);
    let r = sprite.radius * h as f64 * scale;
    let mut mask = vec![0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let d = match sprite.shape {
                SpriteShape::Disc => (dx * dx + dy * dy).sqrt() - r,
                SpriteShape::Square => dx.abs().max(dy.abs()) - r * 0.9,
                SpriteShape::Diamond => (dx.abs() + dy.abs()) * 0.7071 - r * 0.85,
            };
            // One-pixel anti-aliased edge.
            mask[y * w + x] = (0.5 - d).clamp(0.0, 1.0) as f32;
        }
    }
    mask
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders a `VideoSpec` to 8-bit frames.
pub fn render_video(id: &str, spec: &VideoSpec, num_textures: usize, frames: usize, h: usize, w: usize) -> Video {
    let dims = ClipDims::new(frames, h, w, 3);
    let mut data = Vec::with_capacity(dims.len());
    let render_frame = |t: usize, data: &mut Vec<u8>| {
        let bg = render_background(&spec.background, num_textures, t, h, w);
        let mask = sprite_mask(&spec.sprite, &spec.motion, t, h, w);
        for (i, &a) in mask.iter().enumerate() {
            for ch in 0..3 {
                let b = bg[i * 3 + ch];
                data.push(quantize(b + (spec.sprite.color[ch] - b) * a));
            }
        }
    };
    match spec.static_frame {
        Some(k) => {
            let mut one = Vec::with_capacity(dims.frame_len());
            render_frame(k.min(frames - 1), &mut one);
            for _ in 0..frames {
                data.extend_from_slice(&one);
            }
        }
        None => {
            for t in 0..frames {
                render_frame(t, &mut data);
            }
        }
    }
    Video {
        id: id.to_string(),
        dims,
        data,
    }
}

/// Picks the background texture for a record of a split.
fn choose_background(split: Split, class: usize, bias: f64, k: usize, rng: &mut Rng) -> Option<usize> {
    let other = |rng: &mut Rng| {
        let j = rng.random_range(0..k - 1);
        if j >= class { j + 1 } else { j }
    };
    match split {
        Split::TestActor => None,
        Split::TestAntibias => Some(other(rng)),
        Split::Train | Split::TestInbias | Split::TestStatic => {
            if rng.random_bool(bias) {
                Some(class)
            } else {
                Some(other(rng))
            }
        }
    }
}

/// Independent RNG streams per record so that sprite, trajectory and
/// background choices never influence one another.
pub fn video_spec(config: &GeneratorConfig, split: Split, class: usize, video_seed: u64) -> VideoSpec {
    let bias = config.class_bias()[class];
    let mut bg_rng = rng_for(video_seed, "background");
    let texture = choose_background(split, class, bias, config.num_classes, &mut bg_rng);
    let pan = if texture.is_some() { config.camera_pan } else { 0.0 };
    let background = sample_background(texture, pan, &mut bg_rng);
    let sprite = sample_sprite(&mut rng_for(video_seed, "sprite"));
    let motion = sample_motion(class, config.frames, &mut rng_for(video_seed, "motion"));
    let static_frame = (split == Split::TestStatic).then(|| rng_for(video_seed, "static").random_range(0..config.frames));
    VideoSpec {
        class_label: class,
        sprite,
        motion,
        background,
        static_frame,
    }
}

fn planned_records(config: &GeneratorConfig) -> Vec<(VideoRecord, u64)> {
    let mut out = Vec::new();
    let mut index = 0u64;
    for split in Split::ALL {
        let per_class = if split == Split::Train { config.videos_per_class } else { config.test_videos_per_class };
        for class in 0..config.num_classes {
            for i in 0..per_class {
                let id = format!("{}-c{class}-{i:04}", split.name());
                let seed = derive_seed(config.seed ^ index, "video");
                index += 1;
                out.push((
                    VideoRecord {
                        path: format!("videos/{id}.bevd"),
                        id,
                        class_label: class,
                        background_id: -1,
                        split,
                    },
                    seed,
                ));
            }
        }
    }
    out
}

/// Renders one planned record; fills in its background id.
fn render_record(config: &GeneratorConfig, record: &mut VideoRecord, seed: u64) -> Video {
    let spec = video_spec(config, record.split, record.class_label, seed);
    record.background_id = spec.background.texture.map_or(-1, |b| b as i32);
    render_video(&record.id, &spec, config.num_classes, config.frames, config.height, config.width)
}

/// Generates every split in memory, without touching the filesystem.
pub fn generate_in_memory(config: &GeneratorConfig) -> Result<(SyntheticDatasetManifest, Vec<Video>)> {
    config.validate()?;
    let mut planned = planned_records(config);
    let work = |(rec, seed): &mut (VideoRecord, u64)| render_record(config, rec, *seed);
    #[cfg(feature = "parallel")]
    let videos: Vec<Video> = {
        use rayon::prelude::*;
        planned.par_iter_mut().map(work).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let videos: Vec<Video> = planned.iter_mut().map(work).collect();
    let manifest = SyntheticDatasetManifest {
        version: MANIFEST_VERSION,
        num_classes: config.num_classes,
        bias_rho: config.bias_rho,
        class_bias: config.class_bias(),
        frames_per_video: config.frames,
        frame_size: (config.height, config.width),
        channels: 3,
        seed: config.seed,
        generator: config.clone(),
        records: planned.into_iter().map(|(r, _)| r).collect(),
        root: PathBuf::new(),
    };
    Ok((manifest, videos))
}

/// Generates the dataset under `out_dir` and writes its manifest.
pub fn generate_dataset(config: &GeneratorConfig, out_dir: impl AsRef<Path>) -> Result<SyntheticDatasetManifest> {
    let out_dir = out_dir.as_ref();
    config.validate()?;
    let video_dir = out_dir.join("videos");
    fs::create_dir_all(&video_dir).map_err(|e| Error::io(&video_dir, e))?;
    let mut planned = planned_records(config);
    let work = |(rec, seed): &mut (VideoRecord, u64)| -> Result<()> {
        let video = render_record(config, rec, *seed);
        write_bevd(&out_dir.join(&rec.path), &video)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        planned.par_iter_mut().try_for_each(work)?;
    }
    #[cfg(not(feature = "parallel"))]
    planned.iter_mut().try_for_each(work)?;
    let manifest = SyntheticDatasetManifest {
        version: MANIFEST_VERSION,
        num_classes: config.num_classes,
        bias_rho: config.bias_rho,
        class_bias: config.class_bias(),
        frames_per_video: config.frames,
        frame_size: (config.height, config.width),
        channels: 3,
        seed: config.seed,
        generator: config.clone(),
        records: planned.into_iter().map(|(r, _)| r).collect(),
        root: out_dir.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}
