//! Browser bindings for the distractor explorer.
//!
//! One synthetic video and one donor are rendered from a seed; the page
//! picks a distractor variant and blend weight and asks for RGBA frames of
//! the clean clip, the distracted clip, or either clip's temporal
//! difference.

use bgerase::distractor::{apply_distractor, draw, DistractorDraw, DistractorSpec, DistractorVariant};
use bgerase::rng::{derive_seed, rng_for};
use bgerase::synthdata::{render_video, sample_background, video_spec, GeneratorConfig, Split, MOTION_NAMES, TEXTURE_NAMES};
use bgerase::video::{frames_difference, Frames, VideoClip};
use wasm_bindgen::prelude::*;

const FRAMES: usize = 16;
const SIZE: usize = 64;
/// Temporal differences are small; this gain makes them visible.
const TD_GAIN: f32 = 4.0;

type Res<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn render(seed: u64, class: usize, texture: Option<usize>, tag: &str) -> Res<VideoClip> {
    let cfg = GeneratorConfig {
        num_classes: MOTION_NAMES.len(),
        frames: FRAMES,
        height: SIZE,
        width: SIZE,
        seed,
        ..GeneratorConfig::default()
    };
    let mut spec = video_spec(&cfg, Split::TestInbias, class, derive_seed(seed, tag));
    spec.background = sample_background(texture, cfg.camera_pan, &mut rng_for(seed, "web/background"));
    render_video(tag, &spec, cfg.num_classes, FRAMES, SIZE, SIZE).to_clip().map_err(err)
}

#[wasm_bindgen]
pub fn motion_names() -> Vec<String> {
    MOTION_NAMES.iter().map(|s| s.to_string()).collect()
}

#[wasm_bindgen]
pub fn texture_names() -> Vec<String> {
    TEXTURE_NAMES.iter().map(|s| s.to_string()).collect()
}

#[wasm_bindgen]
pub fn variant_names() -> Vec<String> {
    DistractorVariant::ALL.iter().map(|v| v.name().to_string()).collect()
}

/// A draw that carries a cutmix box too, so switching variants never
/// needs a redraw.
fn full_draw(clip: &VideoClip, donor: &VideoClip, seed: u64) -> DistractorDraw {
    let spec = DistractorSpec::new(DistractorVariant::Cutmix);
    draw(&spec, clip, Some(donor), &mut rng_for(seed, "web/draw"))
}

/// Explorer state; plain Rust so it is testable off wasm.
pub struct Scene {
    clip: VideoClip,
    donor: VideoClip,
    spec: DistractorSpec,
    draw: DistractorDraw,
    distracted: VideoClip,
    td_clean: Frames,
    td_distracted: Frames,
}

impl Scene {
    /// `texture` < 0 renders the actor on a plain backdrop.
    pub fn new(seed: u64, class: usize, texture: i32) -> Res<Scene> {
        let k = MOTION_NAMES.len();
        if class >= k || texture >= k as i32 {
            return Err(err(format!("class and texture must be below {k}")));
        }
        let clip = render(seed, class, usize::try_from(texture).ok(), "web/clip")?;
        let donor = render(seed ^ 0x9e37, (class + 1) % k, Some((class + 3) % k), "web/donor")?;
        let spec = DistractorSpec::new(DistractorVariant::IntraFrame);
        let draw = full_draw(&clip, &donor, seed);
        let td_clean = frames_difference(&clip.frames).map_err(err)?;
        let mut e = Scene {
            distracted: clip.clone(),
            td_distracted: td_clean.clone(),
            clip,
            donor,
            spec,
            draw,
            td_clean,
        };
        e.refresh()?;
        Ok(e)
    }

    fn refresh(&mut self) -> Res<()> {
        let (out, _) = apply_distractor(&self.clip, &self.spec, Some(&self.donor), &self.draw).map_err(err)?;
        self.td_distracted = frames_difference(&out.frames).map_err(err)?;
        self.distracted = out;
        Ok(())
    }

    pub fn set_variant(&mut self, name: &str) -> Res<()> {
        self.spec.variant = name.parse().map_err(err)?;
        self.refresh()
    }

    /// Sets the blend weight directly, bypassing the `U[0, γ]` draw.
    pub fn set_lambda(&mut self, lambda: f32) -> Res<()> {
        self.draw.lambda = lambda.clamp(0.0, 1.0);
        self.refresh()
    }

    /// Index of the frame blended in by the intra/inter-frame variants.
    pub fn set_frame_index(&mut self, t: usize) -> Res<()> {
        self.draw.frame_index = t.min(FRAMES - 1);
        self.refresh()
    }

    /// New cutmix box and noise field; keeps λ and the frame index.
    pub fn redraw(&mut self, seed: u64) -> Res<()> {
        let d = full_draw(&self.clip, &self.donor, seed);
        self.draw.region = d.region;
        self.draw.noise_seed = d.noise_seed;
        self.refresh()
    }

    pub fn frames(&self) -> usize {
        FRAMES
    }

    pub fn size(&self) -> usize {
        SIZE
    }

    pub fn lambda(&self) -> f32 {
        self.draw.lambda
    }

    /// RGBA bytes of frame `t` of `view`: `clean`, `distracted`,
    /// `td_clean` or `td_distracted`. Difference views have one frame fewer.
    pub fn rgba(&self, view: &str, t: usize) -> Res<Vec<u8>> {
        let (frames, gain, signed) = match view {
            "clean" => (&self.clip.frames, 1.0, false),
            "distracted" => (&self.distracted.frames, 1.0, false),
            "td_clean" => (&self.td_clean, TD_GAIN, true),
            "td_distracted" => (&self.td_distracted, TD_GAIN, true),
            other => return Err(err(format!("unknown view {other:?}"))),
        };
        if t >= frames.dims.t {
            return Err(err(format!("frame {t} out of range for {view}")));
        }
        Ok(to_rgba(frames.frame(t), gain, signed))
    }

    /// Mean |temporal difference| of the distracted clip over that of the
    /// clean clip. Equals 1 − λ for the intra-frame variant.
    pub fn td_ratio(&self) -> f64 {
        let l1 = |f: &Frames| f.data.iter().map(|v| v.abs() as f64).sum::<f64>();
        let base = l1(&self.td_clean);
        if base == 0.0 {
            f64::NAN
        } else {
            l1(&self.td_distracted) / base
        }
    }
}

#[wasm_bindgen]
pub struct Explorer(Scene);

#[wasm_bindgen]
impl Explorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, class: usize, texture: i32) -> Result<Explorer, JsValue> {
        Ok(Explorer(Scene::new(seed, class, texture)?))
    }

    pub fn set_variant(&mut self, name: &str) -> Result<(), JsValue> {
        Ok(self.0.set_variant(name)?)
    }

    pub fn set_lambda(&mut self, lambda: f32) -> Result<(), JsValue> {
        Ok(self.0.set_lambda(lambda)?)
    }

    pub fn set_frame_index(&mut self, t: usize) -> Result<(), JsValue> {
        Ok(self.0.set_frame_index(t)?)
    }

    pub fn redraw(&mut self, seed: u64) -> Result<(), JsValue> {
        Ok(self.0.redraw(seed)?)
    }

    pub fn frames(&self) -> usize {
        self.0.frames()
    }

    pub fn size(&self) -> usize {
        self.0.size()
    }

    pub fn lambda(&self) -> f32 {
        self.0.lambda()
    }

    pub fn rgba(&self, view: &str, t: usize) -> Result<Vec<u8>, JsValue> {
        Ok(self.0.rgba(view, t)?)
    }

    pub fn td_ratio(&self) -> f64 {
        self.0.td_ratio()
    }
}

/// Signed values map 0 to mid-grey.
fn to_rgba(frame: &[f32], gain: f32, signed: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame.len() / 3 * 4);
    for px in frame.chunks_exact(3) {
        for &v in px {
            let v = if signed { 0.5 + 0.5 * gain * v } else { v };
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}
