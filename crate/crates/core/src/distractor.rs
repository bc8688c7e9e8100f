//! Distracting-clip generation.
//!
//! The intra-video variant blends one static frame of the clip into every
//! frame, `x̂ⱼ = (1−λ)·xⱼ + λ·x_k`, with a single `λ ~ U[0, γ]` and a single
//! `k` per clip. Because the added term is constant in time, the temporal
//! difference of the output is exactly `(1−λ)` times that of the input. The
//! other variants exist for ablation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::video::{CropWindow, Frames, VideoClip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorVariant {
    IntraFrame,
    InterFrame,
    Gaussian,
    Mixup,
    Cutmix,
    None,
}

impl DistractorVariant {
    /// Ablation order used by reports.
    pub const ALL: [DistractorVariant; 6] = [
        DistractorVariant::None,
        DistractorVariant::Gaussian,
        DistractorVariant::Mixup,
        DistractorVariant::Cutmix,
        DistractorVariant::InterFrame,
        DistractorVariant::IntraFrame,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DistractorVariant::IntraFrame => "intra_frame",
            DistractorVariant::InterFrame => "inter_frame",
            DistractorVariant::Gaussian => "gaussian",
            DistractorVariant::Mixup => "mixup",
            DistractorVariant::Cutmix => "cutmix",
            DistractorVariant::None => "none",
        }
    }

    pub fn needs_donor(&self) -> bool {
        matches!(self, DistractorVariant::InterFrame | DistractorVariant::Mixup)
    }
}

impl fmt::Display for DistractorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistractorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "intra_frame" | "intra" => DistractorVariant::IntraFrame,
            "inter_frame" | "inter" => DistractorVariant::InterFrame,
            "gaussian" => DistractorVariant::Gaussian,
            "mixup" => DistractorVariant::Mixup,
            "cutmix" => DistractorVariant::Cutmix,
            "none" => DistractorVariant::None,
            other => return Err(Error::InvalidSpec(format!("unknown distractor variant `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorSpec {
    pub variant: DistractorVariant,
    /// Upper bound of the blend weight draw.
    pub gamma: f32,
    pub gaussian_sigma: f32,
    /// Box area as a fraction of the frame, drawn uniformly in `[lo, hi]`.
    pub cutmix_area_range: (f32, f32),
}

impl Default for DistractorSpec {
    fn default() -> Self {
        Self {
            variant: DistractorVariant::IntraFrame,
            gamma: 0.3,
            gaussian_sigma: 0.1,
            cutmix_area_range: (0.25, 0.5),
        }
    }
}

impl DistractorSpec {
    pub fn new(variant: DistractorVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidSpec(format!("gamma {} outside [0,1]", self.gamma)));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "gaussian_sigma must be positive, got {}",
                self.gaussian_sigma
            )));
        }
        let (lo, hi) = self.cutmix_area_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidSpec(format!("cutmix area range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1")));
        }
        Ok(())
    }
}

/// Everything drawn for one distractor, enough to regenerate it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistractorTrace {
    pub variant: Option<DistractorVariant>,
    pub video_id: String,
    pub lambda: Option<f32>,
    pub frame_index: Option<usize>,
    pub donor_id: Option<String>,
    pub region: Option<CropWindow>,
    pub noise_seed: Option<u64>,
}

impl DistractorTrace {
    /// One `key=value` line, fields in fixed order; `-` marks an absent field.
    pub fn to_log_line(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".to_string());
        format!(
            "variant={} video={} lambda={} k={} donor={} box={} noise_seed={}",
            self.variant.map(|v| v.name()).unwrap_or("-"),
            self.video_id,
            opt(self.lambda.map(|l| format!("{l:?}"))),
            opt(self.frame_index.map(|k| k.to_string())),
            opt(self.donor_id.clone()),
            opt(self.region.map(|b| format!("{},{},{},{}", b.top, b.left, b.h, b.w))),
            opt(self.noise_seed.map(|s| s.to_string())),
        )
    }

    pub fn from_log_line(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::InvalidSpec(format!("bad trace line ({what}): {line}"));
        let mut trace = DistractorTrace::default();
        for field in line.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| bad("missing `=`"))?;
            if value == "-" {
                continue;
            }
            match key {
                "variant" => trace.variant = Some(value.parse()?),
                "video" => trace.video_id = value.to_string(),
                "lambda" => trace.lambda = Some(value.parse().map_err(|_| bad("lambda"))?),
                "k" => trace.frame_index = Some(value.parse().map_err(|_| bad("k"))?),
                "donor" => trace.donor_id = Some(value.to_string()),
                "box" => {
                    let v: Vec<usize> = value
                        .split(',')
                        .map(|p| p.parse().map_err(|_| bad("box")))
                        .collect::<Result<_>>()?;
                    if v.len() != 4 {
                        return Err(bad("box"));
                    }
                    trace.region = Some(CropWindow {
                        top: v[0],
                        left: v[1],
                        h: v[2],
                        w: v[3],
                    });
                }
                "noise_seed" => trace.noise_seed = Some(value.parse().map_err(|_| bad("noise_seed"))?),
                _ => return Err(bad("unknown key")),
            }
        }
        Ok(trace)
    }
}

/// Concrete random choices for one distractor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistractorDraw {
    pub lambda: f32,
    pub frame_index: usize,
    pub region: Option<CropWindow>,
    pub noise_seed: u64,
}

fn check_donor<'a>(variant: DistractorVariant, clip: &VideoClip, donor: Option<&'a VideoClip>, same_length: bool) -> Result<&'a VideoClip> {
    let donor = donor.ok_or_else(|| Error::MissingDonor(variant.name().to_string()))?;
    let (a, b) = (clip.dims(), donor.dims());
    let ok = a.h == b.h && a.w == b.w && a.c == b.c && (!same_length || a.t == b.t);
    if !ok {
        return Err(Error::ShapeMismatch {
            expected: a.as_vec(),
            actual: b.as_vec(),
        });
    }
    Ok(donor)
}

/// Draws the random quantities a variant needs.
pub fn draw(spec: &DistractorSpec, clip: &VideoClip, donor: Option<&VideoClip>, rng: &mut Rng) -> DistractorDraw {
    let d = clip.dims();
    let lambda = if spec.gamma > 0.0 { rng.random_range(0.0..=spec.gamma) } else { 0.0 };
    let source_frames = match (spec.variant, donor) {
        (DistractorVariant::InterFrame | DistractorVariant::Cutmix, Some(donor)) => donor.dims().t,
        _ => d.t,
    };
    let frame_index = rng.random_range(0..source_frames.max(1));
    let region = (spec.variant == DistractorVariant::Cutmix).then(|| {
        let (lo, hi) = spec.cutmix_area_range;
        let area = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let bh = ((area.sqrt() * d.h as f32).round() as usize).clamp(1, d.h);
        let bw = ((area * (d.h * d.w) as f32 / bh as f32).round() as usize).clamp(1, d.w);
        CropWindow {
            top: rng.random_range(0..=d.h - bh),
            left: rng.random_range(0..=d.w - bw),
            h: bh,
            w: bw,
        }
    });
    let noise_seed = rng.random();
    DistractorDraw {
        lambda,
        frame_index,
        region,
        noise_seed,
    }
}

/// Blends `static_frame` into every frame with weight `lambda`.
fn blend_static(frames: &Frames, static_frame: &[f32], lambda: f32) -> Frames {
    let keep = 1.0 - lambda;
    let mut out = frames.clone();
    for t in 0..frames.dims.t {
        for (o, s) in out.frame_mut(t).iter_mut().zip(static_frame) {
            *o = keep * *o + lambda * s;
        }
    }
    out
}

/// Applies a variant with fixed draws. Deterministic.
pub fn apply_distractor(
    clip: &VideoClip,
    spec: &DistractorSpec,
    donor: Option<&VideoClip>,
    draw: &DistractorDraw,
) -> Result<(VideoClip, DistractorTrace)> {
    spec.validate()?;
    let d = clip.dims();
    let mut trace = DistractorTrace {
        variant: Some(spec.variant),
        video_id: clip.video_id.clone(),
        ..DistractorTrace::default()
    };
    let frames = match spec.variant {
        DistractorVariant::None => clip.frames.clone(),
        DistractorVariant::IntraFrame => {
            let k = draw.frame_index.min(d.t - 1);
            trace.lambda = Some(draw.lambda);
            trace.frame_index = Some(k);
            let static_frame = clip.frames.frame(k).to_vec();
            blend_static(&clip.frames, &static_frame, draw.lambda)
        }
        DistractorVariant::InterFrame => {
            let donor = check_donor(spec.variant, clip, donor, false)?;
            let k = draw.frame_index.min(donor.dims().t - 1);
            trace.lambda = Some(draw.lambda);
            trace.frame_index = Some(k);
            trace.donor_id = Some(donor.video_id.clone());
            blend_static(&clip.frames, donor.frames.frame(k), draw.lambda)
        }
        DistractorVariant::Gaussian => {
            trace.noise_seed = Some(draw.noise_seed);
            let normal = Normal::new(0.0f32, spec.gaussian_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            let mut noise_rng = Rng::seed_from_u64(draw.noise_seed);
            let noise: Vec<f32> = (0..d.frame_len()).map(|_| normal.sample(&mut noise_rng)).collect();
            let mut out = clip.frames.clone();
            for t in 0..d.t {
                for (o, n) in out.frame_mut(t).iter_mut().zip(&noise) {
                    *o = (*o + n).clamp(0.0, 1.0);
                }
            }
            out
        }
        DistractorVariant::Mixup => {
            let donor = check_donor(spec.variant, clip, donor, true)?;
            trace.lambda = Some(draw.lambda);
            trace.donor_id = Some(donor.video_id.clone());
            let keep = 1.0 - draw.lambda;
            let data = clip
                .frames
                .data
                .iter()
                .zip(&donor.frames.data)
                .map(|(a, b)| keep * a + draw.lambda * b)
                .collect();
            Frames { dims: d, data }
        }
        DistractorVariant::Cutmix => {
            let source = match donor {
                Some(_) => check_donor(spec.variant, clip, donor, false)?,
                None => clip,
            };
            let k = draw.frame_index.min(source.dims().t - 1);
            let region = draw.region.ok_or_else(|| Error::InvalidSpec("cutmix draw without a region".into()))?;
            if region.top + region.h > d.h || region.left + region.w > d.w {
                return Err(Error::CropTooLarge {
                    crop_h: region.h,
                    crop_w: region.w,
                    height: d.h,
                    width: d.w,
                });
            }
            trace.frame_index = Some(k);
            trace.region = Some(region);
            trace.donor_id = donor.map(|v| v.video_id.clone());
            let patch_src = source.frames.frame(k);
            let mut out = clip.frames.clone();
            let row = region.w * d.c;
            for t in 0..d.t {
                let frame = out.frame_mut(t);
                for y in region.top..region.top + region.h {
                    let at = (y * d.w + region.left) * d.c;
                    frame[at..at + row].copy_from_slice(&patch_src[at..at + row]);
                }
            }
            out
        }
    };
    Ok((clip.with_frames(frames), trace))
}

/// Builds a distracting clip. The donor is required for the inter-frame and
/// mixup variants and ignored by the rest (cutmix takes its patch from the
/// donor when one is given, otherwise from the clip itself).
pub fn make_distractor(
    clip: &VideoClip,
    spec: &DistractorSpec,
    donor: Option<&VideoClip>,
    rng: &mut Rng,
) -> Result<(VideoClip, DistractorTrace)> {
    spec.validate()?;
    if spec.variant.needs_donor() {
        check_donor(spec.variant, clip, donor, spec.variant == DistractorVariant::Mixup)?;
    }
    let donor = if spec.variant == DistractorVariant::IntraFrame { None } else { donor };
    let d = draw(spec, clip, donor, rng);
    apply_distractor(clip, spec, donor, &d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::video::{frames_difference, ClipDims};

    fn clip(values: &[f32], id: &str) -> VideoClip {
        let dims = ClipDims::new(values.len(), 1, 1, 1);
        VideoClip::new(Frames::new(dims, values.to_vec()).unwrap(), id, 0, 1).unwrap()
    }

    fn random_clip(seed: u64, dims: ClipDims, id: &str) -> VideoClip {
        let mut rng = rng_from_seed(seed);
        let data = (0..dims.len()).map(|_| rng.random::<f32>()).collect();
        VideoClip::new(Frames::new(dims, data).unwrap(), id, 0, 1).unwrap()
    }

    fn forced(lambda: f32, k: usize) -> DistractorDraw {
        DistractorDraw {
            lambda,
            frame_index: k,
            region: None,
            noise_seed: 0,
        }
    }

    #[test]
    fn lambda_zero_is_identity() {
        let x = random_clip(1, ClipDims::new(6, 5, 5, 3), "a");
        let spec = DistractorSpec::default();
        let (out, _) = apply_distractor(&x, &spec, None, &forced(0.0, 3)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn two_frame_scalar_blend() {
        let x = clip(&[0.0, 1.0], "a");
        let (out, trace) = apply_distractor(&x, &DistractorSpec::default(), None, &forced(0.5, 1)).unwrap();
        assert_eq!(out.frames.data, vec![0.5, 1.0]);
        assert_eq!(trace.frame_index, Some(1));
    }

    #[test]
    fn intra_scales_temporal_difference() {
        let x = random_clip(2, ClipDims::new(8, 6, 6, 3), "a");
        let mut rng = rng_from_seed(4);
        for _ in 0..20 {
            let (out, trace) = make_distractor(&x, &DistractorSpec::default(), None, &mut rng).unwrap();
            let lambda = trace.lambda.unwrap();
            assert!((0.0..=0.3).contains(&lambda));
            let a = frames_difference(&x.frames).unwrap();
            let b = frames_difference(&out.frames).unwrap();
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!(((1.0 - lambda) * u - v).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn gaussian_preserves_difference_where_unclipped() {
        let dims = ClipDims::new(5, 4, 4, 3);
        let mut rng = rng_from_seed(8);
        // values kept away from the borders so that σ=0.01 noise never clips
        let data = (0..dims.len()).map(|_| rng.random_range(0.3f32..0.7)).collect();
        let x = VideoClip::new(Frames::new(dims, data).unwrap(), "g", 0, 1).unwrap();
        let spec = DistractorSpec {
            variant: DistractorVariant::Gaussian,
            gaussian_sigma: 0.01,
            ..DistractorSpec::default()
        };
        let (out, _) = make_distractor(&x, &spec, None, &mut rng).unwrap();
        let a = frames_difference(&x.frames).unwrap();
        let b = frames_difference(&out.frames).unwrap();
        // identical additive offset; only f32 rounding separates the two
        assert!(a.max_abs_diff(&b) < 1e-6);
        assert_ne!(out, x);
    }

    #[test]
    fn none_is_identity() {
        let x = random_clip(3, ClipDims::new(4, 3, 3, 3), "a");
        let (out, _) = make_distractor(&x, &DistractorSpec::new(DistractorVariant::None), None, &mut rng_from_seed(0)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn donor_required_and_shape_checked() {
        let x = random_clip(3, ClipDims::new(4, 3, 3, 3), "a");
        for v in [DistractorVariant::InterFrame, DistractorVariant::Mixup] {
            let err = make_distractor(&x, &DistractorSpec::new(v), None, &mut rng_from_seed(0)).unwrap_err();
            assert!(matches!(err, Error::MissingDonor(_)));
            let small = random_clip(4, ClipDims::new(4, 2, 3, 3), "b");
            let err = make_distractor(&x, &DistractorSpec::new(v), Some(&small), &mut rng_from_seed(0)).unwrap_err();
            assert!(matches!(err, Error::ShapeMismatch { .. }));
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = DistractorSpec::default();
        assert!(s.validate().is_ok());
        s.gamma = 1.5;
        assert!(s.validate().is_err());
        s = DistractorSpec {
            gaussian_sigma: 0.0,
            ..DistractorSpec::default()
        };
        assert!(s.validate().is_err());
        s = DistractorSpec {
            cutmix_area_range: (0.6, 0.4),
            ..DistractorSpec::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn cutmix_box_is_static_and_shared() {
        let dims = ClipDims::new(6, 16, 16, 3);
        let x = random_clip(5, dims, "a");
        let spec = DistractorSpec::new(DistractorVariant::Cutmix);
        let (out, trace) = make_distractor(&x, &spec, None, &mut rng_from_seed(2)).unwrap();
        let b = trace.region.unwrap();
        let area = (b.h * b.w) as f32 / 256.0;
        assert!((0.15..=0.6).contains(&area), "area {area}");
        let k = trace.frame_index.unwrap();
        for t in 0..6 {
            for y in b.top..b.top + b.h {
                for xx in b.left..b.left + b.w {
                    for ch in 0..3 {
                        let i = out.frames.index(t, y, xx, ch);
                        assert_eq!(out.frames.data[i], x.frames.data[x.frames.index(k, y, xx, ch)]);
                    }
                }
            }
        }
    }

    #[test]
    fn trace_log_round_trip() {
        let x = random_clip(5, ClipDims::new(6, 16, 16, 3), "vid_7");
        let donor = random_clip(6, ClipDims::new(6, 16, 16, 3), "vid_9");
        for v in DistractorVariant::ALL {
            let (_, trace) = make_distractor(&x, &DistractorSpec::new(v), Some(&donor), &mut rng_from_seed(1)).unwrap();
            let parsed = DistractorTrace::from_log_line(&trace.to_log_line()).unwrap();
            assert_eq!(parsed, trace);
        }
    }
}
