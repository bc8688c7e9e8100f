//! Video tensors, clip sampling, spatial cropping and the temporally
//! consistent basic augmentation set.
//!
//! Pixels are `f32` in `[0, 1]`, laid out `T×H×W×C` row-major. Stored videos
//! keep their 8-bit samples and are converted (divided by 255) on extraction.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClipDims {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl ClipDims {
    pub fn new(t: usize, h: usize, w: usize, c: usize) -> Self {
        Self { t, h, w, c }
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn len(&self) -> usize {
        self.t * self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_vec(&self) -> Vec<usize> {
        vec![self.t, self.h, self.w, self.c]
    }
}

/// A dense `T×H×W×C` block of real values.
#[derive(Clone, Debug, PartialEq)]
pub struct Frames {
    pub dims: ClipDims,
    pub data: Vec<f32>,
}

impl Frames {
    pub fn new(dims: ClipDims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![dims.len()],
                actual: vec![data.len()],
            });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: ClipDims, value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.dims.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.dims.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, ch: usize) -> usize {
        ((t * self.dims.h + y) * self.dims.w + x) * self.dims.c + ch
    }

    pub fn max_abs_diff(&self, other: &Frames) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// A fixed-length clip cut out of a video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Frames,
    pub video_id: String,
    pub start_index: usize,
    pub stride: usize,
}

impl VideoClip {
    /// Builds a clip, checking the `[0,1]` range and `T ≥ 2`.
    pub fn new(frames: Frames, video_id: impl Into<String>, start_index: usize, stride: usize) -> Result<Self> {
        let clip = Self {
            frames,
            video_id: video_id.into(),
            start_index,
            stride: stride.max(1),
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.dims.t < 2 {
            return Err(Error::InvalidClip(format!(
                "clip needs at least 2 frames, has {}",
                self.frames.dims.t
            )));
        }
        if let Some(v) = self.frames.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidClip(format!("pixel value {v} outside [0,1]")));
        }
        Ok(())
    }

    pub fn dims(&self) -> ClipDims {
        self.frames.dims
    }

    /// Same metadata, new pixels.
    pub fn with_frames(&self, frames: Frames) -> Self {
        Self {
            frames,
            video_id: self.video_id.clone(),
            start_index: self.start_index,
            stride: self.stride,
        }
    }

    /// Network input layout `C×T×H×W`.
    pub fn to_channels_first<T: num_traits::FromPrimitive>(&self) -> Vec<T> {
        let d = self.frames.dims;
        let plane = d.t * d.h * d.w;
        let mut out = Vec::with_capacity(d.len());
        for ch in 0..d.c {
            for i in 0..plane {
                out.push(T::from_f32(self.frames.data[i * d.c + ch]).expect("finite pixel"));
            }
        }
        out
    }
}

/// A whole stored video, 8-bit samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub dims: ClipDims,
    pub data: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub h: usize,
    pub w: usize,
}

impl Video {
    pub fn num_frames(&self) -> usize {
        self.dims.t
    }

    /// Number of legal start indices for a `length × stride` window.
    pub fn valid_starts(&self, length: usize, stride: usize) -> Result<usize> {
        let required = length * stride;
        if self.dims.t < required || length == 0 {
            return Err(Error::VideoTooShort {
                required,
                actual: self.dims.t,
            });
        }
        Ok(self.dims.t - required + 1)
    }

    /// Deterministic extraction of `length` frames starting at `start`,
    /// optionally cropped.
    pub fn extract(&self, start: usize, length: usize, stride: usize, crop: Option<CropWindow>) -> Result<VideoClip> {
        let stride = stride.max(1);
        let last = start + (length.saturating_sub(1)) * stride;
        if length == 0 || last >= self.dims.t {
            return Err(Error::VideoTooShort {
                required: last + 1,
                actual: self.dims.t,
            });
        }
        let crop = crop.unwrap_or(CropWindow {
            top: 0,
            left: 0,
            h: self.dims.h,
            w: self.dims.w,
        });
        check_crop(self.dims, crop)?;
        let c = self.dims.c;
        let dims = ClipDims::new(length, crop.h, crop.w, c);
        let mut data = Vec::with_capacity(dims.len());
        for i in 0..length {
            let t = start + i * stride;
            for y in crop.top..crop.top + crop.h {
                let row = ((t * self.dims.h + y) * self.dims.w + crop.left) * c;
                data.extend(self.data[row..row + crop.w * c].iter().map(|&b| f32::from(b) / 255.0));
            }
        }
        VideoClip::new(Frames { dims, data }, self.id.clone(), start, stride)
    }

    /// The whole video as a clip at stride 1.
    pub fn to_clip(&self) -> Result<VideoClip> {
        self.extract(0, self.dims.t, 1, None)
    }
}

fn check_crop(dims: ClipDims, crop: CropWindow) -> Result<()> {
    if crop.h == 0 || crop.w == 0 || crop.top + crop.h > dims.h || crop.left + crop.w > dims.w {
        return Err(Error::CropTooLarge {
            crop_h: crop.h,
            crop_w: crop.w,
            height: dims.h,
            width: dims.w,
        });
    }
    Ok(())
}

/// Start index drawn uniformly over all legal windows.
pub fn sample_start(video: &Video, length: usize, stride: usize, rng: &mut Rng) -> Result<usize> {
    let n = video.valid_starts(length, stride.max(1))?;
    Ok(rng.random_range(0..n))
}

/// Samples `length` frames spaced by `stride`, start uniform over legal starts.
pub fn sample_clip(video: &Video, length: usize, stride: usize, rng: &mut Rng) -> Result<VideoClip> {
    let start = sample_start(video, length, stride, rng)?;
    video.extract(start, length, stride, None)
}

pub fn random_crop_window(height: usize, width: usize, out_h: usize, out_w: usize, rng: &mut Rng) -> Result<CropWindow> {
    let window = CropWindow {
        top: 0,
        left: 0,
        h: out_h,
        w: out_w,
    };
    check_crop(ClipDims::new(1, height, width, 1), window)?;
    Ok(CropWindow {
        top: rng.random_range(0..=height - out_h),
        left: rng.random_range(0..=width - out_w),
        ..window
    })
}

/// Crops the same window out of every frame.
pub fn crop_clip(clip: &VideoClip, window: CropWindow) -> Result<VideoClip> {
    let d = clip.dims();
    check_crop(d, window)?;
    let out = ClipDims::new(d.t, window.h, window.w, d.c);
    let mut data = Vec::with_capacity(out.len());
    for t in 0..d.t {
        for y in window.top..window.top + window.h {
            let start = clip.frames.index(t, y, window.left, 0);
            data.extend_from_slice(&clip.frames.data[start..start + window.w * d.c]);
        }
    }
    Ok(clip.with_frames(Frames { dims: out, data }))
}

pub fn random_spatial_crop(clip: &VideoClip, out_h: usize, out_w: usize, rng: &mut Rng) -> Result<VideoClip> {
    let d = clip.dims();
    let window = random_crop_window(d.h, d.w, out_h, out_w, rng)?;
    crop_clip(clip, window)
}

/// Magnitudes of the basic augmentation set. Each field is the half-width
/// of a symmetric uniform draw; zero disables that component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSet {
    pub rotation_max_degrees: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub rotation_enabled: bool,
    pub color_enabled: bool,
}

impl Default for AugmentationSet {
    fn default() -> Self {
        Self {
            rotation_max_degrees: 10.0,
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            rotation_enabled: true,
            color_enabled: true,
        }
    }
}

impl AugmentationSet {
    pub fn identity() -> Self {
        Self {
            rotation_max_degrees: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            rotation_enabled: false,
            color_enabled: false,
        }
    }

    /// One parameter draw; the caller applies it to every frame of a clip.
    pub fn sample(&self, rng: &mut Rng) -> AugParams {
        let mut sym = |m: f32| if m > 0.0 { rng.random_range(-m..m) } else { 0.0 };
        let angle_deg = if self.rotation_enabled { sym(self.rotation_max_degrees) } else { 0.0 };
        let (brightness, contrast, saturation) = if self.color_enabled {
            (sym(self.brightness), sym(self.contrast), sym(self.saturation))
        } else {
            (0.0, 0.0, 0.0)
        };
        AugParams {
            angle_deg,
            brightness,
            contrast: 1.0 + contrast,
            saturation: 1.0 + saturation,
        }
    }
}

/// A concrete draw from [`AugmentationSet`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugParams {
    pub angle_deg: f32,
    /// Additive shift.
    pub brightness: f32,
    /// Multiplicative factor around mid-gray.
    pub contrast: f32,
    /// Multiplicative factor around per-pixel luma.
    pub saturation: f32,
}

impl AugParams {
    pub const IDENTITY: AugParams = AugParams {
        angle_deg: 0.0,
        brightness: 0.0,
        contrast: 1.0,
        saturation: 1.0,
    };

    /// Transforms one `H×W×C` frame.
    pub fn apply_frame(&self, frame: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
        let mut out = if self.angle_deg != 0.0 {
            rotate_frame(frame, h, w, c, self.angle_deg)
        } else {
            frame.to_vec()
        };
        if self.brightness != 0.0 {
            out.iter_mut().for_each(|v| *v += self.brightness);
        }
        if self.contrast != 1.0 {
            out.iter_mut().for_each(|v| *v = (*v - 0.5) * self.contrast + 0.5);
        }
        if self.saturation != 1.0 && c == 3 {
            for px in out.chunks_exact_mut(3) {
                let luma = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
                px.iter_mut().for_each(|v| *v = luma + self.saturation * (*v - luma));
            }
        }
        out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    pub fn apply(&self, clip: &VideoClip) -> VideoClip {
        let d = clip.dims();
        let mut data = Vec::with_capacity(d.len());
        for t in 0..d.t {
            data.extend(self.apply_frame(clip.frames.frame(t), d.h, d.w, d.c));
        }
        clip.with_frames(Frames { dims: d, data })
    }
}

/// Bilinear rotation about the frame centre; samples falling outside the
/// frame are clamped to the nearest edge pixel.
fn rotate_frame(frame: &[f32], h: usize, w: usize, c: usize, angle_deg: f32) -> Vec<f32> {
    let (s, co) = angle_deg.to_radians().sin_cos();
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let dy = y as f32 - cy;
            let dx = x as f32 - cx;
            // inverse rotation of the output coordinate
            let sx = (co * dx + s * dy + cx).clamp(0.0, (w - 1) as f32);
            let sy = (-s * dx + co * dy + cy).clamp(0.0, (h - 1) as f32);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f32;
            let fy = sy - y0 as f32;
            for ch in 0..c {
                let p = |yy: usize, xx: usize| frame[(yy * w + xx) * c + ch];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out[(y * w + x) * c + ch] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Draws one parameter set and applies it to every frame.
pub fn apply_basic_augmentation(clip: &VideoClip, aug: &AugmentationSet, rng: &mut Rng) -> (VideoClip, AugParams) {
    let params = aug.sample(rng);
    (params.apply(clip), params)
}

/// `out[t] = frames[t+1] − frames[t]`.
pub fn temporal_difference(clip: &VideoClip) -> Result<Frames> {
    frames_difference(&clip.frames)
}

pub fn frames_difference(frames: &Frames) -> Result<Frames> {
    let d = frames.dims;
    if d.t < 2 {
        return Err(Error::InvalidClip(format!(
            "temporal difference needs at least 2 frames, has {}",
            d.t
        )));
    }
    let n = d.frame_len();
    let data = frames.data[n..]
        .iter()
        .zip(&frames.data[..frames.data.len() - n])
        .map(|(next, cur)| next - cur)
        .collect();
    Ok(Frames {
        dims: ClipDims::new(d.t - 1, d.h, d.w, d.c),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn ramp_video(t: usize, h: usize, w: usize) -> Video {
        let dims = ClipDims::new(t, h, w, 3);
        let data = (0..dims.len()).map(|i| (i % 256) as u8).collect();
        Video {
            id: "v".into(),
            dims,
            data,
        }
    }

    fn frame_index_video(t: usize) -> Video {
        let dims = ClipDims::new(t, 2, 2, 1);
        let data = (0..t).flat_map(|i| std::iter::repeat_n(i as u8, 4)).collect();
        Video {
            id: "idx".into(),
            dims,
            data,
        }
    }

    fn clip_of(values: &[f32]) -> VideoClip {
        let dims = ClipDims::new(values.len(), 1, 1, 1);
        VideoClip::new(Frames::new(dims, values.to_vec()).unwrap(), "p", 0, 1).unwrap()
    }

    #[test]
    fn single_legal_window() {
        let v = frame_index_video(64);
        let mut rng = rng_from_seed(3);
        let clip = sample_clip(&v, 16, 4, &mut rng).unwrap();
        assert_eq!(clip.start_index, 0);
        let got: Vec<usize> = (0..16).map(|t| (clip.frames.frame(t)[0] * 255.0).round() as usize).collect();
        let want: Vec<usize> = (0..16).map(|i| i * 4).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn too_short_reports_required_and_actual() {
        let v = frame_index_video(16);
        let err = sample_clip(&v, 16, 4, &mut rng_from_seed(0)).unwrap_err();
        match err {
            Error::VideoTooShort { required, actual } => {
                assert_eq!((required, actual), (64, 16));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sample_clip_is_pure_in_seed() {
        let v = ramp_video(40, 4, 4);
        let a = sample_clip(&v, 8, 2, &mut rng_from_seed(9)).unwrap();
        let b = sample_clip(&v, 8, 2, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_size_crop_is_identity() {
        let clip = ramp_video(4, 6, 5).to_clip().unwrap();
        let out = random_spatial_crop(&clip, 6, 5, &mut rng_from_seed(1)).unwrap();
        assert_eq!(out, clip);
    }

    #[test]
    fn crop_larger_than_frame_fails() {
        let clip = ramp_video(4, 6, 5).to_clip().unwrap();
        assert!(matches!(
            random_spatial_crop(&clip, 7, 5, &mut rng_from_seed(1)),
            Err(Error::CropTooLarge { .. })
        ));
    }

    #[test]
    fn crop_offset_is_shared_by_all_frames() {
        // Each pixel encodes its (y, x) position, identical across frames, so
        // the crop offset of every frame can be read back from its corner.
        let dims = ClipDims::new(6, 64, 64, 1);
        let mut data = Vec::new();
        for _ in 0..6 {
            for y in 0..64 {
                for x in 0..64 {
                    data.push((y * 64 + x) as f32 / 4095.0);
                }
            }
        }
        let clip = VideoClip::new(Frames::new(dims, data).unwrap(), "pos", 0, 1).unwrap();
        for seed in 0..20 {
            let out = random_spatial_crop(&clip, 32, 32, &mut rng_from_seed(seed)).unwrap();
            let offsets: Vec<usize> = (0..6)
                .map(|t| (out.frames.frame(t)[0] * 4095.0).round() as usize)
                .collect();
            assert!(offsets.windows(2).all(|p| p[0] == p[1]), "{offsets:?}");
        }
    }

    #[test]
    fn crop_mean_within_source_range() {
        let v = ramp_video(3, 20, 20);
        let clip = v.to_clip().unwrap();
        let lo = clip.frames.data.iter().copied().fold(f32::MAX, f32::min);
        let hi = clip.frames.data.iter().copied().fold(f32::MIN, f32::max);
        for seed in 0..50 {
            let out = random_spatial_crop(&clip, 7, 9, &mut rng_from_seed(seed)).unwrap();
            let mean = out.frames.data.iter().sum::<f32>() / out.frames.data.len() as f32;
            assert!(mean >= lo && mean <= hi);
        }
    }

    #[test]
    fn zero_magnitude_augmentation_is_identity() {
        let clip = ramp_video(4, 8, 8).to_clip().unwrap();
        let aug = AugmentationSet {
            rotation_max_degrees: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            rotation_enabled: true,
            color_enabled: true,
        };
        let (out, _) = apply_basic_augmentation(&clip, &aug, &mut rng_from_seed(5));
        assert_eq!(out, clip);
    }

    #[test]
    fn rotation_draw_is_bounded() {
        let aug = AugmentationSet::default();
        let mut rng = rng_from_seed(11);
        for _ in 0..10_000 {
            assert!(aug.sample(&mut rng).angle_deg.abs() < 10.0);
        }
    }

    #[test]
    fn brightness_shift_on_constant_clip() {
        let dims = ClipDims::new(3, 4, 4, 3);
        let clip = VideoClip::new(Frames::filled(dims, 0.5), "c", 0, 1).unwrap();
        for delta in [0.1f32, -0.2, 0.7] {
            let p = AugParams {
                brightness: delta,
                ..AugParams::IDENTITY
            };
            let out = p.apply(&clip);
            let want = (0.5 + delta).clamp(0.0, 1.0);
            assert!(out.frames.data.iter().all(|&v| v == want));
        }
    }

    #[test]
    fn augmentation_is_temporally_consistent_and_in_range() {
        let v = ramp_video(5, 12, 12);
        let clip = v.to_clip().unwrap();
        let aug = AugmentationSet {
            brightness: 0.4,
            contrast: 0.5,
            saturation: 0.5,
            ..AugmentationSet::default()
        };
        for seed in 0..10 {
            let (out, params) = apply_basic_augmentation(&clip, &aug, &mut rng_from_seed(seed));
            for t in 0..5 {
                let per_frame = params.apply_frame(clip.frames.frame(t), 12, 12, 3);
                assert_eq!(out.frames.frame(t), &per_frame[..]);
            }
            assert!(out.frames.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rotation_of_constant_frame_is_constant() {
        let frame = vec![0.25f32; 9 * 9 * 3];
        let out = rotate_frame(&frame, 9, 9, 3, 7.5);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn temporal_difference_cases() {
        let d = temporal_difference(&clip_of(&[0.0, 0.25, 1.0])).unwrap();
        assert_eq!(d.data, vec![0.25, 0.75]);

        let still = temporal_difference(&clip_of(&[0.4, 0.4, 0.4, 0.4])).unwrap();
        assert!(still.data.iter().all(|&v| v == 0.0));

        let x = clip_of(&[0.1, 0.9, 0.3, 0.6]);
        let half = x.with_frames(Frames {
            dims: x.dims(),
            data: x.frames.data.iter().map(|v| v * 0.5).collect(),
        });
        let a = temporal_difference(&x).unwrap();
        let b = temporal_difference(&half).unwrap();
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u * 0.5 - v).abs() < 1e-7);
        }
    }

    #[test]
    fn single_frame_rejected() {
        let dims = ClipDims::new(1, 1, 1, 1);
        assert!(VideoClip::new(Frames::filled(dims, 0.0), "x", 0, 1).is_err());
        assert!(frames_difference(&Frames::filled(dims, 0.0)).is_err());
    }

    #[test]
    fn channels_first_layout() {
        let dims = ClipDims::new(2, 1, 2, 2);
        let frames = Frames::new(dims, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]).unwrap();
        let clip = VideoClip::new(frames, "x", 0, 1).unwrap();
        let cf: Vec<f32> = clip.to_channels_first();
        assert_eq!(cf, vec![0.0, 0.2, 0.4, 0.6, 0.1, 0.3, 0.5, 0.7]);
    }
}
