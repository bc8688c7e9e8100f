use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::{FeatureMap, Params};
use crate::video::VideoClip;

/// Channel-mean activation map, resized to the clip and scaled to `[0,1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
    /// The source map was constant; `data` is all 0.5.
    pub degenerate: bool,
}

impl SaliencyMap {
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn argmax(&self) -> (usize, usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        let hw = self.h * self.w;
        (best / hw, (best % hw) / self.w, best % self.w)
    }
}

/// Half-pixel-centred linear sampling positions: for each output index,
/// the two source indices and the weight of the second.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Trilinear resize of a `t×h×w` volume.
pub fn trilinear_resize(src: &[f64], (t, h, w): (usize, usize, usize), (ot, oh, ow): (usize, usize, usize)) -> Vec<f64> {
    let (tt, th, tw) = (axis_taps(t, ot), axis_taps(h, oh), axis_taps(w, ow));
    let at = |a: usize, b: usize, c: usize| src[(a * h + b) * w + c];
    let mut out = Vec::with_capacity(ot * oh * ow);
    for &(t0, t1, ft) in &tt {
        for &(y0, y1, fy) in &th {
            for &(x0, x1, fx) in &tw {
                let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f;
                let plane = |tz| lerp(lerp(at(tz, y0, x0), at(tz, y0, x1), fx), lerp(at(tz, y1, x0), at(tz, y1, x1), fx), fy);
                out.push(lerp(plane(t0), plane(t1), ft));
            }
        }
    }
    out
}

pub fn saliency_from_features(f: &FeatureMap<f32>, out: (usize, usize, usize)) -> SaliencyMap {
    let e = f.extent;
    let mean: Vec<f64> = f.channel_mean().into_iter().map(f64::from).collect();
    let resized = trilinear_resize(&mean, (e.t, e.h, e.w), out);
    let lo = resized.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = resized.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = !(hi - lo > 1e-12 * hi.abs().max(1.0));
    let data = if degenerate {
        log::warn!("constant feature map; saliency set to 0.5");
        vec![0.5; resized.len()]
    } else {
        resized.iter().map(|v| ((v - lo) / (hi - lo)) as f32).collect()
    };
    SaliencyMap { t: out.0, h: out.1, w: out.2, data, degenerate }
}

pub fn saliency_map(encoder: &Encoder, params: &Params<f32>, clip: &VideoClip) -> Result<SaliencyMap> {
    let d = clip.dims();
    let f = encoder.encode(params, &clip.to_channels_first::<f32>())?;
    Ok(saliency_from_features(&f, (d.t, d.h, d.w)))
}

/// Indices of the `ceil(fraction·n)` largest values, ties to the lower index.
pub fn top_fraction_mask(values: &[f32], fraction: f64) -> Vec<bool> {
    let n = values.len();
    let keep = ((fraction * n as f64).ceil() as usize).clamp(usize::from(n > 0), n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &idx[..keep] {
        mask[i] = true;
    }
    mask
}

/// IoU of the top-`fraction` regions of two equally shaped maps.
pub fn top_fraction_iou(a: &SaliencyMap, b: &SaliencyMap, fraction: f64) -> Result<f64> {
    if a.data.len() != b.data.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.t, a.h, a.w],
            actual: vec![b.t, b.h, b.w],
        });
    }
    let (ma, mb) = (top_fraction_mask(&a.data, fraction), top_fraction_mask(&b.data, fraction));
    let inter = ma.iter().zip(&mb).filter(|(x, y)| **x && **y).count();
    let union = ma.iter().zip(&mb).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Blue → cyan → yellow → red ramp.
fn heat(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0) * 3.0;
    match v {
        v if v < 1.0 => [0.0, v, 1.0],
        v if v < 2.0 => [v - 1.0, 1.0, 2.0 - v],
        v => [1.0, 3.0 - v, 0.0],
    }
}

/// Writes one PNG per frame: the clip blended half-and-half with the heat
/// map. Returns the written paths in frame order.
pub fn write_saliency_pngs(dir: &Path, prefix: &str, clip: &VideoClip, map: &SaliencyMap) -> Result<Vec<PathBuf>> {
    let d = clip.dims();
    if (d.t, d.h, d.w) != (map.t, map.h, map.w) {
        return Err(Error::ShapeMismatch {
            expected: vec![d.t, d.h, d.w],
            actual: vec![map.t, map.h, map.w],
        });
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(d.t);
    for t in 0..d.t {
        let frame = clip.frames.frame(t);
        let sal = map.frame(t);
        let mut rgb = Vec::with_capacity(d.h * d.w * 3);
        for (p, &s) in sal.iter().enumerate() {
            let hc = heat(s);
            for ch in 0..3 {
                let src = frame[p * d.c + ch.min(d.c - 1)];
                rgb.push(((0.5 * src + 0.5 * hc[ch]).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        let path = dir.join(format!("{prefix}_{t:03}.png"));
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), d.w as u32, d.h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let to_io = |e: png::EncodingError| Error::io(&path, std::io::Error::other(e));
        enc.write_header().map_err(to_io)?.write_image_data(&rgb).map_err(to_io)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Extent;

    fn fmap(t: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> FeatureMap<f32> {
        let mut data = Vec::new();
        for _c in 0..2 {
            for a in 0..t {
                for b in 0..h {
                    for c in 0..w {
                        data.push(f(a, b, c));
                    }
                }
            }
        }
        FeatureMap::new(2, Extent { t, h, w }, data).unwrap()
    }

    #[test]
    fn shape_and_range() {
        let s = saliency_from_features(&fmap(2, 3, 3, |a, b, c| (a + b * c) as f32), (8, 24, 24));
        assert_eq!(s.data.len(), 8 * 24 * 24);
        assert!(s.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(!s.degenerate);
    }

    #[test]
    fn constant_map_is_degenerate() {
        let s = saliency_from_features(&fmap(2, 3, 3, |_, _, _| 1.5), (4, 6, 6));
        assert!(s.degenerate);
        assert!(s.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn peak_maps_to_upscaled_cell() {
        let (t, h, w) = (4, 5, 6);
        let (s_t, s_h, s_w) = (2, 4, 4);
        for &(pt, ph, pw) in &[(0, 0, 0), (1, 2, 3), (3, 4, 5), (2, 1, 4)] {
            let f = fmap(t, h, w, |a, b, c| f32::from(u8::from((a, b, c) == (pt, ph, pw))));
            let s = saliency_from_features(&f, (t * s_t, h * s_h, w * s_w));
            let (at, ah, aw) = s.argmax();
            assert_eq!((at / s_t, ah / s_h, aw / s_w), (pt, ph, pw));
        }
    }

    #[test]
    fn iou_of_identical_maps_is_one() {
        let s = saliency_from_features(&fmap(2, 3, 3, |a, b, c| (a * 9 + b * 3 + c) as f32), (4, 6, 6));
        assert_eq!(top_fraction_iou(&s, &s, 0.1).unwrap(), 1.0);
    }
}
