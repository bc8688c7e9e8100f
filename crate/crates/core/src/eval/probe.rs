use serde::{Deserialize, Serialize};

use super::{stats, video_features, FeatureKind};
use crate::config::EvalConfig;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::Params;
use crate::train::ClipGeometry;
use crate::video::Video;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Uniformly spaced clips per training video.
    pub train_clips: usize,
    /// Uniformly spaced clips averaged per test video.
    pub num_clips: usize,
}

impl ProbeConfig {
    pub fn from_eval(e: &EvalConfig) -> Self {
        Self {
            epochs: e.probe_epochs,
            lr: e.probe_lr,
            weight_decay: e.probe_weight_decay,
            train_clips: e.train_clips,
            num_clips: e.num_clips,
        }
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self::from_eval(&EvalConfig::default())
    }
}

/// Per-split probe accuracy. `top1` equals the count-weighted mean of
/// `per_class_accuracy`; classes absent from the split report 0 with count 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub split: String,
    pub per_class_accuracy: Vec<f64>,
    pub per_class_count: Vec<usize>,
    pub top1: f64,
    pub num_clips_averaged: usize,
    /// Predicted class per test video, in input order.
    pub predictions: Vec<usize>,
}

/// Multinomial logistic regression on standardised features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub num_classes: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Row-major `classes × dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// First index of the maximum; NaN never wins.
pub fn argmax_f64(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl LinearProbe {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Full-batch gradient descent with heavy-ball momentum 0.9 from a zero
    /// start, so the fit is a deterministic function of the samples.
    pub fn fit(samples: &[(&[f32], usize)], num_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::InvalidClip("probe needs at least one training sample".into()));
        }
        let d = samples[0].0.len();
        if let Some((x, _)) = samples.iter().find(|(x, _)| x.len() != d) {
            return Err(Error::ShapeMismatch { expected: vec![d], actual: vec![x.len()] });
        }
        if let Some((_, y)) = samples.iter().find(|(_, y)| *y >= num_classes) {
            return Err(Error::InvalidSpec(format!("label {y} outside {num_classes} classes")));
        }
        let mut mean = vec![0.0; d];
        for (x, _) in samples {
            for (m, &v) in mean.iter_mut().zip(x.iter()) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut std = vec![0.0; d];
        for (x, _) in samples {
            for ((s, &v), m) in std.iter_mut().zip(x.iter()).zip(&mean) {
                *s += (f64::from(v) - m).powi(2);
            }
        }
        // Constant dimensions carry no information; leave them unscaled.
        std.iter_mut().for_each(|s| {
            *s = (*s / n as f64).sqrt();
            if *s < 1e-8 {
                *s = 1.0;
            }
        });
        let mut probe = Self {
            num_classes,
            mean,
            std,
            weight: vec![0.0; num_classes * d],
            bias: vec![0.0; num_classes],
        };
        let xs: Vec<Vec<f64>> = samples.iter().map(|(x, _)| probe.standardize(x)).collect();
        let (mut vw, mut vb) = (vec![0.0; probe.weight.len()], vec![0.0; num_classes]);
        let mut gw = vec![0.0; probe.weight.len()];
        let mut gb = vec![0.0; num_classes];
        for _ in 0..cfg.epochs {
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            for (x, &(_, y)) in xs.iter().zip(samples) {
                let mut p = probe.logits_std(x);
                softmax_in_place(&mut p);
                p[y] -= 1.0;
                for (k, &pk) in p.iter().enumerate() {
                    gb[k] += pk;
                    for (g, &xv) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *g += pk * xv;
                    }
                }
            }
            let inv = 1.0 / n as f64;
            for ((w, v), g) in probe.weight.iter_mut().zip(&mut vw).zip(&gw) {
                *v = 0.9 * *v + g * inv + cfg.weight_decay * *w;
                *w -= cfg.lr * *v;
            }
            for ((b, v), g) in probe.bias.iter_mut().zip(&mut vb).zip(&gb) {
                *v = 0.9 * *v + g * inv;
                *b -= cfg.lr * *v;
            }
        }
        if probe.weight.iter().chain(&probe.bias).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("linear probe diverged".into()));
        }
        Ok(probe)
    }

    fn standardize(&self, x: &[f32]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (m, s))| (f64::from(v) - m) / s)
            .collect()
    }

    fn logits_std(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..self.num_classes)
            .map(|k| self.bias[k] + self.weight[k * d..(k + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn logits(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch { expected: vec![self.dim()], actual: vec![x.len()] });
        }
        Ok(self.logits_std(&self.standardize(x)))
    }

    /// Mean of per-clip logits.
    pub fn video_logits(&self, clips: &[Vec<f32>]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.num_classes];
        for c in clips {
            for (a, l) in acc.iter_mut().zip(self.logits(c)?) {
                *a += l;
            }
        }
        acc.iter_mut().for_each(|a| *a /= clips.len().max(1) as f64);
        Ok(acc)
    }

    pub fn evaluate(&self, split: &str, videos: &[Vec<Vec<f32>>], labels: &[usize]) -> Result<ProbeResult> {
        let k = self.num_classes;
        let (mut correct, mut count) = (vec![0usize; k], vec![0usize; k]);
        let mut predictions = Vec::with_capacity(videos.len());
        for (clips, &y) in videos.iter().zip(labels) {
            let pred = argmax_f64(&self.video_logits(clips)?);
            predictions.push(pred);
            count[y] += 1;
            correct[y] += usize::from(pred == y);
        }
        let per_class_accuracy = correct
            .iter()
            .zip(&count)
            .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect();
        let total: usize = count.iter().sum();
        Ok(ProbeResult {
            split: split.to_string(),
            per_class_accuracy,
            per_class_count: count,
            top1: if total == 0 { 0.0 } else { correct.iter().sum::<usize>() as f64 / total as f64 },
            num_clips_averaged: videos.first().map_or(0, Vec::len),
            predictions,
        })
    }
}

/// Fits a probe on per-video clip features and labels.
pub fn fit_on_videos(features: &[Vec<Vec<f32>>], labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<LinearProbe> {
    let samples: Vec<(&[f32], usize)> = features
        .iter()
        .zip(labels)
        .flat_map(|(clips, &y)| clips.iter().map(move |c| (c.as_slice(), y)))
        .collect();
    LinearProbe::fit(&samples, num_classes, cfg)
}

/// Frozen-feature linear probe: fit on `train`, test on `test` with
/// `cfg.num_clips`-clip logit averaging.
#[allow(clippy::too_many_arguments)]
pub fn linear_probe(
    encoder: &Encoder,
    params: &Params<f32>,
    train: &[(&Video, usize)],
    test: &[(&Video, usize)],
    split: &str,
    num_classes: usize,
    geometry: ClipGeometry,
    cfg: &ProbeConfig,
) -> Result<(ProbeResult, LinearProbe)> {
    let (tv, tl): (Vec<&Video>, Vec<usize>) = train.iter().cloned().unzip();
    let train_f = video_features(encoder, params, &tv, geometry, cfg.train_clips, FeatureKind::Projection)?;
    let probe = fit_on_videos(&train_f, &tl, num_classes, cfg)?;
    let (ev, el): (Vec<&Video>, Vec<usize>) = test.iter().cloned().unzip();
    let test_f = video_features(encoder, params, &ev, geometry, cfg.num_clips, FeatureKind::Projection)?;
    Ok((probe.evaluate(split, &test_f, &el)?, probe))
}

/// Splits indices into alternating halves within each class: the first,
/// third, ... video of a class trains, the second, fourth, ... tests.
pub fn alternating_split(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut seen = std::collections::HashMap::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, &y) in labels.iter().enumerate() {
        let n = seen.entry(y).or_insert(0usize);
        if *n % 2 == 0 {
            train.push(i);
        } else {
            test.push(i);
        }
        *n += 1;
    }
    (train, test)
}

/// Probe trained and tested on disjoint halves of the static split: how much
/// of each class is recognisable from a single frame.
pub fn static_probe(features: &[Vec<Vec<f32>>], labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let (tr, te) = alternating_split(labels);
    let pick = |idx: &[usize]| -> (Vec<Vec<Vec<f32>>>, Vec<usize>) {
        idx.iter().map(|&i| (features[i].clone(), labels[i])).unzip()
    };
    let (trf, trl) = pick(&tr);
    let (tef, tel) = pick(&te);
    let probe = fit_on_videos(&trf, &trl, num_classes, cfg)?;
    probe.evaluate("test_static", &tef, &tel)
}

/// Per-class static accuracy against per-class BE improvement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasDiagnostic {
    pub static_acc_per_class: Vec<f64>,
    /// `be − baseline` top-1 per class, in accuracy units.
    pub rel_improvement_per_class: Vec<f64>,
    pub pearson_rho: f64,
    pub p_value: f64,
}

pub fn bias_correlation(baseline: &ProbeResult, be: &ProbeResult, static_: &ProbeResult) -> Result<BiasDiagnostic> {
    let k = static_.per_class_accuracy.len();
    for r in [baseline, be] {
        if r.per_class_accuracy.len() != k {
            return Err(Error::ShapeMismatch {
                expected: vec![k],
                actual: vec![r.per_class_accuracy.len()],
            });
        }
    }
    let y: Vec<f64> = be
        .per_class_accuracy
        .iter()
        .zip(&baseline.per_class_accuracy)
        .map(|(b, a)| b - a)
        .collect();
    let p = stats::pearson(&static_.per_class_accuracy, &y)?;
    Ok(BiasDiagnostic {
        static_acc_per_class: static_.per_class_accuracy.clone(),
        rel_improvement_per_class: y,
        pearson_rho: p.rho,
        p_value: p.p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ProbeConfig {
        ProbeConfig { epochs: 200, lr: 0.5, weight_decay: 0.0, train_clips: 1, num_clips: 1 }
    }

    #[test]
    fn separable_data_is_learned() {
        let xs: Vec<Vec<f32>> = (0..30).map(|i| vec![(i % 3) as f32 * 2.0 + 0.01 * i as f32, 1.0]).collect();
        let samples: Vec<(&[f32], usize)> = xs.iter().enumerate().map(|(i, x)| (x.as_slice(), i % 3)).collect();
        let p = LinearProbe::fit(&samples, 3, &cfg()).unwrap();
        for (x, y) in &samples {
            assert_eq!(argmax_f64(&p.logits(x).unwrap()), *y);
        }
    }

    #[test]
    fn top1_is_weighted_mean_of_class_accuracies() {
        let xs: Vec<Vec<f32>> = (0..12).map(|i| vec![i as f32]).collect();
        let labels: Vec<usize> = (0..12).map(|i| usize::from(i >= 3)).collect();
        let feats: Vec<Vec<Vec<f32>>> = xs.iter().map(|x| vec![x.clone()]).collect();
        let p = fit_on_videos(&feats, &labels, 2, &cfg()).unwrap();
        let r = p.evaluate("t", &feats, &labels).unwrap();
        let w: f64 = r
            .per_class_accuracy
            .iter()
            .zip(&r.per_class_count)
            .map(|(a, &n)| a * n as f64)
            .sum::<f64>()
            / 12.0;
        assert!((w - r.top1).abs() < 1e-12);
    }

    #[test]
    fn alternating_split_is_balanced() {
        let (a, b) = alternating_split(&[0, 0, 1, 1, 0, 1, 0, 1]);
        assert_eq!(a, vec![0, 2, 4, 5]);
        assert_eq!(b, vec![1, 3, 6, 7]);
    }
}
