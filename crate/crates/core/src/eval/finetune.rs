//! Supervised fine-tuning of the whole encoder plus a class head, the
//! alternative to the frozen linear probe.

use serde::{Deserialize, Serialize};

use super::probe::{argmax_f64, ProbeResult};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::Params;
use crate::objectives::cross_entropy;
use crate::rng::rng_for;
use crate::train::{map_indices, ClipGeometry, Sgd};
use crate::video::{sample_start, Video};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Clips averaged per test video.
    pub num_clips: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            num_clips: 10,
            seed: 0,
        }
    }
}

/// Copies every pretrained tensor into fresh parameters that carry a
/// `classes`-way head. The head itself starts from its random init.
pub fn with_class_head(encoder: &Encoder, pretrained: &Params<f32>, classes: usize, seed: u64) -> Result<Params<f32>> {
    let mut params: Params<f32> = encoder.init_params(Some(classes), &mut rng_for(seed, "finetune/head"));
    for t in params.tensors.iter_mut().filter(|t| Encoder::is_backbone_or_projection(&t.name)) {
        let src = pretrained
            .tensors
            .iter()
            .find(|s| s.name == t.name)
            .ok_or_else(|| Error::Config(format!("pretrained parameters lack tensor {}", t.name)))?;
        if src.shape != t.shape {
            return Err(Error::ShapeMismatch {
                expected: t.shape.clone(),
                actual: src.shape.clone(),
            });
        }
        t.data.clone_from(&src.data);
    }
    Ok(params)
}

/// Trains encoder and head with cross-entropy on random clips (random
/// start, random crop) of the labelled videos. Returns the tuned
/// parameters and the mean loss of the last epoch.
pub fn finetune(
    encoder: &Encoder,
    pretrained: &Params<f32>,
    train: &[(&Video, usize)],
    classes: usize,
    geometry: ClipGeometry,
    cfg: &FinetuneConfig,
) -> Result<(Params<f32>, f64)> {
    use rand::seq::SliceRandom;
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Config("fine-tuning needs training videos and a positive batch size".into()));
    }
    let mut params = with_class_head(encoder, pretrained, classes, cfg.seed)?;
    let mut opt = Sgd::new(&params, cfg.momentum as f32, cfg.weight_decay as f32);
    let mut rng = rng_for(cfg.seed, "finetune/clips");
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            // Clips are drawn serially so the stream does not depend on threads.
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (video, label) = train[i];
                let start = sample_start(video, geometry.length, geometry.stride, &mut rng)?;
                let clip = geometry.extract(video, start, geometry.random_crop(video, &mut rng)?)?;
                batch.push((clip.to_channels_first::<f32>(), label));
            }
            let n = batch.len() as f32;
            let per_item = |j: usize| -> Result<(f64, Params<f32>)> {
                let (x, label) = &batch[j];
                let mut g = params.zeros_like();
                let (f, cache) = encoder.forward(&params, x)?;
                let (logits, pooled) = encoder.classify(&params, &f)?;
                let (loss, dl) = cross_entropy(&logits, *label);
                let dl: Vec<f32> = dl.iter().map(|v| v / n).collect();
                let df = encoder.classify_backward(&params, f.data.len(), &pooled, &dl, &mut g);
                encoder.backward(&params, &cache, &df, &mut g, false);
                Ok((f64::from(loss), g))
            };
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for (l, g) in map_indices(batch.len(), per_item)? {
                loss += l / batch.len() as f64;
                grads.add_scaled(&g, 1.0);
            }
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite fine-tuning loss in epoch {epoch}")));
            }
            opt.step(&mut params, &grads, cfg.lr as f32);
            epoch_loss += loss * chunk.len() as f64 / train.len() as f64;
        }
        last_loss = epoch_loss;
    }
    Ok((params, last_loss))
}

/// Accuracy of tuned parameters with `num_clips` centre-cropped clips per
/// video and logit averaging.
pub fn finetune_evaluate(
    encoder: &Encoder,
    params: &Params<f32>,
    split: &str,
    test: &[(&Video, usize)],
    classes: usize,
    geometry: ClipGeometry,
    num_clips: usize,
) -> Result<ProbeResult> {
    let per_video = |i: usize| -> Result<usize> {
        let video = test[i].0;
        let mut mean = vec![0.0f64; classes];
        let starts = geometry.uniform_starts(video, num_clips)?;
        for &s in &starts {
            let clip = geometry.extract(video, s, geometry.center_crop(video))?;
            let (f, _) = encoder.forward(params, &clip.to_channels_first::<f32>())?;
            let (logits, _) = encoder.classify(params, &f)?;
            for (m, l) in mean.iter_mut().zip(&logits) {
                *m += f64::from(*l) / starts.len() as f64;
            }
        }
        Ok(argmax_f64(&mean))
    };
    let predictions = map_indices(test.len(), per_video)?;
    let (mut correct, mut count) = (vec![0usize; classes], vec![0usize; classes]);
    for (&p, &(_, y)) in predictions.iter().zip(test) {
        count[y] += 1;
        correct[y] += usize::from(p == y);
    }
    let total: usize = count.iter().sum();
    Ok(ProbeResult {
        split: split.to_string(),
        per_class_accuracy: correct
            .iter()
            .zip(&count)
            .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect(),
        per_class_count: count,
        top1: if total == 0 { 0.0 } else { correct.iter().sum::<usize>() as f64 / total as f64 },
        num_clips_averaged: num_clips,
        predictions,
    })
}
