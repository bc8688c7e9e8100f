//! Training: view construction, differentiable objectives, SGD and the
//! pretraining loop.
//!
//! The objectives are generic over the scalar type so that gradient checks
//! can run them in `f64`; training itself runs in `f32`.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, NegativeSource};
use crate::distractor::{make_distractor, DistractorTrace};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::{momentum_update, pool_psi, Params, Scalar};
use crate::objectives::{
    consistency_loss_pooled, cross_entropy, infonce, ConsistencyMode, EmbeddingTag, NegativeSets, PretextTask, Queue,
};
use crate::rng::{rng_for, Rng};
use crate::video::{random_crop_window, sample_start, AugParams, CropWindow, Video, VideoClip};

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd<T> {
    pub momentum: T,
    pub weight_decay: T,
    pub velocity: Params<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(params: &Params<T>, momentum: T, weight_decay: T) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params.zeros_like(),
        }
    }

    /// `v ← μ·v + (g + λ·θ)`, `θ ← θ − lr·v`.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: T) {
        for ((p, g), v) in params.tensors.iter_mut().zip(&grads.tensors).zip(&mut self.velocity.tensors) {
            for ((pv, &gv), vv) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
                *vv = self.momentum * *vv + gv + self.weight_decay * *pv;
                *pv -= lr * *vv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Differentiable objectives

/// One contrastive batch: anchor inputs for the online encoder plus
/// detached key embeddings.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch<T> {
    pub anchors: Vec<Vec<T>>,
    pub anchor_tags: Vec<EmbeddingTag>,
    pub positives: Vec<Vec<T>>,
    pub positive_tags: Vec<EmbeddingTag>,
    pub hard: Vec<Option<(EmbeddingTag, Vec<T>)>>,
}

#[derive(Clone, Copy, Debug)]
pub struct ContrastiveSettings<T> {
    pub temperature: T,
    pub use_hard: bool,
    pub normalize: bool,
    pub negatives: NegativeSource,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ContrastiveStats {
    pub loss: f64,
    pub pos_sim: f64,
    pub neg_sim: f64,
    pub num_negatives: usize,
}

/// Negatives for anchor `i`. Queue mode falls back to in-batch keys while
/// the queue holds nothing usable (the very first steps).
fn negatives_for<'a, T: Scalar>(
    i: usize,
    batch: &'a ContrastiveBatch<T>,
    queue: &'a Queue<T>,
    settings: &ContrastiveSettings<T>,
) -> NegativeSets<'a, T> {
    let video = &batch.anchor_tags[i].video_id;
    let mut sets = match settings.negatives {
        NegativeSource::Queue => NegativeSets::from_queue(queue, video),
        NegativeSource::InBatch => NegativeSets::default(),
    };
    if sets.queue.is_empty() {
        sets.queue = batch
            .positive_tags
            .iter()
            .zip(&batch.positives)
            .filter(|(t, _)| t.video_id != *video)
            .map(|(t, e)| (t, e.as_slice()))
            .collect();
    }
    if settings.use_hard {
        if let Some((tag, e)) = &batch.hard[i] {
            sets = sets.with_hard(tag, e);
        }
    }
    sets
}

/// Batch-mean InfoNCE through the online encoder. Returns statistics,
/// parameter gradients and a hash of the activation pattern.
pub fn contrastive_objective<T: Scalar>(
    encoder: &Encoder,
    params: &Params<T>,
    batch: &ContrastiveBatch<T>,
    queue: &Queue<T>,
    settings: &ContrastiveSettings<T>,
) -> Result<(ContrastiveStats, Params<T>, u64)> {
    let n = batch.anchors.len();
    if n == 0 || batch.positives.len() != n || batch.hard.len() != n {
        return Err(Error::Config("contrastive batch arrays must be non-empty and aligned".into()));
    }
    let per_item = |i: usize| -> Result<(ContrastiveStats, Params<T>, u64)> {
        let (f, cache) = encoder.forward(params, &batch.anchors[i])?;
        let phi = encoder.pool_phi(params, &f, settings.normalize);
        let negs = negatives_for(i, batch, queue, settings);
        negs.audit(i, &batch.anchor_tags[i], &batch.positive_tags[i])?;
        let out = infonce(&phi.embedding.vector, &batch.positives[i], &negs, settings.temperature, settings.use_hard)?;
        let inv_n = T::one() / T::from_usize(n).unwrap();
        let dz: Vec<T> = out.d_anchor.iter().map(|&g| g * inv_n).collect();
        let mut grads = params.zeros_like();
        let df = encoder.pool_phi_backward(params, f.data.len(), &phi, &dz, &mut grads);
        encoder.backward(params, &cache, &df, &mut grads, false);
        let mut h = DefaultHasher::new();
        cache.hash_pattern(&mut h);
        phi.pooled.argmax.iter().for_each(|&a| h.write_usize(a));
        let stats = ContrastiveStats {
            loss: out.loss.as_f64(),
            pos_sim: out.pos_sim.as_f64(),
            neg_sim: out.mean_neg_sim.as_f64(),
            num_negatives: negs.queue.len() + if settings.use_hard { negs.hard.len() } else { 0 },
        };
        Ok((stats, grads, h.finish()))
    };
    let results = map_indices(n, per_item)?;
    let mut grads = params.zeros_like();
    let mut stats = ContrastiveStats::default();
    let mut h = DefaultHasher::new();
    for (s, g, sig) in results {
        grads.add_scaled(&g, T::one());
        stats.loss += s.loss / n as f64;
        stats.pos_sim += s.pos_sim / n as f64;
        stats.neg_sim += s.neg_sim / n as f64;
        stats.num_negatives += s.num_negatives;
        h.write_u64(sig);
    }
    Ok((stats, grads, h.finish()))
}

/// Inputs of one pretext sample: the `M` transformed copies of `x^o` (label
/// order, copy 0 is the identity) and, when the consistency term is on, the
/// distracting clip `x^d`.
#[derive(Clone, Debug)]
pub struct PretextSample<T> {
    pub transformed: Vec<Vec<T>>,
    pub distracted: Option<Vec<T>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PretextStats {
    pub loss: f64,
    pub pretext_loss: f64,
    pub consistency_loss: f64,
    pub correct: usize,
    pub total: usize,
}

/// Batch mean of `L_p + β·L_be`, with parameter gradients.
pub fn pretext_objective<T: Scalar>(
    encoder: &Encoder,
    params: &Params<T>,
    samples: &[PretextSample<T>],
    beta: T,
    mode: ConsistencyMode,
) -> Result<(PretextStats, Params<T>, u64)> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Config("empty pretext batch".into()));
    }
    let per_item = |i: usize| -> Result<(PretextStats, Params<T>, u64)> {
        let s = &samples[i];
        let m = s.transformed.len();
        let inv_n = T::one() / T::from_usize(n).unwrap();
        let inv_m = T::one() / T::from_usize(m).unwrap();
        let mut h = DefaultHasher::new();
        let mut grads = params.zeros_like();
        let mut forwards = Vec::with_capacity(m);
        let mut l_p = T::zero();
        let mut correct = 0;
        for (label, x) in s.transformed.iter().enumerate() {
            let (f, cache) = encoder.forward(params, x)?;
            let (logits, pooled) = encoder.classify(params, &f)?;
            if logits.len() != m {
                return Err(Error::ShapeMismatch {
                    expected: vec![m],
                    actual: vec![logits.len()],
                });
            }
            let (ce, dl) = cross_entropy(&logits, label);
            l_p += ce * inv_m;
            correct += usize::from(crate::objectives::argmax(&logits) == label);
            cache.hash_pattern(&mut h);
            pooled.argmax.iter().for_each(|&a| h.write_usize(a));
            let dl: Vec<T> = dl.iter().map(|&g| g * inv_m * inv_n).collect();
            let df = encoder.classify_backward(params, f.data.len(), &pooled, &dl, &mut grads);
            forwards.push((f, cache, df));
        }
        let mut l_be = T::zero();
        if let Some(xd) = &s.distracted {
            let (fd, cache_d) = encoder.forward(params, xd)?;
            let (psi_o, psi_d) = (pool_psi(&forwards[0].0), pool_psi(&fd));
            let (l, d_o, d_d) = consistency_loss_pooled(&psi_o.values, &psi_d.values, mode)?;
            l_be = l;
            let scale = beta * inv_n;
            let d_o: Vec<T> = d_o.iter().map(|&g| g * scale).collect();
            let d_d: Vec<T> = d_d.iter().map(|&g| g * scale).collect();
            let extra = psi_o.backward(&d_o, forwards[0].0.data.len());
            for (a, b) in forwards[0].2.iter_mut().zip(&extra) {
                *a += *b;
            }
            let dfd = psi_d.backward(&d_d, fd.data.len());
            encoder.backward(params, &cache_d, &dfd, &mut grads, false);
            cache_d.hash_pattern(&mut h);
            psi_o.argmax.iter().chain(&psi_d.argmax).for_each(|&a| h.write_usize(a));
        }
        for (_, cache, df) in &forwards {
            encoder.backward(params, cache, df, &mut grads, false);
        }
        let stats = PretextStats {
            loss: (l_p + beta * l_be).as_f64(),
            pretext_loss: l_p.as_f64(),
            consistency_loss: l_be.as_f64(),
            correct,
            total: m,
        };
        Ok((stats, grads, h.finish()))
    };
    let results = map_indices(n, per_item)?;
    let mut grads = params.zeros_like();
    let mut stats = PretextStats::default();
    let mut h = DefaultHasher::new();
    for (s, g, sig) in results {
        grads.add_scaled(&g, T::one());
        stats.loss += s.loss / n as f64;
        stats.pretext_loss += s.pretext_loss / n as f64;
        stats.consistency_loss += s.consistency_loss / n as f64;
        stats.correct += s.correct;
        stats.total += s.total;
        h.write_u64(sig);
    }
    Ok((stats, grads, h.finish()))
}

/// Ordered map over `0..n`, parallel when enabled. Result order never
/// depends on scheduling, so reductions stay deterministic.
pub(crate) fn map_indices<R: Send, F>(n: usize, f: F) -> Result<Vec<R>>
where
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

// ---------------------------------------------------------------------------
// View construction

/// Clip sampling geometry shared by training and evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipGeometry {
    pub length: usize,
    pub stride: usize,
    pub crop_h: usize,
    pub crop_w: usize,
}

impl ClipGeometry {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            length: cfg.encoder.input_frames,
            stride: cfg.clip.stride,
            crop_h: cfg.encoder.input_height,
            crop_w: cfg.encoder.input_width,
        }
    }

    pub fn center_crop(&self, video: &Video) -> CropWindow {
        CropWindow {
            top: (video.dims.h - self.crop_h) / 2,
            left: (video.dims.w - self.crop_w) / 2,
            h: self.crop_h,
            w: self.crop_w,
        }
    }

    pub fn random_crop(&self, video: &Video, rng: &mut Rng) -> Result<CropWindow> {
        random_crop_window(video.dims.h, video.dims.w, self.crop_h, self.crop_w, rng)
    }

    pub fn extract(&self, video: &Video, start: usize, crop: CropWindow) -> Result<VideoClip> {
        video.extract(start, self.length, self.stride, Some(crop))
    }

    /// `n` start indices spread evenly over the legal range.
    pub fn uniform_starts(&self, video: &Video, n: usize) -> Result<Vec<usize>> {
        let valid = video.valid_starts(self.length, self.stride)?;
        Ok((0..n)
            .map(|i| if n == 1 { (valid - 1) / 2 } else { i * (valid - 1) / (n - 1) })
            .collect())
    }
}

/// Views for one video in a contrastive step.
#[derive(Clone, Debug)]
pub struct ContrastiveViews {
    pub anchor: VideoClip,
    pub distracted: VideoClip,
    pub hard: Option<VideoClip>,
    pub a1: AugParams,
    pub a2: AugParams,
    pub trace: DistractorTrace,
}

/// Different-location crops `x^o`, `x^v` of one temporal window, `a¹`/`a²`,
/// the distractor on `x^v`, and optionally a hard negative: another window
/// of the same video with `x^o`'s crop and `a¹`.
pub fn contrastive_views(
    cfg: &ExperimentConfig,
    video: &Video,
    donor: Option<&Video>,
    with_hard: bool,
    rng: &mut Rng,
) -> Result<ContrastiveViews> {
    let g = ClipGeometry::from_config(cfg);
    let start = sample_start(video, g.length, g.stride, rng)?;
    let (w_o, w_v) = (g.random_crop(video, rng)?, g.random_crop(video, rng)?);
    let a1 = cfg.augment.sample(rng);
    let a2 = cfg.augment.sample(rng);
    let anchor = a1.apply(&g.extract(video, start, w_o)?);
    let view = a2.apply(&g.extract(video, start, w_v)?);
    let donor_clip = match donor {
        Some(d) if cfg.distractor.variant.needs_donor() || cfg.distractor.variant == crate::distractor::DistractorVariant::Cutmix => {
            let s = sample_start(d, g.length, g.stride, rng)?;
            let w = g.random_crop(d, rng)?;
            Some(g.extract(d, s, w)?)
        }
        _ => None,
    };
    let (distracted, trace) = make_distractor(&view, &cfg.distractor, donor_clip.as_ref(), rng)?;
    let hard = if with_hard {
        let valid = video.valid_starts(g.length, g.stride)?;
        if valid > 1 {
            let mut s = rng.random_range(0..valid - 1);
            if s >= start {
                s += 1;
            }
            Some(a1.apply(&g.extract(video, s, w_o)?))
        } else {
            None
        }
    } else {
        None
    };
    Ok(ContrastiveViews {
        anchor,
        distracted,
        hard,
        a1,
        a2,
        trace,
    })
}

/// Views for one video in a pretext step: the `M` transforms of `x^o` and,
/// when `with_distractor`, `x^d`.
pub fn pretext_views(
    cfg: &ExperimentConfig,
    task: &PretextTask,
    video: &Video,
    donor: Option<&Video>,
    with_distractor: bool,
    rng: &mut Rng,
) -> Result<(Vec<VideoClip>, Option<VideoClip>)> {
    let mut c = contrastive_views(cfg, video, donor, false, rng)?;
    if !with_distractor {
        c.distracted = c.anchor.clone();
    }
    let copies = (0..task.num_transforms())
        .map(|r| task.apply(&c.anchor, r))
        .collect::<Result<Vec<_>>>()?;
    Ok((copies, with_distractor.then_some(c.distracted)))
}

// ---------------------------------------------------------------------------
// Trainer

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub pos_sim: f64,
    pub neg_sim: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretext_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistency_loss: Option<f64>,
    pub num_negatives: usize,
}

/// Complete training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: ExperimentConfig,
    pub encoder: Encoder,
    pub params: Params<f32>,
    /// Momentum copy of backbone and projection (contrastive only).
    pub momentum: Option<Params<f32>>,
    pub queue: Queue<f32>,
    pub optimizer: Sgd<f32>,
    pub step: u64,
    pub epoch: usize,
    pub next_view: u64,
}

fn key_embedding(encoder: &Encoder, params: &Params<f32>, clip: &VideoClip, normalize: bool) -> Result<Vec<f32>> {
    let f = encoder.encode(params, &clip.to_channels_first::<f32>())?;
    Ok(encoder.pool_phi(params, &f, normalize).embedding.vector)
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(config.encoder.clone())?;
        let task = config.objective.kind.pretext().map(PretextTask::new);
        if let Some(t) = task {
            if t.kind == crate::objectives::PretextKind::Rotation4 && config.encoder.input_height != config.encoder.input_width {
                return Err(Error::Config("rotation4 needs square crops".into()));
            }
        }
        let mut rng = rng_for(config.seed, "init");
        let params: Params<f32> = encoder.init_params(task.map(|t| t.num_transforms()), &mut rng);
        let momentum = task.is_none().then(|| params.clone());
        let optimizer = Sgd::new(&params, config.optim.momentum as f32, config.optim.weight_decay as f32);
        Ok(Self {
            queue: Queue::new(config.encoder.embed_dim, config.objective.queue_size),
            encoder,
            params,
            momentum,
            optimizer,
            step: 0,
            epoch: 0,
            next_view: 0,
            config,
        })
    }

    fn tag(&mut self, video: &Video, clip: &VideoClip) -> EmbeddingTag {
        self.next_view += 1;
        EmbeddingTag {
            video_id: video.id.clone(),
            start: clip.start_index,
            view: self.next_view,
        }
    }

    fn step_rng(&self) -> Rng {
        rng_for(self.config.seed, &format!("train/step{}", self.step))
    }

    /// One optimisation step on `videos`; `donors[i]` supplies foreign
    /// frames for variants that need them.
    pub fn train_step(&mut self, videos: &[&Video], donors: &[&Video]) -> Result<StepMetrics> {
        let lr = self.config.optim.lr_at(self.epoch);
        let mut rng = self.step_rng();
        let metrics = match self.config.objective.kind.pretext() {
            None => self.contrastive_step(videos, donors, lr, &mut rng)?,
            Some(kind) => self.pretext_step(PretextTask::new(kind), videos, donors, lr, &mut rng)?,
        };
        if !metrics.loss.is_finite() || !self.params.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss or parameters at step {} (epoch {}): {}",
                metrics.step,
                metrics.epoch,
                serde_json::to_string(&metrics).unwrap_or_default()
            )));
        }
        self.step += 1;
        Ok(metrics)
    }

    fn contrastive_step(&mut self, videos: &[&Video], donors: &[&Video], lr: f64, rng: &mut Rng) -> Result<StepMetrics> {
        let obj = self.config.objective.clone();
        let mut batch = ContrastiveBatch {
            anchors: Vec::new(),
            anchor_tags: Vec::new(),
            positives: Vec::new(),
            positive_tags: Vec::new(),
            hard: Vec::new(),
        };
        let momentum = self.momentum.clone().expect("contrastive trainer has a momentum encoder");
        for (i, v) in videos.iter().enumerate() {
            let views = contrastive_views(&self.config, v, donors.get(i).copied(), obj.be, rng)?;
            let ta = self.tag(v, &views.anchor);
            let tp = self.tag(v, &views.distracted);
            batch.positives.push(key_embedding(&self.encoder, &momentum, &views.distracted, obj.normalize_embeddings)?);
            batch.hard.push(match &views.hard {
                Some(h) => {
                    let th = self.tag(v, h);
                    Some((th, key_embedding(&self.encoder, &momentum, h, obj.normalize_embeddings)?))
                }
                None => None,
            });
            batch.anchors.push(views.anchor.to_channels_first());
            batch.anchor_tags.push(ta);
            batch.positive_tags.push(tp);
        }
        let settings = ContrastiveSettings {
            temperature: obj.temperature as f32,
            use_hard: obj.be,
            normalize: obj.normalize_embeddings,
            negatives: obj.negatives,
        };
        let (stats, grads, _) = contrastive_objective(&self.encoder, &self.params, &batch, &self.queue, &settings)?;
        self.optimizer.step(&mut self.params, &grads, lr as f32);
        let mut bar = momentum;
        momentum_update(&self.params, &mut bar, obj.momentum as f32)?;
        self.momentum = Some(bar);
        // Keys enter the queue only after the loss that used them.
        let keys: Vec<_> = batch.positive_tags.into_iter().zip(batch.positives).collect();
        self.queue.push(&keys)?;
        Ok(StepMetrics {
            step: self.step,
            epoch: self.epoch,
            loss: stats.loss,
            pos_sim: stats.pos_sim,
            neg_sim: stats.neg_sim,
            lr,
            pretext_acc: None,
            consistency_loss: None,
            num_negatives: stats.num_negatives / videos.len().max(1),
        })
    }

    fn pretext_step(&mut self, task: PretextTask, videos: &[&Video], donors: &[&Video], lr: f64, rng: &mut Rng) -> Result<StepMetrics> {
        let be = self.config.objective.be;
        let mut samples = Vec::with_capacity(videos.len());
        for (i, v) in videos.iter().enumerate() {
            let (copies, distracted) = pretext_views(&self.config, &task, v, donors.get(i).copied(), be, rng)?;
            samples.push(PretextSample {
                transformed: copies.iter().map(|c| c.to_channels_first()).collect(),
                distracted: distracted.map(|d| d.to_channels_first()),
            });
        }
        let beta = if be { self.config.objective.beta as f32 } else { 0.0 };
        let (stats, grads, _) = pretext_objective(&self.encoder, &self.params, &samples, beta, self.config.objective.consistency)?;
        self.optimizer.step(&mut self.params, &grads, lr as f32);
        Ok(StepMetrics {
            step: self.step,
            epoch: self.epoch,
            loss: stats.loss,
            pos_sim: 0.0,
            neg_sim: 0.0,
            lr,
            pretext_acc: Some(stats.correct as f64 / stats.total.max(1) as f64),
            consistency_loss: be.then_some(stats.consistency_loss),
            num_negatives: 0,
        })
    }

    /// One pass over `train` in a seeded random order.
    pub fn train_epoch(&mut self, train: &[Video], sink: &mut dyn FnMut(&StepMetrics)) -> Result<()> {
        if train.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        let mut rng = rng_for(self.config.seed, &format!("train/epoch{}", self.epoch));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(self.config.optim.batch_size) {
            let videos: Vec<&Video> = chunk.iter().map(|&i| &train[i]).collect();
            let donors: Vec<&Video> = chunk
                .iter()
                .map(|&i| {
                    let mut j = rng.random_range(0..train.len().max(2) - 1);
                    if j >= i {
                        j += 1;
                    }
                    &train[j.min(train.len() - 1)]
                })
                .collect();
            let m = self.train_step(&videos, &donors)?;
            sink(&m);
        }
        self.epoch += 1;
        Ok(())
    }
}

/// Runs the configured number of epochs from scratch.
pub fn pretrain(config: &ExperimentConfig, train: &[Video], sink: &mut dyn FnMut(&StepMetrics)) -> Result<Trainer> {
    let mut t = Trainer::new(config.clone())?;
    for _ in 0..config.optim.epochs {
        t.train_epoch(train, sink)?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_matches_hand_update() {
        let mut p = Params::<f64>::default();
        p.push("w", vec![1]);
        p.tensors[0].data[0] = 1.0;
        let mut g = p.zeros_like();
        g.tensors[0].data[0] = 0.5;
        let mut opt = Sgd::new(&p, 0.9, 0.1);
        opt.step(&mut p, &g, 0.1);
        // v = 0.5 + 0.1·1 = 0.6, w = 1 − 0.06
        assert!((p.tensors[0].data[0] - 0.94).abs() < 1e-12);
        opt.step(&mut p, &g, 0.1);
        // v = 0.9·0.6 + 0.5 + 0.1·0.94 = 1.134
        assert!((p.tensors[0].data[0] - (0.94 - 0.1134)).abs() < 1e-12);
    }
}
