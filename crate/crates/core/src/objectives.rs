//! Training losses and the negative queue.
//!
//! Every loss returns its value together with the gradient with respect to
//! its direct inputs (logits, pooled features or embeddings); chaining into
//! the encoder happens in [`crate::train`].

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dot, Scalar};
use crate::video::{Frames, VideoClip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretextKind {
    Rotation4,
    ClipOrder3,
}

impl PretextKind {
    pub fn name(&self) -> &'static str {
        match self {
            PretextKind::Rotation4 => "rotation4",
            PretextKind::ClipOrder3 => "clip_order3",
        }
    }
}

impl FromStr for PretextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation4" | "rotation" => Ok(PretextKind::Rotation4),
            "clip_order3" | "clip_order" => Ok(PretextKind::ClipOrder3),
            other => Err(Error::Config(format!("unknown pretext task `{other}`"))),
        }
    }
}

impl fmt::Display for PretextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Orderings of three sub-clips, lexicographic; label 0 is the identity.
pub const CLIP_ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// A surrogate classification problem over `M` deterministic transforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PretextTask {
    pub kind: PretextKind,
}

impl PretextTask {
    pub fn new(kind: PretextKind) -> Self {
        Self { kind }
    }

    /// `M`, the number of transformations.
    pub fn num_transforms(&self) -> usize {
        match self.kind {
            PretextKind::Rotation4 => 4,
            PretextKind::ClipOrder3 => 6,
        }
    }

    /// Applies transform `label`. Label 0 is always the identity.
    pub fn apply(&self, clip: &VideoClip, label: usize) -> Result<VideoClip> {
        if label >= self.num_transforms() {
            return Err(Error::Config(format!(
                "label {label} out of range for {} (M = {})",
                self.kind,
                self.num_transforms()
            )));
        }
        let frames = match self.kind {
            PretextKind::Rotation4 => rotate_quarter_turns(&clip.frames, label)?,
            PretextKind::ClipOrder3 => reorder_thirds(&clip.frames, CLIP_ORDERS[label])?,
        };
        Ok(clip.with_frames(frames))
    }
}

/// Rotates every frame clockwise by `k` quarter turns. Odd `k` needs
/// square frames so that the clip shape is preserved.
pub fn rotate_quarter_turns(frames: &Frames, k: usize) -> Result<Frames> {
    let d = frames.dims;
    let k = k % 4;
    if k % 2 == 1 && d.h != d.w {
        return Err(Error::ShapeMismatch {
            expected: vec![d.t, d.h, d.h, d.c],
            actual: d.as_vec(),
        });
    }
    if k == 0 {
        return Ok(frames.clone());
    }
    let mut out = frames.clone();
    let (h, w, c) = (d.h, d.w, d.c);
    for t in 0..d.t {
        let src = frames.frame(t);
        let dst = out.frame_mut(t);
        for y in 0..h {
            for x in 0..w {
                // Source pixel landing on (y, x) after a clockwise rotation.
                let (sy, sx) = match k {
                    1 => (h - 1 - x, y),
                    2 => (h - 1 - y, w - 1 - x),
                    _ => (x, w - 1 - y),
                };
                dst[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&src[(sy * w + sx) * c..(sy * w + sx + 1) * c]);
            }
        }
    }
    Ok(out)
}

/// Splits the clip into three contiguous chunks (sizes differ by at most
/// one) and concatenates them in `order`.
pub fn reorder_thirds(frames: &Frames, order: [usize; 3]) -> Result<Frames> {
    let t = frames.dims.t;
    if t < 3 {
        return Err(Error::InvalidClip(format!("clip order needs ≥ 3 frames, got {t}")));
    }
    let bounds = [0, t.div_ceil(3), (2 * t).div_ceil(3), t];
    let mut data = Vec::with_capacity(frames.data.len());
    for &chunk in &order {
        for f in bounds[chunk]..bounds[chunk + 1] {
            data.extend_from_slice(frames.frame(f));
        }
    }
    Frames::new(frames.dims, data)
}

/// Numerically stable softmax cross-entropy. Returns the loss and
/// `∂loss/∂logits`.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: T = exps.iter().copied().sum();
    let loss = z.ln() - (logits[label] - max);
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| e / z - if i == label { T::one() } else { T::zero() })
        .collect();
    (loss, grad)
}

/// Pretext loss over one sample's `M` transformed copies: mean cross-entropy,
/// plus per-copy logit gradients (already divided by `M`).
pub struct PretextLoss<T> {
    pub loss: T,
    pub correct: usize,
    pub dlogits: Vec<Vec<T>>,
}

/// `logits[r]` are the classifier outputs for the copy transformed by `r`.
pub fn pretext_loss<T: Scalar>(logits: &[Vec<T>]) -> Result<PretextLoss<T>> {
    if logits.is_empty() {
        return Err(Error::Config("pretext loss needs at least one transformed copy".into()));
    }
    let m = T::from_usize(logits.len()).unwrap();
    let mut loss = T::zero();
    let mut correct = 0;
    let mut dlogits = Vec::with_capacity(logits.len());
    for (label, l) in logits.iter().enumerate() {
        if l.len() != logits.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![logits.len()],
                actual: vec![l.len()],
            });
        }
        let (ce, g) = cross_entropy(l, label);
        loss += ce / m;
        dlogits.push(g.into_iter().map(|v| v / m).collect());
        let arg = argmax(l);
        correct += usize::from(arg == label);
    }
    Ok(PretextLoss { loss, correct, dlogits })
}

pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    /// Literal squared norm, summed over all `C×T′` entries.
    #[default]
    Sum,
    /// Sum divided by `C·T′`.
    Mean,
}

/// `‖ψ_o − ψ_d‖²` on pooled `C×T′` features. Returns the loss and the
/// gradients for both arguments (they are negatives of each other).
pub fn consistency_loss_pooled<T: Scalar>(psi_o: &[T], psi_d: &[T], mode: ConsistencyMode) -> Result<(T, Vec<T>, Vec<T>)> {
    if psi_o.len() != psi_d.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![psi_o.len()],
            actual: vec![psi_d.len()],
        });
    }
    let scale = match mode {
        ConsistencyMode::Sum => T::one(),
        ConsistencyMode::Mean => T::one() / T::from_usize(psi_o.len().max(1)).unwrap(),
    };
    let two = T::from_f64_lossy(2.0);
    let mut loss = T::zero();
    let mut d_o = Vec::with_capacity(psi_o.len());
    for (&a, &b) in psi_o.iter().zip(psi_d) {
        let diff = a - b;
        loss += diff * diff;
        d_o.push(two * diff * scale);
    }
    let d_d = d_o.iter().map(|&g| -g).collect();
    Ok((loss * scale, d_o, d_d))
}

/// Consistency loss on two feature maps of equal shape.
pub fn consistency_loss<T: Scalar>(f_o: &crate::nn::FeatureMap<T>, f_d: &crate::nn::FeatureMap<T>, mode: ConsistencyMode) -> Result<T> {
    if f_o.shape() != f_d.shape() {
        return Err(Error::ShapeMismatch {
            expected: f_o.shape(),
            actual: f_d.shape(),
        });
    }
    let (a, b) = (crate::nn::pool_psi(f_o), crate::nn::pool_psi(f_d));
    consistency_loss_pooled(&a.values, &b.values, mode).map(|(l, _, _)| l)
}

/// `L = L_p + β·L_be`.
pub fn combined_pretext_loss<T: Scalar>(l_p: T, l_be: T, beta: T) -> Result<T> {
    if !(beta >= T::zero()) {
        return Err(Error::Config(format!("beta must be non-negative, got {beta:?}")));
    }
    Ok(l_p + beta * l_be)
}

/// Identity of an embedding, used to audit negative sets.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingTag {
    pub video_id: String,
    /// Clip start frame within the video.
    pub start: usize,
    /// Globally unique id of the sampled view.
    pub view: u64,
}

/// FIFO ring of detached key embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Queue<T> {
    pub dim: usize,
    pub capacity: usize,
    pub entries: VecDeque<(EmbeddingTag, Vec<T>)>,
}

impl<T: Scalar> Queue<T> {
    pub fn new(dim: usize, capacity: usize) -> Self {
        Self {
            dim,
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends copies of `embeddings`, evicting the oldest beyond capacity.
    pub fn push(&mut self, embeddings: &[(EmbeddingTag, Vec<T>)]) -> Result<()> {
        for (_, e) in embeddings {
            if e.len() != self.dim {
                return Err(Error::ShapeMismatch {
                    expected: vec![self.dim],
                    actual: vec![e.len()],
                });
            }
        }
        for (tag, e) in embeddings {
            if self.capacity == 0 {
                break;
            }
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back((tag.clone(), e.clone()));
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &(EmbeddingTag, Vec<T>)> {
        self.entries.iter()
    }
}

/// Negatives for one anchor: cross-video queue entries (`N₁`) plus
/// same-video hard negatives (`N₂`).
#[derive(Clone, Debug, Default)]
pub struct NegativeSets<'a, T> {
    pub queue: Vec<(&'a EmbeddingTag, &'a [T])>,
    pub hard: Vec<(&'a EmbeddingTag, &'a [T])>,
}

impl<'a, T: Scalar> NegativeSets<'a, T> {
    /// Queue entries from videos other than `video_id`.
    pub fn from_queue(queue: &'a Queue<T>, video_id: &str) -> Self {
        Self {
            queue: queue
                .iter()
                .filter(|(tag, _)| tag.video_id != video_id)
                .map(|(tag, e)| (tag, e.as_slice()))
                .collect(),
            hard: Vec::new(),
        }
    }

    pub fn with_hard(mut self, tag: &'a EmbeddingTag, e: &'a [T]) -> Self {
        self.hard.push((tag, e));
        self
    }

    pub fn len(&self) -> usize {
        self.queue.len() + self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rejects sets that contain the anchor's own views, and hard negatives
    /// that do not come from a different clip of the anchor's video.
    pub fn audit(&self, index: usize, anchor: &EmbeddingTag, positive: &EmbeddingTag) -> Result<()> {
        for (tag, _) in self.queue.iter().chain(&self.hard) {
            if *tag == anchor || *tag == positive || tag.view == anchor.view || tag.view == positive.view {
                return Err(Error::PositiveInNegatives { anchor: index });
            }
        }
        for (tag, _) in &self.hard {
            if tag.video_id != anchor.video_id || tag.start == anchor.start {
                return Err(Error::Config(format!(
                    "hard negative {}@{} is not a different clip of anchor video {}@{}",
                    tag.video_id, tag.start, anchor.video_id, anchor.start
                )));
            }
        }
        Ok(())
    }
}

/// One anchor's InfoNCE value and gradients.
#[derive(Clone, Debug)]
pub struct InfoNceOutput<T> {
    pub loss: T,
    pub pos_sim: T,
    pub mean_neg_sim: T,
    pub d_anchor: Vec<T>,
    pub d_positive: Vec<T>,
    /// Gradients for queue negatives followed by hard negatives.
    pub d_negatives: Vec<Vec<T>>,
}

/// `−log[exp(s_p/τ) / (exp(s_p/τ) + Σ exp(s_n/τ))]` with `s = z_a·z`.
/// Hard negatives participate only when `use_hard`.
pub fn infonce<T: Scalar>(anchor: &[T], positive: &[T], negatives: &NegativeSets<'_, T>, tau: T, use_hard: bool) -> Result<InfoNceOutput<T>> {
    if !(tau > T::zero()) {
        return Err(Error::Config(format!("temperature must be positive, got {tau:?}")));
    }
    let hard: &[(&EmbeddingTag, &[T])] = if use_hard { &negatives.hard } else { &[] };
    let negs: Vec<&[T]> = negatives.queue.iter().map(|(_, e)| *e).chain(hard.iter().map(|(_, e)| *e)).collect();
    if negs.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    for e in std::iter::once(positive).chain(negs.iter().copied()) {
        if e.len() != anchor.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![anchor.len()],
                actual: vec![e.len()],
            });
        }
    }
    let s_p = dot(anchor, positive);
    let s_n: Vec<T> = negs.iter().map(|n| dot(anchor, n)).collect();
    let logits: Vec<T> = std::iter::once(s_p / tau).chain(s_n.iter().map(|&s| s / tau)).collect();
    let (loss, dlogits) = cross_entropy(&logits, 0);
    // ∂L/∂z_a = Σ_j g_j·z_j/τ, ∂L/∂z_j = g_j·z_a/τ.
    let mut d_anchor: Vec<T> = positive.iter().map(|&p| dlogits[0] * p / tau).collect();
    for (n, &g) in negs.iter().zip(&dlogits[1..]) {
        for (d, &v) in d_anchor.iter_mut().zip(*n) {
            *d += g * v / tau;
        }
    }
    let d_positive = anchor.iter().map(|&a| dlogits[0] * a / tau).collect();
    let d_negatives = dlogits[1..]
        .iter()
        .map(|&g| anchor.iter().map(|&a| g * a / tau).collect())
        .collect();
    let mean_neg_sim = s_n.iter().copied().sum::<T>() / T::from_usize(s_n.len()).unwrap();
    Ok(InfoNceOutput {
        loss,
        pos_sim: s_p,
        mean_neg_sim,
        d_anchor,
        d_positive,
        d_negatives,
    })
}

/// One anchor of a contrastive batch.
pub struct ContrastiveItem<'a, T> {
    pub anchor: &'a [T],
    pub anchor_tag: &'a EmbeddingTag,
    pub positive: &'a [T],
    pub positive_tag: &'a EmbeddingTag,
    pub negatives: NegativeSets<'a, T>,
}

#[derive(Clone, Debug)]
pub struct BatchInfoNce<T> {
    pub loss: T,
    pub pos_sim: T,
    pub neg_sim: T,
    /// Gradient of the batch-mean loss for each anchor.
    pub d_anchors: Vec<Vec<T>>,
}

/// Batch-averaged InfoNCE with per-anchor integrity audit.
pub fn infonce_be<T: Scalar>(items: &[ContrastiveItem<'_, T>], tau: T, use_hard: bool) -> Result<BatchInfoNce<T>> {
    if items.is_empty() {
        return Err(Error::Config("empty contrastive batch".into()));
    }
    let n = T::from_usize(items.len()).unwrap();
    let (mut loss, mut pos, mut neg) = (T::zero(), T::zero(), T::zero());
    let mut d_anchors = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        it.negatives.audit(i, it.anchor_tag, it.positive_tag)?;
        let out = infonce(it.anchor, it.positive, &it.negatives, tau, use_hard)?;
        loss += out.loss / n;
        pos += out.pos_sim / n;
        neg += out.mean_neg_sim / n;
        d_anchors.push(out.d_anchor.into_iter().map(|g| g / n).collect());
    }
    Ok(BatchInfoNce {
        loss,
        pos_sim: pos,
        neg_sim: neg,
        d_anchors,
    })
}
