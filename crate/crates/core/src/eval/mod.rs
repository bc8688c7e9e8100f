//! Downstream evaluation of a frozen encoder: linear probe, retrieval,
//! static-bias correlation, saliency and adversarial perturbations.

pub mod adversarial;
pub mod finetune;
pub mod probe;
pub mod retrieval;
pub mod saliency;
pub mod stats;

pub use adversarial::{adversarial_probe, apply_attack, AdversarialReport, Attack};
pub use finetune::{finetune, finetune_evaluate, FinetuneConfig};
pub use probe::{bias_correlation, linear_probe, BiasDiagnostic, LinearProbe, ProbeConfig, ProbeResult};
pub use retrieval::{recall_at_k, RecallEntry, RetrievalResult};
pub use saliency::{saliency_from_features, saliency_map, top_fraction_iou, SaliencyMap};
pub use stats::{pearson, Pearson};

use crate::encoder::Encoder;
use crate::error::Result;
use crate::nn::{global_max_pool, Params};
use crate::train::{map_indices, ClipGeometry};
use crate::video::{Video, VideoClip};

/// Which frozen representation a downstream task reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    /// `φ` projection output before L2 normalisation.
    Projection,
    /// Spatio-temporally max-pooled backbone output, before the projection.
    Backbone,
}

pub fn clip_feature(encoder: &Encoder, params: &Params<f32>, clip: &VideoClip, kind: FeatureKind) -> Result<Vec<f32>> {
    let f = encoder.encode(params, &clip.to_channels_first::<f32>())?;
    Ok(match kind {
        FeatureKind::Backbone => global_max_pool(&f).values,
        FeatureKind::Projection => encoder.pool_phi(params, &f, false).projected,
    })
}

/// Features of `n` uniformly spaced centre-cropped clips for every video,
/// indexed `[video][clip]`.
pub fn video_features(
    encoder: &Encoder,
    params: &Params<f32>,
    videos: &[&Video],
    geometry: ClipGeometry,
    n: usize,
    kind: FeatureKind,
) -> Result<Vec<Vec<Vec<f32>>>> {
    let jobs: Vec<(usize, usize)> = videos
        .iter()
        .enumerate()
        .map(|(v, video)| geometry.uniform_starts(video, n).map(|s| s.into_iter().map(move |s| (v, s))))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let flat = map_indices(jobs.len(), |i| {
        let (v, start) = jobs[i];
        let video = videos[v];
        let clip = geometry.extract(video, start, geometry.center_crop(video))?;
        clip_feature(encoder, params, &clip, kind)
    })?;
    let mut out: Vec<Vec<Vec<f32>>> = vec![Vec::with_capacity(n); videos.len()];
    for ((v, _), f) in jobs.into_iter().zip(flat) {
        out[v].push(f);
    }
    Ok(out)
}
