//! Small 3D convolutional backbone plus its pooling/projection heads.
//!
//! The backbone is a stack of stages, each `convs_per_stage` blocks of
//! conv3d(3×3×3) → group norm → ReLU; the first conv of a stage carries the
//! stage stride. Two heads sit on top: `ψ` (spatial max, `C×T′`) for the
//! consistency term and `φ` (spatio-temporal max → linear → L2 normalise)
//! for contrastive embeddings. An optional linear classifier on the
//! spatio-temporally pooled features serves pretext tasks.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::norm::NormCache;
use crate::nn::{
    global_max_pool, l2_normalize, l2_normalize_backward, linear_backward, linear_forward, Conv3d, Extent, FeatureMap,
    GroupNorm, Params, Pooled, Scalar,
};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub input_frames: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub stage_channels: Vec<usize>,
    pub temporal_strides: Vec<usize>,
    pub spatial_strides: Vec<usize>,
    pub convs_per_stage: usize,
    pub norm_groups: usize,
    /// Projection dimension `D`.
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_frames: 8,
            input_height: 64,
            input_width: 64,
            stage_channels: vec![16, 32, 64, 128],
            temporal_strides: vec![1, 2, 2, 1],
            spatial_strides: vec![2, 2, 2, 2],
            convs_per_stage: 2,
            norm_groups: 4,
            embed_dim: 128,
        }
    }
}

impl EncoderConfig {
    pub fn input_extent(&self) -> Extent {
        Extent::new(self.input_frames, self.input_height, self.input_width)
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.input_extent().volume()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_channels.len();
        if n == 0 || self.temporal_strides.len() != n || self.spatial_strides.len() != n {
            return Err(Error::Config(
                "stage_channels, temporal_strides and spatial_strides must be non-empty and of equal length".into(),
            ));
        }
        if self.convs_per_stage == 0 || self.embed_dim == 0 || self.in_channels == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if self.input_frames == 0 || self.input_height == 0 || self.input_width == 0 {
            return Err(Error::Config("encoder input extent must be positive".into()));
        }
        for &c in &self.stage_channels {
            if c == 0 || self.norm_groups == 0 || c % self.norm_groups != 0 {
                return Err(Error::Config(format!(
                    "stage width {c} is not divisible into {} norm groups",
                    self.norm_groups
                )));
            }
        }
        if self.temporal_strides.iter().chain(&self.spatial_strides).any(|&s| s == 0) {
            return Err(Error::Config("strides must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Stable short hash of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug)]
struct Layer {
    conv: Conv3d,
    norm: GroupNorm,
    weight: usize,
    gamma: usize,
    beta: usize,
}

/// Backbone geometry. Parameters live outside, in a [`Params`] tree built by
/// [`Encoder::init_params`].
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    layers: Vec<Layer>,
    proj_w: usize,
    proj_b: usize,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug)]
pub struct EncoderCache<T> {
    cols: Vec<Vec<T>>,
    norms: Vec<NormCache<T>>,
    acts: Vec<Vec<T>>,
}

impl<T: Scalar> EncoderCache<T> {
    /// Feeds the ReLU on/off pattern into `h`. Two forward passes with equal
    /// patterns lie on the same smooth piece of the network.
    pub fn hash_pattern(&self, h: &mut impl std::hash::Hasher) {
        for act in &self.acts {
            for chunk in act.chunks(64) {
                let bits = chunk
                    .iter()
                    .enumerate()
                    .fold(0u64, |acc, (i, &v)| acc | (u64::from(v > T::zero()) << i));
                h.write_u64(bits);
            }
        }
    }
}

/// Output of the `φ` head.
#[derive(Clone, Debug)]
pub struct PhiOutput<T> {
    pub pooled: Pooled<T>,
    /// Projection before normalisation.
    pub projected: Vec<T>,
    pub embedding: Embedding<T>,
    norm: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T> {
    pub vector: Vec<T>,
    pub normalized: bool,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut extent = config.input_extent();
        let mut channels = config.in_channels;
        let mut idx = 0;
        for (s, &width) in config.stage_channels.iter().enumerate() {
            for i in 0..config.convs_per_stage {
                let stride = if i == 0 {
                    Extent::new(config.temporal_strides[s], config.spatial_strides[s], config.spatial_strides[s])
                } else {
                    Extent::new(1, 1, 1)
                };
                let conv = Conv3d::new(channels, width, extent, stride);
                extent = conv.output;
                channels = width;
                layers.push(Layer {
                    conv,
                    norm: GroupNorm::new(width, config.norm_groups, extent.volume()),
                    weight: idx,
                    gamma: idx + 1,
                    beta: idx + 2,
                });
                idx += 3;
            }
        }
        Ok(Self {
            config,
            layers,
            proj_w: idx,
            proj_b: idx + 1,
        })
    }

    pub fn feature_channels(&self) -> usize {
        *self.config.stage_channels.last().expect("validated non-empty")
    }

    pub fn feature_extent(&self) -> Extent {
        self.layers.last().expect("at least one layer").conv.output
    }

    /// `[C, T′, H′, W′]`.
    pub fn feature_shape(&self) -> Vec<usize> {
        let e = self.feature_extent();
        vec![self.feature_channels(), e.t, e.h, e.w]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Fresh parameters: He-normal convolutions, unit/zero norm affine and
    /// uniform `±1/√fan_in` linear heads. `classes` adds a classifier head.
    pub fn init_params<T: Scalar>(&self, classes: Option<usize>, rng: &mut Rng) -> Params<T> {
        let mut p = Params::default();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = p.push(format!("conv{l}.weight"), layer.conv.weight_shape());
            let std = (2.0 / layer.conv.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            p.tensors[w].data.iter_mut().for_each(|v| *v = T::from_f64_lossy(normal.sample(rng)));
            let g = p.push(format!("norm{l}.gamma"), vec![layer.conv.out_channels]);
            p.tensors[g].data.iter_mut().for_each(|v| *v = T::one());
            p.push(format!("norm{l}.beta"), vec![layer.conv.out_channels]);
        }
        let c = self.feature_channels();
        let mut uniform_head = |p: &mut Params<T>, name: &str, out: usize| {
            let bound = 1.0 / (c as f64).sqrt();
            let w = p.push(format!("{name}.weight"), vec![out, c]);
            let b = p.push(format!("{name}.bias"), vec![out]);
            for i in [w, b] {
                p.tensors[i]
                    .data
                    .iter_mut()
                    .for_each(|v| *v = T::from_f64_lossy(rng.random_range(-bound..bound)));
            }
        };
        uniform_head(&mut p, "proj", self.config.embed_dim);
        if let Some(m) = classes {
            uniform_head(&mut p, "cls", m);
        }
        p
    }

    pub fn has_classifier<T: Scalar>(&self, params: &Params<T>) -> bool {
        params.tensors.len() >= self.proj_b + 3
    }

    fn check_params<T: Scalar>(&self, params: &Params<T>) -> Result<()> {
        let need = self.proj_b + 1;
        if params.tensors.len() < need {
            return Err(Error::IncongruentParams(format!(
                "encoder expects at least {need} tensors, got {}",
                params.tensors.len()
            )));
        }
        for layer in &self.layers {
            let shape = &params.tensors[layer.weight].shape;
            if *shape != layer.conv.weight_shape() {
                return Err(Error::IncongruentParams(format!(
                    "{}: expected {:?}, got {shape:?}",
                    params.tensors[layer.weight].name,
                    layer.conv.weight_shape()
                )));
            }
        }
        Ok(())
    }

    /// Backbone forward pass for one `C×T×H×W` clip.
    pub fn forward<T: Scalar>(&self, params: &Params<T>, input: &[T]) -> Result<(FeatureMap<T>, EncoderCache<T>)> {
        if input.len() != self.config.input_len() {
            let e = self.config.input_extent();
            return Err(Error::ShapeMismatch {
                expected: vec![self.config.in_channels, e.t, e.h, e.w],
                actual: vec![input.len()],
            });
        }
        self.check_params(params)?;
        let mut cache = EncoderCache {
            cols: Vec::with_capacity(self.layers.len()),
            norms: Vec::with_capacity(self.layers.len()),
            acts: Vec::with_capacity(self.layers.len()),
        };
        let mut x: Option<Vec<T>> = None;
        for layer in &self.layers {
            let src = x.as_deref().unwrap_or(input);
            let (y, cols) = layer.conv.forward(&params.tensors[layer.weight].data, src);
            let (mut z, nc) = layer
                .norm
                .forward(&y, &params.tensors[layer.gamma].data, &params.tensors[layer.beta].data);
            z.iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v = T::zero()
                }
            });
            cache.cols.push(cols);
            cache.norms.push(nc);
            cache.acts.push(z.clone());
            x = Some(z);
        }
        let out = FeatureMap::new(self.feature_channels(), self.feature_extent(), x.expect("non-empty stack"))?;
        Ok((out, cache))
    }

    pub fn encode<T: Scalar>(&self, params: &Params<T>, input: &[T]) -> Result<FeatureMap<T>> {
        self.forward(params, input).map(|(f, _)| f)
    }

    /// Back-propagates `dfeature` (same layout as the feature map) through
    /// the backbone, accumulating into `grads`.
    pub fn backward<T: Scalar>(
        &self,
        params: &Params<T>,
        cache: &EncoderCache<T>,
        dfeature: &[T],
        grads: &mut Params<T>,
        need_input_grad: bool,
    ) -> Option<Vec<T>> {
        let mut d = dfeature.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (g, &a) in d.iter_mut().zip(&cache.acts[l]) {
                if a <= T::zero() {
                    *g = T::zero();
                }
            }
            let (dg, db) = {
                let (lo, hi) = grads.tensors.split_at_mut(layer.beta);
                (&mut lo[layer.gamma].data, &mut hi[0].data)
            };
            let dn = layer.norm.backward(&cache.norms[l], &params.tensors[layer.gamma].data, &d, dg, db);
            let need = l > 0 || need_input_grad;
            match layer.conv.backward(
                &params.tensors[layer.weight].data,
                &cache.cols[l],
                &dn,
                &mut grads.tensors[layer.weight].data,
                need,
            ) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }

    /// `φ`: spatio-temporal max → linear → optional L2 normalisation.
    pub fn pool_phi<T: Scalar>(&self, params: &Params<T>, f: &FeatureMap<T>, normalize: bool) -> PhiOutput<T> {
        let pooled = global_max_pool(f);
        let projected = linear_forward(
            &params.tensors[self.proj_w].data,
            &params.tensors[self.proj_b].data,
            &pooled.values,
        );
        let (vector, norm) = if normalize {
            l2_normalize(&projected)
        } else {
            (projected.clone(), T::one())
        };
        PhiOutput {
            pooled,
            projected,
            embedding: Embedding { vector, normalized: normalize },
            norm,
        }
    }

    /// Gradient of the `φ` head; returns `d feature map`.
    pub fn pool_phi_backward<T: Scalar>(
        &self,
        params: &Params<T>,
        f_len: usize,
        out: &PhiOutput<T>,
        dz: &[T],
        grads: &mut Params<T>,
    ) -> Vec<T> {
        let dy = if out.embedding.normalized {
            l2_normalize_backward(&out.embedding.vector, out.norm, dz)
        } else {
            dz.to_vec()
        };
        let (dw, db) = {
            let (lo, hi) = grads.tensors.split_at_mut(self.proj_b);
            (&mut lo[self.proj_w].data, &mut hi[0].data)
        };
        let dpooled = linear_backward(&params.tensors[self.proj_w].data, &out.pooled.values, &dy, dw, db);
        out.pooled.backward(&dpooled, f_len)
    }

    /// Pretext classifier logits on spatio-temporally pooled features.
    pub fn classify<T: Scalar>(&self, params: &Params<T>, f: &FeatureMap<T>) -> Result<(Vec<T>, Pooled<T>)> {
        if !self.has_classifier(params) {
            return Err(Error::Config("parameters carry no classifier head".into()));
        }
        let pooled = global_max_pool(f);
        let logits = linear_forward(
            &params.tensors[self.proj_b + 1].data,
            &params.tensors[self.proj_b + 2].data,
            &pooled.values,
        );
        Ok((logits, pooled))
    }

    pub fn classify_backward<T: Scalar>(&self, params: &Params<T>, f_len: usize, pooled: &Pooled<T>, dlogits: &[T], grads: &mut Params<T>) -> Vec<T> {
        let (w, b) = (self.proj_b + 1, self.proj_b + 2);
        let (dw, db) = {
            let (lo, hi) = grads.tensors.split_at_mut(b);
            (&mut lo[w].data, &mut hi[0].data)
        };
        let dpooled = linear_backward(&params.tensors[w].data, &pooled.values, dlogits, dw, db);
        pooled.backward(&dpooled, f_len)
    }

    /// Names of the tensors belonging to backbone and projection head (the
    /// part mirrored by a momentum encoder).
    pub fn is_backbone_or_projection(name: &str) -> bool {
        !name.starts_with("cls.")
    }

    /// Human/machine readable layer trace.
    pub fn describe(&self) -> serde_json::Value {
        let layers: Vec<_> = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                serde_json::json!({
                    "layer": l,
                    "in_channels": layer.conv.in_channels,
                    "out_channels": layer.conv.out_channels,
                    "stride": [layer.conv.stride.t, layer.conv.stride.h, layer.conv.stride.w],
                    "output": [layer.conv.out_channels, layer.conv.output.t, layer.conv.output.h, layer.conv.output.w],
                })
            })
            .collect();
        serde_json::json!({
            "input": [self.config.in_channels, self.config.input_frames, self.config.input_height, self.config.input_width],
            "feature": self.feature_shape(),
            "embed_dim": self.config.embed_dim,
            "config_hash": self.config.hash(),
            "layers": layers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dot;
    use crate::rng::rng_from_seed;

    pub(crate) fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            in_channels: 3,
            input_frames: 4,
            input_height: 6,
            input_width: 6,
            stage_channels: vec![4],
            temporal_strides: vec![1],
            spatial_strides: vec![2],
            convs_per_stage: 2,
            norm_groups: 2,
            embed_dim: 5,
        }
    }

    #[test]
    fn default_shape_trace() {
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        assert_eq!(enc.feature_shape(), vec![128, 2, 4, 4]);
        assert_eq!(enc.num_layers(), 8);
    }

    #[test]
    fn input_mismatch_reports_both_shapes() {
        let enc = Encoder::new(tiny_config()).unwrap();
        let p: Params<f64> = enc.init_params(None, &mut rng_from_seed(0));
        let err = enc.forward(&p, &[0.0; 10]).unwrap_err();
        match err {
            Error::ShapeMismatch { expected, actual } => {
                assert_eq!(expected, vec![3, 4, 6, 6]);
                assert_eq!(actual, vec![10]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn embedding_is_unit_norm_with_default_dim() {
        let cfg = EncoderConfig {
            input_height: 16,
            input_width: 16,
            stage_channels: vec![4, 8],
            temporal_strides: vec![1, 2],
            spatial_strides: vec![2, 2],
            ..EncoderConfig::default()
        };
        let enc = Encoder::new(cfg).unwrap();
        let p: Params<f32> = enc.init_params(None, &mut rng_from_seed(1));
        let mut rng = rng_from_seed(2);
        let x: Vec<f32> = (0..enc.config.input_len()).map(|_| rng.random()).collect();
        let f = enc.encode(&p, &x).unwrap();
        let out = enc.pool_phi(&p, &f, true);
        assert_eq!(out.embedding.vector.len(), 128);
        let n: f32 = dot(&out.embedding.vector, &out.embedding.vector).sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_feature_map_projects_to_normalized_bias() {
        let enc = Encoder::new(tiny_config()).unwrap();
        let p: Params<f64> = enc.init_params(None, &mut rng_from_seed(3));
        let f = FeatureMap::new(4, enc.feature_extent(), vec![0.0; 4 * enc.feature_extent().volume()]).unwrap();
        let out = enc.pool_phi(&p, &f, true);
        let bias = &p.get("proj.bias").unwrap().data;
        let norm = dot(bias, bias).sqrt();
        for (z, b) in out.embedding.vector.iter().zip(bias) {
            assert!((z - b / norm).abs() < 1e-12);
        }
    }

    #[test]
    fn samples_are_independent() {
        let enc = Encoder::new(tiny_config()).unwrap();
        let p: Params<f64> = enc.init_params(None, &mut rng_from_seed(4));
        let mut rng = rng_from_seed(5);
        let x: Vec<f64> = (0..enc.config.input_len()).map(|_| rng.random()).collect();
        let other: Vec<f64> = (0..enc.config.input_len()).map(|_| rng.random()).collect();
        let a = enc.encode(&p, &x).unwrap();
        let _ = enc.encode(&p, &other).unwrap();
        let b = enc.encode(&p, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.norm_groups = 3;
        assert!(Encoder::new(c).is_err());
        let mut c = tiny_config();
        c.spatial_strides.push(2);
        assert!(Encoder::new(c).is_err());
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(EncoderConfig::default().hash(), EncoderConfig::default().hash());
        assert_ne!(EncoderConfig::default().hash(), tiny_config().hash());
    }
}
