//! Experiment configuration: one tree of typed sections addressable by flat
//! dotted keys (`optim.lr`, `distractor.gamma`, ...).
//!
//! Layering is defaults, then a JSON file, then individual key overrides.
//! Unknown keys are rejected at every layer.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::distractor::DistractorSpec;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::objectives::{ConsistencyMode, PretextKind};
use crate::synthdata::GeneratorConfig;
use crate::video::AugmentationSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Contrastive,
    Rotation4,
    ClipOrder3,
}

impl ObjectiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::Contrastive => "contrastive",
            ObjectiveKind::Rotation4 => "rotation4",
            ObjectiveKind::ClipOrder3 => "clip_order3",
        }
    }

    pub fn pretext(&self) -> Option<PretextKind> {
        match self {
            ObjectiveKind::Contrastive => None,
            ObjectiveKind::Rotation4 => Some(PretextKind::Rotation4),
            ObjectiveKind::ClipOrder3 => Some(PretextKind::ClipOrder3),
        }
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" | "moco" => Ok(ObjectiveKind::Contrastive),
            "rotation4" | "rotation" => Ok(ObjectiveKind::Rotation4),
            "clip_order3" | "clip_order" => Ok(ObjectiveKind::ClipOrder3),
            other => Err(Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    /// Momentum-encoder FIFO queue.
    Queue,
    /// Keys of the other videos in the current batch.
    InBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Contrastive: adds one same-video hard negative per anchor.
    /// Pretext: adds the consistency term. The distractor itself is
    /// configured separately.
    pub be: bool,
    pub beta: f64,
    pub temperature: f64,
    pub normalize_embeddings: bool,
    pub momentum: f64,
    pub queue_size: usize,
    pub consistency: ConsistencyMode,
    pub negatives: NegativeSource,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Contrastive,
            be: true,
            beta: 1.0,
            temperature: 0.1,
            normalize_embeddings: true,
            momentum: 0.999,
            queue_size: 1024,
            consistency: ConsistencyMode::Sum,
            negatives: NegativeSource::Queue,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipConfig {
    /// Temporal stride between sampled frames. The clip length and crop size
    /// are the encoder's input extent.
    pub stride: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { stride: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_milestones: vec![20, 25],
            lr_decay: 0.1,
        }
    }
}

impl OptimConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.lr_decay.powi(drops as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Clips averaged per test video.
    pub num_clips: usize,
    /// Clips per training video used as probe training samples.
    pub train_clips: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_weight_decay: f64,
    pub retrieval_k: Vec<usize>,
    /// Fraction of saliency voxels counted as "top" for overlap scores.
    pub saliency_top_fraction: f64,
    /// Blend weight of the add-static-frame attack.
    pub attack_lambda: f64,
    /// Clips per split used by the adversarial saliency probe.
    pub attack_clips: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            num_clips: 10,
            train_clips: 4,
            probe_epochs: 300,
            probe_lr: 0.5,
            probe_weight_decay: 1e-4,
            retrieval_k: vec![1, 5, 10, 20, 50],
            saliency_top_fraction: 0.1,
            attack_lambda: 0.3,
            attack_clips: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: GeneratorConfig,
    pub clip: ClipConfig,
    pub augment: AugmentationSet,
    pub distractor: DistractorSpec,
    pub objective: ObjectiveConfig,
    pub encoder: EncoderConfig,
    pub optim: OptimConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: GeneratorConfig::default(),
            clip: ClipConfig::default(),
            augment: AugmentationSet::default(),
            distractor: DistractorSpec::default(),
            objective: ObjectiveConfig::default(),
            encoder: EncoderConfig {
                input_height: 56,
                input_width: 56,
                ..EncoderConfig::default()
            },
            optim: OptimConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Flattens nested objects into dotted keys; arrays and scalars are leaves.
pub fn flatten(value: &Value) -> BTreeMap<String, Value> {
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            leaf => {
                out.insert(prefix.to_string(), leaf.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", value, &mut out);
    out
}

/// Parses a flag value: JSON when it parses, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl ExperimentConfig {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serialises")
    }

    fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets one dotted key. The key must already exist in the tree and the
    /// value must have its type; cross-key constraints are left to
    /// [`validate`](Self::validate) so overrides can be applied in any order.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        self.set_value(key, parse_value(raw))
    }

    pub fn set_value(&mut self, key: &str, value: Value) -> Result<()> {
        let mut tree = self.to_value();
        let mut node = &mut tree;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
            if !obj.contains_key(*part) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            if i + 1 == parts.len() {
                // Numbers given for string-typed enums and vice versa are
                // caught by deserialisation below.
                let old = &obj[*part];
                let value = match (old, value) {
                    (Value::String(_), Value::Number(n)) => Value::String(n.to_string()),
                    (Value::String(_), Value::Bool(b)) => Value::String(b.to_string()),
                    (_, v) => v,
                };
                obj.insert((*part).to_string(), value);
                break;
            }
            node = obj.get_mut(*part).expect("checked above");
        }
        *self = Self::from_value(tree)?;
        Ok(())
    }

    /// Applies a JSON document, nested or with dotted keys, on top of `self`.
    pub fn merge_json(&mut self, doc: &Value) -> Result<()> {
        if !doc.is_object() {
            return Err(Error::Config("config file must hold a JSON object".into()));
        }
        for (k, v) in flatten(doc) {
            self.set_value(&k, v)?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        self.merge_json(&doc)
    }

    /// Flat key/value view, sorted by key.
    pub fn flat(&self) -> BTreeMap<String, Value> {
        flatten(&self.to_value())
    }

    /// Hash of the canonical flat form; independent of key order in inputs.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(&self.flat()).expect("map serialises");
        let digest = Sha256::digest(canon.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.distractor.validate()?;
        self.encoder.validate()?;
        let o = &self.objective;
        if !(o.temperature > 0.0) || !(o.beta >= 0.0) || !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::Config(
                "objective needs temperature > 0, beta ≥ 0 and momentum in [0,1)".into(),
            ));
        }
        let p = &self.optim;
        if p.batch_size == 0 || !(p.lr > 0.0) || !(p.weight_decay >= 0.0) || !(0.0..1.0).contains(&p.momentum) {
            return Err(Error::Config(
                "optimiser needs batch_size ≥ 1, lr > 0, weight_decay ≥ 0, momentum in [0,1)".into(),
            ));
        }
        if self.clip.stride == 0 {
            return Err(Error::Config("clip.stride must be ≥ 1".into()));
        }
        if self.encoder.in_channels != 3 {
            return Err(Error::Config("videos are RGB; encoder.in_channels must be 3".into()));
        }
        if self.encoder.input_height > self.data.height || self.encoder.input_width > self.data.width {
            return Err(Error::Config(format!(
                "crop {}×{} exceeds frame size {}×{}",
                self.encoder.input_height, self.encoder.input_width, self.data.height, self.data.width
            )));
        }
        if self.clip_span() > self.data.frames {
            return Err(Error::Config(format!(
                "a clip spans {} frames but videos have {}",
                self.clip_span(),
                self.data.frames
            )));
        }
        if self.eval.num_clips == 0 || self.eval.train_clips == 0 {
            return Err(Error::Config("eval clip counts must be ≥ 1".into()));
        }
        if !(self.eval.saliency_top_fraction > 0.0 && self.eval.saliency_top_fraction <= 1.0) {
            return Err(Error::Config("eval.saliency_top_fraction must lie in (0,1]".into()));
        }
        Ok(())
    }

    /// Frames spanned by one clip.
    pub fn clip_span(&self) -> usize {
        self.encoder.input_frames * self.clip.stride
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validates_and_carries_declared_values() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.distractor.gamma, 0.3);
        assert_eq!(c.objective.beta, 1.0);
        assert_eq!(c.encoder.embed_dim, 128);
        assert_eq!(c.optim.momentum, 0.9);
        assert_eq!(c.optim.weight_decay, 5e-4);
    }

    #[test]
    fn dotted_keys_set_values() {
        let mut c = ExperimentConfig::default();
        c.set("optim.lr", "0.05").unwrap();
        c.set("distractor.variant", "mixup").unwrap();
        c.set("objective.kind", "rotation4").unwrap();
        c.set("seed", "7").unwrap();
        assert_eq!(c.optim.lr, 0.05);
        assert_eq!(c.distractor.variant, crate::distractor::DistractorVariant::Mixup);
        assert_eq!(c.objective.kind, ObjectiveKind::Rotation4);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut c = ExperimentConfig::default();
        assert!(c.set("optim.learning_rate", "0.1").is_err());
        assert!(c.set("nonsense", "1").is_err());
        assert!(c.set("optim.lr.x", "1").is_err());
        let doc = serde_json::json!({"optim": {"lr": 0.1, "bogus": 1}});
        assert!(c.merge_json(&doc).is_err());
    }

    #[test]
    fn hash_ignores_key_order() {
        let mut a = ExperimentConfig::default();
        a.merge_json(&serde_json::json!({"optim.lr": 0.2, "seed": 3})).unwrap();
        let mut b = ExperimentConfig::default();
        b.merge_json(&serde_json::json!({"seed": 3, "optim": {"lr": 0.2}})).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn lr_schedule_steps() {
        let o = OptimConfig::default();
        assert_eq!(o.lr_at(0), 0.01);
        assert!((o.lr_at(20) - 0.001).abs() < 1e-15);
        assert!((o.lr_at(29) - 0.0001).abs() < 1e-15);
    }
}
