//! Background Erasing for self-supervised video representation learning.
//!
//! Building blocks, bottom-up:
//!
//! - [`video`]: clip tensors, sampling, cropping, temporally consistent augmentation
//! - [`distractor`]: distracting-clip generation (intra-video static frame and ablation variants)
//! - [`synthdata`]: a scene-biased synthetic video benchmark and its on-disk format
//! - [`encoder`]: small 3D CNN backbone with `ψ`/`φ` heads
//! - [`objectives`]: pretext, consistency and contrastive losses, negative queue
//! - [`train`]: training steps, optimiser and pretraining loop
//! - [`eval`]: linear probe, retrieval, bias correlation, saliency
//! - [`experiment`]: end-to-end pipelines used by the CLI and the acceptance suite

pub mod checkpoint;
pub mod config;
pub mod distractor;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod synthdata;
pub mod train;
pub mod video;

pub use error::{Error, Result};
