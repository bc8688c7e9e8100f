use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::probe::{argmax_f64, LinearProbe};
use super::saliency::{saliency_from_features, top_fraction_iou, SaliencyMap};
use crate::distractor::{apply_distractor, DistractorDraw, DistractorSpec, DistractorVariant};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::nn::Params;
use crate::rng::Rng;
use crate::synthdata::{sample_sprite, sprite_mask, MotionParams};
use crate::video::VideoClip;

/// Perturbations that leave the motion content of a clip unchanged or
/// remove it, used to check where the model looks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attack {
    /// Every frame replaced by the middle frame.
    StaticVideo,
    /// A motionless sprite composited onto every frame.
    PasteStaticActor,
    /// The middle frame blended into every frame with weight λ.
    AddStaticFrame,
}

impl Attack {
    pub const ALL: [Attack; 3] = [Attack::StaticVideo, Attack::PasteStaticActor, Attack::AddStaticFrame];

    pub fn name(self) -> &'static str {
        match self {
            Attack::StaticVideo => "static_video",
            Attack::PasteStaticActor => "paste_static_actor",
            Attack::AddStaticFrame => "add_static_frame",
        }
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attack {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Attack::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown attack {s:?}; expected one of static_video, paste_static_actor, add_static_frame")))
    }
}

/// Applies `attack`. `lambda` is used by `add_static_frame` only; `rng`
/// places the pasted actor.
pub fn apply_attack(clip: &VideoClip, attack: Attack, lambda: f32, rng: &mut Rng) -> Result<VideoClip> {
    let d = clip.dims();
    let mid = d.t / 2;
    match attack {
        Attack::StaticVideo => {
            let mut frames = clip.frames.clone();
            let still = clip.frames.frame(mid).to_vec();
            for t in 0..d.t {
                frames.frame_mut(t).copy_from_slice(&still);
            }
            Ok(clip.with_frames(frames))
        }
        Attack::AddStaticFrame => {
            let spec = DistractorSpec {
                variant: DistractorVariant::IntraFrame,
                gamma: lambda.max(0.0),
                ..DistractorSpec::default()
            };
            let draw = DistractorDraw { lambda, frame_index: mid, region: None, noise_seed: 0 };
            Ok(apply_distractor(clip, &spec, None, &draw)?.0)
        }
        Attack::PasteStaticActor => {
            use rand::Rng as _;
            let sprite = sample_sprite(rng);
            let motion = MotionParams {
                program: 0,
                origin: (rng.random_range(0.25..0.75), rng.random_range(0.25..0.75)),
                speed: 0.0,
                phase: 0.0,
                extent: 0.0,
                axis: 0.0,
            };
            let mask = sprite_mask(&sprite, &motion, 0, d.h, d.w);
            let mut frames = clip.frames.clone();
            for t in 0..d.t {
                let f = frames.frame_mut(t);
                for (p, &m) in mask.iter().enumerate() {
                    for ch in 0..d.c {
                        let v = &mut f[p * d.c + ch];
                        *v = (1.0 - m) * *v + m * sprite.color[ch.min(2)];
                    }
                }
            }
            Ok(clip.with_frames(frames))
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdversarialReport {
    pub attack: Attack,
    pub lambda: f32,
    pub top_fraction: f64,
    /// IoU of the top-`top_fraction` saliency regions, clean vs attacked.
    pub iou: f64,
    pub prediction_before: Option<usize>,
    pub prediction_after: Option<usize>,
    pub prediction_changed: Option<bool>,
    #[serde(skip)]
    pub clean: Option<SaliencyMap>,
    #[serde(skip)]
    pub attacked: Option<SaliencyMap>,
    #[serde(skip)]
    pub attacked_clip: Option<VideoClip>,
}

/// Saliency overlap and (with a probe) prediction change under `attack`.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_probe(
    encoder: &Encoder,
    params: &Params<f32>,
    probe: Option<&LinearProbe>,
    clip: &VideoClip,
    attack: Attack,
    lambda: f32,
    top_fraction: f64,
    rng: &mut Rng,
) -> Result<AdversarialReport> {
    let attacked = apply_attack(clip, attack, lambda, rng)?;
    let d = clip.dims();
    let run = |c: &VideoClip| -> Result<(SaliencyMap, Option<usize>)> {
        let f = encoder.encode(params, &c.to_channels_first::<f32>())?;
        let map = saliency_from_features(&f, (d.t, d.h, d.w));
        let pred = match probe {
            Some(p) => Some(argmax_f64(&p.logits(&encoder.pool_phi(params, &f, false).projected)?)),
            None => None,
        };
        Ok((map, pred))
    };
    let (clean_map, before) = run(clip)?;
    let (attacked_map, after) = run(&attacked)?;
    Ok(AdversarialReport {
        attack,
        lambda,
        top_fraction,
        iou: top_fraction_iou(&clean_map, &attacked_map, top_fraction)?,
        prediction_before: before,
        prediction_after: after,
        prediction_changed: before.zip(after).map(|(a, b)| a != b),
        clean: Some(clean_map),
        attacked: Some(attacked_map),
        attacked_clip: Some(attacked),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::video::{frames_difference, ClipDims, Frames};

    fn clip() -> VideoClip {
        let dims = ClipDims::new(6, 8, 8, 3);
        let data = (0..dims.len()).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        VideoClip::new(Frames::new(dims, data).unwrap(), "v", 0, 1).unwrap()
    }

    #[test]
    fn static_video_has_no_temporal_difference() {
        let a = apply_attack(&clip(), Attack::StaticVideo, 0.0, &mut rng_for(0, "a")).unwrap();
        assert!(frames_difference(&a.frames).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_lambda_static_frame_is_identity() {
        let c = clip();
        let a = apply_attack(&c, Attack::AddStaticFrame, 0.0, &mut rng_for(0, "a")).unwrap();
        assert_eq!(a.frames.data, c.frames.data);
    }

    #[test]
    fn names_round_trip() {
        for a in Attack::ALL {
            assert_eq!(a.name().parse::<Attack>().unwrap(), a);
        }
    }
}
