//! Shared fixtures for integration tests.
#![allow(dead_code)]

use std::hash::Hasher;

use bgerase::config::NegativeSource;
use bgerase::encoder::{Encoder, EncoderConfig};
use bgerase::nn::{pool_psi, Params};
use bgerase::objectives::{consistency_loss_pooled, ConsistencyMode, EmbeddingTag, Queue};
use bgerase::rng::{rng_for, Rng};
use bgerase::train::{contrastive_objective, pretext_objective, ContrastiveBatch, ContrastiveSettings, PretextSample};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Two conv layers, one per stage, on a 4×8×8 RGB input.
pub fn tiny_encoder() -> Encoder {
    Encoder::new(EncoderConfig {
        in_channels: 3,
        input_frames: 4,
        input_height: 8,
        input_width: 8,
        stage_channels: vec![4, 6],
        temporal_strides: vec![1, 2],
        spatial_strides: vec![2, 2],
        convs_per_stage: 1,
        norm_groups: 2,
        embed_dim: 5,
    })
    .unwrap()
}

pub fn gaussian_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// A scalar objective of the parameters: value, gradient and a signature of
/// its piecewise-linear region.
pub type Objective<'a> = dyn Fn(&Params<f64>) -> (f64, Params<f64>, u64) + 'a;

fn shifted(p: &Params<f64>, dir: &Params<f64>, h: f64) -> Params<f64> {
    let mut q = p.clone();
    q.add_scaled(dir, h);
    q
}

/// Relative error between the analytic directional derivative and the
/// central difference with step `h`. Directions whose ±h probes leave the
/// activation region of `θ` are resampled, so ReLU and max-pool kinks never
/// enter the comparison.
pub fn directional_check(obj: &Objective<'_>, params: &Params<f64>, h: f64, rng: &mut Rng) -> f64 {
    let (_, g, sig) = obj(params);
    for _ in 0..50 {
        let mut dir = params.zeros_like();
        for t in &mut dir.tensors {
            for v in &mut t.data {
                *v = StandardNormal.sample(rng);
            }
        }
        let norm = dir.dot(&dir).sqrt();
        dir.scale(1.0 / norm);
        let (lp, _, sp) = obj(&shifted(params, &dir, h));
        let (lm, _, sm) = obj(&shifted(params, &dir, -h));
        if sp != sig || sm != sig {
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        let analytic = g.dot(&dir);
        return (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
    }
    panic!("no kink-free direction found in 50 draws");
}

/// Runs the consistency, combined and InfoNCE gradient checks on a 2-video
/// batch in f64 and returns `(name, max relative error)` per objective.
pub fn gradient_suite(seed: u64, directions: usize) -> Vec<(&'static str, f64)> {
    let enc = tiny_encoder();
    let mut rng = rng_for(seed, "gradcheck");
    let n_in = enc.config.input_len();
    let inputs: Vec<Vec<f64>> = (0..4).map(|_| (0..n_in).map(|_| rng.random::<f64>()).collect()).collect();
    let h = 1e-3;
    let mut out = Vec::new();

    // Consistency term alone, two videos.
    let params: Params<f64> = enc.init_params(None, &mut rng);
    let consistency = |p: &Params<f64>| {
        let mut grads = p.zeros_like();
        let mut loss = 0.0;
        let mut hs = std::collections::hash_map::DefaultHasher::new();
        for pair in inputs.chunks(2) {
            let (fo, co) = enc.forward(p, &pair[0]).unwrap();
            let (fd, cd) = enc.forward(p, &pair[1]).unwrap();
            let (po, pd) = (pool_psi(&fo), pool_psi(&fd));
            let (l, d_o, d_d) = consistency_loss_pooled(&po.values, &pd.values, ConsistencyMode::Sum).unwrap();
            loss += l / 2.0;
            let half = |v: Vec<f64>| v.into_iter().map(|x| x / 2.0).collect::<Vec<_>>();
            let dfo = po.backward(&half(d_o), fo.data.len());
            let dfd = pd.backward(&half(d_d), fd.data.len());
            enc.backward(p, &co, &dfo, &mut grads, false);
            enc.backward(p, &cd, &dfd, &mut grads, false);
            co.hash_pattern(&mut hs);
            cd.hash_pattern(&mut hs);
            po.argmax.iter().chain(&pd.argmax).for_each(|&a| hs.write_usize(a));
        }
        (loss, grads, hs.finish())
    };
    let worst = (0..directions).map(|_| directional_check(&consistency, &params, h, &mut rng)).fold(0.0, f64::max);
    out.push(("consistency", worst));

    // Combined rotation pretext loss plus β·consistency.
    let params_cls: Params<f64> = enc.init_params(Some(4), &mut rng);
    let samples: Vec<PretextSample<f64>> = (0..2)
        .map(|_| PretextSample {
            transformed: (0..4).map(|_| (0..n_in).map(|_| rng.random::<f64>()).collect()).collect(),
            distracted: Some((0..n_in).map(|_| rng.random::<f64>()).collect()),
        })
        .collect();
    let combined = |p: &Params<f64>| {
        let (s, g, sig) = pretext_objective(&enc, p, &samples, 1.0, ConsistencyMode::Sum).unwrap();
        (s.loss, g, sig)
    };
    let worst = (0..directions).map(|_| directional_check(&combined, &params_cls, h, &mut rng)).fold(0.0, f64::max);
    out.push(("combined", worst));

    // InfoNCE with one hard negative per anchor; negatives fall back to the
    // other video's key because the queue is empty.
    let d = enc.config.embed_dim;
    let tag = |v: &str, s: usize, view: u64| EmbeddingTag { video_id: v.into(), start: s, view };
    let batch = ContrastiveBatch {
        anchors: vec![inputs[0].clone(), inputs[1].clone()],
        anchor_tags: vec![tag("a", 0, 1), tag("b", 0, 2)],
        positives: vec![unit(gaussian_vec(d, &mut rng)), unit(gaussian_vec(d, &mut rng))],
        positive_tags: vec![tag("a", 0, 3), tag("b", 0, 4)],
        hard: vec![
            Some((tag("a", 5, 5), unit(gaussian_vec(d, &mut rng)))),
            Some((tag("b", 3, 6), unit(gaussian_vec(d, &mut rng)))),
        ],
    };
    let queue = Queue::new(d, 8);
    let settings = ContrastiveSettings { temperature: 0.5, use_hard: true, normalize: true, negatives: NegativeSource::Queue };
    let infonce = |p: &Params<f64>| {
        let (s, g, sig) = contrastive_objective(&enc, p, &batch, &queue, &settings).unwrap();
        (s.loss, g, sig)
    };
    let worst = (0..directions).map(|_| directional_check(&infonce, &params, h, &mut rng)).fold(0.0, f64::max);
    out.push(("infonce", worst));
    out
}

/// A complete experiment small enough to train in well under a second.
pub fn tiny_experiment() -> bgerase::config::ExperimentConfig {
    let mut c = bgerase::config::ExperimentConfig::default();
    c.data = bgerase::synthdata::GeneratorConfig {
        num_classes: 4,
        videos_per_class: 4,
        test_videos_per_class: 4,
        frames: 12,
        height: 16,
        width: 16,
        ..Default::default()
    };
    c.encoder = EncoderConfig {
        in_channels: 3,
        input_frames: 4,
        input_height: 12,
        input_width: 12,
        stage_channels: vec![4, 8],
        temporal_strides: vec![1, 2],
        spatial_strides: vec![2, 2],
        convs_per_stage: 1,
        norm_groups: 2,
        embed_dim: 8,
    };
    c.optim.epochs = 2;
    c.optim.batch_size = 4;
    c.objective.queue_size = 16;
    c.eval.probe_epochs = 50;
    c.eval.num_clips = 3;
    c.eval.train_clips = 2;
    c.validate().unwrap();
    c
}

/// All-pairs cosine oracle: for each query, count gallery items of another
/// class strictly more similar (or equally similar at a lower index) than
/// the best same-class item.
pub fn brute_force_recall(g: &[Vec<f32>], gl: &[usize], q: &[Vec<f32>], ql: &[usize], k: usize) -> f64 {
    let cos = |a: &[f32], b: &[f32]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let mut hits = 0;
    for (qi, qv) in q.iter().enumerate() {
        let mut found = false;
        for (gi, gv) in g.iter().enumerate() {
            if gl[gi] != ql[qi] {
                continue;
            }
            let s = cos(qv, gv);
            let better = g
                .iter()
                .enumerate()
                .filter(|&(j, hv)| {
                    let t = cos(qv, hv);
                    t > s || (t == s && j < gi)
                })
                .count();
            if better < k {
                found = true;
            }
        }
        hits += usize::from(found);
    }
    hits as f64 / q.len() as f64
}

/// Pearson ρ from the raw covariance definition.
pub fn direct_rho(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0);
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    cov / (sx * sy)
}
