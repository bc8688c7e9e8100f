//! End-to-end behaviour: persistence, determinism, training and evaluation.

mod common;

use std::path::Path;

use bgerase::checkpoint;
use bgerase::config::ExperimentConfig;
use bgerase::encoder::Encoder;
use bgerase::eval::probe::{fit_on_videos, static_probe};
use bgerase::eval::retrieval::recall_at_k;
use bgerase::eval::stats::pearson;
use bgerase::eval::{saliency_map, video_features, FeatureKind, ProbeConfig};
use bgerase::experiment::{evaluate_arm, run_arm, Dataset};
use bgerase::nn::Params;
use bgerase::rng::rng_for;
use bgerase::synthdata::{generate_dataset, load_clip, ClipParams, GeneratorConfig, Split, SyntheticDatasetManifest};
use bgerase::train::{ClipGeometry, Trainer};
use bgerase::video::Video;
use bgerase::Error;
use rand::Rng as _;

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn small_data() -> GeneratorConfig {
    GeneratorConfig {
        num_classes: 8,
        videos_per_class: 3,
        test_videos_per_class: 2,
        frames: 8,
        height: 16,
        width: 16,
        bias_rho: 0.95,
        seed: 7,
        ..GeneratorConfig::default()
    }
}

#[test]
fn dataset_generation_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&small_data(), a.path()).unwrap();
    generate_dataset(&small_data(), b.path()).unwrap();
    let (da, db) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert!(da.len() > 1);
    assert_eq!(da, db);
}

#[test]
fn stored_videos_round_trip_and_corruption_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small_data(), dir.path()).unwrap();
    let (mem, videos) = bgerase::synthdata::generate_in_memory(&small_data()).unwrap();
    let loaded = SyntheticDatasetManifest::load(dir.path()).unwrap();
    for (r, v) in mem.records.iter().zip(&videos) {
        assert_eq!(&loaded.load_video(loaded.record(&r.id).unwrap()).unwrap(), v);
    }
    let id = &m.records[0].id;
    let params = ClipParams { length: 4, stride: 2 };
    let c1 = load_clip(&loaded, id, params, &mut rng_for(1, "clip")).unwrap();
    let c2 = load_clip(&loaded, id, params, &mut rng_for(1, "clip")).unwrap();
    assert_eq!(c1, c2);

    let path = loaded.video_path(&loaded.records[0]);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    match load_clip(&loaded, id, params, &mut rng_for(1, "clip")) {
        Err(Error::CorruptFile { path: p, .. }) => assert_eq!(p, path),
        other => panic!("expected a corrupt-file error, got {other:?}"),
    }
}

fn tiny_data(cfg: &ExperimentConfig) -> Dataset {
    Dataset::generate(&cfg.data).unwrap()
}

#[test]
fn first_contrastive_step_is_near_uniform_and_deterministic() {
    let cfg = common::tiny_experiment();
    let data = tiny_data(&cfg);
    let train = data.train_videos();
    let videos: Vec<&Video> = train.iter().take(4).collect();
    let donors: Vec<&Video> = train.iter().skip(4).take(4).collect();
    let mut a = Trainer::new(cfg.clone()).unwrap();
    let mut b = Trainer::new(cfg).unwrap();
    let ma = a.train_step(&videos, &donors).unwrap();
    let mb = b.train_step(&videos, &donors).unwrap();
    assert_eq!(ma, mb);
    // Empty queue: three in-batch keys plus one hard negative.
    assert_eq!(ma.num_negatives, 4);
    let uniform = 5f64.ln();
    assert!((ma.loss - uniform).abs() < 0.2 * uniform, "loss {} vs ln 5", ma.loss);
    assert_eq!(a.params, b.params);
    assert_eq!(a.queue.len(), 4);
}

#[test]
fn pretext_training_keeps_consistency_nonnegative() {
    let mut cfg = common::tiny_experiment();
    cfg.objective.kind = bgerase::config::ObjectiveKind::Rotation4;
    let data = tiny_data(&cfg);
    let mut seen = 0;
    bgerase::train::pretrain(&cfg, &data.train_videos(), &mut |m| {
        seen += 1;
        assert!(m.consistency_loss.unwrap() >= 0.0);
        assert!(m.pretext_acc.unwrap() <= 1.0);
    })
    .unwrap();
    assert!(seen > 0);
}

#[test]
fn checkpoint_round_trips_full_state() {
    let cfg = common::tiny_experiment();
    let data = tiny_data(&cfg);
    let trainer = bgerase::train::pretrain(&cfg, &data.train_videos(), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.beck");
    let hash = checkpoint::save(&trainer, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded.content_hash, hash);
    let t = loaded.trainer;
    assert_eq!(t.config, trainer.config);
    assert_eq!(t.params, trainer.params);
    assert_eq!(t.momentum, trainer.momentum);
    assert_eq!(t.queue, trainer.queue);
    assert_eq!(t.optimizer, trainer.optimizer);
    assert_eq!((t.step, t.epoch, t.next_view), (trainer.step, trainer.epoch, trainer.next_view));
    assert_eq!(checkpoint::save(&t, &dir.path().join("again.beck")).unwrap(), hash);

    let described = checkpoint::describe(&path).unwrap();
    assert_eq!(described["config_hash"], cfg.hash());
    assert_eq!(described["content_hash"], hash);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(Error::CorruptFile { .. })));
}

#[test]
fn training_and_evaluation_are_reproducible() {
    let cfg = common::tiny_experiment();
    let data = tiny_data(&cfg);
    let (_, a) = run_arm(&data, &cfg, &mut |_| {}).unwrap();
    let (_, b) = run_arm(&data, &cfg, &mut |_| {}).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

fn random_encoder(cfg: &ExperimentConfig, seed: u64) -> (Encoder, Params<f32>) {
    let enc = Encoder::new(cfg.encoder.clone()).unwrap();
    let p = enc.init_params(None, &mut rng_for(seed, "init"));
    (enc, p)
}

#[test]
fn random_encoder_probe_is_near_chance() {
    // Backgrounds are independent of the class here, and an untrained
    // encoder on 4-frame clips gives the probe little motion signal.
    let mut cfg = common::tiny_experiment();
    cfg.data = GeneratorConfig {
        num_classes: 8,
        videos_per_class: 12,
        test_videos_per_class: 12,
        bias_rho: 0.125,
        frames: 12,
        height: 16,
        width: 16,
        ..GeneratorConfig::default()
    };
    let data = tiny_data(&cfg);
    let mut accs = Vec::new();
    for seed in 0..3 {
        let (encoder, params) = random_encoder(&cfg, seed);
        let mut t = Trainer::new(cfg.clone()).unwrap();
        t.encoder = encoder;
        t.params = params;
        accs.push(evaluate_arm(&data, &t).unwrap().antibias.top1);
    }
    let mean = accs.iter().sum::<f64>() / 3.0;
    assert!((mean - 0.125).abs() <= 0.05, "mean anti-bias accuracy {mean} ({accs:?})");
}

#[test]
fn probe_predictions_are_functions_of_the_video() {
    let cfg = common::tiny_experiment();
    let data = tiny_data(&cfg);
    let (encoder, params) = random_encoder(&cfg, 0);
    let g = ClipGeometry::from_config(&cfg);
    let pc = ProbeConfig::from_eval(&cfg.eval);
    let (tv, tl): (Vec<&Video>, Vec<usize>) = data.split(Split::Train).into_iter().unzip();
    let tf = video_features(&encoder, &params, &tv, g, pc.train_clips, FeatureKind::Projection).unwrap();
    let probe = fit_on_videos(&tf, &tl, data.num_classes(), &pc).unwrap();

    // The same video twice gets the same prediction.
    let test = data.split(Split::TestInbias);
    let dup: Vec<&Video> = vec![test[0].0, test[0].0];
    let f = video_features(&encoder, &params, &dup, g, 10, FeatureKind::Projection).unwrap();
    let r = probe.evaluate("dup", &f, &[test[0].1, test[0].1]).unwrap();
    assert_eq!(r.predictions[0], r.predictions[1]);

    // Static videos: one clip and ten clips give the same answer.
    let (sv, sl): (Vec<&Video>, Vec<usize>) = data.split(Split::TestStatic).into_iter().unzip();
    let f1 = video_features(&encoder, &params, &sv, g, 1, FeatureKind::Projection).unwrap();
    let f10 = video_features(&encoder, &params, &sv, g, 10, FeatureKind::Projection).unwrap();
    let r1 = probe.evaluate("s", &f1, &sl).unwrap();
    let r10 = probe.evaluate("s", &f10, &sl).unwrap();
    assert_eq!(r1.predictions, r10.predictions);
    assert_eq!(r1.per_class_accuracy, r10.per_class_accuracy);

    // Static accuracy recomputes bit-for-bit.
    let a = static_probe(&f1, &sl, data.num_classes(), &pc).unwrap();
    let b = static_probe(&f1, &sl, data.num_classes(), &pc).unwrap();
    assert_eq!(a, b);
}

#[test]
fn saliency_is_deterministic_and_in_range() {
    let cfg = common::tiny_experiment();
    let data = tiny_data(&cfg);
    let (encoder, params) = random_encoder(&cfg, 2);
    let g = ClipGeometry::from_config(&cfg);
    let v = data.split(Split::TestInbias)[0].0;
    let clip = g.extract(v, 0, g.center_crop(v)).unwrap();
    let a = saliency_map(&encoder, &params, &clip).unwrap();
    let b = saliency_map(&encoder, &params, &clip).unwrap();
    assert_eq!(a, b);
    let d = clip.dims();
    assert_eq!((a.t, a.h, a.w), (d.t, d.h, d.w));
    assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn retrieval_matches_exhaustive_oracle() {
    let mut rng = rng_for(9, "retrieval");
    let g: Vec<Vec<f32>> = (0..20).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let gl: Vec<usize> = (0..20).map(|i| i % 5).collect();
    let q: Vec<Vec<f32>> = (0..12).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ql: Vec<usize> = (0..12).map(|i| (i * 3) % 5).collect();
    let ks: Vec<usize> = (1..=20).collect();
    let r = recall_at_k(&g, &gl, &q, &ql, &ks).unwrap();
    for e in &r.entries {
        assert_eq!(e.recall, common::brute_force_recall(&g, &gl, &q, &ql, e.k));
    }
    assert_eq!(r.entries.last().unwrap().recall, 1.0);
    let self_r = recall_at_k(&g, &gl, &g, &gl, &[1]).unwrap();
    assert_eq!(self_r.entries[0].recall, 1.0);
}

#[test]
fn pearson_matches_direct_formula() {
    let x = [0.91, 0.74, 0.55, 0.62, 0.38, 0.83, 0.47, 0.69];
    let y = [-0.02, 0.05, 0.11, 0.04, 0.17, 0.00, 0.09, 0.06];
    let p = pearson(&x, &y).unwrap();
    assert!((p.rho - common::direct_rho(&x, &y)).abs() < 1e-10);
    assert!(p.rho < 0.0 && (0.0..=1.0).contains(&p.p_value));
}
