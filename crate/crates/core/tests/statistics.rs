//! Distributional checks against analytic laws.

use bgerase::distractor::{draw, make_distractor, DistractorSpec, DistractorVariant};
use bgerase::rng::rng_for;
use bgerase::synthdata::{generate_in_memory, GeneratorConfig, Split};
use bgerase::video::{sample_clip, temporal_difference, ClipDims, Frames, Video, VideoClip};
use rand::Rng as _;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn clip_starts_are_uniform() {
    let dims = ClipDims::new(70, 1, 1, 1);
    let video = Video { id: "v".into(), dims, data: (0..70).collect() };
    let mut rng = rng_for(11, "starts");
    let mut counts = [0f64; 7];
    for _ in 0..10_000 {
        let clip = sample_clip(&video, 16, 4, &mut rng).unwrap();
        counts[clip.start_index] += 1.0;
        assert_eq!(clip.frames.data[1] * 255.0, (clip.start_index + 4) as f32);
    }
    let expected = 10_000.0 / 7.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(6.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2:.2}, p {p:.4}");
}

#[test]
fn lambda_is_uniform_on_zero_gamma() {
    let dims = ClipDims::new(4, 2, 2, 1);
    let clip = VideoClip::new(Frames::filled(dims, 0.5), "v", 0, 1).unwrap();
    let spec = DistractorSpec::new(DistractorVariant::IntraFrame);
    let gamma = f64::from(spec.gamma);
    let mut rng = rng_for(3, "lambda");
    let mut l: Vec<f64> = (0..10_000).map(|_| f64::from(draw(&spec, &clip, None, &mut rng).lambda)).collect();
    l.sort_by(f64::total_cmp);
    let n = l.len() as f64;
    let d = l
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = x / gamma;
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // Asymptotic Kolmogorov critical value at the 1% level.
    assert!(d < 1.628 / n.sqrt(), "KS statistic {d:.4}");
    assert!(l.iter().all(|&x| (0.0..=gamma).contains(&x)));
}

#[test]
fn mixup_and_cutmix_break_the_scaling_law() {
    let dims = ClipDims::new(6, 8, 8, 3);
    let mut rng = rng_for(5, "motion");
    let moving = |rng: &mut bgerase::rng::Rng| {
        let data = (0..dims.len()).map(|_| rng.random::<f32>()).collect();
        VideoClip::new(Frames::new(dims, data).unwrap(), "m", 0, 1).unwrap()
    };
    let clip = moving(&mut rng);
    let donor = moving(&mut rng);
    let base = temporal_difference(&clip).unwrap();
    for variant in [DistractorVariant::Mixup, DistractorVariant::Cutmix] {
        let spec = DistractorSpec { gamma: 0.3, ..DistractorSpec::new(variant) };
        let (out, _) = make_distractor(&clip, &spec, Some(&donor), &mut rng).unwrap();
        let td = temporal_difference(&out).unwrap();
        // No single factor maps the clean difference onto the perturbed one.
        let num: f32 = base.data.iter().zip(&td.data).map(|(x, y)| x * y).sum();
        let den: f32 = base.data.iter().map(|x| x * x).sum();
        let s = num / den;
        let err = base.data.iter().zip(&td.data).map(|(x, y)| (y - s * x).abs()).fold(0.0f32, f32::max);
        assert!(err > 1e-3, "{variant} unexpectedly preserved the scaled difference");
    }
}

#[test]
fn empirical_bias_within_binomial_interval() {
    let cfg = GeneratorConfig {
        bias_rho: 0.9,
        videos_per_class: 100,
        test_videos_per_class: 1,
        frames: 4,
        height: 16,
        width: 16,
        ..GeneratorConfig::default()
    };
    let (manifest, videos) = generate_in_memory(&cfg).unwrap();
    let train: Vec<_> = manifest.split(Split::Train).collect();
    let hits = train.iter().filter(|r| r.background_id == r.class_label as i32).count();
    let rate = hits as f64 / train.len() as f64;
    assert!((0.85..=0.95).contains(&rate), "empirical bias {rate}");

    for (r, v) in manifest.records.iter().zip(&videos) {
        if r.split == Split::TestStatic {
            let td = temporal_difference(&v.to_clip().unwrap()).unwrap();
            assert!(td.data.iter().all(|&x| x == 0.0));
        }
    }
}
