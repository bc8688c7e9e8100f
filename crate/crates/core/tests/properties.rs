//! Invariants checked over generated inputs.

use bgerase::distractor::{apply_distractor, DistractorDraw, DistractorSpec, DistractorVariant};
use bgerase::eval::retrieval::recall_at_k;
use bgerase::eval::stats::pearson;
use bgerase::objectives::{consistency_loss_pooled, infonce, ConsistencyMode, EmbeddingTag, NegativeSets};
use bgerase::video::{temporal_difference, AugmentationSet, ClipDims, Frames, VideoClip};
use bgerase::rng::rng_from_seed;
use proptest::prelude::*;

fn clip_strategy() -> impl Strategy<Value = VideoClip> {
    (2usize..6, 1usize..5, 1usize..5, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(t, h, w, c)| {
        prop::collection::vec(0.0f32..=1.0, t * h * w * c).prop_map(move |data| {
            VideoClip::new(Frames::new(ClipDims::new(t, h, w, c), data).unwrap(), "v", 0, 1).unwrap()
        })
    })
}

fn draw(lambda: f32, k: usize) -> DistractorDraw {
    DistractorDraw { lambda, frame_index: k, region: None, noise_seed: 0 }
}

fn tag(v: &str, view: u64) -> EmbeddingTag {
    EmbeddingTag { video_id: v.into(), start: 0, view }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn static_blend_scales_temporal_difference(clip in clip_strategy(), lambda in 0.0f32..=0.3, k in 0usize..8, seed in any::<u64>()) {
        let d = clip.dims();
        let spec = DistractorSpec { gamma: 0.3, ..DistractorSpec::new(DistractorVariant::IntraFrame) };
        let (out, _) = apply_distractor(&clip, &spec, None, &draw(lambda, k % d.t)).unwrap();
        let (a, b) = (temporal_difference(&clip).unwrap(), temporal_difference(&out).unwrap());
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((y - (1.0 - lambda) * x).abs() <= 1e-6);
        }
        prop_assert!(out.frames.data.iter().all(|v| (0.0..=1.0).contains(v)));

        // A foreign static frame scales the difference the same way.
        let mut rng = rng_from_seed(seed);
        let donor_data = (0..d.len()).map(|_| rand::Rng::random::<f32>(&mut rng)).collect();
        let donor = VideoClip::new(Frames::new(d, donor_data).unwrap(), "w", 0, 1).unwrap();
        let spec = DistractorSpec { gamma: 0.3, ..DistractorSpec::new(DistractorVariant::InterFrame) };
        let (out, _) = apply_distractor(&clip, &spec, Some(&donor), &draw(lambda, k % d.t)).unwrap();
        let b = temporal_difference(&out).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((y - (1.0 - lambda) * x).abs() <= 1e-6);
        }
    }

    #[test]
    fn every_variant_stays_in_unit_range(clip in clip_strategy(), seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        for variant in DistractorVariant::ALL {
            let spec = DistractorSpec::new(variant);
            let (out, _) = bgerase::distractor::make_distractor(&clip, &spec, Some(&clip), &mut rng).unwrap();
            prop_assert!(out.frames.data.iter().all(|v| (0.0..=1.0).contains(v)), "{variant}");
            if variant == DistractorVariant::None {
                prop_assert_eq!(&out.frames.data, &clip.frames.data);
            }
        }
    }

    #[test]
    fn augmentation_stays_in_unit_range(clip in clip_strategy(), seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let a = AugmentationSet::default().sample(&mut rng);
        prop_assert!(a.apply(&clip).frames.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn recall_is_monotone_in_k(
        g in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 1..25),
        q in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 1..10),
        seed in any::<u64>(),
    ) {
        let gl: Vec<usize> = (0..g.len()).map(|i| (i as u64 ^ seed) as usize % 4).collect();
        let ql: Vec<usize> = (0..q.len()).map(|i| (i as u64 + seed) as usize % 4).collect();
        let ks: Vec<usize> = (1..=30).collect();
        let r = recall_at_k(&g, &gl, &q, &ql, &ks).unwrap();
        for w in r.entries.windows(2) {
            prop_assert!(w[1].recall >= w[0].recall);
        }
    }

    #[test]
    fn pearson_is_affine_invariant(
        x in prop::collection::vec(-10.0f64..10.0, 4..12),
        noise in prop::collection::vec(-1.0f64..1.0, 12),
        a in 0.5f64..4.0, b in -5.0f64..5.0, c in 0.5f64..4.0, d in -5.0f64..5.0,
    ) {
        let y: Vec<f64> = x.iter().zip(&noise).map(|(v, n)| 0.3 * v + n).collect();
        let base = pearson(&x, &y);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let ys: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        let moved = pearson(&xs, &ys).unwrap();
        prop_assert!((base.rho - moved.rho).abs() < 1e-9);
        let flipped = pearson(&xs.iter().map(|v| -v).collect::<Vec<_>>(), &ys).unwrap();
        prop_assert!((base.rho + flipped.rho).abs() < 1e-9);
    }

    #[test]
    fn infonce_is_permutation_invariant_and_monotone(
        sims in prop::collection::vec(-1.0f64..1.0, 2..8),
        sp in -1.0f64..1.0,
        tau in 0.05f64..2.0,
        rot in 0usize..8,
    ) {
        // One-dimensional embeddings: anchor 1, similarities are the values.
        let anchor = [1.0];
        let pos = [sp];
        let tags: Vec<EmbeddingTag> = (0..sims.len()).map(|i| tag("n", i as u64 + 10)).collect();
        let vecs: Vec<[f64; 1]> = sims.iter().map(|&s| [s]).collect();
        let build = |order: &[usize]| NegativeSets {
            queue: order.iter().map(|&i| (&tags[i], &vecs[i][..])).collect(),
            hard: Vec::new(),
        };
        let id: Vec<usize> = (0..sims.len()).collect();
        let mut perm = id.clone();
        perm.rotate_left(rot % sims.len());
        perm.reverse();
        let l0 = infonce(&anchor, &pos, &build(&id), tau, true).unwrap().loss;
        let l1 = infonce(&anchor, &pos, &build(&perm), tau, true).unwrap().loss;
        prop_assert!((l0 - l1).abs() < 1e-12);

        let up = infonce(&anchor, &[sp + 0.1], &build(&id), tau, true).unwrap().loss;
        prop_assert!(up < l0);
        let mut raised = vecs.clone();
        raised[0][0] += 0.1;
        let negs = NegativeSets { queue: id.iter().map(|&i| (&tags[i], &raised[i][..])).collect(), hard: Vec::new() };
        prop_assert!(infonce(&anchor, &pos, &negs, tau, true).unwrap().loss > l0);

        // With no hard negatives the hard-negative form equals the plain one.
        let plain = infonce(&anchor, &pos, &build(&id), tau, false).unwrap().loss;
        prop_assert_eq!(plain.to_bits(), l0.to_bits());
    }

    #[test]
    fn consistency_is_symmetric_and_nonnegative(
        a in prop::collection::vec(-3.0f64..3.0, 1..16),
        shift in -1.0f64..1.0,
    ) {
        let b: Vec<f64> = a.iter().map(|v| v * 0.5 + shift).collect();
        for mode in [ConsistencyMode::Sum, ConsistencyMode::Mean] {
            let (l1, _, _) = consistency_loss_pooled(&a, &b, mode).unwrap();
            let (l2, _, _) = consistency_loss_pooled(&b, &a, mode).unwrap();
            prop_assert!(l1 >= 0.0);
            prop_assert!((l1 - l2).abs() < 1e-12);
        }
    }
}
