//! Randomized invariants of the data pipeline, the schedule and
//! hard-class selection.

use mstcn::data::{
    collate, random_frame_drop, spatial_augment, variable_length_crop, SequenceSample,
};
use mstcn::rng::indexed_stream;
use mstcn::train::{cosine_lr, hard_class_select};
use proptest::prelude::*;

/// Clip whose frame `t` is filled with a value identifying `t`, except for
/// a per-pixel ramp so spatial crops are observable.
fn tagged(t: usize, h: usize, w: usize, target: (usize, usize)) -> SequenceSample {
    let mut frames = Vec::with_capacity(t * h * w);
    for f in 0..t {
        for p in 0..h * w {
            frames.push(((f * 7 + p) % 256) as f32 / 255.0);
        }
    }
    SequenceSample::new(frames, t, h, w, 0, target).unwrap()
}

fn frame_ids(s: &SequenceSample, source: &SequenceSample) -> Vec<usize> {
    (0..s.length)
        .map(|i| {
            (0..source.length)
                .find(|&j| source.frame(j) == s.frame(i))
                .expect("frame comes from the source clip")
        })
        .collect()
}

fn clip_strategy() -> impl Strategy<Value = SequenceSample> {
    (2usize..30).prop_flat_map(|t| {
        (Just(t), 0..t)
            .prop_flat_map(move |(t, s)| (s + 1..=t).prop_map(move |e| tagged(t, 3, 4, (s, e))))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn crop_keeps_target_frames(clip in clip_strategy(), seed in any::<u64>()) {
        let mut rng = indexed_stream(seed, "test", 0);
        let out = variable_length_crop(&clip, &mut rng);
        out.validate().unwrap();
        let (s, e) = clip.target;
        let (ns, ne) = out.target;
        prop_assert_eq!(ne - ns, e - s);
        prop_assert!(out.length >= e - s && out.length <= clip.length);
        for k in 0..e - s {
            prop_assert_eq!(out.frame(ns + k), clip.frame(s + k));
        }
        let ids = frame_ids(&out, &clip);
        prop_assert!(ids.windows(2).all(|w| w[1] == w[0] + 1));
    }

    #[test]
    fn frame_drop_preserves_order(clip in clip_strategy(), n_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let n = ((clip.length - 1) as f64 * n_frac) as usize;
        let mut rng = indexed_stream(seed, "test", 1);
        let out = random_frame_drop(&clip, n, &mut rng).unwrap();
        out.validate().unwrap();
        prop_assert_eq!(out.length, clip.length - n);
        let ids = frame_ids(&out, &clip);
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        // surviving target frames stay inside the remapped interval
        let (s, e) = clip.target;
        let (ns, ne) = out.target;
        for (i, &j) in ids.iter().enumerate() {
            if (s..e).contains(&j) {
                prop_assert!((ns..ne).contains(&i));
            }
        }
    }

    #[test]
    fn frame_drop_rejects_too_many(clip in clip_strategy(), extra in 0usize..3) {
        let mut rng = indexed_stream(0, "test", 2);
        prop_assert!(random_frame_drop(&clip, clip.length + extra, &mut rng).is_err());
    }

    #[test]
    fn spatial_crop_is_consistent_across_frames(seed in any::<u64>(), crop in 1usize..=6, flip in any::<bool>()) {
        let (t, h, w) = (5, 6, 6);
        let clip = tagged(t, h, w, (1, 4));
        let mut rng = indexed_stream(seed, "test", 3);
        let out = spatial_augment(&clip, crop, if flip { 1.0 } else { 0.0 }, true, &mut rng).unwrap();
        // recover the window from frame 0 and check every other frame agrees
        let locate = |f: usize| -> Vec<(usize, usize)> {
            let mut hits = Vec::new();
            for y0 in 0..=h - crop {
                for x0 in 0..=w - crop {
                    let ok = (0..crop).all(|y| (0..crop).all(|x| {
                        let sx = if flip { x0 + crop - 1 - x } else { x0 + x };
                        out.frame(f)[y * crop + x] == clip.frame(f)[(y0 + y) * w + sx]
                    }));
                    if ok {
                        hits.push((y0, x0));
                    }
                }
            }
            hits
        };
        let first = locate(0);
        prop_assert!(!first.is_empty());
        for f in 1..t {
            prop_assert_eq!(&locate(f), &first);
        }
    }

    #[test]
    fn collate_masks_match_lengths(lengths in prop::collection::vec(1usize..12, 1..6), extra in 0usize..3) {
        let clips: Vec<_> = lengths.iter().map(|&l| tagged(l, 2, 2, (0, l))).collect();
        let longest = *lengths.iter().max().unwrap();
        let batch = collate::<f32>(&clips, Some(longest + extra)).unwrap();
        let steps = longest + extra;
        prop_assert_eq!(batch.frames.shape(), &[lengths.len(), 1, steps, 2, 2][..]);
        prop_assert_eq!(&batch.lengths, &lengths);
        for (b, &l) in lengths.iter().enumerate() {
            for t in 0..steps {
                prop_assert_eq!(batch.mask.is_valid(b, t), t < l);
                let base = (b * steps + t) * 4;
                let px = &batch.frames.data()[base..base + 4];
                if t < l {
                    prop_assert_eq!(px, clips[b].frame(t));
                } else {
                    prop_assert!(px.iter().all(|&v| v == 0.0));
                }
            }
        }
        if extra == 0 && longest > 1 {
            prop_assert!(collate::<f32>(&clips, Some(longest - 1)).is_err());
        }
    }

    #[test]
    fn cosine_lr_is_bounded_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, max in 1e-6f64..1.0, frac in 0.0f64..=1.0) {
        let min = max * frac;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let at_lo = cosine_lr(lo, max, min).unwrap();
        let at_hi = cosine_lr(hi, max, min).unwrap();
        prop_assert!(at_hi <= at_lo);
        prop_assert!(at_lo <= max && at_hi >= min);
    }

    #[test]
    fn hard_classes_are_the_least_accurate(acc in prop::collection::vec(0.0f64..=1.0, 1..40), fraction in 0.01f64..=1.0) {
        let chosen = hard_class_select(&acc, fraction).unwrap();
        let m = (fraction * acc.len() as f64).ceil() as usize;
        prop_assert_eq!(chosen.len(), m.clamp(1, acc.len()));
        prop_assert!(chosen.windows(2).all(|w| w[0] < w[1]));
        let worst_chosen = chosen.iter().map(|&c| acc[c]).fold(f64::MIN, f64::max);
        for (c, &a) in acc.iter().enumerate() {
            if !chosen.contains(&c) {
                prop_assert!(a >= worst_chosen);
            }
        }
    }
}

#[test]
fn cosine_lr_rejects_bad_arguments() {
    assert!(cosine_lr(-0.01, 3e-4, 0.0).is_err());
    assert!(cosine_lr(1.01, 3e-4, 0.0).is_err());
    assert!(cosine_lr(0.5, 1e-4, 3e-4).is_err());
}

/// Each index is dropped with probability N/T: chi-square over 5000 draws.
#[test]
fn frame_drop_is_uniform() {
    let (t, n, draws) = (29usize, 5usize, 5000usize);
    let clip = tagged(t, 1, 1, (0, t));
    let mut counts = vec![0usize; t];
    for i in 0..draws {
        let mut rng = indexed_stream(9, "chi", i as u64);
        let out = random_frame_drop(&clip, n, &mut rng).unwrap();
        let kept = frame_ids(&out, &clip);
        for (j, c) in counts.iter_mut().enumerate() {
            if !kept.contains(&j) {
                *c += 1;
            }
        }
    }
    let expected = draws as f64 * n as f64 / t as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 28 degrees of freedom, p = 0.001 critical value
    assert!(chi2 < 56.89, "chi-square {chi2:.2}, counts {counts:?}");
}
