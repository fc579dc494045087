use proptest::prelude::*;

use pulsegate::identify::fuse_votes;
use pulsegate::rpeak::{candidates, evaluate_peaks, peaks_from_probabilities};
use pulsegate::signal::{resample, zscore, EcgRecord};
use pulsegate::verify::{cosine_score, far_frr_eer, smote_pairs, PairSample, SWEEP_RESOLUTION};

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 2..300)
}

fn sorted_unique(max: usize, n: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::btree_set(0..max, 0..n).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn zscore_is_affine_invariant(x in signal(), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let (z, flat) = zscore(&x).unwrap();
        prop_assume!(!flat);
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let (zy, _) = zscore(&y).unwrap();
        for (p, q) in z.iter().zip(&zy) {
            prop_assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn zscore_is_idempotent(x in signal()) {
        let (z, _) = zscore(&x).unwrap();
        let (zz, _) = zscore(&z).unwrap();
        for (p, q) in z.iter().zip(&zz) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn zscore_has_zero_mean_unit_variance(x in signal()) {
        let (z, flat) = zscore(&x).unwrap();
        prop_assume!(!flat);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn upsampling_then_downsampling_recovers_smooth_signals(
        f in 0.5f64..4.0,
        phase in 0.0f64..6.0,
        n in 200usize..600,
    ) {
        let fs = 250.0;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs + phase).sin())
            .collect();
        let r = EcgRecord::new(x.clone(), fs, "s", 1, None).unwrap();
        let up = resample(&r, 500.0).unwrap();
        prop_assert_eq!(up.samples.len(), 2 * n - 1);
        let back = resample(&up, fs).unwrap();
        prop_assert_eq!(back.samples.len(), n);
        for (a, b) in x.iter().zip(&back.samples) {
            prop_assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn resampling_keeps_peaks_in_range(
        peaks in sorted_unique(400, 20),
        target in prop::sample::select(vec![128.0, 360.0, 500.0, 1000.0]),
    ) {
        let r = EcgRecord::new(vec![0.0; 400], 250.0, "s", 1, Some(peaks)).unwrap();
        let out = resample(&r, target).unwrap();
        let p = out.rpeaks.unwrap();
        prop_assert!(p.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(p.iter().all(|&i| i < out.samples.len()));
    }

    #[test]
    fn detected_peaks_respect_min_distance(
        probs in prop::collection::vec(0.0f32..1.0, 0..2000),
        threshold in 0.05f64..0.95,
        min_distance in 1usize..200,
    ) {
        let peaks = peaks_from_probabilities(&probs, threshold, min_distance);
        prop_assert!(peaks.windows(2).all(|w| w[1] - w[0] >= min_distance));
        prop_assert!(peaks.iter().all(|&p| probs[p] as f64 >= threshold));
    }

    #[test]
    fn raising_the_threshold_never_adds_candidates(
        probs in prop::collection::vec(0.0f32..1.0, 0..500),
        lo in 0.0f64..1.0,
        dt in 0.0f64..0.5,
    ) {
        let low = candidates(&probs, lo);
        let high = candidates(&probs, lo + dt);
        prop_assert!(high.iter().all(|i| low.contains(i)));
    }

    #[test]
    fn peak_matching_is_symmetric(
        a in sorted_unique(5000, 40),
        b in sorted_unique(5000, 40),
        tol in 0usize..60,
    ) {
        let ab = evaluate_peaks(&a, &b, tol);
        let ba = evaluate_peaks(&b, &a, tol);
        prop_assert_eq!(ab.true_positives, ba.true_positives);
        prop_assert_eq!(ab.false_positives, ba.false_negatives);
        prop_assert_eq!(ab.false_negatives, ba.false_positives);
        prop_assert_eq!(ab.true_positives + ab.false_positives, a.len());
        prop_assert!(ab.temporal_errors.iter().all(|&e| e <= tol as f64));
    }

    #[test]
    fn single_beat_fusion_is_argmax(p in prop::collection::vec(0.0f32..1.0, 2..12)) {
        let best = fuse_votes(std::slice::from_ref(&p)).unwrap();
        prop_assert!(p.iter().all(|&v| v <= p[best]));
        prop_assert!(p[..best].iter().all(|&v| v < p[best]));
    }

    #[test]
    fn unanimous_votes_win(
        rows in prop::collection::vec(prop::collection::vec(0.0f32..0.5, 5), 1..9),
        c in 0usize..5,
    ) {
        let rows: Vec<Vec<f32>> = rows
            .into_iter()
            .map(|mut r| {
                r[c] = 0.9;
                r
            })
            .collect();
        prop_assert_eq!(fuse_votes(&rows).unwrap(), c);
    }

    #[test]
    fn fusion_ignores_row_order(
        rows in prop::collection::vec(prop::collection::vec(0.0f32..1.0, 4), 1..9),
        rot in 0usize..9,
    ) {
        let mut shuffled = rows.clone();
        shuffled.rotate_left(rot % rows.len());
        prop_assert_eq!(fuse_votes(&rows).unwrap(), fuse_votes(&shuffled).unwrap());
    }

    #[test]
    fn cosine_is_scale_invariant(
        u in prop::collection::vec(0.01f32..1.0, 16),
        v in prop::collection::vec(0.01f32..1.0, 16),
        a in 0.1f32..10.0,
    ) {
        let s = cosine_score(&u, &v).unwrap();
        let scaled: Vec<f32> = u.iter().map(|x| x * a).collect();
        prop_assert!((s - cosine_score(&scaled, &v).unwrap()).abs() < 1e-5);
        prop_assert!((s - cosine_score(&v, &u).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-9).contains(&s));
    }

    #[test]
    fn smote_samples_lie_on_neighbour_segments(
        pts in prop::collection::vec(prop::collection::vec(0.0f32..1.0, 6), 6..12),
        ratio in 0.5f64..4.0,
        seed in 0u64..1000,
    ) {
        let matched: Vec<PairSample> = pts
            .iter()
            .map(|p| PairSample {
                subject: "s".into(),
                u: p[..3].to_vec(),
                v: p[3..].to_vec(),
                label: 1.0,
            })
            .collect();
        let out = smote_pairs(&matched, &[], ratio, 5, seed).unwrap();
        prop_assert_eq!(out.len(), matched.len() + (ratio * matched.len() as f64).round() as usize);
        let lo: Vec<f32> = (0..6).map(|d| pts.iter().map(|p| p[d]).fold(f32::MAX, f32::min)).collect();
        let hi: Vec<f32> = (0..6).map(|d| pts.iter().map(|p| p[d]).fold(f32::MIN, f32::max)).collect();
        for s in &out[matched.len()..] {
            prop_assert_eq!(s.label, 1.0);
            let x: Vec<f32> = s.u.iter().chain(&s.v).copied().collect();
            // on a segment between two input points
            let on_segment = pts.iter().any(|a| {
                pts.iter().any(|b| {
                    let d = (0..6)
                        .max_by(|&i, &j| (b[i] - a[i]).abs().total_cmp(&(b[j] - a[j]).abs()))
                        .unwrap();
                    let t0 = if b[d] == a[d] { 0.0 } else { (x[d] - a[d]) / (b[d] - a[d]) };
                    (-1e-4..=1.0 + 1e-4).contains(&t0)
                        && (0..6).all(|d| (a[d] + t0 * (b[d] - a[d]) - x[d]).abs() < 1e-4)
                })
            });
            prop_assert!(on_segment);
            for d in 0..6 {
                prop_assert!(x[d] >= lo[d] - 1e-6 && x[d] <= hi[d] + 1e-6);
            }
        }
    }

    #[test]
    fn rates_are_monotone_and_eer_is_bounded(
        genuine in prop::collection::vec(0.0f64..=1.0, 1..200),
        imposter in prop::collection::vec(0.0f64..=1.0, 1..200),
    ) {
        let c = far_frr_eer(&genuine, &imposter, SWEEP_RESOLUTION).unwrap();
        prop_assert!(c.far.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(c.frr.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((0.0..=1.0).contains(&c.eer));
        prop_assert!((0.0..=1.0).contains(&c.auc));
    }

    #[test]
    fn separating_the_score_distributions_cannot_raise_the_eer(
        genuine in prop::collection::vec(0.0f64..=1.0, 1..100),
        imposter in prop::collection::vec(0.0f64..=1.0, 1..100),
        shift in 0.0f64..0.5,
    ) {
        let base = far_frr_eer(&genuine, &imposter, SWEEP_RESOLUTION).unwrap().eer;
        let up: Vec<f64> = genuine.iter().map(|s| (s + shift).min(1.0)).collect();
        let moved = far_frr_eer(&up, &imposter, SWEEP_RESOLUTION).unwrap().eer;
        prop_assert!(moved <= base + 1e-9);
    }
}
