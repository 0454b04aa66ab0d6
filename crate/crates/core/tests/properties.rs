use bayesic::arrival_model::KernelSet;
use bayesic::clip_probability;
use bayesic::duration_model::{mixture_density, GaussianMixture};
use bayesic::evaluation::{auroc, average_precision, max_f1};
use proptest::prelude::*;

fn centers() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..168.0f64, 1..40)
}

fn labeled(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (prop::collection::vec(0u8..12, 2..n), prop::collection::vec(any::<bool>(), 2..n))
        .prop_map(|(s, l)| {
            let m = s.len().min(l.len());
            let mut l = l[..m].to_vec();
            l[0] = true;
            l[1] = false;
            (s[..m].iter().map(|x| *x as f64 / 12.0).collect(), l)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kde_is_rotation_invariant(cs in centers(), bw in 0.25..30.0f64, t in 0.0..168.0f64, shift in 0.0..168.0f64) {
        let rotate = |x: f64| (x + shift) % 168.0;
        let a = KernelSet::with_bandwidth(cs.clone(), bw).unwrap();
        let b = KernelSet::with_bandwidth(cs.iter().map(|c| rotate(*c)).collect(), bw).unwrap();
        let (da, db) = (a.density(t), b.density(rotate(t)));
        prop_assert!((da - db).abs() <= 1e-9 * da.max(1.0), "{da} vs {db}");
    }

    #[test]
    fn kde_fast_matches_naive(cs in centers(), bw in 0.25..30.0f64, t in 0.0..168.0f64) {
        let ks = KernelSet::with_bandwidth(cs, bw).unwrap();
        prop_assert!((ks.density(t) - ks.density_naive(t)).abs() < 1e-12);
    }

    #[test]
    fn kde_integrates_to_one(cs in centers(), bw in 0.25..30.0f64) {
        let ks = KernelSet::with_bandwidth(cs, bw).unwrap();
        let step = 0.01;
        let mass: f64 = (0..16_800).map(|i| ks.density((i as f64 + 0.5) * step)).sum::<f64>() * step;
        prop_assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }

    #[test]
    fn kde_probability_is_clipped(cs in centers(), bw in 0.25..30.0f64, t in 0.0..168.0f64) {
        let p = KernelSet::with_bandwidth(cs, bw).unwrap().probability(t).unwrap();
        prop_assert!((1e-9..=1.0).contains(&p));
    }

    #[test]
    fn mixture_integrates_to_one(
        raw in prop::collection::vec((0.01..1.0f64, 0.2..0.8f64, 0.02..0.1f64), 1..6),
    ) {
        let total: f64 = raw.iter().map(|r| r.0).sum();
        let gm = GaussianMixture::new(
            raw.iter().map(|r| r.0 / total).collect(),
            raw.iter().map(|r| r.1).collect(),
            raw.iter().map(|r| r.2).collect(),
        ).unwrap();
        let step = 1e-4;
        let mass: f64 = (0..20_000).map(|i| mixture_density(&gm, -0.5 + (i as f64 + 0.5) * step)).sum::<f64>() * step;
        prop_assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
    }

    #[test]
    fn auroc_flips_under_negation((s, l) in labeled(60)) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        let a = auroc(&s, &l).unwrap();
        prop_assert!((a + auroc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_monotone_rescaling((s, l) in labeled(60)) {
        let t: Vec<f64> = s.iter().map(|x| 3.0 * x * x * x + 0.5).collect();
        prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&t, &l).unwrap());
        prop_assert_eq!(average_precision(&s, &l).unwrap(), average_precision(&t, &l).unwrap());
        prop_assert_eq!(max_f1(&s, &l).unwrap().f1, max_f1(&t, &l).unwrap().f1);
    }

    #[test]
    fn max_f1_dominates_every_threshold((s, l) in labeled(60)) {
        let best = max_f1(&s, &l).unwrap();
        let pos = l.iter().filter(|x| **x).count();
        for &t in &s {
            let tp = s.iter().zip(&l).filter(|(x, y)| **x >= t && **y).count();
            let fp = s.iter().zip(&l).filter(|(x, y)| **x >= t && !**y).count();
            let f1 = (2 * tp) as f64 / (2 * tp + fp + pos - tp) as f64;
            prop_assert!(f1 <= best.f1 + 1e-15);
        }
        prop_assert!(best.f1 >= 0.0 && best.f1 <= 1.0);
    }

    #[test]
    fn clip_stays_in_range(x in prop::num::f64::ANY) {
        let c = clip_probability(x);
        prop_assert!((1e-9..=1.0).contains(&c));
    }
}
