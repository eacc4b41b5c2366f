use maskcd::decoding::argmax;
use maskcd::trace::{counts_from_str, counts_to_string, mask_from_str, mask_to_string};
use maskcd::{
    build_mask, contrastive_combine, count_exceedances, mask_overlap, mask_stats,
    normalize_counts, random_mask, AttentionTrace, CountMatrix, HeadGrid, HeadId, ImageHeadMask,
};
use proptest::prelude::*;

const TAUS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

fn trace_strategy() -> impl Strategy<Value = AttentionTrace> {
    (1usize..5, 1usize..6, 0usize..12).prop_flat_map(|(l, h, t)| {
        prop::collection::vec(0.0f64..=1.0, l * h * t).prop_map(move |values| {
            let mut trace = AttentionTrace::new(l, h);
            for chunk in values.chunks(l * h) {
                trace.push(HeadGrid::from_vec(l, h, chunk.to_vec()).unwrap(), 0).unwrap();
            }
            trace
        })
    })
}

fn mask_strategy(l: usize, h: usize) -> impl Strategy<Value = ImageHeadMask> {
    prop::collection::vec(any::<bool>(), l * h)
        .prop_map(move |keep| ImageHeadMask::from_keep(HeadGrid::from_vec(l, h, keep).unwrap()))
}

fn mask_pair() -> impl Strategy<Value = (ImageHeadMask, ImageHeadMask)> {
    (1usize..6, 1usize..6).prop_flat_map(|(l, h)| (mask_strategy(l, h), mask_strategy(l, h)))
}

proptest! {
    #[test]
    fn image_heads_shrink_as_tau_grows(trace in trace_strategy()) {
        let mut previous: Option<ImageHeadMask> = None;
        for tau in TAUS {
            let counts = count_exceedances(&trace, tau).unwrap();
            prop_assert!(counts.counts.as_slice().iter().all(|c| *c <= trace.len() as u64));
            let mask = build_mask(&counts);
            if let Some(prev) = &previous {
                for id in mask.image_heads() {
                    prop_assert!(prev.is_image_head(id));
                }
            }
            previous = Some(mask);
        }
    }

    #[test]
    fn counts_match_brute_force(trace in trace_strategy(), tau in 0.01f64..0.99) {
        let counts = count_exceedances(&trace, tau).unwrap();
        for (id, c) in counts.counts.iter() {
            let want = trace.entries().iter().filter(|e| *e.at(id) > tau).count() as u64;
            prop_assert_eq!(*c, want);
        }
        let mask = build_mask(&counts);
        for (id, c) in counts.counts.iter() {
            prop_assert_eq!(mask.is_image_head(id), *c > 0);
        }
        let s = mask_stats(&mask);
        prop_assert_eq!(s.num_image_heads + mask.keep().as_slice().iter().filter(|k| **k).count(), s.total_heads);
    }

    #[test]
    fn merge_is_associative_and_commutative(
        parts in prop::collection::vec(prop::collection::vec(0u64..50, 6), 3)
    ) {
        let cm = |v: &Vec<u64>| {
            let mut c = CountMatrix::zeros(2, 3, 0.5).unwrap();
            c.counts = HeadGrid::from_vec(2, 3, v.clone()).unwrap();
            c.total_tokens = 50;
            c
        };
        let (a, b, c) = (cm(&parts[0]), cm(&parts[1]), cm(&parts[2]));
        let mut left = a.clone();
        left.merge(&b).unwrap();
        left.merge(&c).unwrap();
        let mut bc = b.clone();
        bc.merge(&c).unwrap();
        let mut right = a.clone();
        right.merge(&bc).unwrap();
        prop_assert_eq!(&left, &right);
        let mut swapped = c.clone();
        swapped.merge(&a).unwrap();
        swapped.merge(&b).unwrap();
        prop_assert_eq!(&left, &swapped);
    }

    #[test]
    fn overlap_is_bounded_and_symmetric((a, b) in mask_pair()) {
        let ab = mask_overlap(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.ratio));
        prop_assert!(ab.intersection <= ab.union);
        prop_assert_eq!(ab, mask_overlap(&b, &a).unwrap());
        prop_assert_eq!(mask_overlap(&a, &a).unwrap().ratio, 1.0);
        let ia = a.image_heads();
        let ib = b.image_heads();
        let inter = ia.iter().filter(|h| ib.contains(h)).count();
        prop_assert_eq!(ab.intersection, inter);
        prop_assert_eq!(ab.union, ia.len() + ib.len() - inter);
    }

    #[test]
    fn normalization_preserves_order(values in prop::collection::vec(0u64..100, 1..30)) {
        let n = values.len();
        let mut c = CountMatrix::zeros(1, n, 0.5).unwrap();
        c.counts = HeadGrid::from_vec(1, n, values.clone()).unwrap();
        c.total_tokens = 100;
        let norm = normalize_counts(&c);
        let max = *values.iter().max().unwrap();
        for i in 0..n {
            prop_assert!((0.0..=1.0).contains(norm.get(0, i)));
            if max > 0 && values[i] == max {
                prop_assert_eq!(*norm.get(0, i), 1.0);
            }
            for j in 0..n {
                prop_assert_eq!(values[i].cmp(&values[j]), norm.get(0, i).partial_cmp(norm.get(0, j)).unwrap());
            }
        }
    }

    #[test]
    fn combine_argmax_ignores_common_shifts(
        pairs in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 2..40),
        alpha in 0.0f64..6.0,
        shift in -100.0f64..100.0,
    ) {
        let base: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let masked: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let c = contrastive_combine(&base, &masked, alpha).unwrap();
        let sb: Vec<f64> = base.iter().map(|v| v + shift).collect();
        let sm: Vec<f64> = masked.iter().map(|v| v + shift).collect();
        let cs = contrastive_combine(&sb, &sm, alpha).unwrap();
        let best = argmax(&c).unwrap() as usize;
        let best_shifted = argmax(&cs).unwrap() as usize;
        // Rounding can only matter between near-ties.
        prop_assert!(best == best_shifted || (c[best] - c[best_shifted]).abs() < 1e-9);
        for i in 0..c.len() {
            prop_assert!((cs[i] - c[i] - shift).abs() < 1e-9);
        }
    }

    #[test]
    fn combine_is_affine_in_alpha(
        pairs in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..20),
        a1 in 0.0f64..6.0,
        a2 in 0.0f64..6.0,
    ) {
        let base: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let masked: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let c1 = contrastive_combine(&base, &masked, a1).unwrap();
        let c2 = contrastive_combine(&base, &masked, a2).unwrap();
        let mid = contrastive_combine(&base, &masked, (a1 + a2) / 2.0).unwrap();
        for i in 0..base.len() {
            prop_assert!((mid[i] - (c1[i] + c2[i]) / 2.0).abs() < 1e-9);
            prop_assert!((c1[i] - ((1.0 + a1) * base[i] - a1 * masked[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn mask_files_round_trip(mask in (1usize..8, 1usize..8).prop_flat_map(|(l, h)| mask_strategy(l, h)),
                             tau in prop::option::of(0.0f64..1.0)) {
        let mut mask = mask.with_source("prop");
        mask.tau = tau;
        let back = mask_from_str(&mask_to_string(&mask)).unwrap();
        prop_assert_eq!(back.tau.map(f64::to_bits), mask.tau.map(f64::to_bits));
        prop_assert_eq!(back, mask);
    }

    #[test]
    fn count_files_round_trip(values in prop::collection::vec(0u64..1000, 12), tau in 0.001f64..0.999) {
        let mut c = CountMatrix::zeros(3, 4, tau).unwrap();
        c.counts = HeadGrid::from_vec(3, 4, values).unwrap();
        c.total_tokens = 1000;
        c.config_hash = Some("beef".into());
        prop_assert_eq!(counts_from_str(&counts_to_string(&c)).unwrap(), c);
    }

    #[test]
    fn random_masks_keep_cardinality(reference in (1usize..6, 2usize..6).prop_flat_map(|(l, h)| mask_strategy(l, h)),
                                     seed in any::<u64>()) {
        let k = reference.num_image_heads();
        let free = reference.keep().len() - k;
        match random_mask(&reference, seed) {
            Ok(m) => {
                prop_assert!(k <= free);
                prop_assert_eq!(m.num_image_heads(), k);
                prop_assert!(m.image_heads().iter().all(|h| !reference.is_image_head(*h)));
                prop_assert_eq!(m, random_mask(&reference, seed).unwrap());
            }
            Err(_) => prop_assert!(k > free),
        }
    }
}

#[test]
fn random_mask_draws_uniformly() {
    let reference = ImageHeadMask::from_image_heads(
        4,
        4,
        &[HeadId::new(0, 0), HeadId::new(1, 2), HeadId::new(3, 3)],
    )
    .unwrap();
    let draws = 10_000;
    let mut hits = HeadGrid::filled(4, 4, 0usize);
    for seed in 0..draws {
        for id in random_mask(&reference, seed).unwrap().image_heads() {
            *hits.get_mut(id.layer, id.head) += 1;
        }
    }
    let p = 3.0 / 13.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (id, n) in hits.iter() {
        if reference.is_image_head(id) {
            assert_eq!(*n, 0);
        } else {
            assert!((*n as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{id:?}: {n}");
        }
    }
}

#[test]
fn proportion_formatting() {
    let stats = |k: usize| {
        let ids: Vec<HeadId> = (0..k).map(|i| HeadId::new(i / 32, i % 32)).collect();
        mask_stats(&ImageHeadMask::from_image_heads(32, 32, &ids).unwrap())
    };
    assert_eq!(format!("{:.4}", stats(238).proportion), "0.2324");
    assert_eq!(stats(192).proportion, 0.1875);
    assert_eq!(stats(192).to_string(), "192 / 18.75%");
}
