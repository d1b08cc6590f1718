use proptest::prelude::*;
use trimap_core::predictors::{logits_to_trimap, OraclePredictor, Predictor, PredictorInput};
use trimap_core::raster::{distance_transform, max_of, resize_nearest};
use trimap_core::simulation::*;
use trimap_core::types::*;
use trimap_core::Error;
use LabelClass::*;

fn trimap_strategy(w: usize, h: usize) -> impl Strategy<Value = Trimap> {
    proptest::collection::vec(0usize..3, w * h).prop_map(move |v| {
        Raster::from_vec(w, h, v.into_iter().map(|i| LabelClass::ALL[i]).collect()).unwrap()
    })
}

fn pair_strategy(max: usize) -> impl Strategy<Value = (Trimap, Trimap)> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| (trimap_strategy(w, h), trimap_strategy(w, h)))
}

/// Axis-aligned rectangles painted in order over a background canvas.
fn blocky_trimap(w: usize, h: usize, rects: &[(usize, usize, usize, usize, usize)]) -> Trimap {
    let mut t = Raster::filled(w, h, Background);
    for &(x, y, rw, rh, c) in rects {
        for yy in y..(y + rh).min(h) {
            for xx in x..(x + rw).min(w) {
                t.set(xx, yy, LabelClass::ALL[c]);
            }
        }
    }
    t
}

fn misclassified(a: &Trimap, b: &Trimap) -> usize {
    a.data().iter().zip(b.data()).filter(|(p, q)| p != q).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn masks_partition_every_trimap(t in trimap_strategy(7, 5)) {
        let masks = trimap_to_masks(&t);
        for i in 0..t.len() {
            let hits = masks.0.iter().filter(|m| m.data()[i]).count();
            prop_assert_eq!(hits, 1);
        }
        prop_assert_eq!(masks_to_trimap(&masks).unwrap(), t);
    }

    #[test]
    fn fn_masks_follow_definition((pred, gt) in pair_strategy(16)) {
        match compute_error_report(&pred, &gt) {
            Ok(r) => {
                for c in LabelClass::ALL {
                    for i in 0..gt.len() {
                        let expected = pred.data()[i] != c && gt.data()[i] == c;
                        prop_assert_eq!(r.fn_masks[c].data()[i], expected);
                    }
                    prop_assert_eq!(r.d[c], max_of(&distance_transform(&r.fn_masks[c])));
                }
                prop_assert_eq!(r.is_converged(), pred == gt);
            }
            Err(Error::EmptyTarget) => prop_assert!(gt.data().iter().all(|&l| l == Background)),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn cups_matches_two_branch_rule(
        d in prop::array::uniform3(0.0f64..50.0),
        d_t in 1.0f64..100.0,
        alpha in 0.0f64..=1.0,
        beta in 0.0f64..10.0,
    ) {
        let d_max = d.iter().copied().fold(0.0, f64::max);
        prop_assume!(d_max > 0.0);
        let r = ErrorReport {
            fn_masks: PerClass::from_fn(|c| Raster::filled(1, 1, d[c.index()] > 0.0)),
            d: PerClass(d),
            d_max,
            d_t,
            e_level: d_max / d_t,
        };
        let cfg = SimulationConfig { alpha_threshold: alpha, beta_threshold: beta, ..Default::default() };
        let expected = if d_max / d_t < alpha && d[2] > beta {
            Unknown
        } else {
            // first maximum in F, B, U order
            let mut best = Foreground;
            for c in [Background, Unknown] {
                if d[c.index()] > d[best.index()] {
                    best = c;
                }
            }
            best
        };
        prop_assert_eq!(cups_next_class(&r, &cfg).unwrap(), expected);
    }

    #[test]
    fn click_progress((pred, gt) in pair_strategy(14), cups in any::<bool>()) {
        prop_assume!(gt.data().iter().any(|&l| l != Background));
        let policy = if cups { Policy::Cups } else { Policy::Itts };
        let cfg = SimulationConfig::default();
        match simulate_step(&pred, &gt, &cfg, policy, 0).unwrap() {
            PolicyDecision::Converged => prop_assert_eq!(&pred, &gt),
            PolicyDecision::NextClick(c) => {
                prop_assert_eq!(*gt.get(c.x, c.y), c.label);
                prop_assert_ne!(*pred.get(c.x, c.y), c.label);
                let mut next = pred.clone();
                next.set(c.x, c.y, c.label);
                prop_assert!(misclassified(&next, &gt) < misclassified(&pred, &gt));
            }
        }
    }

    #[test]
    fn two_class_clicks_only_foreground_or_background((pred, gt) in pair_strategy(14)) {
        prop_assume!(gt.data().iter().any(|&l| l != Background));
        let cfg = SimulationConfig::default();
        if let PolicyDecision::NextClick(c) = simulate_step(&pred, &gt, &cfg, Policy::TwoClass, 0).unwrap() {
            prop_assert_ne!(c.label, Unknown);
            let (p2, g2) = (collapse_two_class(&pred), collapse_two_class(&gt));
            prop_assert_eq!(*g2.get(c.x, c.y), c.label);
            prop_assert_ne!(*p2.get(c.x, c.y), c.label);
        }
    }

    #[test]
    fn scaling_by_two_scales_error_sizes(
        rects_gt in proptest::collection::vec((0usize..20, 0usize..20, 3usize..14, 3usize..14, 0usize..3), 1..4),
        rects_pred in proptest::collection::vec((0usize..20, 0usize..20, 3usize..14, 3usize..14, 0usize..3), 0..4),
    ) {
        let gt = blocky_trimap(24, 24, &rects_gt);
        let pred = blocky_trimap(24, 24, &rects_pred);
        prop_assume!(gt.data().iter().any(|&l| l != Background));
        let small = compute_error_report(&pred, &gt).unwrap();
        let big = compute_error_report(&resize_nearest(&pred, 48, 48), &resize_nearest(&gt, 48, 48)).unwrap();
        // a pixel step at the coarse scale is two at the fine one
        for c in LabelClass::ALL {
            prop_assert!((big.d[c] - 2.0 * small.d[c]).abs() <= 2.0, "{:?}: {} vs {}", c, big.d[c], small.d[c]);
        }
        prop_assert!((big.d_t - 2.0 * small.d_t).abs() <= 2.0);
        if small.d_max > 0.0 {
            let lo = (2.0 * small.d_max - 2.0) / (2.0 * small.d_t + 2.0);
            let hi = (2.0 * small.d_max + 2.0) / (2.0 * small.d_t - 2.0);
            prop_assert!(big.e_level >= lo - 1e-12 && big.e_level <= hi + 1e-12);
            let mut sorted = small.d.0;
            sorted.sort_by(f64::total_cmp);
            if sorted[2] - sorted[1] > 2.0 {
                prop_assert_eq!(itts_next_class(&small).unwrap(), itts_next_class(&big).unwrap());
            }
        }
    }

    #[test]
    fn click_encoding_ignores_order(
        clicks in proptest::collection::vec((0usize..20, 0usize..15, 0usize..3), 0..8),
        radius in 0.0f64..6.0,
    ) {
        let cs: Vec<Click> = clicks.iter().enumerate().map(|(i, &(x, y, c))| Click::new(x, y, LabelClass::ALL[c], i)).collect();
        let mut rev = cs.clone();
        rev.reverse();
        prop_assert_eq!(encode_clicks(&cs, 20, 15, radius).unwrap(), encode_clicks(&rev, 20, 15, radius).unwrap());
    }

    #[test]
    fn oracle_converges_with_strict_progress(gt in (1usize..=24, 1usize..=24).prop_flat_map(|(w, h)| trimap_strategy(w, h)), cups in any::<bool>()) {
        prop_assume!(gt.data().iter().any(|&l| l != Background));
        let (w, h) = gt.dims();
        let image = Raster::filled(w, h, [0.5f32; 3]);
        let oracle = OraclePredictor::new(gt.clone());
        let cfg = SimulationConfig::default();
        let policy = if cups { Policy::Cups } else { Policy::Itts };
        let mut pred = Raster::filled(w, h, Background);
        let mut clicks = Vec::new();
        let budget = misclassified(&pred, &gt);
        let mut err = budget;
        loop {
            match simulate_step(&pred, &gt, &cfg, policy, clicks.len()).unwrap() {
                PolicyDecision::Converged => break,
                PolicyDecision::NextClick(c) => clicks.push(c),
            }
            prop_assert!(clicks.len() <= budget);
            let input = PredictorInput::new(image.clone(), encode_clicks(&clicks, w, h, cfg.click_radius).unwrap(), Some(pred.clone())).unwrap();
            pred = logits_to_trimap(&oracle.predict(&input).unwrap());
            let now = misclassified(&pred, &gt);
            prop_assert!(now < err);
            err = now;
        }
        prop_assert_eq!(pred, gt);
    }
}

#[test]
fn boundary_tuples_take_argmax_branch() {
    let cfg = SimulationConfig::default();
    let make = |d: [f64; 3], d_t: f64| ErrorReport {
        fn_masks: PerClass::from_fn(|_| Raster::filled(1, 1, true)),
        d: PerClass(d),
        d_max: d.iter().copied().fold(0.0, f64::max),
        d_t,
        e_level: d.iter().copied().fold(0.0, f64::max) / d_t,
    };
    // e_level == alpha exactly
    assert_eq!(cups_next_class(&make([10.0, 1.0, 9.0], 100.0), &cfg).unwrap(), Foreground);
    // d_U == beta exactly
    assert_eq!(cups_next_class(&make([2.0, 0.0, 2.0], 1000.0), &cfg).unwrap(), Foreground);
    assert_eq!(cups_next_class(&make([2.0, 0.0, 2.5], 1000.0), &cfg).unwrap(), Unknown);
}
