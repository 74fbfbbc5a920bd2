use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urlbench::metrics::{
    auroc, human_alignment, mixed_pool, mixed_r_auroc, ood_auroc, r_auroc, recall_at_1, spearman, EvalRecord, Origin,
};

fn mann_whitney(scores: &[f64], pos: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &pi) in pos.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in pos.iter().enumerate() {
            if pj {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

fn rec(id: u64, label: i64, embedding: Vec<f64>, u: f64) -> EvalRecord {
    EvalRecord { id, label, embedding, uncertainty: u, soft_labels: None, origin: Origin::Downstream }
}

fn clustered(rng: &mut ChaCha8Rng, n: usize, classes: i64, spread: f64) -> Vec<EvalRecord> {
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| (0..4).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
    (0..n)
        .map(|i| {
            let c = rng.random_range(0..classes);
            let e = centers[c as usize].iter().map(|x| x + spread * (rng.random::<f64>() - 0.5)).collect();
            rec(i as u64, c, e, rng.random::<f64>())
        })
        .collect()
}

#[test]
fn indicator_uncertainty_is_perfect_and_reversed_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut recs = clustered(&mut rng, 300, 5, 0.8);
    let (_, correct) = recall_at_1(&recs).unwrap();
    for (r, c) in recs.iter_mut().zip(&correct) {
        r.uncertainty = if *c { 0.0 } else { 1.0 };
    }
    assert_eq!(r_auroc(&recs).unwrap(), 1.0);
    for (r, c) in recs.iter_mut().zip(&correct) {
        r.uncertainty = if *c { 1.0 } else { 0.0 };
    }
    assert_eq!(r_auroc(&recs).unwrap(), 0.0);
}

#[test]
fn noise_uncertainty_is_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let recs = clustered(&mut rng, 2000, 8, 0.9);
    let v = r_auroc(&recs).unwrap();
    assert!((v - 0.5).abs() <= 0.03, "{v}");
}

#[test]
fn all_correct_is_degenerate() {
    let recs = vec![
        rec(0, 0, vec![1.0, 0.0], 0.1),
        rec(1, 0, vec![0.9, 0.1], 0.2),
        rec(2, 1, vec![0.0, 1.0], 0.3),
        rec(3, 1, vec![0.1, 0.9], 0.4),
    ];
    assert!(r_auroc(&recs).is_err());
}

#[test]
fn ood_examples() {
    let id: Vec<EvalRecord> = (0..10).map(|i| rec(i, 0, vec![1.0], 0.0)).collect();
    let ood: Vec<EvalRecord> = (0..7).map(|i| rec(i, 0, vec![1.0], 1.0)).collect();
    assert_eq!(ood_auroc(&id, &ood).unwrap(), 1.0);
    assert!(ood_auroc(&id, &[]).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = clustered(&mut rng, 1500, 3, 1.0);
    let b = clustered(&mut rng, 1500, 3, 1.0);
    assert!((ood_auroc(&a, &b).unwrap() - 0.5).abs() < 0.04);
}

#[test]
fn mixed_pool_all_wrong_ood_is_perfect() {
    // ID: tight same-class pairs. OOD: tight pairs with different labels.
    let mut id = Vec::new();
    let mut ood = Vec::new();
    for k in 0..6u64 {
        let base = k as f64 * 10.0;
        id.push(rec(2 * k, k as i64, vec![base, 1.0], 0.0));
        id.push(rec(2 * k + 1, k as i64, vec![base + 0.01, 1.0], 0.0));
        ood.push(rec(100 + 2 * k, 2 * k as i64, vec![-base, -1.0], 1.0));
        ood.push(rec(101 + 2 * k, 2 * k as i64 + 1, vec![-base - 0.01, -1.0], 1.0));
    }
    assert_eq!(mixed_pool(&id, &ood, 9).unwrap().len(), 24);
    assert_eq!(mixed_r_auroc(&id, &ood, 9).unwrap(), 1.0);
}

#[test]
fn mixed_labels_do_not_merge_across_sets() {
    // Same label id, different set: a cross-set neighbor must count as wrong.
    let id = vec![rec(0, 0, vec![1.0, 0.0], 0.0), rec(1, 1, vec![0.0, 1.0], 0.5)];
    let ood = vec![rec(2, 0, vec![1.0, 0.01], 1.0), rec(3, 1, vec![0.01, 1.0], 0.7)];
    let pool = mixed_pool(&id, &ood, 0).unwrap();
    assert_eq!(pool.len(), 4);
    assert!(mixed_r_auroc(&id, &ood, 0).is_err(), "every retrieval is wrong");
}

#[test]
fn mixed_matches_compositional_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let id = clustered(&mut rng, 400, 5, 1.0);
    let ood = clustered(&mut rng, 250, 5, 1.0);
    let pool = mixed_pool(&id, &ood, 17).unwrap();
    let relabeled: Vec<EvalRecord> =
        pool.iter().map(|(tag, r)| EvalRecord { label: r.label * 2 + *tag as i64, ..r.clone() }).collect();
    assert_eq!(mixed_r_auroc(&id, &ood, 17).unwrap(), r_auroc(&relabeled).unwrap());
    assert_eq!(mixed_r_auroc(&id, &ood, 17).unwrap(), mixed_r_auroc(&id, &ood, 17).unwrap());
}

#[test]
fn self_mixture_tracks_r_auroc() {
    // Positive orthant plus orthogonal padding keeps every neighbor inside its own copy.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut recs = clustered(&mut rng, 1500, 6, 1.0);
    for r in &mut recs {
        r.embedding = r.embedding.iter().map(|x| x + 2.0).chain([0.0; 4]).collect();
    }
    let (_, correct) = recall_at_1(&recs).unwrap();
    for (r, c) in recs.iter_mut().zip(correct) {
        r.uncertainty = if c { 0.3 } else { 0.7 } + 0.5 * rng.random::<f64>();
    }
    let copy: Vec<EvalRecord> = recs
        .iter()
        .map(|r| {
            let mut e = r.embedding.clone();
            e.rotate_left(4);
            EvalRecord { embedding: e, ..r.clone() }
        })
        .collect();
    let single = r_auroc(&recs).unwrap();
    let mixed = mixed_r_auroc(&recs, &copy, 1).unwrap();
    assert_eq!(single, mixed);
}

#[test]
fn human_alignment_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut recs: Vec<EvalRecord> = (0..2000)
        .map(|i| {
            let a = rng.random::<f64>();
            let mut r = rec(i, 0, vec![1.0], 0.0);
            r.soft_labels = Some(vec![a, 1.0 - a]);
            r
        })
        .collect();
    for r in &mut recs {
        let s = r.soft_labels.as_ref().unwrap();
        r.uncertainty = -(s[0] * s[0].ln() + s[1] * s[1].ln()) * 3.0;
    }
    assert!((human_alignment(&recs).unwrap() - 1.0).abs() < 1e-12);
    for r in &mut recs {
        r.uncertainty = rng.random::<f64>();
    }
    assert!(human_alignment(&recs).unwrap().abs() < 0.05);
}

fn scores_with_ties() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..200).prop_flat_map(|n| {
        (prop::collection::vec((0u8..6).prop_map(|v| v as f64 * 0.25), n), prop::collection::vec(any::<bool>(), n))
            .prop_filter("both classes", |(_, y)| y.iter().any(|&b| b) && y.iter().any(|&b| !b))
    })
}

fn distinct_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..150).prop_flat_map(|n| {
        (
            prop::collection::hash_set(-1_000_000i64..1_000_000, n)
                .prop_map(|s| s.into_iter().map(|v| v as f64 / 1e5).collect::<Vec<_>>()),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, y)| y.iter().any(|&b| b) && y.iter().any(|&b| !b))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_matches_mann_whitney((s, y) in scores_with_ties()) {
        prop_assert!((auroc(&s, &y).unwrap() - mann_whitney(&s, &y)).abs() <= 1e-9);
    }

    #[test]
    fn auroc_invariant_to_increasing_transforms((s, y) in scores_with_ties()) {
        let base = auroc(&s, &y).unwrap();
        let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let aff: Vec<f64> = s.iter().map(|v| 3.0 * v - 7.0).collect();
        let ranks = urlbench::metrics::average_ranks(&s);
        prop_assert_eq!(auroc(&exp, &y).unwrap(), base);
        prop_assert_eq!(auroc(&aff, &y).unwrap(), base);
        prop_assert_eq!(auroc(&ranks, &y).unwrap(), base);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn auroc_negation_complements((s, y) in distinct_scores()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auroc(&s, &y).unwrap() + auroc(&neg, &y).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn spearman_invariant_to_increasing_transforms(x in prop::collection::vec(-50i32..50, 3..60), seed in any::<u64>()) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = x.iter().map(|v| v + 40.0 * (rng.random::<f64>() - 0.5)).collect();
        if let Ok(base) = spearman(&x, &y) {
            let fx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
            let fy: Vec<f64> = y.iter().map(|v| v.powi(3) + 2.0).collect();
            prop_assert!((spearman(&fx, &y).unwrap() - base).abs() < 1e-12);
            prop_assert!((spearman(&x, &fy).unwrap() - base).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }

    #[test]
    fn r_auroc_invariant_to_relabeling(seed in any::<u64>(), shift in -1000i64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs = clustered(&mut rng, 120, 4, 1.2);
        let relabeled: Vec<EvalRecord> = recs.iter().map(|r| EvalRecord { label: (3 - r.label) * 7 + shift, ..r.clone() }).collect();
        let a = r_auroc(&recs);
        let b = r_auroc(&relabeled);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "relabeling changed definedness"),
        }
    }
}
