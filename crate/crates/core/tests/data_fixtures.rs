use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urlbench::data::{
    decode_dump, encode_dump, generate_synthetic, make_splits, read_csv, read_dump, write_csv, write_dump, SplitConfig,
    SyntheticConfig,
};
use urlbench::metrics::{EvalRecord, Origin};
use urlbench::Error;

// Frozen from the naive oracles below on the default generator (C=20, 100 per class, seed 0).
const ORACLE_R_AUROC: f64 = 0.917_882_406_724_198_7;
const ORACLE_SPEARMAN_ENTROPY: f64 = 0.783_850_540_023_251;
const ORACLE_SEPARABILITY: f64 = 1.0;

fn naive_top1(rows: &[Vec<f64>]) -> Vec<usize> {
    let unit: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    (0..unit.len())
        .map(|i| {
            let mut best = usize::MAX;
            let mut best_s = f64::NEG_INFINITY;
            for j in 0..unit.len() {
                if j == i {
                    continue;
                }
                let s: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                if best == usize::MAX || s > best_s {
                    best = j;
                    best_s = s;
                }
            }
            best
        })
        .collect()
}

fn mann_whitney(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            out[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>()
}

#[test]
fn oracle_fixtures_on_default_generator() {
    let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let latents: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.latent.clone()).collect();
    let nn = naive_top1(&latents);
    let wrong: Vec<bool> = nn.iter().enumerate().map(|(i, &j)| ds.samples[i].label != ds.samples[j].label).collect();
    let u: Vec<f64> = ds.samples.iter().map(|s| 1.0 / s.kappa_star).collect();
    let r_auroc = mann_whitney(&u, &wrong);

    let h: Vec<f64> = ds.samples.iter().map(|s| entropy(&s.soft_labels)).collect();
    let rho = pearson(&ranks(&u), &ranks(&h));

    let mut kappas: Vec<f64> = ds.samples.iter().map(|s| s.kappa_star).collect();
    kappas.sort_by(f64::total_cmp);
    let median = kappas[kappas.len() / 2];
    let sharp: Vec<_> = ds.samples.iter().filter(|s| s.kappa_star >= median).collect();
    let hits = sharp.iter().filter(|s| ds.nearest_prototype(&s.latent) == s.label).count();
    let sep = hits as f64 / sharp.len() as f64;

    println!("oracle r_auroc {r_auroc:.17} spearman {rho:.17} separability {sep:.17}");
    assert!(r_auroc >= 0.65);
    assert!(rho > 0.6);
    assert!(sep >= 0.95);
    assert!((r_auroc - ORACLE_R_AUROC).abs() < 1e-12, "{r_auroc}");
    assert!((rho - ORACLE_SPEARMAN_ENTROPY).abs() < 1e-12, "{rho}");
    assert!((sep - ORACLE_SEPARABILITY).abs() < 1e-12, "{sep}");

    let all: Vec<usize> = (0..ds.len()).collect();
    let via_lib = urlbench::metrics::r_auroc(&ds.oracle_records(&all, Origin::Downstream)).unwrap();
    assert!((via_lib - r_auroc).abs() < 1e-12);
}

#[test]
fn split_counts_for_24_classes() {
    let ds = generate_synthetic(&SyntheticConfig { n_classes: 24, samples_per_class: 10, ..SyntheticConfig::default() }).unwrap();
    let s = make_splits(&ds, &SplitConfig::default(), 3).unwrap();
    assert_eq!(s.upstream_classes.len(), 12);
    assert_eq!(s.downstream.len(), 3);
    for d in &s.downstream {
        assert_eq!((d.train_classes.len(), d.val_classes.len(), d.test_classes.len()), (1, 1, 2));
        for c in d.train_classes.iter().chain(&d.val_classes).chain(&d.test_classes) {
            assert!(!s.upstream_classes.contains(c));
        }
    }
    assert_eq!(s, make_splits(&ds, &SplitConfig::default(), 3).unwrap());
}

fn random_records(n: usize, dim: usize, soft: usize, seed: u64) -> Vec<EvalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| EvalRecord {
            id: i as u64 * 7 + 3,
            label: rng.random_range(-5..20),
            embedding: (0..dim).map(|_| rng.random::<f32>() as f64 * 4.0 - 2.0).collect(),
            uncertainty: rng.random::<f32>() as f64,
            soft_labels: (soft > 0).then(|| (0..soft).map(|_| rng.random::<f32>() as f64).collect()),
            origin: if rng.random::<bool>() { Origin::Upstream } else { Origin::Downstream },
        })
        .collect()
}

#[test]
fn dump_roundtrip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let records = random_records(1000, 16, 5, 1);
    let path = dir.path().join("r.urld");
    write_dump(&records, &path).unwrap();
    assert_eq!(read_dump(&path).unwrap(), records);

    let mut bytes = encode_dump(&records).unwrap();
    bytes[0] ^= 0xFF;
    assert!(matches!(decode_dump(&bytes).unwrap_err().root(), Error::Format(_)));
}

#[test]
fn csv_matches_binary_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let records = random_records(1000, 8, 3, 2);
    write_dump(&records, &dir.path().join("a.urld")).unwrap();
    write_csv(&records, &dir.path().join("a.csv")).unwrap();
    let bin = read_dump(&dir.path().join("a.urld")).unwrap();
    let text = read_csv(&dir.path().join("a.csv")).unwrap();
    assert_eq!(bin.len(), text.len());
    for (a, b) in bin.iter().zip(&text) {
        assert_eq!((a.id, a.label), (b.id, b.label));
        assert!((a.uncertainty - b.uncertainty).abs() <= 1e-12);
        for (x, y) in a.embedding.iter().zip(&b.embedding) {
            assert!((x - y).abs() <= 1e-12);
        }
        for (x, y) in a.soft_labels.as_ref().unwrap().iter().zip(b.soft_labels.as_ref().unwrap()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}
