//! Computes Recall@1 and R-AUROC on hand-built records, then the OOD-AUROC
//! and mixed R-AUROC against a shifted out-of-distribution set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urlbench::metrics::{mixed_r_auroc, ood_auroc, r_auroc, recall_at_1, EvalRecord, Origin};
use urlbench::Result;

fn cluster(rng: &mut ChaCha8Rng, n: usize, classes: i64, offset: f64, origin: Origin) -> Vec<EvalRecord> {
    (0..n)
        .map(|i| {
            let label = i as i64 % classes;
            let noise: f64 = rng.random_range(0.05..1.5);
            let angle = label as f64 * 0.9 + offset + noise * rng.random_range(-1.0..1.0);
            EvalRecord {
                id: i as u64,
                label,
                embedding: vec![angle.cos(), angle.sin()],
                uncertainty: noise,
                soft_labels: None,
                origin,
            }
        })
        .collect()
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let id = cluster(&mut rng, 600, 6, 0.0, Origin::Downstream);
    let mut ood = cluster(&mut rng, 300, 3, 3.0, Origin::Upstream);
    for r in &mut ood {
        r.uncertainty += 0.5;
    }

    let (r1, correct) = recall_at_1(&id)?;
    println!("R@1 {r1:.3} ({} of {} correct)", correct.iter().filter(|&&c| c).count(), id.len());
    println!("R-AUROC {:.3}", r_auroc(&id)?);
    println!("OOD-AUROC {:.3}", ood_auroc(&id, &ood)?);
    println!("mixed R-AUROC {:.3}", mixed_r_auroc(&id, &ood, 0)?);
    Ok(())
}
