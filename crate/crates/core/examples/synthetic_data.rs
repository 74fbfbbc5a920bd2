//! Generates the synthetic vMF dataset, cuts the class splits, and scores the
//! ground-truth oracle on every downstream test split.

use urlbench::data::{generate_synthetic, make_splits, SplitConfig, SyntheticConfig};
use urlbench::harness::{evaluate, Extras, Scorer};
use urlbench::metrics::Origin;
use urlbench::Result;

fn main() -> Result<()> {
    let ds = generate_synthetic(&SyntheticConfig { n_classes: 32, ..SyntheticConfig::default() })?;
    let splits = make_splits(&ds, &SplitConfig { n_upstream: Some(20), ..SplitConfig::default() }, 0)?;
    let kappas: Vec<f64> = ds.samples.iter().map(|s| s.kappa_star).collect();
    println!(
        "{} samples, obs dim {}, kappa* in [{:.1}, {:.1}]",
        ds.len(),
        ds.obs_dim(),
        kappas.iter().copied().fold(f64::INFINITY, f64::min),
        kappas.iter().copied().fold(0.0, f64::max)
    );
    println!(
        "upstream: {} classes, {} train / {} eval samples",
        splits.upstream_classes.len(),
        splits.upstream_train.len(),
        splits.upstream_eval.len()
    );
    let extras = Extras { human_alignment: true, oracle_spearman: true, ..Extras::default() };
    for d in &splits.downstream {
        let r = evaluate(&Scorer::Oracle, &ds, &d.test, Origin::Downstream, &extras)?;
        println!(
            "{}: test classes {:?}, oracle R@1 {:.3}, R-AUROC {}",
            d.name,
            d.test_classes,
            r.r_at_1,
            r.r_auroc.map_or("undefined".into(), |v| format!("{v:.3}"))
        );
    }
    Ok(())
}
