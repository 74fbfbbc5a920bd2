//! Pretrains one estimator on the upstream classes and scores its zero-shot
//! uncertainty on the downstream test classes.
//!
//! Usage: `cargo run --release --example train_estimator -- [method]`
//! (default `mcinfonce`).

use urlbench::data::{generate_synthetic, make_splits};
use urlbench::estimators::{Method, MethodConfig};
use urlbench::harness::{evaluate, train_method, Extras, ProtocolConfig, Scorer};
use urlbench::metrics::Origin;
use urlbench::Result;

fn main() -> Result<()> {
    let method: Method = std::env::args().nth(1).as_deref().unwrap_or("mcinfonce").parse()?;
    let cfg = ProtocolConfig::default();
    let ds = generate_synthetic(&cfg.synthetic)?;
    let splits = make_splits(&ds, &cfg.splits, cfg.search_seed)?;

    let mc = MethodConfig::new(method).with_seed(1);
    let model = train_method(&mc, &cfg.training, &ds, &splits.upstream_train)?;
    splits.audit_pretraining(&ds, &model.consumed_ids)?;
    println!("{}: {} epochs, final loss {:?}", mc.describe(), model.epochs_run, model.final_loss);

    let extras = Extras { oracle_spearman: true, ..Extras::default() };
    let test: Vec<usize> = splits.downstream.iter().flat_map(|d| d.test.iter().copied()).collect();
    for &kind in method.variants() {
        let scorer = Scorer::Model { encoder: &model.encoder, kind, seed: mc.seed };
        let r = evaluate(&scorer, &ds, &test, Origin::Downstream, &extras)?;
        println!(
            "{:<12} R@1 {:.3}  R-AUROC {:.3}  Spearman(u, 1/kappa*) {:.3}",
            kind.id(),
            r.r_at_1,
            r.r_auroc.unwrap_or(f64::NAN),
            r.oracle_spearman.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
