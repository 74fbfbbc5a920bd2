//! Compares a zero-shot CE model with few-shot fine-tuning and the many-shot
//! CE baseline trained directly on half of the test classes.

use urlbench::data::{generate_synthetic, make_splits};
use urlbench::estimators::{Method, MethodConfig};
use urlbench::harness::{few_shot_finetune, many_shot_baseline, train_method, ProtocolConfig};
use urlbench::Result;

fn main() -> Result<()> {
    let cfg = ProtocolConfig::default();
    let ds = generate_synthetic(&cfg.synthetic)?;
    let splits = make_splits(&ds, &cfg.splits, cfg.search_seed)?;
    let mc = MethodConfig::new(Method::Ce).with_seed(5);
    let model = train_method(&mc, &cfg.training, &ds, &splits.upstream_train)?;
    let kind = Method::Ce.variants()[0];

    for d in &splits.downstream {
        let many = many_shot_baseline(&ds, d, &mc, &cfg.training, cfg.analysis.many_shot_epochs)?;
        println!("{}: many-shot R-AUROC {:.3}", d.name, many.r_auroc.unwrap_or(f64::NAN));
        for (k, r) in
            few_shot_finetune(&model.encoder, kind, &ds, d, &[0, 1, 5, 10], &cfg.training, cfg.analysis.few_shot_epochs)?
        {
            match r {
                Ok(r) => println!("  k={k:<3} R@1 {:.3}  R-AUROC {:.3}", r.r_at_1, r.r_auroc.unwrap_or(f64::NAN)),
                Err(e) => println!("  k={k:<3} skipped: {e}"),
            }
        }
    }
    Ok(())
}
