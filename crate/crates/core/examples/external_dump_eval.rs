//! Writes an embedding dump in both the binary and CSV formats, reads them
//! back, and evaluates them the way `urlbench eval` does.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urlbench::commands::eval_records;
use urlbench::data::{read_any, write_csv, write_dump};
use urlbench::knn::Metric;
use urlbench::metrics::{EvalRecord, Origin};
use urlbench::Result;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<EvalRecord> = (0..400)
        .map(|i| {
            let label = rng.random_range(0..8);
            let u: f64 = rng.random();
            let embedding =
                (0..16).map(|d| if d == label as usize { 1.0 } else { 0.0 } + u * rng.random_range(-1.0..1.0)).collect();
            EvalRecord { id: i, label, embedding, uncertainty: u, soft_labels: None, origin: Origin::Downstream }
        })
        .collect();

    let dir = std::env::temp_dir().join("urlbench-dump-example");
    std::fs::create_dir_all(&dir).map_err(|e| urlbench::Error::io(&dir, e))?;
    let (bin, csv) = (dir.join("emb.urld"), dir.join("emb.csv"));
    write_dump(&records, &bin)?;
    write_csv(&records, &csv)?;

    for path in [&bin, &csv] {
        let back = read_any(path)?;
        for metric in [Metric::Cosine, Metric::Euclidean] {
            let r = eval_records(&back, None, metric, 0)?;
            println!("{} ({metric:?}): R@1 {:.3}, R-AUROC {:.3}", path.display(), r.r_at_1, r.r_auroc.unwrap_or(f64::NAN));
        }
    }
    Ok(())
}
