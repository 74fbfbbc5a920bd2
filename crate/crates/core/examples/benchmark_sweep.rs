//! Runs a reduced benchmark (three methods, two seeds) and prints the
//! summary table plus the search and analysis correlations.

use urlbench::harness::{analysis_correlations, run_protocol, search_correlations, summarize, ProtocolConfig};
use urlbench::Result;

const CONFIG: &str = r#"
methods = ["ce", "mcinfonce", "elk"]
budget = 10
seeds = [0, 1]
"#;

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn main() -> Result<()> {
    let cfg = ProtocolConfig::from_toml_str(CONFIG)?;
    let result = run_protocol(&cfg)?;
    println!("{:<16} {:>6} {:>8} {:>8} {:>9}", "method", "seeds", "R@1", "R-AUROC", "Spearman");
    for row in summarize(&result) {
        println!(
            "{:<16} {:>3}/{:<2} {:>8} {:>8} {:>9}",
            row.label,
            row.seeds_ok,
            row.seeds_total,
            fmt(row.r_at_1.map(|s| s.avg)),
            fmt(row.r_auroc.map(|s| s.avg)),
            fmt(row.oracle_spearman)
        );
    }
    for (method, n, rho) in search_correlations(&result) {
        println!("search: {method} val R@1 vs val R-AUROC over {n} candidates: {}", fmt(rho));
    }
    for (name, n, rho) in analysis_correlations(&result) {
        println!("analysis: {name} ({n} points): {}", fmt(rho));
    }
    Ok(())
}
