//! Report tables rendered from a [`ProtocolResult`].
//!
//! Every file is a pure function of the result, with fixed float formatting,
//! so two runs with the same configuration produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::protocol::{ProtocolResult, SeedRun};
use crate::error::{Error, Result};
use crate::metrics::{spearman, MetricReport};

fn f(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn mean_of<'a>(reports: impl IntoIterator<Item = &'a MetricReport>, get: impl Fn(&MetricReport) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = reports.into_iter().filter_map(get).collect();
    mean(&v)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Spread {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
}

impl Spread {
    fn of(v: &[f64]) -> Option<Spread> {
        let avg = mean(v)?;
        Some(Spread {
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            avg,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// One line of the summary table; per-seed values are averaged over the
/// downstream datasets first, then spread over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub config: String,
    pub seeds_ok: usize,
    pub seeds_total: usize,
    pub r_auroc: Option<Spread>,
    pub r_at_1: Option<Spread>,
    pub oracle_spearman: Option<f64>,
    pub human_alignment: Option<f64>,
    pub upstream: Option<UpstreamRow>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpstreamRow {
    pub r_auroc: Option<f64>,
    pub r_at_1: Option<f64>,
    pub corruption_rate: Option<f64>,
    pub ood_auroc: Option<f64>,
    pub mixed_r_auroc: Option<f64>,
}

fn row_from_runs(label: String, config: String, runs: &[SeedRun], seeds_total: usize) -> SummaryRow {
    let ok: Vec<&SeedRun> = runs.iter().filter(|r| r.is_ok()).collect();
    let per_seed =
        |get: fn(&MetricReport) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| mean_of(&r.downstream, get)).collect() };
    let all_down = || ok.iter().flat_map(|r| r.downstream.iter());
    let ups: Vec<&MetricReport> = ok.iter().filter_map(|r| r.upstream.as_ref()).collect();
    let upstream = (!ups.is_empty()).then(|| UpstreamRow {
        r_auroc: mean_of(ups.iter().copied(), |r| r.r_auroc),
        r_at_1: mean_of(ups.iter().copied(), |r| Some(r.r_at_1)),
        corruption_rate: mean_of(ups.iter().copied(), |r| r.corruption_rate),
        ood_auroc: mean_of(ups.iter().copied(), |r| r.ood_auroc),
        mixed_r_auroc: mean_of(ups.iter().copied(), |r| r.mixed_r_auroc),
    });
    SummaryRow {
        label,
        config,
        seeds_ok: ok.len(),
        seeds_total,
        r_auroc: Spread::of(&per_seed(|r| r.r_auroc)),
        r_at_1: Spread::of(&per_seed(|r| Some(r.r_at_1))),
        oracle_spearman: mean_of(all_down(), |r| r.oracle_spearman),
        human_alignment: mean_of(all_down(), |r| r.human_alignment),
        upstream,
    }
}

/// Summary rows: every method in configuration order, then the oracle and
/// the many-shot reference when present.
pub fn summarize(result: &ProtocolResult) -> Vec<SummaryRow> {
    let n = result.config.seeds.len();
    let mut rows: Vec<SummaryRow> = result
        .methods
        .iter()
        .map(|m| {
            let config = m.config.as_ref().map_or_else(|| m.status.clone(), |c| c.describe());
            row_from_runs(m.label(), config, &m.runs, n)
        })
        .collect();
    if !result.oracle.is_empty() {
        rows.push(row_from_runs("oracle".into(), "u=1/kappa*".into(), &result.oracle, n));
    }
    if !result.many_shot.is_empty() {
        let mut by_seed: BTreeMap<u64, Vec<MetricReport>> = BTreeMap::new();
        for r in &result.many_shot {
            by_seed.entry(r.seed).or_default().push(r.clone());
        }
        let runs: Vec<SeedRun> = by_seed
            .into_iter()
            .map(|(seed, downstream)| SeedRun {
                seed,
                status: "ok".into(),
                downstream,
                upstream: None,
                few_shot: Vec::new(),
                notes: Vec::new(),
            })
            .collect();
        let config = result.many_shot[0].config.clone();
        rows.push(row_from_runs(result.many_shot[0].method.clone(), config, &runs, n));
    }
    rows
}

fn spread_cells(s: Option<Spread>) -> [String; 3] {
    match s {
        Some(s) => [f(Some(s.min)), f(Some(s.avg)), f(Some(s.max))],
        None => Default::default(),
    }
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "method,config,seeds_ok,seeds_total,r_auroc_min,r_auroc_avg,r_auroc_max,r_at_1_min,r_at_1_avg,r_at_1_max,spearman_oracle,human_alignment\n",
    );
    for r in rows {
        let [a0, a1, a2] = spread_cells(r.r_auroc);
        let [b0, b1, b2] = spread_cells(r.r_at_1);
        let _ = writeln!(
            out,
            "{},\"{}\",{},{},{a0},{a1},{a2},{b0},{b1},{b2},{},{}",
            r.label,
            r.config,
            r.seeds_ok,
            r.seeds_total,
            f(r.oracle_spearman),
            f(r.human_alignment)
        );
    }
    out
}

fn summary_md(rows: &[SummaryRow], result: &ProtocolResult) -> String {
    let mut out = String::from("# Downstream zero-shot results\n\n");
    let _ = writeln!(
        out,
        "Datasets: {}. Seeds: {:?}. Budget: {} per method.\n",
        result.datasets.join(", "),
        result.config.seeds,
        result.config.budget
    );
    out.push_str("| method | R-AUROC (min / avg / max) | R@1 (min / avg / max) | Spearman(u, u*) | seeds |\n");
    out.push_str("|---|---|---|---|---|\n");
    let cell = |s: Option<Spread>| s.map_or_else(|| "n/a".to_string(), |s| format!("{:.3} / {:.3} / {:.3}", s.min, s.avg, s.max));
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {}/{} |",
            r.label,
            cell(r.r_auroc),
            cell(r.r_at_1),
            r.oracle_spearman.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}")),
            r.seeds_ok,
            r.seeds_total
        );
    }
    let failed: Vec<String> =
        result.methods.iter().filter(|m| m.status != "ok").map(|m| format!("- {}: {}", m.method, m.status)).collect();
    if !failed.is_empty() {
        out.push_str("\nNot replicated:\n\n");
        out.push_str(&failed.join("\n"));
        out.push('\n');
    }
    out
}

fn tradeoff_csv(result: &ProtocolResult) -> String {
    let mut out = String::from("method,selection,trial,variant,config,val_r_at_1,val_r_auroc\n");
    for m in &result.methods {
        for p in &m.picks {
            let sel = match p.selection {
                super::config::Selection::RAuroc => "r_auroc",
                super::config::Selection::RAt1 => "r_at_1",
            };
            match p.candidate {
                Some(i) => {
                    let c = &m.candidates[i];
                    let _ = writeln!(
                        out,
                        "{},{sel},{},{},\"{}\",{},{}",
                        m.method,
                        c.trial,
                        c.variant,
                        c.config,
                        f(c.val_r_at_1),
                        f(c.val_r_auroc)
                    );
                }
                None => {
                    let _ = writeln!(out, "{},{sel},,,,,", m.method);
                }
            }
        }
    }
    out
}

/// Spearman(R@1, R-AUROC) over the admissible trials of each method.
pub fn search_correlations(result: &ProtocolResult) -> Vec<(String, usize, Option<f64>)> {
    result
        .methods
        .iter()
        .map(|m| {
            let pts: Vec<(f64, f64)> = m.candidates.iter().filter_map(|c| Some((c.val_r_at_1?, c.val_r_auroc?))).collect();
            let (a, b): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            (m.method.to_string(), pts.len(), spearman(&a, &b).ok())
        })
        .collect()
}

fn scatter_csv(result: &ProtocolResult) -> String {
    let mut out = String::from("method,trial,variant,status,val_r_at_1,val_r_auroc\n");
    for m in &result.methods {
        for c in &m.candidates {
            let status = if c.status == "ok" { "ok" } else { "failed" };
            let _ = writeln!(out, "{},{},{},{status},{},{}", m.method, c.trial, c.variant, f(c.val_r_at_1), f(c.val_r_auroc));
        }
    }
    out
}

fn scatter_corr_csv(result: &ProtocolResult) -> String {
    let mut out = String::from("method,n,spearman_r_at_1_r_auroc\n");
    for (m, n, s) in search_correlations(result) {
        let _ = writeln!(out, "{m},{n},{}", f(s));
    }
    out
}

fn up_vs_down_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "method,downstream_r_auroc,upstream_r_auroc,downstream_r_at_1,upstream_r_at_1,corruption_rate,ood_auroc,mixed_r_auroc\n",
    );
    for r in rows {
        let Some(u) = &r.upstream else { continue };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.label,
            f(r.r_auroc.map(|s| s.avg)),
            f(u.r_auroc),
            f(r.r_at_1.map(|s| s.avg)),
            f(u.r_at_1),
            f(u.corruption_rate),
            f(u.ood_auroc),
            f(u.mixed_r_auroc)
        );
    }
    out
}

/// Rank correlations across trained methods (oracle and references
/// excluded) between downstream R-AUROC and each upstream analysis.
pub fn analysis_correlations(result: &ProtocolResult) -> Vec<(&'static str, usize, Option<f64>)> {
    let rows = summarize(result);
    let trained: Vec<&SummaryRow> = rows.iter().take(result.methods.len()).collect();
    let pairs: [(&'static str, fn(&UpstreamRow) -> Option<f64>); 4] = [
        ("upstream_r_auroc", |u| u.r_auroc),
        ("corruption_rate", |u| u.corruption_rate),
        ("ood_auroc", |u| u.ood_auroc),
        ("mixed_r_auroc", |u| u.mixed_r_auroc),
    ];
    pairs
        .into_iter()
        .map(|(name, get)| {
            let pts: Vec<(f64, f64)> =
                trained.iter().filter_map(|r| Some((r.r_auroc?.avg, get(r.upstream.as_ref()?)?))).collect();
            let (a, b): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            (name, pts.len(), spearman(&a, &b).ok())
        })
        .collect()
}

fn correlations_csv(result: &ProtocolResult) -> String {
    let mut out = String::from("x,y,n,spearman\n");
    for (name, n, s) in analysis_correlations(result) {
        let _ = writeln!(out, "downstream_r_auroc,{name},{n},{}", f(s));
    }
    out
}

fn alignment_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,downstream_r_auroc,human_alignment,spearman_oracle\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.label, f(r.r_auroc.map(|s| s.avg)), f(r.human_alignment), f(r.oracle_spearman));
    }
    out
}

fn few_shot_csv(result: &ProtocolResult) -> String {
    let mut out = String::from("method,k,n_reports,r_auroc_avg,r_at_1_avg\n");
    for m in &result.methods {
        let mut by_k: BTreeMap<String, Vec<&MetricReport>> = BTreeMap::new();
        for r in m.runs.iter().filter(|r| r.is_ok()).flat_map(|r| r.few_shot.iter()) {
            by_k.entry(r.config.clone()).or_default().push(r);
        }
        let mut keyed: Vec<(usize, Vec<&MetricReport>)> =
            by_k.into_iter().map(|(k, v)| (k.trim_start_matches("k=").parse().unwrap_or(usize::MAX), v)).collect();
        keyed.sort_by_key(|(k, _)| *k);
        for (k, v) in keyed {
            let _ = writeln!(
                out,
                "{},{k},{},{},{}",
                m.label(),
                v.len(),
                f(mean_of(v.iter().copied(), |r| r.r_auroc)),
                f(mean_of(v.iter().copied(), |r| Some(r.r_at_1)))
            );
        }
    }
    if !result.many_shot.is_empty() {
        let _ = writeln!(
            out,
            "{},all,{},{},{}",
            result.many_shot[0].method,
            result.many_shot.len(),
            f(mean_of(&result.many_shot, |r| r.r_auroc)),
            f(mean_of(&result.many_shot, |r| Some(r.r_at_1)))
        );
    }
    out
}

/// All report files as `(file name, contents)`, in a fixed order.
pub fn render_report(result: &ProtocolResult) -> Result<Vec<(&'static str, String)>> {
    let rows = summarize(result);
    let mut json = serde_json::to_string_pretty(result)?;
    json.push('\n');
    Ok(vec![
        ("summary.csv", summary_csv(&rows)),
        ("summary.md", summary_md(&rows, result)),
        ("tradeoff.csv", tradeoff_csv(result)),
        ("scatter.csv", scatter_csv(result)),
        ("scatter_spearman.csv", scatter_corr_csv(result)),
        ("up_vs_down.csv", up_vs_down_csv(&rows)),
        ("correlations.csv", correlations_csv(result)),
        ("alignment.csv", alignment_csv(&rows)),
        ("few_shot.csv", few_shot_csv(result)),
        ("results.json", json),
    ])
}

/// Writes every report file into `dir`, creating it if needed.
pub fn emit_report(result: &ProtocolResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    render_report(result)?
        .into_iter()
        .map(|(name, text)| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Loads a `results.json` written by [`emit_report`].
pub fn read_results(path: &Path) -> Result<ProtocolResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
