//! The zero-shot benchmark: search on upstream, select on downstream
//! validation, replicate over seeds, then evaluate and run the baselines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baselines::{few_shot_finetune, many_shot_baseline};
use super::config::{ProtocolConfig, Selection};
use super::evaluate::{evaluate, Extras, Scorer};
use super::search::{derive_seed, sample_configs, select_best, Candidate};
use super::train::train_method;
use crate::data::{generate_synthetic, make_splits, Splits, SyntheticDataset};
use crate::error::{Error, Result};
use crate::estimators::{Method, MethodConfig, UncertaintyKind};
use crate::metrics::{r_auroc, recall_at_1, MetricReport, Origin};

/// Validation-best candidate under one selection criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub selection: Selection,
    pub candidate: Option<usize>,
}

/// One replicate of a selected configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub status: String,
    /// Test split of every downstream dataset, in dataset order.
    pub downstream: Vec<MetricReport>,
    /// Held-out upstream samples, with corruption, OOD and mixed analyses.
    pub upstream: Option<MetricReport>,
    pub few_shot: Vec<MetricReport>,
    /// Analyses that could not run, e.g. a few-shot `k` a method cannot train on.
    pub notes: Vec<String>,
}

impl SeedRun {
    fn failed(seed: u64, e: &Error) -> Self {
        SeedRun {
            seed,
            status: format!("failed: {e}"),
            downstream: Vec::new(),
            upstream: None,
            few_shot: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// `ok`, or why no configuration was replicated.
    pub status: String,
    pub candidates: Vec<Candidate>,
    pub picks: Vec<Pick>,
    pub selected: Option<usize>,
    pub config: Option<MethodConfig>,
    pub runs: Vec<SeedRun>,
}

impl MethodResult {
    /// `method:variant` of the selected candidate, or the method id.
    pub fn label(&self) -> String {
        match self.selected {
            Some(i) if self.method.variants().len() > 1 => format!("{}:{}", self.method, self.candidates[i].variant),
            _ => self.method.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub config: ProtocolConfig,
    pub datasets: Vec<String>,
    pub methods: Vec<MethodResult>,
    pub oracle: Vec<SeedRun>,
    pub many_shot: Vec<MetricReport>,
}

fn variant_of(method: Method, id: &str) -> Option<UncertaintyKind> {
    method.variants().iter().copied().find(|k| k.id() == id)
}

fn downstream_val(splits: &Splits) -> Vec<usize> {
    let mut v: Vec<usize> = splits.downstream.iter().flat_map(|d| d.val.iter().copied()).collect();
    v.sort_unstable();
    v
}

fn downstream_test(splits: &Splits) -> Vec<usize> {
    let mut v: Vec<usize> = splits.downstream.iter().flat_map(|d| d.test.iter().copied()).collect();
    v.sort_unstable();
    v
}

/// Trains one search trial and scores every uncertainty variant on the
/// pooled downstream validation classes.
fn run_trial(
    cfg: &ProtocolConfig,
    ds: &SyntheticDataset,
    splits: &Splits,
    val: &[usize],
    trial: usize,
    mc: &MethodConfig,
) -> Vec<Candidate> {
    let config = mc.describe();
    let variants = mc.method.variants();
    let fail = |e: Error| {
        variants
            .iter()
            .map(|k| Candidate {
                trial,
                variant: k.id().into(),
                config: config.clone(),
                status: format!("failed: {e}"),
                val_r_at_1: None,
                val_r_auroc: None,
            })
            .collect()
    };
    let model = match train_method(mc, &cfg.training, ds, &splits.upstream_train) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let samples: Vec<_> = val.iter().map(|&i| &ds.samples[i]).collect();
    let mut out = Vec::with_capacity(variants.len());
    for &kind in variants {
        let scorer = Scorer::Model { encoder: &model.encoder, kind, seed: mc.seed };
        let scored = scorer.records(&samples, Origin::Downstream).and_then(|recs| {
            let (r1, _) = recall_at_1(&recs)?;
            let ra = match r_auroc(&recs) {
                Ok(v) => Some(v),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            };
            Ok((r1, ra))
        });
        out.push(match scored {
            Ok((r1, ra)) => Candidate {
                trial,
                variant: kind.id().into(),
                config: config.clone(),
                status: "ok".into(),
                val_r_at_1: Some(r1),
                val_r_auroc: ra,
            },
            Err(e) => Candidate {
                trial,
                variant: kind.id().into(),
                config: config.clone(),
                status: format!("failed: {e}"),
                val_r_at_1: None,
                val_r_auroc: None,
            },
        });
    }
    out
}

fn replicate(
    cfg: &ProtocolConfig,
    ds: &SyntheticDataset,
    splits: &Splits,
    mc: &MethodConfig,
    kind: UncertaintyKind,
    seed: u64,
) -> Result<SeedRun> {
    let mc = mc.clone().with_seed(derive_seed(&[seed, mc.method as u64, 0x5EED]));
    let model = train_method(&mc, &cfg.training, ds, &splits.upstream_train)?;
    splits.audit_pretraining(ds, &model.consumed_ids)?;
    let scorer = Scorer::Model { encoder: &model.encoder, kind, seed: mc.seed };
    let mut run = score_all(cfg, ds, splits, &scorer, seed)?;
    let mut ks = vec![0];
    ks.extend(cfg.analysis.few_shot_k.iter().copied().filter(|&k| k > 0));
    for d in &splits.downstream {
        for (k, r) in few_shot_finetune(&model.encoder, kind, ds, d, &ks, &cfg.training, cfg.analysis.few_shot_epochs)? {
            match r {
                Ok(r) => run.few_shot.push(r),
                Err(e) => run.notes.push(format!("few-shot {} k={k}: {e}", d.name)),
            }
        }
    }
    Ok(run)
}

/// Downstream test reports per dataset plus the upstream report for `scorer`.
fn score_all(cfg: &ProtocolConfig, ds: &SyntheticDataset, splits: &Splits, scorer: &Scorer<'_>, seed: u64) -> Result<SeedRun> {
    let label = scorer.label();
    let down_extras = Extras { human_alignment: true, oracle_spearman: true, ..Extras::default() };
    let mut downstream = Vec::with_capacity(splits.downstream.len());
    for d in &splits.downstream {
        let mut r = evaluate(scorer, ds, &d.test, Origin::Downstream, &down_extras)?;
        r.method = label.clone();
        r.dataset = d.name.clone();
        r.seed = seed;
        downstream.push(r);
    }
    let up_extras = Extras {
        ood: Some(downstream_test(splits)),
        mixed_seed: cfg.analysis.mixed_seed,
        corruption_severity: Some(cfg.analysis.corruption_severity),
        human_alignment: true,
        oracle_spearman: true,
    };
    let mut up = evaluate(scorer, ds, &splits.upstream_eval, Origin::Upstream, &up_extras)?;
    up.method = label;
    up.dataset = "upstream".into();
    up.seed = seed;
    Ok(SeedRun { seed, status: "ok".into(), downstream, upstream: Some(up), few_shot: Vec::new(), notes: Vec::new() })
}

fn method_result(
    cfg: &ProtocolConfig,
    ds: &SyntheticDataset,
    splits: &Splits,
    method: Method,
    candidates: Vec<Candidate>,
    configs: &[MethodConfig],
    pool: &rayon::ThreadPool,
) -> MethodResult {
    let picks = [Selection::RAuroc, Selection::RAt1]
        .into_iter()
        .map(|s| Pick { selection: s, candidate: select_best(&candidates, cfg.r1_threshold, s, method.id()).ok() })
        .collect();
    let mut result =
        MethodResult { method, status: "ok".into(), candidates, picks, selected: None, config: None, runs: Vec::new() };
    let best = match select_best(&result.candidates, cfg.r1_threshold, cfg.selection, method.id()) {
        Ok(b) => b,
        Err(e) => {
            result.status = e.to_string();
            return result;
        }
    };
    let winner = &result.candidates[best];
    let mc = configs[winner.trial].clone();
    let kind = variant_of(method, &winner.variant).expect("candidate variants come from the method");
    result.runs = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| replicate(cfg, ds, splits, &mc, kind, s).unwrap_or_else(|e| SeedRun::failed(s, &e)))
            .collect()
    });
    result.selected = Some(best);
    result.config = Some(mc);
    result
}

/// Runs the full benchmark. `progress` receives one line per finished stage.
pub fn run_protocol_with(cfg: &ProtocolConfig, progress: &(dyn Fn(&str) + Sync)) -> Result<ProtocolResult> {
    cfg.validate()?;
    let ds = generate_synthetic(&cfg.synthetic)?;
    let splits = make_splits(&ds, &cfg.splits, cfg.search_seed)?;
    let val = downstream_val(&splits);
    let val_classes: std::collections::BTreeSet<usize> = val.iter().map(|&i| ds.samples[i].label).collect();
    if val_classes.len() < 2 {
        return Err(Error::Config(format!(
            "the pooled downstream validation split has {} class(es); selection needs at least 2 (use n_downstream >= 2)",
            val_classes.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let configs: Vec<Vec<MethodConfig>> =
        cfg.methods.iter().map(|&m| sample_configs(m, &cfg.search, cfg.budget, cfg.search_seed)).collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.methods.len()).flat_map(|m| (0..cfg.budget).map(move |t| (m, t))).collect();
    let trials: Vec<Vec<Candidate>> =
        pool.install(|| jobs.par_iter().map(|&(m, t)| run_trial(cfg, &ds, &splits, &val, t, &configs[m][t])).collect());
    progress(&format!("search: {} trials", jobs.len()));

    let mut per_method: Vec<Vec<Candidate>> = vec![Vec::new(); cfg.methods.len()];
    for (&(m, _), cands) in jobs.iter().zip(trials) {
        per_method[m].extend(cands);
    }
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for ((&method, cands), confs) in cfg.methods.iter().zip(per_method).zip(&configs) {
        let r = method_result(cfg, &ds, &splits, method, cands, confs, &pool);
        progress(&format!("{}: {}", r.label(), r.status));
        methods.push(r);
    }

    let oracle = if cfg.analysis.include_oracle {
        cfg.seeds.iter().map(|&s| score_all(cfg, &ds, &splits, &Scorer::Oracle, s)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let many_shot = if cfg.analysis.many_shot {
        let base = methods
            .iter()
            .find(|r| r.method == Method::Ce)
            .and_then(|r| r.config.clone())
            .unwrap_or_else(|| MethodConfig::new(Method::Ce));
        let jobs: Vec<(u64, usize)> = cfg.seeds.iter().flat_map(|&s| (0..splits.downstream.len()).map(move |d| (s, d))).collect();
        let reports: Vec<Result<MetricReport>> = pool.install(|| {
            jobs.par_iter()
                .map(|&(s, d)| {
                    let mc = base.clone().with_seed(derive_seed(&[s, d as u64, 0xBA5E]));
                    let mut r =
                        many_shot_baseline(&ds, &splits.downstream[d], &mc, &cfg.training, cfg.analysis.many_shot_epochs)?;
                    r.seed = s;
                    Ok(r)
                })
                .collect()
        });
        progress("many-shot baseline done");
        reports.into_iter().collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    Ok(ProtocolResult {
        config: cfg.clone(),
        datasets: splits.downstream.iter().map(|d| d.name.clone()).collect(),
        methods,
        oracle,
        many_shot,
    })
}

pub fn run_protocol(cfg: &ProtocolConfig) -> Result<ProtocolResult> {
    run_protocol_with(cfg, &|_| {})
}
