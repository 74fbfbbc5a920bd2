//! Many-shot and few-shot references on a downstream dataset's test classes.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::evaluate::{evaluate, Extras, Scorer};
use super::train::{fit, train_method, LabeledSet};
use crate::data::{DownstreamSplit, SyntheticDataset};
use crate::error::{Error, Result};
use crate::estimators::{Encoder, Method, MethodConfig, UncertaintyKind};
use crate::metrics::{MetricReport, Origin};

/// Per test class, a seeded half/half partition of its samples into a
/// training pool and an evaluation set.
pub fn halve_test_classes(ds: &SyntheticDataset, split: &DownstreamSplit, seed: u64) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools = Vec::with_capacity(split.test_classes.len());
    let mut eval = Vec::new();
    for &class in &split.test_classes {
        let mut idx: Vec<usize> = split.test.iter().copied().filter(|&i| ds.samples[i].label == class).collect();
        if idx.len() < 4 {
            return Err(Error::InvalidArgument(format!(
                "class {class} of {} has {} samples; at least 4 are needed to halve",
                split.name,
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let half = idx.len() / 2;
        eval.extend_from_slice(&idx[half..]);
        idx.truncate(half);
        pools.push(idx);
    }
    eval.sort_unstable();
    Ok((pools, eval))
}

fn scorer_seed(seed: u64) -> u64 {
    seed ^ 0x5EED
}

/// CE trained directly on half of the test classes' samples and evaluated on
/// the other half.
pub fn many_shot_baseline(
    ds: &SyntheticDataset,
    split: &DownstreamSplit,
    cfg: &MethodConfig,
    train: &TrainConfig,
    epochs: usize,
) -> Result<MetricReport> {
    let (pools, eval) = halve_test_classes(ds, split, cfg.seed)?;
    let train_idx: Vec<usize> = pools.concat();
    let allowed: BTreeSet<u64> = split.test.iter().map(|&i| ds.samples[i].id).collect();
    let model = train_method(cfg, &TrainConfig { epochs, ..train.clone() }, ds, &train_idx)?;
    if !model.consumed_ids.is_subset(&allowed) {
        return Err(Error::InvalidArgument("many-shot training touched samples outside the test classes".into()));
    }
    let kind = cfg.method.variants()[0];
    let scorer = Scorer::Model { encoder: &model.encoder, kind, seed: scorer_seed(cfg.seed) };
    let extras = Extras { oracle_spearman: true, human_alignment: true, ..Extras::default() };
    let mut report = evaluate(&scorer, ds, &eval, Origin::Downstream, &extras)?;
    report.method = format!("many-shot-{}", cfg.method);
    report.dataset = split.name.clone();
    report.seed = cfg.seed;
    report.config = cfg.describe();
    Ok(report)
}

/// Continues training `pretrained` on `k` samples of each test class (from
/// the training half) and evaluates on the evaluation half. `k = 0` is the
/// zero-shot report on the same evaluation half. A `k` the method cannot
/// train on (HIB with one sample per class has no positive pairs) yields an
/// error in its slot instead of aborting the others.
pub fn few_shot_finetune(
    pretrained: &Encoder,
    kind: UncertaintyKind,
    ds: &SyntheticDataset,
    split: &DownstreamSplit,
    ks: &[usize],
    train: &TrainConfig,
    epochs: usize,
) -> Result<Vec<(usize, Result<MetricReport>)>> {
    let seed = pretrained.config.seed;
    let (pools, eval) = halve_test_classes(ds, split, seed)?;
    let extras = Extras { oracle_spearman: true, ..Extras::default() };
    Ok(ks
        .iter()
        .map(|&k| {
            let run = || -> Result<MetricReport> {
                let model = if k == 0 {
                    pretrained.clone()
                } else {
                    if let Some(short) = pools.iter().find(|p| p.len() < k) {
                        return Err(Error::InvalidArgument(format!(
                            "few-shot k = {k} exceeds the {} samples available per class",
                            short.len()
                        )));
                    }
                    let idx: Vec<usize> = pools.iter().flat_map(|p| p[..k].iter().copied()).collect();
                    let set = LabeledSet::new(ds, &idx);
                    let start = if pretrained.method() == Method::InfoNce || pretrained.method() == Method::McInfoNce {
                        pretrained.clone()
                    } else {
                        pretrained.transfer_to_classes(set.classes.len())?
                    };
                    fit(start, ds, &set, train, epochs)?.encoder
                };
                let scorer = Scorer::Model { encoder: &model, kind, seed: scorer_seed(seed) };
                let mut report = evaluate(&scorer, ds, &eval, Origin::Downstream, &extras)?;
                report.method = format!("few-shot-{}", pretrained.method());
                report.config = format!("k={k}");
                report.dataset = split.name.clone();
                report.seed = seed;
                Ok(report)
            };
            (k, run())
        })
        .collect())
}
