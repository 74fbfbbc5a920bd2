//! Class-disjoint upstream/downstream splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::synthetic::{stream_rng, Stream, SyntheticDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Upstream class count; `None` means half of all classes.
    pub n_upstream: Option<usize>,
    pub n_downstream: usize,
    /// Fraction of each upstream class held out of pretraining for upstream
    /// and OOD evaluation.
    pub upstream_holdout: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { n_upstream: None, n_downstream: 3, upstream_holdout: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownstreamSplit {
    pub name: String,
    pub train_classes: Vec<usize>,
    pub val_classes: Vec<usize>,
    pub test_classes: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Sample indices (into the dataset) of every split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub upstream_classes: Vec<usize>,
    pub upstream_train: Vec<usize>,
    pub upstream_eval: Vec<usize>,
    pub downstream: Vec<DownstreamSplit>,
}

fn members(ds: &SyntheticDataset, classes: &[usize]) -> Vec<usize> {
    let set: BTreeSet<usize> = classes.iter().copied().collect();
    (0..ds.len()).filter(|&i| set.contains(&ds.samples[i].label)).collect()
}

/// Shuffles class ids with the split substream, takes the upstream block, and
/// cuts the rest into `n_downstream` equal datasets. Each dataset gives half
/// its classes to test and a quarter each to train and val.
pub fn make_splits(ds: &SyntheticDataset, cfg: &SplitConfig, seed: u64) -> Result<Splits> {
    let c = ds.config.n_classes;
    let n_up = cfg.n_upstream.unwrap_or(c / 2);
    if cfg.n_downstream == 0 {
        return Err(Error::Config("n_downstream must be >= 1".into()));
    }
    if n_up == 0 || n_up >= c {
        return Err(Error::Config(format!("n_upstream must be in [1, {}), got {n_up}", c)));
    }
    let rest = c - n_up;
    if rest % cfg.n_downstream != 0 || (rest / cfg.n_downstream) % 4 != 0 {
        return Err(Error::Config(format!(
            "{rest} downstream classes cannot form {} datasets of a multiple of 4 classes",
            cfg.n_downstream
        )));
    }
    if !(cfg.upstream_holdout > 0.0 && cfg.upstream_holdout < 1.0) {
        return Err(Error::Config(format!("upstream_holdout must lie in (0, 1), got {}", cfg.upstream_holdout)));
    }
    let mut rng = stream_rng(seed, Stream::Splits);
    let mut classes: Vec<usize> = (0..c).collect();
    classes.shuffle(&mut rng);

    let mut upstream_classes = classes[..n_up].to_vec();
    upstream_classes.sort_unstable();
    let mut upstream_train = Vec::new();
    let mut upstream_eval = Vec::new();
    for &class in &upstream_classes {
        let mut idx = members(ds, &[class]);
        idx.shuffle(&mut rng);
        let hold = ((idx.len() as f64 * cfg.upstream_holdout).round() as usize).clamp(1, idx.len().saturating_sub(1).max(1));
        upstream_eval.extend_from_slice(&idx[..hold]);
        upstream_train.extend_from_slice(&idx[hold..]);
    }
    upstream_train.sort_unstable();
    upstream_eval.sort_unstable();

    let per = rest / cfg.n_downstream;
    let downstream = classes[n_up..]
        .chunks_exact(per)
        .enumerate()
        .map(|(k, block)| {
            let sorted = |s: &[usize]| {
                let mut v = s.to_vec();
                v.sort_unstable();
                v
            };
            let test_classes = sorted(&block[..per / 2]);
            let train_classes = sorted(&block[per / 2..per / 2 + per / 4]);
            let val_classes = sorted(&block[per / 2 + per / 4..]);
            DownstreamSplit {
                name: format!("down{k}"),
                train: members(ds, &train_classes),
                val: members(ds, &val_classes),
                test: members(ds, &test_classes),
                train_classes,
                val_classes,
                test_classes,
            }
        })
        .collect();
    Ok(Splits { upstream_classes, upstream_train, upstream_eval, downstream })
}

impl Splits {
    /// Names accepted by [`Splits::select`].
    pub fn names(&self) -> Vec<String> {
        let mut v = vec!["upstream-train".to_string(), "upstream-eval".to_string()];
        for d in &self.downstream {
            for part in ["train", "val", "test"] {
                v.push(format!("{}-{part}", d.name));
            }
        }
        v
    }

    pub fn select(&self, name: &str) -> Result<&[usize]> {
        match name {
            "upstream-train" => return Ok(&self.upstream_train),
            "upstream-eval" => return Ok(&self.upstream_eval),
            _ => {}
        }
        for d in &self.downstream {
            if let Some(part) = name.strip_prefix(&d.name).and_then(|r| r.strip_prefix('-')) {
                match part {
                    "train" => return Ok(&d.train),
                    "val" => return Ok(&d.val),
                    "test" => return Ok(&d.test),
                    _ => {}
                }
            }
        }
        Err(Error::InvalidArgument(format!("unknown split '{name}'; expected one of {}", self.names().join(", "))))
    }

    /// Every downstream sample index.
    pub fn downstream_indices(&self) -> BTreeSet<usize> {
        self.downstream.iter().flat_map(|d| d.train.iter().chain(&d.val).chain(&d.test).copied()).collect()
    }

    /// Fails if pretraining consumed any downstream sample or any held-out
    /// upstream sample.
    pub fn audit_pretraining(&self, ds: &SyntheticDataset, consumed_ids: &BTreeSet<u64>) -> Result<()> {
        let forbidden = self.downstream_indices().into_iter().chain(self.upstream_eval.iter().copied());
        for i in forbidden {
            let id = ds.samples[i].id;
            if consumed_ids.contains(&id) {
                return Err(Error::InvalidArgument(format!("pretraining consumed sample {id}, which is outside upstream-train")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    fn ds(c: usize) -> SyntheticDataset {
        generate_synthetic(&SyntheticConfig { n_classes: c, samples_per_class: 10, ..SyntheticConfig::default() }).unwrap()
    }

    #[test]
    fn twenty_four_classes_three_datasets() {
        let d = ds(24);
        let s = make_splits(&d, &SplitConfig::default(), 1).unwrap();
        assert_eq!(s.upstream_classes.len(), 12);
        assert_eq!(s.downstream.len(), 3);
        for k in &s.downstream {
            assert_eq!((k.test_classes.len(), k.train_classes.len(), k.val_classes.len()), (2, 1, 1));
        }
        assert_eq!(s.upstream_train.len() + s.upstream_eval.len(), 120);
        assert_eq!(s.upstream_eval.len(), 24);
    }

    #[test]
    fn class_disjoint_and_deterministic() {
        let d = ds(24);
        let s = make_splits(&d, &SplitConfig::default(), 9).unwrap();
        assert_eq!(s, make_splits(&d, &SplitConfig::default(), 9).unwrap());
        let mut seen = BTreeSet::new();
        for c in s
            .upstream_classes
            .iter()
            .chain(s.downstream.iter().flat_map(|k| k.train_classes.iter().chain(&k.val_classes).chain(&k.test_classes)))
        {
            assert!(seen.insert(*c));
        }
        assert_eq!(seen.len(), 24);
        let up: BTreeSet<usize> = s.upstream_train.iter().chain(&s.upstream_eval).copied().collect();
        assert!(up.is_disjoint(&s.downstream_indices()));
    }

    #[test]
    fn divisibility_enforced() {
        assert!(matches!(make_splits(&ds(20), &SplitConfig::default(), 0), Err(Error::Config(_))));
        let custom = SplitConfig { n_upstream: Some(8), n_downstream: 3, ..SplitConfig::default() };
        assert!(make_splits(&ds(20), &custom, 0).is_ok());
    }

    #[test]
    fn select_and_audit() {
        let d = ds(24);
        let s = make_splits(&d, &SplitConfig::default(), 2).unwrap();
        for n in s.names() {
            assert!(s.select(&n).is_ok());
        }
        assert!(s.select("down9-test").is_err());
        let ok: BTreeSet<u64> = s.upstream_train.iter().map(|&i| d.samples[i].id).collect();
        assert!(s.audit_pretraining(&d, &ok).is_ok());
        let mut bad = ok.clone();
        bad.insert(d.samples[s.downstream[1].train[0]].id);
        assert!(s.audit_pretraining(&d, &bad).is_err());
    }
}
