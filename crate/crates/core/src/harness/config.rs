//! Benchmark configuration, read from TOML.
//!
//! ```toml
//! methods = ["ce", "mcinfonce"]
//! budget = 10
//! seeds = [0, 1, 2]
//!
//! [synthetic]
//! n_classes = 32
//!
//! [splits]
//! n_upstream = 20
//! n_downstream = 3
//!
//! [training]
//! epochs = 12
//! ```
//!
//! Every key is optional; omitted keys take the defaults below.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{SplitConfig, SyntheticConfig};
use crate::error::{Error, Result};
use crate::estimators::{EncoderDims, Method};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Batch size of the view-pair methods, whose in-batch negatives should
    /// rarely share a class.
    pub contrastive_batch_size: usize,
    pub hidden: usize,
    pub embed: usize,
    pub unc_hidden: usize,
    pub rff: usize,
    /// Monte Carlo samples for sampled losses and HET-XL read-outs.
    pub n_mc: usize,
    pub n_members: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            warmup_epochs: 1,
            batch_size: 128,
            contrastive_batch_size: 16,
            hidden: 64,
            embed: 16,
            unc_hidden: 32,
            rff: 64,
            n_mc: 8,
            n_members: 5,
        }
    }
}

impl TrainConfig {
    pub fn dims(&self, input: usize, classes: usize) -> EncoderDims {
        EncoderDims { input, hidden: self.hidden, embed: self.embed, unc_hidden: self.unc_hidden, classes, rff: self.rff }
    }

    pub fn batch_size_for(&self, method: Method) -> usize {
        if method.is_unsupervised() {
            self.contrastive_batch_size
        } else {
            self.batch_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.contrastive_batch_size < 2 {
            return Err(Error::Config(format!(
                "batch sizes must be >= 2, got {} and {}",
                self.batch_size, self.contrastive_batch_size
            )));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!("warmup_epochs {} must be below epochs {}", self.warmup_epochs, self.epochs)));
        }
        if self.n_mc == 0 || self.n_members < 2 {
            return Err(Error::Config("n_mc must be >= 1 and n_members >= 2".into()));
        }
        Ok(())
    }
}

/// Random-search ranges. Learning rate and inverse temperature are drawn
/// log-uniformly; the rest uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub lr: [f64; 2],
    pub t: [f64; 2],
    pub b: [f64; 2],
    pub lambda: [f64; 2],
    pub dropout_rate: [f64; 2],
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace { lr: [1e-3, 1e-2], t: [8.0, 64.0], b: [-8.0, 8.0], lambda: [0.01, 0.99], dropout_rate: [0.0, 0.25] }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in
            [("lr", self.lr), ("t", self.t), ("b", self.b), ("lambda", self.lambda), ("dropout_rate", self.dropout_rate)]
        {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::Config(format!("search range {name} = [{lo}, {hi}] is invalid")));
            }
        }
        if self.lr[0] <= 0.0 || self.t[0] <= 0.0 {
            return Err(Error::Config("lr and t ranges must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    RAuroc,
    RAt1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Severity of the corruption applied for the corruption-detection rate.
    pub corruption_severity: f64,
    pub mixed_seed: u64,
    pub include_oracle: bool,
    pub many_shot: bool,
    /// The many-shot training sets are small, so they get more epochs.
    pub many_shot_epochs: usize,
    pub few_shot_k: Vec<usize>,
    pub few_shot_epochs: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            corruption_severity: 0.5,
            mixed_seed: 0,
            include_oracle: true,
            many_shot: true,
            many_shot_epochs: 60,
            few_shot_k: vec![1, 2, 5, 10],
            few_shot_epochs: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub methods: Vec<Method>,
    pub budget: usize,
    pub seeds: Vec<u64>,
    /// Seeds the random search and the split assignment.
    pub search_seed: u64,
    pub selection: Selection,
    pub r1_threshold: f64,
    /// Worker threads for independent runs; 0 uses the rayon default.
    pub workers: usize,
    pub synthetic: SyntheticConfig,
    pub splits: SplitConfig,
    pub training: TrainConfig,
    pub search: SearchSpace,
    pub analysis: AnalysisConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            methods: Method::ALL.to_vec(),
            budget: 10,
            seeds: vec![0, 1, 2],
            search_seed: 0,
            selection: Selection::RAuroc,
            r1_threshold: 0.1,
            workers: 0,
            synthetic: SyntheticConfig { n_classes: 32, ..SyntheticConfig::default() },
            splits: SplitConfig { n_upstream: Some(20), ..SplitConfig::default() },
            training: TrainConfig::default(),
            search: SearchSpace::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.r1_threshold) {
            return Err(Error::Config(format!("r1_threshold must lie in [0, 1], got {}", self.r1_threshold)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let s = self.analysis.corruption_severity;
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::Config(format!("corruption_severity must lie in (0, 1], got {s}")));
        }
        self.synthetic.validate()?;
        self.training.validate()?;
        self.search.validate()
    }

    /// Parses `text` as overrides on top of [`ProtocolConfig::default`]; a
    /// partial section keeps the protocol's defaults for its other keys.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(ProtocolConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: ProtocolConfig = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

impl FromStr for ProtocolConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_toml_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(ProtocolConfig::from_toml_str("").unwrap(), ProtocolConfig::default());
    }

    #[test]
    fn overrides_and_roundtrip() {
        let cfg = ProtocolConfig::from_toml_str(
            "methods = [\"ce\", \"mcinfonce\"]\nbudget = 2\n[training]\nepochs = 3\n[synthetic]\nseed = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.methods, vec![Method::Ce, Method::McInfoNce]);
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.synthetic.seed, 5);
        assert_eq!(cfg.synthetic.n_classes, 32);
        let again = ProtocolConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in ["budget = 0", "r1_threshold = 1.5", "bogus = 1", "[training]\nbatch_size = 1", "methods = [\"nope\"]"] {
            assert!(matches!(ProtocolConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }
}
