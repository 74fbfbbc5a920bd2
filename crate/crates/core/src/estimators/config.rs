use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ce,
    InfoNce,
    McInfoNce,
    Elk,
    NivMf,
    Hib,
    HetXl,
    Sngp,
    Losspred,
    Ensemble,
    McDropout,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Ce,
        Method::InfoNce,
        Method::McInfoNce,
        Method::Elk,
        Method::NivMf,
        Method::Hib,
        Method::HetXl,
        Method::Sngp,
        Method::Losspred,
        Method::Ensemble,
        Method::McDropout,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::InfoNce => "infonce",
            Method::McInfoNce => "mcinfonce",
            Method::Elk => "elk",
            Method::NivMf => "nivmf",
            Method::Hib => "hib",
            Method::HetXl => "hetxl",
            Method::Sngp => "sngp",
            Method::Losspred => "losspred",
            Method::Ensemble => "ensemble",
            Method::McDropout => "mcdropout",
        }
    }

    /// Trained from pairs of views instead of class labels.
    pub fn is_unsupervised(self) -> bool {
        matches!(self, Method::InfoNce | Method::McInfoNce)
    }

    /// Has a vMF posterior whose concentration comes from the uncertainty head.
    pub fn is_probabilistic_vmf(self) -> bool {
        matches!(self, Method::McInfoNce | Method::Elk | Method::NivMf | Method::Hib)
    }

    pub fn has_unc_head(self) -> bool {
        self.is_probabilistic_vmf() || self == Method::Losspred
    }

    /// Uncertainty read-outs available for this method; the first is the default.
    pub fn variants(self) -> &'static [UncertaintyKind] {
        use UncertaintyKind::*;
        match self {
            Method::Ce | Method::Sngp => &[Entropy],
            Method::InfoNce => &[NegNorm],
            Method::McInfoNce | Method::Elk | Method::NivMf | Method::Hib => &[InvKappa],
            Method::HetXl => &[LogDet, Entropy],
            Method::Losspred => &[PredictedLoss],
            Method::Ensemble | Method::McDropout => &[Entropy, JensenShannon],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace(['-', '_'], "");
        Method::ALL.into_iter().find(|m| m.id() == lower).ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// How a prediction is turned into the scalar uncertainty `u(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    Entropy,
    JensenShannon,
    NegNorm,
    InvKappa,
    LogDet,
    PredictedLoss,
}

impl UncertaintyKind {
    pub fn id(self) -> &'static str {
        match self {
            UncertaintyKind::Entropy => "entropy",
            UncertaintyKind::JensenShannon => "js",
            UncertaintyKind::NegNorm => "negnorm",
            UncertaintyKind::InvKappa => "invkappa",
            UncertaintyKind::LogDet => "logdet",
            UncertaintyKind::PredictedLoss => "predloss",
        }
    }
}

/// One estimator's identity and hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub lr: f64,
    /// Inverse temperature.
    pub t: f64,
    /// HIB match-probability bias.
    pub b: f64,
    /// Losspred weight.
    pub lambda: f64,
    pub dropout_rate: f64,
    /// Initialize the uncertainty head so its output starts near 0.001.
    pub warmup_kappa: bool,
    /// SNGP only.
    pub spectral_norm: bool,
    pub n_mc: usize,
    pub n_members: usize,
    pub seed: u64,
}

impl MethodConfig {
    /// Mid-range defaults for `method`.
    pub fn new(method: Method) -> Self {
        MethodConfig {
            method,
            lr: 1e-3,
            t: 16.0,
            b: 0.0,
            lambda: 0.5,
            dropout_rate: 0.1,
            warmup_kappa: false,
            spectral_norm: false,
            n_mc: 16,
            n_members: 10,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks every field the method uses against its search range.
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| -> Result<()> {
            if !(v >= lo && v <= hi) {
                return Err(Error::Config(format!("{}: {name} = {v} outside [{lo}, {hi}]", self.method)));
            }
            Ok(())
        };
        check("lr", self.lr, 1e-6, 1.0)?;
        use Method::*;
        if matches!(self.method, InfoNce | McInfoNce | Elk | NivMf | Hib) {
            check("t", self.t, 8.0, 64.0)?;
        }
        if self.method == Hib {
            check("b", self.b, -8.0, 8.0)?;
        }
        if self.method == Losspred {
            check("lambda", self.lambda, 0.01, 0.99)?;
        }
        if self.method == McDropout {
            check("dropout_rate", self.dropout_rate, 0.0, 0.25)?;
        }
        if self.n_mc == 0 {
            return Err(Error::Config("n_mc must be >= 1".into()));
        }
        if self.method == Ensemble && self.n_members < 2 {
            return Err(Error::Config("an ensemble needs at least 2 members".into()));
        }
        Ok(())
    }

    /// Compact `key=value` listing of the hyperparameters the method uses.
    pub fn describe(&self) -> String {
        use Method::*;
        let mut parts = vec![format!("lr={:.6}", self.lr)];
        if matches!(self.method, InfoNce | McInfoNce | Elk | NivMf | Hib) {
            parts.push(format!("t={:.3}", self.t));
        }
        if self.method == Hib {
            parts.push(format!("b={:.3}", self.b));
        }
        if self.method == Losspred {
            parts.push(format!("lambda={:.3}", self.lambda));
        }
        if self.method == McDropout {
            parts.push(format!("dropout={:.3}", self.dropout_rate));
        }
        if self.method.has_unc_head() {
            parts.push(format!("warmup={}", self.warmup_kappa));
        }
        if self.method == Sngp {
            parts.push(format!("sn={}", self.spectral_norm));
        }
        parts.join(" ")
    }
}
