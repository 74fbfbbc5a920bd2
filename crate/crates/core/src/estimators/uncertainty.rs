//! Turning model outputs into scalar uncertainties.

use serde::{Deserialize, Serialize};

use super::config::UncertaintyKind;
use crate::autodiff::log_sum_exp;
use crate::error::{Error, Result};
use crate::vmf::KAPPA_FLOOR;

/// Everything a method may expose about one input.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Unit-norm embedding used for retrieval.
    pub embedding: Vec<f64>,
    /// Norm of the embedding before normalization.
    pub raw_norm: f64,
    pub kappa: Option<f64>,
    pub probs: Option<Vec<f64>>,
    pub member_probs: Option<Vec<Vec<f64>>>,
    pub log_det: Option<f64>,
    pub predicted_loss: Option<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// Shannon entropy with `0 log 0 = 0`.
pub fn entropy_uncertainty(probs: &[f64]) -> Result<f64> {
    let mut h = 0.0;
    for &p in probs {
        if p < 0.0 || !p.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid probability {p}")));
        }
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// `u = −‖e‖`, larger for shorter raw embeddings.
pub fn infonce_uncertainty(raw_embedding: &[f64]) -> f64 {
    -raw_embedding.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `log det(v vᵀ + diag(d))` by the matrix determinant lemma.
pub fn low_rank_log_det(v: &[f64], d: &[f64]) -> Result<f64> {
    if v.len() != d.len() {
        return Err(Error::shape("low_rank_log_det", format!("{} vs {}", v.len(), d.len())));
    }
    if d.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument("diagonal variances must be positive".into()));
    }
    let log_d: f64 = d.iter().map(|x| x.ln()).sum();
    let quad: f64 = v.iter().zip(d).map(|(vi, di)| vi * vi / di).sum();
    Ok(log_d + quad.ln_1p())
}

/// Mean probabilities, entropy of the mean, and the Jensen–Shannon divergence
/// `H(mean) − mean H(member)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled {
    pub mean_probs: Vec<f64>,
    pub entropy: f64,
    pub js: f64,
}

pub fn pool_member_probs(members: &[Vec<f64>]) -> Result<Pooled> {
    let first = members.first().ok_or_else(|| Error::InvalidArgument("no members to pool".into()))?;
    let c = first.len();
    let mut mean = vec![0.0; c];
    let mut mean_member_entropy = 0.0;
    for m in members {
        if m.len() != c {
            return Err(Error::shape("pool_member_probs", "members disagree on class count"));
        }
        for (acc, p) in mean.iter_mut().zip(m) {
            *acc += p / members.len() as f64;
        }
        mean_member_entropy += entropy_uncertainty(m)? / members.len() as f64;
    }
    let entropy = entropy_uncertainty(&mean)?;
    Ok(Pooled { js: (entropy - mean_member_entropy).max(0.0), mean_probs: mean, entropy })
}

/// Softmax each member's logits and pool them; `expected` members required.
pub fn ensemble_predict(member_logits: &[Vec<f64>], expected: usize) -> Result<Pooled> {
    if member_logits.len() != expected {
        return Err(Error::InvalidArgument(format!("expected {expected} members, got {}", member_logits.len())));
    }
    let probs: Vec<Vec<f64>> = member_logits.iter().map(|l| softmax(l)).collect();
    pool_member_probs(&probs)
}

/// Reads the uncertainty of the requested kind from a prediction.
pub fn extract_uncertainty(kind: UncertaintyKind, pred: &Prediction) -> Result<f64> {
    let missing = |what: &str| Error::InvalidArgument(format!("prediction lacks {what} for {}", kind.id()));
    match kind {
        UncertaintyKind::Entropy => entropy_uncertainty(pred.probs.as_deref().ok_or_else(|| missing("probabilities"))?),
        UncertaintyKind::JensenShannon => {
            let members = pred.member_probs.as_ref().ok_or_else(|| missing("member probabilities"))?;
            Ok(pool_member_probs(members)?.js)
        }
        UncertaintyKind::NegNorm => Ok(-pred.raw_norm),
        UncertaintyKind::InvKappa => Ok(1.0 / pred.kappa.ok_or_else(|| missing("kappa"))?.max(KAPPA_FLOOR)),
        UncertaintyKind::LogDet => pred.log_det.ok_or_else(|| missing("log det")),
        UncertaintyKind::PredictedLoss => pred.predicted_loss.ok_or_else(|| missing("predicted loss")),
    }
}
