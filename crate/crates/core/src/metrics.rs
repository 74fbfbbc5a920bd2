//! Retrieval and uncertainty statistics.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::entropy_uncertainty;
use crate::knn::{top1_neighbors, EmbeddingMatrix, Metric};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Upstream,
    #[default]
    Downstream,
}

impl Origin {
    pub fn to_byte(self) -> u8 {
        match self {
            Origin::Upstream => 0,
            Origin::Downstream => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Origin::Upstream),
            1 => Ok(Origin::Downstream),
            _ => Err(Error::Format(format!("invalid origin byte {b}"))),
        }
    }
}

/// One evaluated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: u64,
    pub label: i64,
    pub embedding: Vec<f64>,
    pub uncertainty: f64,
    pub soft_labels: Option<Vec<f64>>,
    pub origin: Origin,
}

fn embeddings(records: &[EvalRecord], metric: Metric) -> Result<EmbeddingMatrix> {
    let p = records.first().map_or(0, |r| r.embedding.len());
    let mut flat = Vec::with_capacity(records.len() * p);
    for r in records {
        if r.embedding.len() != p {
            return Err(Error::shape("recall_at_1", "records disagree on embedding dimension"));
        }
        flat.extend_from_slice(&r.embedding);
    }
    EmbeddingMatrix::from_flat(flat, records.len(), p, metric)
}

fn neighbor_correct<K: PartialEq>(records: &[EvalRecord], keys: &[K], metric: Metric) -> Result<Vec<bool>> {
    if records.len() < 2 {
        return Err(Error::InvalidArgument(format!("recall@1 needs at least 2 records, got {}", records.len())));
    }
    let nn = top1_neighbors(&embeddings(records, metric)?)?;
    Ok(nn.iter().enumerate().map(|(i, &j)| keys[i] == keys[j]).collect())
}

/// Recall@1 under cosine similarity and the per-record correctness.
pub fn recall_at_1(records: &[EvalRecord]) -> Result<(f64, Vec<bool>)> {
    recall_at_1_with(records, Metric::Cosine)
}

pub fn recall_at_1_with(records: &[EvalRecord], metric: Metric) -> Result<(f64, Vec<bool>)> {
    let labels: Vec<i64> = records.iter().map(|r| r.label).collect();
    let correct = neighbor_correct(records, &labels, metric)?;
    let r1 = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
    Ok((r1, correct))
}

/// Area under the ROC curve by the trapezoidal rule over every distinct score
/// threshold; ties between a positive and a negative count one half.
pub fn auroc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::shape("auroc", format!("{} scores, {} labels", scores.len(), positives.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("auroc score {s}")));
    }
    let n_pos = positives.iter().filter(|&&p| p).count() as u128;
    let n_neg = positives.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!("AUROC undefined with {n_pos} positives and {n_neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // Walk thresholds from high to low; each tie group adds a trapezoid.
    let mut tp: u128 = 0;
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut gp, mut gn) = (0u128, 0u128);
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                gp += 1;
            } else {
                gn += 1;
            }
            i += 1;
        }
        twice_area += gn * (2 * tp + gp);
        tp += gp;
    }
    Ok(twice_area as f64 / (2 * n_pos * n_neg) as f64)
}

fn r_auroc_from(correct: &[bool], uncertainties: &[f64]) -> Result<f64> {
    let wrong: Vec<bool> = correct.iter().map(|c| !c).collect();
    match auroc(uncertainties, &wrong) {
        Err(Error::Degenerate(_)) => {
            let n_wrong = wrong.iter().filter(|&&w| w).count();
            Err(Error::Degenerate(format!("R-AUROC undefined: {} of {} retrievals wrong", n_wrong, wrong.len())))
        }
        other => other,
    }
}

/// AUROC of the uncertainties against "the nearest neighbor has another label".
pub fn r_auroc(records: &[EvalRecord]) -> Result<f64> {
    let (_, correct) = recall_at_1(records)?;
    let u: Vec<f64> = records.iter().map(|r| r.uncertainty).collect();
    r_auroc_from(&correct, &u)
}

/// AUROC of uncertainties for telling the OOD set (positive) from the ID set.
pub fn ood_auroc(id_records: &[EvalRecord], ood_records: &[EvalRecord]) -> Result<f64> {
    if id_records.is_empty() || ood_records.is_empty() {
        return Err(Error::InvalidArgument("OOD AUROC needs non-empty ID and OOD sets".into()));
    }
    let scores: Vec<f64> = id_records.iter().chain(ood_records).map(|r| r.uncertainty).collect();
    let labels: Vec<bool> =
        std::iter::repeat_n(false, id_records.len()).chain(std::iter::repeat_n(true, ood_records.len())).collect();
    auroc(&scores, &labels)
}

/// Equal-sized pool of both sets. The larger set is subsampled with `seed`;
/// labels keep their set of origin so classes never merge across sets.
pub fn mixed_pool(id_records: &[EvalRecord], ood_records: &[EvalRecord], seed: u64) -> Result<Vec<(usize, EvalRecord)>> {
    if id_records.is_empty() || ood_records.is_empty() {
        return Err(Error::InvalidArgument("mixed R-AUROC needs non-empty ID and OOD sets".into()));
    }
    let n = id_records.len().min(ood_records.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |set: &[EvalRecord], tag: usize| -> Vec<(usize, EvalRecord)> {
        if set.len() == n {
            return set.iter().cloned().map(|r| (tag, r)).collect();
        }
        let mut idx = index::sample(&mut rng, set.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| (tag, set[i].clone())).collect()
    };
    let mut pool = pick(id_records, 0);
    pool.extend(pick(ood_records, 1));
    Ok(pool)
}

pub fn mixed_r_auroc(id_records: &[EvalRecord], ood_records: &[EvalRecord], seed: u64) -> Result<f64> {
    let pool = mixed_pool(id_records, ood_records, seed)?;
    let keys: Vec<(usize, i64)> = pool.iter().map(|(t, r)| (*t, r.label)).collect();
    let records: Vec<EvalRecord> = pool.into_iter().map(|(_, r)| r).collect();
    let correct = neighbor_correct(&records, &keys, Metric::Cosine)?;
    let u: Vec<f64> = records.iter().map(|r| r.uncertainty).collect();
    r_auroc_from(&correct, &u)
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("spearman", format!("{} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!("spearman needs at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("spearman input contains NaN".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("spearman undefined for constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Fraction of pairs whose corrupted version is strictly more uncertain.
pub fn corruption_detection_rate(u_orig: &[f64], u_corrupt: &[f64]) -> Result<f64> {
    if u_orig.len() != u_corrupt.len() {
        return Err(Error::shape("corruption_detection_rate", format!("{} vs {}", u_orig.len(), u_corrupt.len())));
    }
    if u_orig.is_empty() {
        return Err(Error::InvalidArgument("corruption_detection_rate of no pairs".into()));
    }
    let hits = u_orig.iter().zip(u_corrupt).filter(|(o, c)| c > o).count();
    Ok(hits as f64 / u_orig.len() as f64)
}

/// Spearman correlation between uncertainties and soft-label entropies.
pub fn human_alignment(records: &[EvalRecord]) -> Result<f64> {
    let mut u = Vec::with_capacity(records.len());
    let mut h = Vec::with_capacity(records.len());
    for r in records {
        let soft = r.soft_labels.as_ref().ok_or_else(|| Error::InvalidArgument(format!("record {} has no soft labels", r.id)))?;
        u.push(r.uncertainty);
        h.push(entropy_uncertainty(soft)?);
    }
    spearman(&u, &h)
}

/// All metrics of one evaluated (method, config, seed, dataset) cell.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub config: String,
    pub seed: u64,
    pub dataset: String,
    pub n: usize,
    pub r_at_1: f64,
    pub r_auroc: Option<f64>,
    pub ood_auroc: Option<f64>,
    pub mixed_r_auroc: Option<f64>,
    pub human_alignment: Option<f64>,
    pub corruption_rate: Option<f64>,
    /// Spearman correlation with the ground-truth uncertainty, when known.
    pub oracle_spearman: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rec(id: u64, label: i64, e: Vec<f64>, u: f64) -> EvalRecord {
        EvalRecord { id, label, embedding: e, uncertainty: u, soft_labels: None, origin: Origin::Downstream }
    }

    #[test]
    fn recall_examples() {
        let same = [rec(0, 1, vec![1.0, 0.0], 0.0), rec(1, 1, vec![0.0, 1.0], 0.0)];
        assert_eq!(recall_at_1(&same).unwrap().0, 1.0);
        let diff = [rec(0, 1, vec![1.0, 0.0], 0.0), rec(1, 2, vec![0.0, 1.0], 0.0)];
        assert_eq!(recall_at_1(&diff).unwrap().0, 0.0);
        assert!(recall_at_1(&same[..1]).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[1.0, 1.0, 0.0, 0.0], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.4, 0.2, 0.1, 0.35], &[true, true, false, false]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(spearman(&x, &x).unwrap(), 1.0);
        assert_relative_eq!(spearman(&x, &[-1.0, -2.0, -3.0, -4.0]).unwrap(), -1.0);
        assert_relative_eq!(spearman(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8, epsilon = 1e-14);
        assert!(spearman(&x, &[2.0; 4]).is_err());
    }

    #[test]
    fn corruption_examples() {
        assert_eq!(corruption_detection_rate(&[0.1, 0.5], &[1.1, 1.5]).unwrap(), 1.0);
        assert_eq!(corruption_detection_rate(&[0.1, 0.5], &[0.1, 0.5]).unwrap(), 0.0);
        assert_eq!(corruption_detection_rate(&[0.1, 0.5], &[0.2, 0.4]).unwrap(), 0.5);
        assert!(corruption_detection_rate(&[0.1], &[0.2, 0.4]).is_err());
    }

    #[test]
    fn one_hot_soft_labels_are_degenerate() {
        let mut recs: Vec<EvalRecord> = (0..4).map(|i| rec(i, 0, vec![1.0], i as f64)).collect();
        for r in &mut recs {
            r.soft_labels = Some(vec![1.0, 0.0]);
        }
        assert!(human_alignment(&recs).is_err());
    }
}
