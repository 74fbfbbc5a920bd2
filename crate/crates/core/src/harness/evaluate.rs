//! Scoring samples and turning the scores into metric reports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::observations_of;
use crate::data::{SyntheticDataset, SyntheticSample};
use crate::error::{Error, Result};
use crate::estimators::{extract_uncertainty, Encoder, UncertaintyKind};
use crate::metrics::{
    corruption_detection_rate, human_alignment, mixed_r_auroc, ood_auroc, r_auroc, recall_at_1, spearman, EvalRecord,
    MetricReport, Origin,
};

/// Produces embeddings and uncertainties for samples.
#[derive(Clone, Copy, Debug)]
pub enum Scorer<'a> {
    /// A trained encoder read out with `kind`; stochastic read-outs use `seed`.
    Model { encoder: &'a Encoder, kind: UncertaintyKind, seed: u64 },
    /// Ground truth: embedding = latent, u = 1/κ*.
    Oracle,
}

impl Scorer<'_> {
    pub fn label(&self) -> String {
        match self {
            Scorer::Model { encoder, kind, .. } => format!("{}:{}", encoder.method(), kind.id()),
            Scorer::Oracle => "oracle".into(),
        }
    }

    /// Records for `samples`, in the given order.
    pub fn records(&self, samples: &[&SyntheticSample], origin: Origin) -> Result<Vec<EvalRecord>> {
        let scored: Vec<(Vec<f64>, f64)> = match *self {
            Scorer::Oracle => samples.iter().map(|s| (s.latent.clone(), s.oracle_uncertainty())).collect(),
            Scorer::Model { encoder, kind, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(3);
                let preds = encoder.predict(&observations_of(samples)?, &mut rng)?;
                preds.iter().map(|p| Ok((p.embedding.clone(), extract_uncertainty(kind, p)?))).collect::<Result<_>>()?
            }
        };
        Ok(samples
            .iter()
            .zip(scored)
            .map(|(s, (embedding, uncertainty))| EvalRecord {
                id: s.id,
                label: s.label as i64,
                embedding,
                uncertainty,
                soft_labels: Some(s.soft_labels.clone()),
                origin,
            })
            .collect())
    }
}

/// Optional analyses on top of R@1 and R-AUROC.
#[derive(Clone, Debug, Default)]
pub struct Extras {
    /// Out-of-distribution sample indices for OOD-AUROC and mixed R-AUROC.
    pub ood: Option<Vec<usize>>,
    pub mixed_seed: u64,
    pub corruption_severity: Option<f64>,
    pub human_alignment: bool,
    /// Spearman correlation with `1/κ*`.
    pub oracle_spearman: bool,
}

fn sorted_samples<'a>(ds: &'a SyntheticDataset, indices: &[usize]) -> Vec<&'a SyntheticSample> {
    let mut idx = indices.to_vec();
    idx.sort_unstable();
    idx.dedup();
    idx.into_iter().map(|i| &ds.samples[i]).collect()
}

/// Keeps a value when defined, drops degenerate cases, propagates anything else.
fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores `indices` (order-insensitive) and computes R@1, R-AUROC, and the
/// requested extras. A constant uncertainty cannot rank anything and is an
/// error. Otherwise undefined values (no wrong or no correct retrievals,
/// constant ranks) are reported as absent.
pub fn evaluate(
    scorer: &Scorer<'_>,
    ds: &SyntheticDataset,
    indices: &[usize],
    origin: Origin,
    extras: &Extras,
) -> Result<MetricReport> {
    let samples = sorted_samples(ds, indices);
    let records = scorer.records(&samples, origin)?;
    if records.len() > 1 && records.iter().all(|r| r.uncertainty == records[0].uncertainty) {
        return Err(Error::Degenerate(format!("{}: constant uncertainty over {} samples", scorer.label(), records.len())));
    }
    let (r1, _) = recall_at_1(&records)?;
    let ra = optional(r_auroc(&records)).map_err(|e| e.context(format!("{} on {} samples", scorer.label(), records.len())))?;
    let mut report = MetricReport { n: records.len(), r_at_1: r1, r_auroc: ra, ..MetricReport::default() };
    if extras.human_alignment {
        report.human_alignment = optional(human_alignment(&records))?;
    }
    if extras.oracle_spearman {
        let u: Vec<f64> = records.iter().map(|r| r.uncertainty).collect();
        let star: Vec<f64> = samples.iter().map(|s| s.oracle_uncertainty()).collect();
        report.oracle_spearman = optional(spearman(&u, &star))?;
    }
    if let Some(sev) = extras.corruption_severity {
        let idx: Vec<usize> = samples.iter().map(|s| s.id as usize).collect();
        let corrupted = ds.corrupt_all(&idx, sev)?;
        let refs: Vec<&SyntheticSample> = corrupted.iter().collect();
        let u_corr: Vec<f64> = scorer.records(&refs, origin)?.iter().map(|r| r.uncertainty).collect();
        let u_orig: Vec<f64> = records.iter().map(|r| r.uncertainty).collect();
        report.corruption_rate = Some(corruption_detection_rate(&u_orig, &u_corr)?);
    }
    if let Some(ood) = &extras.ood {
        let other = scorer.records(&sorted_samples(ds, ood), Origin::Downstream)?;
        report.ood_auroc = optional(ood_auroc(&records, &other))?;
        report.mixed_r_auroc = optional(mixed_r_auroc(&records, &other, extras.mixed_seed))?;
    }
    Ok(report)
}
