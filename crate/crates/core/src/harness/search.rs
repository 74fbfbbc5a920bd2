//! Seeded random search with the R@1 admission filter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{SearchSpace, Selection};
use crate::error::{Error, Result};
use crate::estimators::{Method, MethodConfig};

/// Mixes `parts` into one seed (splitmix64 finalizer per part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    (lo + rng.random::<f64>() * (hi - lo)).clamp(lo, hi)
}

/// `budget` configurations for `method`. Every field is drawn for every
/// method so the stream stays aligned; fields a method ignores keep their
/// drawn value but do not affect training.
pub fn sample_configs(method: Method, space: &SearchSpace, budget: usize, seed: u64) -> Vec<MethodConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, method as u64]));
    (0..budget)
        .map(|trial| {
            let mut c = MethodConfig::new(method);
            c.lr = log_uniform(&mut rng, space.lr);
            c.t = log_uniform(&mut rng, space.t);
            c.b = uniform(&mut rng, space.b);
            c.lambda = uniform(&mut rng, space.lambda);
            c.dropout_rate = uniform(&mut rng, space.dropout_rate);
            c.warmup_kappa = rng.random::<bool>();
            c.spectral_norm = rng.random::<bool>();
            c.seed = derive_seed(&[seed, method as u64, trial as u64]);
            c
        })
        .collect()
}

/// One scored candidate: a trained configuration read out with one
/// uncertainty variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub trial: usize,
    pub variant: String,
    pub config: String,
    pub status: String,
    pub val_r_at_1: Option<f64>,
    pub val_r_auroc: Option<f64>,
}

impl Candidate {
    pub fn admissible(&self, threshold: f64, selection: Selection) -> bool {
        self.status == "ok"
            && self.val_r_at_1.is_some_and(|r| r >= threshold)
            && (selection == Selection::RAt1 || self.val_r_auroc.is_some())
    }

    fn score(&self, selection: Selection) -> f64 {
        match selection {
            Selection::RAuroc => self.val_r_auroc.unwrap_or(f64::NEG_INFINITY),
            Selection::RAt1 => self.val_r_at_1.unwrap_or(f64::NEG_INFINITY),
        }
    }
}

/// Position of the winner: highest selection metric among admissible
/// candidates, then higher R@1, then lower position.
pub fn select_best(candidates: &[Candidate], threshold: f64, selection: Selection, method: &str) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if !c.admissible(threshold, selection) {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let (s, sb) = (c.score(selection), candidates[b].score(selection));
                let (r, rb) = (c.val_r_at_1.unwrap_or(0.0), candidates[b].val_r_at_1.unwrap_or(0.0));
                s > sb || (s == sb && r > rb)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::NoAdmissibleConfig { method: method.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(trial: usize, r1: f64, ra: Option<f64>) -> Candidate {
        Candidate {
            trial,
            variant: "v".into(),
            config: format!("c{trial}"),
            status: "ok".into(),
            val_r_at_1: Some(r1),
            val_r_auroc: ra,
        }
    }

    #[test]
    fn budget_one() {
        assert_eq!(select_best(&[cand(0, 0.5, Some(0.6))], 0.1, Selection::RAuroc, "m").unwrap(), 0);
        assert!(matches!(
            select_best(&[cand(0, 0.05, Some(0.9))], 0.1, Selection::RAuroc, "m"),
            Err(Error::NoAdmissibleConfig { .. })
        ));
    }

    #[test]
    fn filter_precedes_metric() {
        let c = [cand(0, 0.05, Some(0.99)), cand(1, 0.4, Some(0.55))];
        assert_eq!(select_best(&c, 0.1, Selection::RAuroc, "m").unwrap(), 1);
    }

    #[test]
    fn ties_prefer_recall_then_position() {
        let c = [cand(0, 0.4, Some(0.7)), cand(1, 0.6, Some(0.7)), cand(2, 0.6, Some(0.7))];
        assert_eq!(select_best(&c, 0.1, Selection::RAuroc, "m").unwrap(), 1);
        assert_eq!(select_best(&c, 0.1, Selection::RAt1, "m").unwrap(), 1);
    }

    #[test]
    fn failed_and_undefined_are_skipped() {
        let mut failed = cand(0, 0.9, Some(0.9));
        failed.status = "failed".into();
        let c = [failed, cand(1, 0.9, None), cand(2, 0.3, Some(0.51))];
        assert_eq!(select_best(&c, 0.1, Selection::RAuroc, "m").unwrap(), 2);
        assert_eq!(select_best(&c, 0.1, Selection::RAt1, "m").unwrap(), 1);
    }

    #[test]
    fn configs_are_in_range_and_seeded() {
        let space = SearchSpace::default();
        for m in Method::ALL {
            let a = sample_configs(m, &space, 10, 4);
            assert_eq!(a, sample_configs(m, &space, 10, 4));
            assert_ne!(a, sample_configs(m, &space, 10, 5));
            for c in &a {
                c.validate().unwrap();
            }
        }
    }
}
