//! Synthetic classes on a latent sphere with per-sample ground-truth
//! concentration.
//!
//! Every sample draws `κ*` log-uniformly, a latent `e* ~ vMF(z_label, κ*)`, and
//! observes `x = tanh(A (c e*))`. `A` has orthonormal columns scaled by
//! `mixing_gain`. With `contrast` on (the default) `c = A_{p*}(κ*)`, the mean
//! resultant length at `κ*`, so ambiguous samples are also faint. With it off
//! `c = 1` and the observation depends on `e*` alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::entropy_uncertainty;
use crate::metrics::{EvalRecord, Origin};
use crate::vmf::{mean_resultant_length, VonMisesFisher};

/// Named substreams of the config seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Prototypes = 1,
    Mixing = 2,
    Kappas = 3,
    Latents = 4,
    Annotators = 5,
    Corruption = 6,
    Splits = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub latent_dim: usize,
    pub obs_dim: usize,
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub kappa_range: [f64; 2],
    pub annotators: usize,
    /// Norm of `A e` for a unit latent `e`.
    pub mixing_gain: f64,
    /// Scale latents by the mean resultant length `A_{p*}(κ*)` before mixing.
    pub contrast: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            latent_dim: 8,
            obs_dim: 32,
            n_classes: 20,
            samples_per_class: 100,
            kappa_range: [4.0, 1000.0],
            annotators: 10,
            mixing_gain: 2.0,
            contrast: true,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.kappa_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("kappa_range must satisfy 0 < lo <= hi < inf, got [{lo}, {hi}]")));
        }
        if self.n_classes < 4 {
            return Err(Error::Config(format!("n_classes must be >= 4, got {}", self.n_classes)));
        }
        if self.latent_dim < 2 {
            return Err(Error::Config(format!("latent_dim must be >= 2, got {}", self.latent_dim)));
        }
        if self.obs_dim < self.latent_dim {
            return Err(Error::Config(format!("obs_dim {} must be >= latent_dim {}", self.obs_dim, self.latent_dim)));
        }
        if self.samples_per_class == 0 || self.annotators == 0 {
            return Err(Error::Config("samples_per_class and annotators must be >= 1".into()));
        }
        if !(self.mixing_gain > 0.0 && self.mixing_gain.is_finite()) {
            return Err(Error::Config(format!("mixing_gain must be positive, got {}", self.mixing_gain)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub id: u64,
    pub x: Vec<f64>,
    pub label: usize,
    pub kappa_star: f64,
    pub latent: Vec<f64>,
    pub soft_labels: Vec<f64>,
}

impl SyntheticSample {
    /// Ground-truth uncertainty `1/κ*`.
    pub fn oracle_uncertainty(&self) -> f64 {
        1.0 / self.kappa_star
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    pub prototypes: Vec<Vec<f64>>,
    /// Row-major `obs_dim × latent_dim`.
    pub mixing: Vec<f64>,
    pub samples: Vec<SyntheticSample>,
}

fn unit_gaussian<R: Rng + ?Sized>(rng: &mut R, p: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn draw_latent<R: Rng + ?Sized>(proto: &[f64], kappa: f64, rng: &mut R) -> Result<Vec<f64>> {
    let vmf = VonMisesFisher::new(proto.to_vec(), kappa)?;
    Ok(vmf.sample(1, rng)?.0.remove(0))
}

/// `gain` times a `d × p` Gaussian matrix with Gram-Schmidt orthonormalized
/// columns, row-major.
fn orthonormal_mixing<R: Rng + ?Sized>(rng: &mut R, d: usize, p: usize, gain: f64) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    while cols.len() < p {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let proj: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            cols.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    (0..d).flat_map(|i| cols.iter().map(move |c| gain * c[i])).collect::<Vec<_>>()
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let (p, d) = (cfg.latent_dim, cfg.obs_dim);
    let mut proto_rng = stream_rng(cfg.seed, Stream::Prototypes);
    let prototypes: Vec<Vec<f64>> = (0..cfg.n_classes).map(|_| unit_gaussian(&mut proto_rng, p)).collect();
    let mut mix_rng = stream_rng(cfg.seed, Stream::Mixing);
    let mixing = orthonormal_mixing(&mut mix_rng, d, p, cfg.mixing_gain);
    let mut ds = SyntheticDataset {
        config: cfg.clone(),
        prototypes,
        mixing,
        samples: Vec::with_capacity(cfg.n_classes * cfg.samples_per_class),
    };

    let mut kappa_rng = stream_rng(cfg.seed, Stream::Kappas);
    let mut latent_rng = stream_rng(cfg.seed, Stream::Latents);
    let mut annot_rng = stream_rng(cfg.seed, Stream::Annotators);
    let (ln_lo, ln_hi) = (cfg.kappa_range[0].ln(), cfg.kappa_range[1].ln());
    for label in 0..cfg.n_classes {
        for _ in 0..cfg.samples_per_class {
            let u: f64 = kappa_rng.random();
            let kappa_star = (ln_lo + u * (ln_hi - ln_lo)).exp().clamp(cfg.kappa_range[0], cfg.kappa_range[1]);
            let latent = draw_latent(&ds.prototypes[label], kappa_star, &mut latent_rng)?;
            let soft_labels = ds.annotate(label, kappa_star, &mut annot_rng)?;
            let x = ds.observe(&latent, kappa_star);
            let id = ds.samples.len() as u64;
            ds.samples.push(SyntheticSample { id, x, label, kappa_star, latent, soft_labels });
        }
    }
    Ok(ds)
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.config.obs_dim
    }

    /// `tanh(A (A_{p*}(κ) e))`.
    pub fn observe(&self, latent: &[f64], kappa: f64) -> Vec<f64> {
        let p = self.config.latent_dim;
        let c = if self.config.contrast { mean_resultant_length(p, kappa) } else { 1.0 };
        self.mixing.chunks_exact(p).map(|row| (c * row.iter().zip(latent).map(|(a, e)| a * e).sum::<f64>()).tanh()).collect()
    }

    /// Index of the prototype with the largest inner product.
    pub fn nearest_prototype(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_s = f64::NEG_INFINITY;
        for (c, z) in self.prototypes.iter().enumerate() {
            let s: f64 = z.iter().zip(v).map(|(a, b)| a * b).sum();
            if s > best_s {
                best = c;
                best_s = s;
            }
        }
        best
    }

    fn annotate<R: Rng + ?Sized>(&self, label: usize, kappa: f64, rng: &mut R) -> Result<Vec<f64>> {
        let m = self.config.annotators;
        let mut counts = vec![0usize; self.config.n_classes];
        for _ in 0..m {
            let e = draw_latent(&self.prototypes[label], kappa, rng)?;
            counts[self.nearest_prototype(&e)] += 1;
        }
        Ok(counts.into_iter().map(|c| c as f64 / m as f64).collect())
    }

    /// A fresh observation of the sample's class at its own concentration;
    /// the synthetic stand-in for an augmented view.
    pub fn draw_view<R: Rng + ?Sized>(&self, sample: &SyntheticSample, rng: &mut R) -> Result<Vec<f64>> {
        let e = draw_latent(&self.prototypes[sample.label], sample.kappa_star, rng)?;
        Ok(self.observe(&e, sample.kappa_star))
    }

    /// Redraw at `κ' = κ*(1 - s) + κ_lo s`. Label and id are kept; soft labels
    /// are left as they were.
    pub fn corrupt<R: Rng + ?Sized>(&self, sample: &SyntheticSample, severity: f64, rng: &mut R) -> Result<SyntheticSample> {
        if !(severity > 0.0 && severity <= 1.0) {
            return Err(Error::InvalidArgument(format!("severity must lie in (0, 1], got {severity}")));
        }
        let lo = self.config.kappa_range[0];
        let kappa = (sample.kappa_star * (1.0 - severity) + lo * severity).max(lo).min(sample.kappa_star);
        let latent = draw_latent(&self.prototypes[sample.label], kappa, rng)?;
        let x = self.observe(&latent, kappa);
        Ok(SyntheticSample {
            id: sample.id,
            x,
            label: sample.label,
            kappa_star: kappa,
            latent,
            soft_labels: sample.soft_labels.clone(),
        })
    }

    /// Corrupted copies of `indices`, drawn from the corruption substream.
    pub fn corrupt_all(&self, indices: &[usize], severity: f64) -> Result<Vec<SyntheticSample>> {
        let mut rng = stream_rng(self.config.seed, Stream::Corruption);
        indices.iter().map(|&i| self.corrupt(&self.samples[i], severity, &mut rng)).collect()
    }

    /// Records for a perfect encoder: embedding = latent, u = 1/κ*.
    pub fn oracle_records(&self, indices: &[usize], origin: Origin) -> Vec<EvalRecord> {
        indices
            .iter()
            .map(|&i| {
                let s = &self.samples[i];
                EvalRecord {
                    id: s.id,
                    label: s.label as i64,
                    embedding: s.latent.clone(),
                    uncertainty: s.oracle_uncertainty(),
                    soft_labels: Some(s.soft_labels.clone()),
                    origin,
                }
            })
            .collect()
    }

    /// Entropy of every sample's annotator distribution.
    pub fn annotator_entropies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| entropy_uncertainty(&s.soft_labels).expect("soft labels are a distribution")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig { n_classes: 6, samples_per_class: 10, seed: 3, ..SyntheticConfig::default() }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_synthetic(&small()).unwrap(), generate_synthetic(&small()).unwrap());
    }

    #[test]
    fn invariants_hold() {
        let ds = generate_synthetic(&small()).unwrap();
        for s in &ds.samples {
            assert!((s.soft_labels.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.kappa_star >= 4.0 && s.kappa_star <= 1000.0);
            assert_eq!(s.x.len(), 32);
            assert!((s.latent.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            SyntheticConfig { kappa_range: [0.0, 5.0], ..small() },
            SyntheticConfig { n_classes: 3, ..small() },
            SyntheticConfig { obs_dim: 4, ..small() },
        ] {
            assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn huge_concentration_is_unambiguous() {
        let cfg = SyntheticConfig { kappa_range: [1e6, 1e6], ..small() };
        let ds = generate_synthetic(&cfg).unwrap();
        for s in &ds.samples {
            assert_eq!(s.kappa_star, 1e6);
            assert_eq!(s.soft_labels[s.label], 1.0);
        }
    }

    #[test]
    fn corruption_limits() {
        let ds = generate_synthetic(&small()).unwrap();
        let s = &ds.samples[7];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full = ds.corrupt(s, 1.0, &mut rng).unwrap();
        assert_eq!(full.kappa_star, 4.0);
        assert_eq!(full.label, s.label);
        let tiny = ds.corrupt(s, 1e-12, &mut rng).unwrap();
        assert!((tiny.kappa_star - s.kappa_star).abs() < 1e-6 * s.kappa_star);
        for sev in [0.1, 0.5, 0.9] {
            assert!(ds.corrupt(s, sev, &mut rng).unwrap().oracle_uncertainty() >= s.oracle_uncertainty());
        }
        assert!(ds.corrupt(s, 0.0, &mut rng).is_err());
        assert!(ds.corrupt(s, 1.5, &mut rng).is_err());
    }

    #[test]
    fn substreams_are_independent() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&SyntheticConfig { annotators: 3, ..small() }).unwrap();
        assert_eq!(a.prototypes, b.prototypes);
        assert_eq!(a.mixing, b.mixing);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.kappa_star, y.kappa_star);
            assert_eq!(x.latent, y.latent);
        }
    }
}
