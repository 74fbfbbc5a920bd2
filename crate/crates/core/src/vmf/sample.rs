//! Wood's rejection sampler, split into noise drawing and a deterministic
//! transform so that gradients can flow through the accepted noise.
//!
//! A sample is built in the pole frame as `[w, sqrt(1 − w²) · v]`, with `w`
//! from the accepted Beta draw `z` and `v` a uniform unit tangent, then
//! reflected so the pole `e₁` lands on `μ`.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Accepted noise of a batch of draws, one entry per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub dim: usize,
    /// Accepted Beta((p−1)/2, (p−1)/2) draws.
    pub z: Vec<f64>,
    /// Unit tangent directions in ℝ^{p−1}.
    pub tangent: Vec<Vec<f64>>,
}

impl SampleTrace {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// `z` as an `[n, 1]` tensor.
    pub fn z_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), 1], self.z.clone()).expect("length matches")
    }

    /// Tangents embedded in ℝᵖ with a zero first coordinate, as `[n, p]`.
    pub fn tangent_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * self.dim);
        for v in &self.tangent {
            data.push(0.0);
            data.extend_from_slice(v);
        }
        Tensor::new(vec![self.len(), self.dim], data).expect("length matches")
    }
}

fn wood_b(p: usize, kappa: f64) -> f64 {
    let m1 = (p - 1) as f64;
    m1 / (2.0 * kappa + (4.0 * kappa * kappa + m1 * m1).sqrt())
}

/// Cosine to the mean direction and the tangent magnitude for noise `z`.
pub fn wood_w(p: usize, kappa: f64, z: f64) -> (f64, f64) {
    let b = wood_b(p, kappa);
    let denom = 1.0 - (1.0 - b) * z;
    let w = (1.0 - (1.0 + b) * z) / denom;
    let r = 2.0 * (b * z * (1.0 - z)).sqrt() / denom;
    (w, r)
}

fn draw_one<R: Rng + ?Sized>(p: usize, kappa: f64, rng: &mut R) -> (f64, Vec<f64>) {
    let m1 = (p - 1) as f64;
    let b = wood_b(p, kappa);
    let beta = Beta::new(m1 / 2.0, m1 / 2.0).expect("positive shape");
    let z = loop {
        let z: f64 = beta.sample(rng);
        let u: f64 = rng.random();
        if !(z > 0.0 && z < 1.0) {
            continue;
        }
        let denom = 1.0 - (1.0 - b) * z;
        // κ(w − x₀) in a cancellation-free form
        let lin = kappa * 2.0 * b * (1.0 - 2.0 * z) / ((1.0 + b) * denom);
        let log_accept = lin + m1 * ((1.0 + b).ln() - std::f64::consts::LN_2 - denom.ln());
        if log_accept >= u.ln() {
            break z;
        }
    };
    let tangent = loop {
        let v: Vec<f64> = (0..p - 1).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            break v.into_iter().map(|x| x / n).collect();
        }
    };
    (z, tangent)
}

/// Accepted noise for one draw per entry of `kappas`.
pub fn draw_noise<R: Rng + ?Sized>(p: usize, kappas: &[f64], rng: &mut R) -> SampleTrace {
    let mut z = Vec::with_capacity(kappas.len());
    let mut tangent = Vec::with_capacity(kappas.len());
    for &k in kappas {
        let (zi, vi) = draw_one(p, k.max(0.0), rng);
        z.push(zi);
        tangent.push(vi);
    }
    SampleTrace { dim: p, z, tangent }
}

/// Reflection that maps `e₁` to `mu`, applied to `s`.
pub fn householder(mu: &[f64], s: &[f64]) -> Vec<f64> {
    let denom = 1.0 - mu[0];
    if denom < 1e-12 {
        return s.to_vec();
    }
    let diff: Vec<f64> = mu.iter().enumerate().map(|(i, m)| if i == 0 { 1.0 - m } else { -m }).collect();
    let proj: f64 = diff.iter().zip(s).map(|(d, x)| d * x).sum::<f64>() / denom;
    s.iter().zip(&diff).map(|(x, d)| x - d * proj).collect()
}

/// Deterministic map from accepted noise to a sample of vMF(μ, κ).
pub fn transform(mu: &[f64], kappa: f64, z: f64, tangent: &[f64]) -> Vec<f64> {
    let (w, r) = wood_w(mu.len(), kappa, z);
    let mut s = Vec::with_capacity(mu.len());
    s.push(w);
    s.extend(tangent.iter().map(|v| r * v));
    householder(mu, &s)
}

/// Differentiable version of [`transform`] for a batch: `mu` is `[n, p]`
/// with unit rows, `kappa` is `[n, 1]`.
pub fn rsample(g: &mut Graph, mu: NodeId, kappa: NodeId, trace: &SampleTrace) -> Result<NodeId> {
    let (n, p) = g.value(mu).dims2()?;
    if g.value(kappa).shape() != [n, 1] || trace.len() != n || trace.dim != p {
        return Err(Error::shape(
            "rsample",
            format!(
                "mu {:?}, kappa {:?}, trace of {} draws in dim {}",
                g.value(mu).shape(),
                g.value(kappa).shape(),
                trace.len(),
                trace.dim
            ),
        ));
    }
    let m1 = (p - 1) as f64;
    let z = g.input(trace.z_tensor());
    let tangent = g.input(trace.tangent_tensor());
    let z_one_minus = g.input(trace.z_tensor().map(|z| z * (1.0 - z)));
    let mut e1 = Tensor::zeros(&[1, p]);
    e1.data_mut()[0] = 1.0;
    let e1 = g.input(e1);
    let m1_node = g.scalar(m1);

    // b = (p−1) / (2κ + sqrt(4κ² + (p−1)²))
    let k = g.clamp_min(kappa, 0.0)?;
    let two_k = g.scale(k, 2.0)?;
    let sq = g.square(two_k)?;
    let sq = g.add_scalar(sq, m1 * m1)?;
    let root = g.sqrt(sq)?;
    let den = g.add(two_k, root)?;
    let b = g.div(m1_node, den)?;

    let one_minus_b = g.neg(b)?;
    let one_minus_b = g.add_scalar(one_minus_b, 1.0)?;
    let t = g.mul(one_minus_b, z)?;
    let t = g.neg(t)?;
    let denom = g.add_scalar(t, 1.0)?;

    let one_plus_b = g.add_scalar(b, 1.0)?;
    let t = g.mul(one_plus_b, z)?;
    let t = g.neg(t)?;
    let num = g.add_scalar(t, 1.0)?;
    let w = g.div(num, denom)?;

    let bz = g.mul(b, z_one_minus)?;
    let r = g.sqrt(bz)?;
    let r = g.scale(r, 2.0)?;
    let r = g.div(r, denom)?;

    let s_pole = g.mul(w, e1)?;
    let s_tan = g.mul(r, tangent)?;
    let s0 = g.add(s_pole, s_tan)?;

    // s = s0 − (e₁ − μ) · ((e₁ − μ)ᵀ s0 / (1 − μ₁))
    let diff = g.sub(e1, mu)?;
    let mu1 = g.row_dot(mu, e1)?;
    let one_minus_mu1 = g.neg(mu1)?;
    let one_minus_mu1 = g.add_scalar(one_minus_mu1, 1.0)?;
    let one_minus_mu1 = g.clamp_min(one_minus_mu1, 1e-12)?;
    let proj = g.row_dot(diff, s0)?;
    let coef = g.div(proj, one_minus_mu1)?;
    let shift = g.mul(diff, coef)?;
    g.sub(s0, shift)
}
