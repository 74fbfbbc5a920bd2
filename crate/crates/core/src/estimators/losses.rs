//! Training losses built on the expression graph. Every function returns a
//! scalar node averaged over the batch unless stated otherwise.

use std::f64::consts::PI;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vmf::{self, SampleTrace};

/// Mean-field logit scaling constant.
pub const MEAN_FIELD_LAMBDA: f64 = PI / 8.0;

/// Floor added to HET-XL's diagonal variances.
pub const HETXL_VAR_FLOOR: f64 = 1e-6;

// Large enough that exp underflows to exactly 0 next to any similarity in [-64, 64].
const MASK_OFFSET: f64 = -1e4;

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {classes} classes")));
        }
        t.data_mut()[i * classes + y] = 1.0;
    }
    Ok(t)
}

/// Per-row `log softmax(logits)[y]` as `[n, 1]`.
pub fn log_prob_of_label(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (n, c) = g.value(logits).dims2()?;
    if labels.len() != n {
        return Err(Error::shape("log_prob_of_label", format!("{n} rows, {} labels", labels.len())));
    }
    let mask = g.input(one_hot(labels, c)?);
    let ls = g.log_softmax(logits)?;
    let picked = g.mul(ls, mask)?;
    g.sum_axis(picked, 1)
}

/// Per-row cross-entropy as `[n, 1]`.
pub fn ce_per_sample(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let lp = log_prob_of_label(g, logits, labels)?;
    g.neg(lp)
}

pub fn ce_loss(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let per = ce_per_sample(g, logits, labels)?;
    g.mean(per)
}

/// Two-sided InfoNCE with an explicit negative set. `mask`, when given, is an
/// `[n, m]` 0/1 matrix marking which negatives each pair may use.
pub fn infonce_loss(g: &mut Graph, e1: NodeId, e2: NodeId, negatives: NodeId, mask: Option<&Tensor>, t: f64) -> Result<NodeId> {
    let (n, p) = g.value(e1).dims2()?;
    let (m, pn) = g.value(negatives).dims2()?;
    if g.value(e2).shape() != [n, p] || pn != p {
        return Err(Error::shape("infonce_loss", "views and negatives must share [n, p] / [m, p]"));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("InfoNCE needs at least one negative".into()));
    }
    let offset = match mask {
        Some(mask) => {
            if mask.shape() != [n, m] {
                return Err(Error::shape("infonce_loss", format!("mask {:?}, expected [{n}, {m}]", mask.shape())));
            }
            for i in 0..n {
                if mask.row(i).iter().all(|&v| v == 0.0) {
                    return Err(Error::InvalidArgument(format!("pair {i} has no negatives")));
                }
            }
            Some(g.input(mask.map(|v| if v == 0.0 { MASK_OFFSET } else { 0.0 })))
        }
        None => None,
    };
    let neg_t = g.transpose(negatives)?;
    let mut total: Option<NodeId> = None;
    for anchor in [e1, e2] {
        let sims = g.matmul(anchor, neg_t)?;
        let mut sims = g.scale(sims, t)?;
        if let Some(off) = offset {
            sims = g.add(sims, off)?;
        }
        let lse = g.log_sum_exp(sims, 1)?;
        total = Some(match total {
            None => lse,
            Some(acc) => g.add(acc, lse)?,
        });
    }
    let pos = g.row_dot(e1, e2)?;
    let pos = g.scale(pos, -t)?;
    let per = g.add(pos, total.expect("two anchors"))?;
    g.mean(per)
}

/// In-batch InfoNCE: the negatives of pair `i` are both views of every other pair.
pub fn infonce_loss_in_batch(g: &mut Graph, e1: NodeId, e2: NodeId, t: f64) -> Result<NodeId> {
    let (n, _) = g.value(e1).dims2()?;
    if n < 2 {
        return Err(Error::InvalidArgument("in-batch InfoNCE needs at least 2 pairs".into()));
    }
    let negatives = g.concat(&[e1, e2], 0)?;
    let mut mask = Tensor::filled(&[n, 2 * n], 1.0);
    for i in 0..n {
        mask.data_mut()[i * 2 * n + i] = 0.0;
        mask.data_mut()[i * 2 * n + n + i] = 0.0;
    }
    infonce_loss(g, e1, e2, negatives, Some(&mask), t)
}

/// InfoNCE averaged over matched posterior samples; `traces[i]` holds the
/// noise of draw `i` for the first and second views.
pub fn mcinfonce_loss(
    g: &mut Graph,
    (mu1, k1): (NodeId, NodeId),
    (mu2, k2): (NodeId, NodeId),
    t: f64,
    traces: &[(SampleTrace, SampleTrace)],
) -> Result<NodeId> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("MCInfoNCE needs at least one sample".into()));
    }
    let mut terms = Vec::with_capacity(traces.len());
    for (tr1, tr2) in traces {
        let s1 = vmf::rsample(g, mu1, k1, tr1)?;
        let s2 = vmf::rsample(g, mu2, k2, tr2)?;
        terms.push(infonce_loss_in_batch(g, s1, s2, t)?);
    }
    average(g, &terms)
}

fn average(g: &mut Graph, terms: &[NodeId]) -> Result<NodeId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    g.scale(acc, 1.0 / terms.len() as f64)
}

/// `[n, c]` matrix of `elk_sim` between posteriors vMF(μ_i, κ_i) and class
/// distributions vMF(ρ_c, κ_c). `mu` and `proto_mu` must have unit rows;
/// `kappa` is `[n, 1]`, `proto_kappa` is `[1, c]`.
pub fn elk_matrix(g: &mut Graph, mu: NodeId, kappa: NodeId, proto_mu: NodeId, proto_kappa: NodeId) -> Result<NodeId> {
    let (_, p) = g.value(mu).dims2()?;
    let (c, pc) = g.value(proto_mu).dims2()?;
    if pc != p || g.value(proto_kappa).shape() != [1, c] {
        return Err(Error::shape("elk_matrix", "prototype shapes do not match"));
    }
    let log_c_post = g.log_vmf_norm(kappa, p)?;
    let log_c_cls = g.log_vmf_norm(proto_kappa, p)?;
    let proto_t = g.transpose(proto_mu)?;
    let cos = g.matmul(mu, proto_t)?;
    let ka2 = g.square(kappa)?;
    let kc2 = g.square(proto_kappa)?;
    let cross = g.mul(kappa, proto_kappa)?;
    let cross = g.mul(cross, cos)?;
    let cross = g.scale(cross, 2.0)?;
    let sq = g.add(ka2, kc2)?;
    let sq = g.add(sq, cross)?;
    let sq = g.clamp_min(sq, 1e-24)?;
    let combined = g.sqrt(sq)?;
    let log_c_comb = g.log_vmf_norm(combined, p)?;
    let s = g.add(log_c_post, log_c_cls)?;
    g.sub(s, log_c_comb)
}

/// Proxy-NCA loss over a similarity matrix: `−s_y + log Σ_c exp(s_c)`.
pub fn proxy_nca_loss(g: &mut Graph, sims: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (_, c) = g.value(sims).dims2()?;
    if c == 0 {
        return Err(Error::InvalidArgument("no classes".into()));
    }
    ce_loss(g, sims, labels)
}

pub fn elk_loss(
    g: &mut Graph,
    mu: NodeId,
    kappa: NodeId,
    proto_mu: NodeId,
    proto_kappa: NodeId,
    labels: &[usize],
) -> Result<NodeId> {
    let sims = elk_matrix(g, mu, kappa, proto_mu, proto_kappa)?;
    proxy_nca_loss(g, sims, labels)
}

/// `[n, c]` Monte-Carlo estimates of the expected nivMF class density under
/// each posterior. `proto_lambda` is `[c, p]` with positive entries.
pub fn nivmf_matrix(
    g: &mut Graph,
    mu: NodeId,
    kappa: NodeId,
    proto_mu: NodeId,
    proto_lambda: NodeId,
    traces: &[SampleTrace],
) -> Result<NodeId> {
    let (_, p) = g.value(mu).dims2()?;
    if g.value(proto_mu).shape() != g.value(proto_lambda).shape() || g.value(proto_mu).cols() != p {
        return Err(Error::shape("nivmf_matrix", "prototype shapes do not match"));
    }
    if traces.is_empty() {
        return Err(Error::InvalidArgument("nivMF needs at least one sample".into()));
    }
    let theta = g.mul(proto_lambda, proto_mu)?;
    let theta_sq = g.square(theta)?;
    let kappa_cls = g.sum_axis(theta_sq, 1)?;
    let kappa_cls = g.sqrt(kappa_cls)?;
    let kappa_cls = g.transpose(kappa_cls)?;
    let log_c = g.log_vmf_norm(kappa_cls, p)?;
    let theta_t = g.transpose(theta)?;
    let mut parts = Vec::with_capacity(traces.len());
    for tr in traces {
        let s = vmf::rsample(g, mu, kappa, tr)?;
        let lin = g.matmul(s, theta_t)?;
        parts.push(g.add(lin, log_c)?);
    }
    let lse = g.log_sum_exp_stack(&parts)?;
    g.add_scalar(lse, -(traces.len() as f64).ln())
}

pub fn nivmf_loss(
    g: &mut Graph,
    mu: NodeId,
    kappa: NodeId,
    proto_mu: NodeId,
    proto_lambda: NodeId,
    labels: &[usize],
    traces: &[SampleTrace],
) -> Result<NodeId> {
    let sims = nivmf_matrix(g, mu, kappa, proto_mu, proto_lambda, traces)?;
    proxy_nca_loss(g, sims, labels)
}

/// `[n, n]` match probabilities `p_nm = mean_i σ(t s_niᵀ s_mi + b)`.
pub fn hib_match_probs(g: &mut Graph, mu: NodeId, kappa: NodeId, t: f64, b: f64, traces: &[SampleTrace]) -> Result<NodeId> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("HIB needs at least one sample".into()));
    }
    let mut parts = Vec::with_capacity(traces.len());
    for tr in traces {
        let s = vmf::rsample(g, mu, kappa, tr)?;
        let st = g.transpose(s)?;
        let sims = g.matmul(s, st)?;
        let logits = g.scale(sims, t)?;
        let logits = g.add_scalar(logits, b)?;
        parts.push(g.sigmoid(logits)?);
    }
    average(g, &parts)
}

pub fn hib_loss(
    g: &mut Graph,
    mu: NodeId,
    kappa: NodeId,
    labels: &[usize],
    t: f64,
    b: f64,
    traces: &[SampleTrace],
) -> Result<NodeId> {
    let n = labels.len();
    let mut same = Tensor::zeros(&[n, n]);
    let mut diff = Tensor::zeros(&[n, n]);
    let (mut n_same, mut n_diff) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if labels[i] == labels[j] {
                same.data_mut()[i * n + j] = 1.0;
                n_same += 1;
            } else {
                diff.data_mut()[i * n + j] = 1.0;
                n_diff += 1;
            }
        }
    }
    if n_same == 0 || n_diff == 0 {
        return Err(Error::InvalidArgument(format!("HIB needs same-label and different-label pairs, got {n_same} and {n_diff}")));
    }
    let probs = hib_match_probs(g, mu, kappa, t, b, traces)?;
    let logp = g.log(probs)?;
    let same = g.input(same.map(|v| v / n_same as f64));
    let diff = g.input(diff.map(|v| v / n_diff as f64));
    let s = g.mul(logp, same)?;
    let s = g.sum(s)?;
    let d = g.mul(logp, diff)?;
    let d = g.sum(d)?;
    g.sub(d, s)
}

/// Standard-normal draws for HET-XL's low-rank-plus-diagonal noise: for each
/// Monte-Carlo step, `[n, 1]` rank-one coefficients and `[n, p]` diagonal noise.
#[derive(Clone, Debug)]
pub struct HetNoise {
    pub rank_one: Vec<Tensor>,
    pub diag: Vec<Tensor>,
}

/// HET-XL loss. `v` and `d_raw` are `[n, p]` head outputs, the diagonal
/// variance is `softplus(d_raw) + floor`; logits are divided by `exp(log_tau)`.
#[allow(clippy::too_many_arguments)]
pub fn hetxl_loss(
    g: &mut Graph,
    phi: NodeId,
    v: NodeId,
    d_raw: NodeId,
    (w, bias): (NodeId, NodeId),
    log_tau: NodeId,
    labels: &[usize],
    noise: &HetNoise,
) -> Result<NodeId> {
    let logits = hetxl_sampled_logits(g, phi, v, d_raw, (w, bias), log_tau, noise)?;
    let mut parts = Vec::with_capacity(logits.len());
    for l in logits {
        parts.push(log_prob_of_label(g, l, labels)?);
    }
    let lse = g.log_sum_exp_stack(&parts)?;
    let log_mean = g.add_scalar(lse, -(parts.len() as f64).ln())?;
    let m = g.mean(log_mean)?;
    g.neg(m)
}

/// Temperature-scaled logits for each noise draw.
pub fn hetxl_sampled_logits(
    g: &mut Graph,
    phi: NodeId,
    v: NodeId,
    d_raw: NodeId,
    (w, bias): (NodeId, NodeId),
    log_tau: NodeId,
    noise: &HetNoise,
) -> Result<Vec<NodeId>> {
    if noise.rank_one.is_empty() || noise.rank_one.len() != noise.diag.len() {
        return Err(Error::InvalidArgument("HET-XL needs matching, non-empty noise draws".into()));
    }
    let d = g.softplus(d_raw)?;
    let d = g.add_scalar(d, HETXL_VAR_FLOOR)?;
    let sd = g.sqrt(d)?;
    let neg_tau = g.neg(log_tau)?;
    let inv_tau = g.exp(neg_tau)?;
    let mut out = Vec::with_capacity(noise.diag.len());
    for (r1, dg) in noise.rank_one.iter().zip(&noise.diag) {
        let r1 = g.input(r1.clone());
        let dg = g.input(dg.clone());
        let low = g.mul(v, r1)?;
        let diag = g.mul(sd, dg)?;
        let eps = g.add(low, diag)?;
        let z = g.add(phi, eps)?;
        let logits = g.linear(z, w, bias)?;
        out.push(g.mul(logits, inv_tau)?);
    }
    Ok(out)
}

/// SNGP random-feature map `sqrt(2/R) cos(h W + b)`.
pub fn sngp_features(g: &mut Graph, h: NodeId, w_rff: NodeId, b_rff: NodeId) -> Result<NodeId> {
    let r = g.value(w_rff).cols();
    let z = g.linear(h, w_rff, b_rff)?;
    let c = g.cos(z)?;
    g.scale(c, (2.0 / r as f64).sqrt())
}

/// Mean-field adjusted SNGP logits `m / sqrt(1 + λ₀ v)` with `m = φβ` and
/// `v = φᵀ Σ φ`, where `cov` is the (constant) posterior covariance.
pub fn sngp_logits(g: &mut Graph, phi: NodeId, beta: NodeId, cov: &Tensor) -> Result<NodeId> {
    let r = g.value(phi).cols();
    if cov.shape() != [r, r] {
        return Err(Error::shape("sngp_logits", format!("covariance {:?} for {r} features", cov.shape())));
    }
    let mean = g.matmul(phi, beta)?;
    let cov = g.input(cov.clone());
    let pc = g.matmul(phi, cov)?;
    let var = g.row_dot(pc, phi)?;
    let var = g.clamp_min(var, 0.0)?;
    let denom = g.scale(var, MEAN_FIELD_LAMBDA)?;
    let denom = g.add_scalar(denom, 1.0)?;
    let denom = g.sqrt(denom)?;
    g.div(mean, denom)
}

/// `CE + λ (κ − detach(CE))²`, averaged over the batch. `kappa` is `[n, 1]`.
pub fn losspred_loss(g: &mut Graph, logits: NodeId, labels: &[usize], kappa: NodeId, lambda: f64) -> Result<NodeId> {
    let ce = ce_per_sample(g, logits, labels)?;
    if g.value(kappa).shape() != g.value(ce).shape() {
        return Err(Error::shape("losspred_loss", format!("kappa {:?}", g.value(kappa).shape())));
    }
    let target = g.detach(ce)?;
    let resid = g.sub(kappa, target)?;
    let sq = g.square(resid)?;
    let sq = g.scale(sq, lambda)?;
    let per = g.add(ce, sq)?;
    g.mean(per)
}

/// Cross-entropy of the mean of member softmaxes.
pub fn ensemble_loss(g: &mut Graph, member_logits: &[NodeId], labels: &[usize]) -> Result<NodeId> {
    if member_logits.is_empty() {
        return Err(Error::InvalidArgument("ensemble with no members".into()));
    }
    let mut parts = Vec::with_capacity(member_logits.len());
    for &l in member_logits {
        parts.push(log_prob_of_label(g, l, labels)?);
    }
    let lse = g.log_sum_exp_stack(&parts)?;
    let log_mean = g.add_scalar(lse, -(parts.len() as f64).ln())?;
    let m = g.mean(log_mean)?;
    g.neg(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(g: &Graph, id: NodeId) -> f64 {
        g.value(id).item().unwrap()
    }

    #[test]
    fn ce_examples() {
        let mut g = Graph::new();
        let l = g.input(Tensor::from_rows(&[[0.5; 4]]).unwrap());
        let loss = ce_loss(&mut g, l, &[2]).unwrap();
        assert_relative_eq!(scalar(&g, loss), 4f64.ln(), epsilon = 1e-14);

        let l = g.input(Tensor::from_rows(&[[1.0, 0.0]]).unwrap());
        let loss = ce_loss(&mut g, l, &[0]).unwrap();
        assert_relative_eq!(scalar(&g, loss), (1.0 + (-1f64).exp()).ln(), epsilon = 1e-14);
        assert!((scalar(&g, loss) - 0.3133).abs() < 1e-4);

        let l = g.input(Tensor::from_rows(&[[1e6, 0.0, 0.0]]).unwrap());
        let loss = ce_loss(&mut g, l, &[0]).unwrap();
        assert!(scalar(&g, loss).abs() < 1e-12);
        assert!(ce_loss(&mut g, l, &[3]).is_err());
    }

    #[test]
    fn infonce_examples() {
        let mut g = Graph::new();
        let u = g.input(Tensor::from_rows(&[[1.0, 0.0]]).unwrap());
        let v = g.input(Tensor::from_rows(&[[0.0, 1.0]]).unwrap());
        let loss = infonce_loss(&mut g, u, u, v, None, 1.0).unwrap();
        assert_relative_eq!(scalar(&g, loss), -1.0, epsilon = 1e-14);

        let loss = infonce_loss(&mut g, u, v, u, None, 1.0).unwrap();
        assert_relative_eq!(scalar(&g, loss), 1.0, epsilon = 1e-14);

        let empty = g.input(Tensor::zeros(&[0, 2]));
        assert!(infonce_loss(&mut g, u, u, empty, None, 1.0).is_err());
    }

    #[test]
    fn elk_single_class_is_zero() {
        let mut g = Graph::new();
        let mu = g.input(Tensor::from_rows(&[[0.6, 0.8, 0.0]]).unwrap());
        let k = g.input(Tensor::from_rows(&[[3.0]]).unwrap());
        let pm = g.input(Tensor::from_rows(&[[0.0, 0.0, 1.0]]).unwrap());
        let pk = g.input(Tensor::from_rows(&[[8.0]]).unwrap());
        let loss = elk_loss(&mut g, mu, k, pm, pk, &[0]).unwrap();
        assert_eq!(scalar(&g, loss), 0.0);
    }

    #[test]
    fn elk_symmetric_classes_give_log2() {
        let mut g = Graph::new();
        let mu = g.input(Tensor::from_rows(&[[1.0, 0.0, 0.0]]).unwrap());
        let k = g.input(Tensor::from_rows(&[[3.0]]).unwrap());
        let s = 0.5f64.sqrt();
        let pm = g.input(Tensor::from_rows(&[[s, s, 0.0], [s, -s, 0.0]]).unwrap());
        let pk = g.input(Tensor::from_rows(&[[8.0, 8.0]]).unwrap());
        let loss = elk_loss(&mut g, mu, k, pm, pk, &[1]).unwrap();
        assert_relative_eq!(scalar(&g, loss), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn hib_requires_both_pair_types() {
        let mut g = Graph::new();
        let mu = g.input(Tensor::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap());
        let k = g.input(Tensor::from_rows(&[[1e6], [1e6]]).unwrap());
        let tr = SampleTrace { dim: 2, z: vec![0.5, 0.5], tangent: vec![vec![1.0], vec![1.0]] };
        assert!(hib_loss(&mut g, mu, k, &[0, 0], 8.0, 0.0, &[tr]).is_err());
    }

    #[test]
    fn losspred_example() {
        let mut g = Graph::new();
        let l = g.input(Tensor::from_rows(&[[1.0, 0.0]]).unwrap());
        let k = g.input(Tensor::from_rows(&[[1.0]]).unwrap());
        let loss = losspred_loss(&mut g, l, &[0], k, 0.5).unwrap();
        let ce = (1.0 + (-1f64).exp()).ln();
        assert_relative_eq!(scalar(&g, loss), ce + 0.5 * (1.0 - ce) * (1.0 - ce), epsilon = 1e-14);
        assert!((scalar(&g, loss) - 0.5490).abs() < 1e-4);
    }

    #[test]
    fn sngp_identity_covariance_variance_is_squared_norm() {
        let mut g = Graph::new();
        let phi = g.input(Tensor::from_rows(&[[0.3, -0.4, 1.2]]).unwrap());
        let beta = g.input(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]).unwrap());
        let logits = sngp_logits(&mut g, phi, beta, &Tensor::identity(3)).unwrap();
        let v: f64 = 0.09 + 0.16 + 1.44;
        let scale = 1.0 / (1.0 + MEAN_FIELD_LAMBDA * v).sqrt();
        assert_relative_eq!(g.value(logits).get2(0, 0), (0.3 + 0.6) * scale, epsilon = 1e-14);
        let zero = Tensor::zeros(&[3, 3]);
        let logits = sngp_logits(&mut g, phi, beta, &zero).unwrap();
        assert_relative_eq!(g.value(logits).get2(0, 1), -0.4 + 0.6, epsilon = 1e-14);
    }
}
