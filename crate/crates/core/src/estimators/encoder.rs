//! The shared MLP encoder, its method-specific heads, and graph construction
//! for losses and predictions.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{Method, MethodConfig};
use super::losses::{self, HetNoise, HETXL_VAR_FLOOR};
use super::uncertainty::{low_rank_log_det, pool_member_probs, softmax, Prediction};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vmf::{self, SampleTrace};

const BACKBONE_LAYERS: usize = 3;
const UNC_LAYERS: usize = 3;
const WARMUP_KAPPA: f64 = 0.001;
const PREDICT_CHUNK: usize = 512;
/// Passes drawn by MCDropout at inference.
pub const MC_DROPOUT_PASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub input: usize,
    pub hidden: usize,
    pub embed: usize,
    pub unc_hidden: usize,
    pub classes: usize,
    /// SNGP random features.
    pub rff: usize,
}

impl EncoderDims {
    pub fn new(input: usize, classes: usize) -> Self {
        EncoderDims { input, hidden: 64, embed: 16, unc_hidden: 32, classes, rff: 64 }
    }
}

/// A labeled batch, or a batch of view pairs for the unsupervised methods.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub x2: Option<Tensor>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Encoder {
    pub config: MethodConfig,
    pub dims: EncoderDims,
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

fn softplus_inverse(y: f64) -> f64 {
    y.exp_m1().ln()
}

fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("sized")
}

/// Largest singular value by power iteration from a fixed start.
fn spectral_norm(w: &Tensor) -> f64 {
    let (r, c) = (w.rows(), w.cols());
    let mut v = vec![1.0 / (c as f64).sqrt(); c];
    let mut sigma = 0.0;
    for _ in 0..30 {
        let mut u = vec![0.0; r];
        for i in 0..r {
            u[i] = w.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if un == 0.0 {
            return 0.0;
        }
        u.iter_mut().for_each(|x| *x /= un);
        let mut nv = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                nv[j] += w.get2(i, j) * u[i];
            }
        }
        sigma = nv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if sigma == 0.0 {
            return 0.0;
        }
        v = nv.into_iter().map(|x| x / sigma).collect();
    }
    sigma
}

struct Bound(BTreeMap<String, NodeId>);

impl Bound {
    fn get(&self, name: &str) -> NodeId {
        self.0[name]
    }
}

impl Encoder {
    pub fn new(config: MethodConfig, dims: EncoderDims) -> Result<Self> {
        config.validate()?;
        if dims.input == 0 || dims.hidden == 0 || dims.embed < 2 || dims.unc_hidden == 0 || dims.rff == 0 {
            return Err(Error::Config(format!("invalid encoder dimensions {dims:?}")));
        }
        let needs_classes = !config.method.is_unsupervised();
        if needs_classes && dims.classes < 2 {
            return Err(Error::Config(format!("{} needs at least 2 classes", config.method)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();

        let widths = [dims.input, dims.hidden, dims.hidden, dims.embed];
        for l in 0..BACKBONE_LAYERS {
            let gain = if l + 1 < BACKBONE_LAYERS { 2.0 } else { 1.0 };
            let std = (gain / widths[l] as f64).sqrt();
            params.insert(format!("bb.w{l}"), normal_tensor(&mut rng, &[widths[l], widths[l + 1]], std));
            params.insert(format!("bb.b{l}"), Tensor::zeros(&[1, widths[l + 1]]));
        }

        let m = config.method;
        if m.has_unc_head() {
            let widths = [dims.embed, dims.unc_hidden, dims.unc_hidden, 1];
            for l in 0..UNC_LAYERS {
                let gain = if l + 1 < UNC_LAYERS { 2.0 } else { 1.0 };
                let std = (gain / widths[l] as f64).sqrt();
                params.insert(format!("unc.w{l}"), normal_tensor(&mut rng, &[widths[l], widths[l + 1]], std));
                params.insert(format!("unc.b{l}"), Tensor::zeros(&[1, widths[l + 1]]));
            }
            if config.warmup_kappa {
                params.insert(format!("unc.b{}", UNC_LAYERS - 1), Tensor::filled(&[1, 1], softplus_inverse(WARMUP_KAPPA)));
            }
        }

        let (p, c) = (dims.embed, dims.classes);
        let head_std = (1.0 / p as f64).sqrt();
        match m {
            Method::Ce | Method::Losspred | Method::McDropout | Method::HetXl => {
                params.insert("cls.w".into(), normal_tensor(&mut rng, &[p, c], head_std));
                params.insert("cls.b".into(), Tensor::zeros(&[1, c]));
            }
            Method::Ensemble => {
                for k in 0..config.n_members {
                    params.insert(format!("ens{k:02}.w"), normal_tensor(&mut rng, &[p, c], head_std));
                    params.insert(format!("ens{k:02}.b"), Tensor::zeros(&[1, c]));
                }
            }
            Method::Elk | Method::NivMf => {
                params.insert("proto.mu".into(), normal_tensor(&mut rng, &[c, p], 1.0));
                if m == Method::Elk {
                    params.insert("proto.kappa".into(), Tensor::filled(&[1, c], softplus_inverse(1.0)));
                } else {
                    params.insert("proto.lambda".into(), Tensor::filled(&[c, p], softplus_inverse(1.0)));
                }
            }
            Method::Sngp => {
                params.insert("sngp.beta".into(), normal_tensor(&mut rng, &[dims.rff, c], 0.1));
                buffers.insert("sngp.w_rff".into(), normal_tensor(&mut rng, &[p, dims.rff], 1.0));
                let two_pi = 2.0 * std::f64::consts::PI;
                let phases: Vec<f64> = (0..dims.rff).map(|_| rng.random::<f64>() * two_pi).collect();
                buffers.insert("sngp.b_rff".into(), Tensor::new(vec![1, dims.rff], phases)?);
                buffers.insert("sngp.cov".into(), Tensor::identity(dims.rff));
            }
            Method::InfoNce | Method::McInfoNce | Method::Hib => {}
        }
        if m == Method::HetXl {
            params.insert("het.v.w".into(), normal_tensor(&mut rng, &[p, p], 0.1 * head_std));
            params.insert("het.v.b".into(), Tensor::zeros(&[1, p]));
            params.insert("het.d.w".into(), normal_tensor(&mut rng, &[p, p], 0.1 * head_std));
            params.insert("het.d.b".into(), Tensor::filled(&[1, p], softplus_inverse(0.1)));
            params.insert("het.log_tau".into(), Tensor::filled(&[1, 1], 0.0));
        }
        Ok(Encoder { config, dims, params, buffers })
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Parameter values in name order.
    pub fn param_values(&self) -> Vec<Tensor> {
        self.params.values().cloned().collect()
    }

    pub fn set_param_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape("set_param_values", format!("{} values for {} params", values.len(), self.params.len())));
        }
        for ((name, slot), v) in self.params.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::shape("set_param_values", format!("{name}: {:?} vs {:?}", slot.shape(), v.shape())));
            }
            *slot = v;
        }
        Ok(())
    }

    /// Copy for a new label set: backbone, uncertainty head, and SNGP random
    /// features are kept; class-dependent heads are freshly initialized.
    pub fn transfer_to_classes(&self, classes: usize) -> Result<Encoder> {
        let mut fresh = Encoder::new(self.config.clone(), EncoderDims { classes, ..self.dims })?;
        for (name, t) in &self.params {
            if name.starts_with("bb.") || name.starts_with("unc.") {
                fresh.params.insert(name.clone(), t.clone());
            }
        }
        for name in ["sngp.w_rff", "sngp.b_rff"] {
            if let Some(t) = self.buffers.get(name) {
                fresh.buffers.insert(name.into(), t.clone());
            }
        }
        Ok(fresh)
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let mut map = BTreeMap::new();
        for (name, t) in &self.params {
            let id = if trainable { g.param(t.clone()) } else { g.input(t.clone()) };
            map.insert(name.clone(), id);
        }
        Bound(map)
    }

    fn draw_dropout_masks<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Tensor> {
        let rate = self.config.dropout_rate;
        let keep = 1.0 - rate;
        let widths = [self.dims.hidden, self.dims.hidden, self.dims.embed];
        widths
            .iter()
            .map(|&w| {
                let data = (0..n * w).map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep }).collect();
                Tensor::new(vec![n, w], data).expect("sized")
            })
            .collect()
    }

    /// Raw (unnormalized) embedding of `x`.
    fn backbone(&self, g: &mut Graph, b: &Bound, x: NodeId, masks: Option<&[Tensor]>) -> Result<NodeId> {
        let mut h = x;
        for l in 0..BACKBONE_LAYERS {
            let mut w = b.get(&format!("bb.w{l}"));
            if self.config.method == Method::Sngp && self.config.spectral_norm {
                let sigma = spectral_norm(g.value(w));
                if sigma > 1.0 {
                    w = g.scale(w, 1.0 / sigma)?;
                }
            }
            let z = g.linear(h, w, b.get(&format!("bb.b{l}")))?;
            if l + 1 < BACKBONE_LAYERS {
                h = g.relu(z)?;
                if let Some(masks) = masks {
                    let m = g.input(masks[l].clone());
                    h = g.mul(h, m)?;
                }
            } else {
                h = z;
            }
        }
        Ok(h)
    }

    /// Softplus output of the uncertainty head, `[n, 1]`.
    fn unc_head(&self, g: &mut Graph, b: &Bound, raw: NodeId) -> Result<NodeId> {
        let mut h = raw;
        for l in 0..UNC_LAYERS {
            let z = g.linear(h, b.get(&format!("unc.w{l}")), b.get(&format!("unc.b{l}")))?;
            h = if l + 1 < UNC_LAYERS { g.relu(z)? } else { g.softplus(z)? };
        }
        Ok(h)
    }

    fn head(&self, g: &mut Graph, b: &Bound, prefix: &str, input: NodeId) -> Result<NodeId> {
        g.linear(input, b.get(&format!("{prefix}.w")), b.get(&format!("{prefix}.b")))
    }

    fn sngp_phi(&self, g: &mut Graph, raw: NodeId) -> Result<NodeId> {
        let w = g.input(self.buffers["sngp.w_rff"].clone());
        let bias = g.input(self.buffers["sngp.b_rff"].clone());
        losses::sngp_features(g, raw, w, bias)
    }

    fn draw_traces<R: Rng + ?Sized>(&self, kappa: &Tensor, rng: &mut R) -> SampleTrace {
        vmf::draw_noise(self.dims.embed, kappa.data(), rng)
    }

    fn draw_het_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> HetNoise {
        let p = self.dims.embed;
        let mut rank_one = Vec::with_capacity(self.config.n_mc);
        let mut diag = Vec::with_capacity(self.config.n_mc);
        for _ in 0..self.config.n_mc {
            let r: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let d: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
            rank_one.push(Tensor::new(vec![n, 1], r).expect("sized"));
            diag.push(Tensor::new(vec![n, p], d).expect("sized"));
        }
        HetNoise { rank_one, diag }
    }

    /// Builds the training loss of `batch`. All stochastic inputs (posterior
    /// samples, dropout masks, Gaussian noise) are drawn from `rng` and stored
    /// as constants, so the returned graph is a deterministic function of the
    /// parameters. Returns the graph, the loss node, and the parameter nodes in
    /// name order.
    pub fn loss_graph<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<(Graph, NodeId, Vec<NodeId>)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, true);
        let n = batch.x.rows();
        if batch.x.cols() != self.dims.input {
            return Err(Error::shape(
                "encoder_forward",
                format!("input has {} columns, expected {}", batch.x.cols(), self.dims.input),
            ));
        }
        let cfg = &self.config;
        let labels = &batch.labels;
        let x = g.input(batch.x.clone());
        let loss = match cfg.method {
            Method::InfoNce | Method::McInfoNce => {
                let x2 = batch.x2.as_ref().ok_or_else(|| Error::InvalidArgument(format!("{} needs paired views", cfg.method)))?;
                if x2.shape() != batch.x.shape() {
                    return Err(Error::shape("encoder_forward", "views differ in shape"));
                }
                let x2 = g.input(x2.clone());
                let r1 = self.backbone(&mut g, &b, x, None)?;
                let r2 = self.backbone(&mut g, &b, x2, None)?;
                let e1 = g.l2_normalize(r1)?;
                let e2 = g.l2_normalize(r2)?;
                if cfg.method == Method::InfoNce {
                    losses::infonce_loss_in_batch(&mut g, e1, e2, cfg.t)?
                } else {
                    let k1 = self.unc_head(&mut g, &b, r1)?;
                    let k2 = self.unc_head(&mut g, &b, r2)?;
                    let mut traces = Vec::with_capacity(cfg.n_mc);
                    for _ in 0..cfg.n_mc {
                        let t1 = self.draw_traces(g.value(k1), rng);
                        let t2 = self.draw_traces(g.value(k2), rng);
                        traces.push((t1, t2));
                    }
                    losses::mcinfonce_loss(&mut g, (e1, k1), (e2, k2), cfg.t, &traces)?
                }
            }
            Method::Ce => {
                let raw = self.backbone(&mut g, &b, x, None)?;
                let logits = self.head(&mut g, &b, "cls", raw)?;
                losses::ce_loss(&mut g, logits, labels)?
            }
            Method::McDropout => {
                let masks = self.draw_dropout_masks(n, rng);
                let raw = self.backbone(&mut g, &b, x, Some(&masks))?;
                let m = g.input(masks[2].clone());
                let dropped = g.mul(raw, m)?;
                let logits = self.head(&mut g, &b, "cls", dropped)?;
                losses::ce_loss(&mut g, logits, labels)?
            }
            Method::Losspred => {
                let raw = self.backbone(&mut g, &b, x, None)?;
                let logits = self.head(&mut g, &b, "cls", raw)?;
                let kappa = self.unc_head(&mut g, &b, raw)?;
                losses::losspred_loss(&mut g, logits, labels, kappa, cfg.lambda)?
            }
            Method::Ensemble => {
                let raw = self.backbone(&mut g, &b, x, None)?;
                let mut members = Vec::with_capacity(cfg.n_members);
                for k in 0..cfg.n_members {
                    members.push(self.head(&mut g, &b, &format!("ens{k:02}"), raw)?);
                }
                losses::ensemble_loss(&mut g, &members, labels)?
            }
            Method::Elk | Method::NivMf | Method::Hib => {
                let raw = self.backbone(&mut g, &b, x, None)?;
                let mu = g.l2_normalize(raw)?;
                let kappa = self.unc_head(&mut g, &b, raw)?;
                match cfg.method {
                    Method::Elk => {
                        let pm = g.l2_normalize(b.get("proto.mu"))?;
                        let pk = g.softplus(b.get("proto.kappa"))?;
                        let pk = g.scale(pk, cfg.t)?;
                        losses::elk_loss(&mut g, mu, kappa, pm, pk, labels)?
                    }
                    Method::NivMf => {
                        let pm = g.l2_normalize(b.get("proto.mu"))?;
                        let pl = g.softplus(b.get("proto.lambda"))?;
                        let pl = g.scale(pl, cfg.t)?;
                        let traces: Vec<SampleTrace> = (0..cfg.n_mc).map(|_| self.draw_traces(g.value(kappa), rng)).collect();
                        losses::nivmf_loss(&mut g, mu, kappa, pm, pl, labels, &traces)?
                    }
                    _ => {
                        let traces: Vec<SampleTrace> = (0..cfg.n_mc).map(|_| self.draw_traces(g.value(kappa), rng)).collect();
                        losses::hib_loss(&mut g, mu, kappa, labels, cfg.t, cfg.b, &traces)?
                    }
                }
            }
            Method::HetXl => {
                let raw = self.backbone(&mut g, &b, x, None)?;
                let v = self.head(&mut g, &b, "het.v", raw)?;
                let d = self.head(&mut g, &b, "het.d", raw)?;
                let noise = self.draw_het_noise(n, rng);
                let cls = (b.get("cls.w"), b.get("cls.b"));
                losses::hetxl_loss(&mut g, raw, v, d, cls, b.get("het.log_tau"), labels, &noise)?
            }
            Method::Sngp => {
                let raw = self.backbone(&mut g, &b, x, None)?;
                let phi = self.sngp_phi(&mut g, raw)?;
                let logits = losses::sngp_logits(&mut g, phi, b.get("sngp.beta"), &self.buffers["sngp.cov"])?;
                losses::ce_loss(&mut g, logits, labels)?
            }
        };
        let params = b.0.values().copied().collect();
        Ok((g, loss, params))
    }

    /// Unit-norm embeddings and raw norms without any head.
    pub fn embed(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let xi = g.input(x.clone());
        let raw = self.backbone(&mut g, &b, xi, None)?;
        let emb = g.l2_normalize(raw)?;
        let norms = (0..x.rows()).map(|i| g.value(raw).row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        Ok((g.value(emb).clone(), norms))
    }

    /// Recomputes the SNGP posterior covariance `(I + ΦᵀΦ)⁻¹` over `x`.
    pub fn refresh_sngp_covariance(&mut self, x: &Tensor) -> Result<()> {
        if self.config.method != Method::Sngp {
            return Ok(());
        }
        let r = self.dims.rff;
        let mut precision = DMatrix::<f64>::identity(r, r);
        for start in (0..x.rows()).step_by(PREDICT_CHUNK) {
            let chunk = row_slice(x, start, (start + PREDICT_CHUNK).min(x.rows()));
            let mut g = Graph::new();
            let b = self.bind(&mut g, false);
            let xi = g.input(chunk);
            let raw = self.backbone(&mut g, &b, xi, None)?;
            let phi = self.sngp_phi(&mut g, raw)?;
            let phi = g.value(phi);
            let m = DMatrix::from_row_slice(phi.rows(), r, phi.data());
            precision += m.transpose() * &m;
        }
        let cov = match precision.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => {
                let ridged = precision + DMatrix::<f64>::identity(r, r) * 1e-6;
                ridged.cholesky().ok_or_else(|| Error::Degenerate("SNGP precision is not positive definite".into()))?.inverse()
            }
        };
        let data: Vec<f64> = (0..r).flat_map(|i| (0..r).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).collect();
        self.buffers.insert("sngp.cov".into(), Tensor::new(vec![r, r], data)?);
        Ok(())
    }

    /// Predictions for every row of `x`; stochastic read-outs (HET-XL
    /// sampling, MCDropout passes) draw from `rng`.
    pub fn predict<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<Vec<Prediction>> {
        if x.cols() != self.dims.input {
            return Err(Error::shape("encoder_forward", format!("input has {} columns, expected {}", x.cols(), self.dims.input)));
        }
        let mut out = Vec::with_capacity(x.rows());
        for start in (0..x.rows()).step_by(PREDICT_CHUNK) {
            let chunk = row_slice(x, start, (start + PREDICT_CHUNK).min(x.rows()));
            out.extend(self.predict_chunk(&chunk, rng)?);
        }
        Ok(out)
    }

    fn predict_chunk<R: Rng + ?Sized>(&self, x: &Tensor, rng: &mut R) -> Result<Vec<Prediction>> {
        let n = x.rows();
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let xi = g.input(x.clone());
        let raw = self.backbone(&mut g, &b, xi, None)?;
        let emb = g.l2_normalize(raw)?;
        let mut preds: Vec<Prediction> = (0..n)
            .map(|i| Prediction {
                embedding: g.value(emb).row(i).to_vec(),
                raw_norm: g.value(raw).row(i).iter().map(|v| v * v).sum::<f64>().sqrt(),
                ..Default::default()
            })
            .collect();
        let cfg = &self.config;
        let rows_softmax = |t: &Tensor| -> Vec<Vec<f64>> { (0..t.rows()).map(|i| softmax(t.row(i))).collect() };
        if cfg.method.has_unc_head() {
            let k = self.unc_head(&mut g, &b, raw)?;
            for (i, p) in preds.iter_mut().enumerate() {
                let v = g.value(k).get2(i, 0);
                if cfg.method == Method::Losspred {
                    p.predicted_loss = Some(v);
                } else {
                    p.kappa = Some(v);
                }
            }
        }
        match cfg.method {
            Method::Ce | Method::Losspred => {
                let logits = self.head(&mut g, &b, "cls", raw)?;
                for (p, probs) in preds.iter_mut().zip(rows_softmax(g.value(logits))) {
                    p.probs = Some(probs);
                }
            }
            Method::Sngp => {
                let phi = self.sngp_phi(&mut g, raw)?;
                let logits = losses::sngp_logits(&mut g, phi, b.get("sngp.beta"), &self.buffers["sngp.cov"])?;
                for (p, probs) in preds.iter_mut().zip(rows_softmax(g.value(logits))) {
                    p.probs = Some(probs);
                }
            }
            Method::Ensemble => {
                let mut members: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
                for k in 0..cfg.n_members {
                    let l = self.head(&mut g, &b, &format!("ens{k:02}"), raw)?;
                    for (i, probs) in rows_softmax(g.value(l)).into_iter().enumerate() {
                        members[i].push(probs);
                    }
                }
                attach_members(&mut preds, members)?;
            }
            Method::McDropout => {
                let mut members: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
                for _ in 0..MC_DROPOUT_PASSES {
                    let masks = self.draw_dropout_masks(n, rng);
                    let r = self.backbone(&mut g, &b, xi, Some(&masks))?;
                    let m = g.input(masks[2].clone());
                    let dropped = g.mul(r, m)?;
                    let l = self.head(&mut g, &b, "cls", dropped)?;
                    for (i, probs) in rows_softmax(g.value(l)).into_iter().enumerate() {
                        members[i].push(probs);
                    }
                }
                attach_members(&mut preds, members)?;
            }
            Method::HetXl => {
                let v = self.head(&mut g, &b, "het.v", raw)?;
                let d_raw = self.head(&mut g, &b, "het.d", raw)?;
                let noise = self.draw_het_noise(n, rng);
                let cls = (b.get("cls.w"), b.get("cls.b"));
                let logits = losses::hetxl_sampled_logits(&mut g, raw, v, d_raw, cls, b.get("het.log_tau"), &noise)?;
                let mut members: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
                for l in logits {
                    for (i, probs) in rows_softmax(g.value(l)).into_iter().enumerate() {
                        members[i].push(probs);
                    }
                }
                for (i, p) in preds.iter_mut().enumerate() {
                    let d: Vec<f64> =
                        g.value(d_raw).row(i).iter().map(|&z| crate::autodiff::softplus(z) + HETXL_VAR_FLOOR).collect();
                    p.log_det = Some(low_rank_log_det(g.value(v).row(i), &d)?);
                    p.probs = Some(pool_member_probs(&members[i])?.mean_probs);
                }
            }
            Method::InfoNce | Method::McInfoNce | Method::Elk | Method::NivMf | Method::Hib => {}
        }
        Ok(preds)
    }
}

fn attach_members(preds: &mut [Prediction], members: Vec<Vec<Vec<f64>>>) -> Result<()> {
    for (p, m) in preds.iter_mut().zip(members) {
        p.probs = Some(pool_member_probs(&m)?.mean_probs);
        p.member_probs = Some(m);
    }
    Ok(())
}

/// Rows `start..end` of a matrix.
pub fn row_slice(x: &Tensor, start: usize, end: usize) -> Tensor {
    let c = x.cols();
    Tensor::new(vec![end - start, c], x.data()[start * c..end * c].to_vec()).expect("in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dims() -> EncoderDims {
        EncoderDims { input: 4, hidden: 6, embed: 3, unc_hidden: 4, classes: 3, rff: 5 }
    }

    #[test]
    fn zero_unc_head_outputs_log2() {
        let mut enc = Encoder::new(MethodConfig::new(Method::Losspred), tiny_dims()).unwrap();
        let names = enc.param_names();
        let values: Vec<Tensor> = names
            .iter()
            .zip(enc.param_values())
            .map(|(n, t)| if n == "unc.w2" || n == "unc.b2" { Tensor::zeros(t.shape()) } else { t })
            .collect();
        enc.set_param_values(values).unwrap();
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3, 0.4], [1.0, -1.0, 0.5, 0.0]]).unwrap();
        let preds = enc.predict(&x, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for p in preds {
            assert!((p.predicted_loss.unwrap() - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_inputs_identical_rows() {
        let enc = Encoder::new(MethodConfig::new(Method::Ce), tiny_dims()).unwrap();
        let x = Tensor::from_rows(&[[0.3, -0.2, 0.9, 0.1]; 3]).unwrap();
        let preds = enc.predict(&x, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(preds[0], preds[1]);
        assert_eq!(preds[1], preds[2]);
        let s: f64 = preds[0].probs.as_ref().unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let w = Tensor::from_rows(&[[3.0, 0.0], [0.0, -2.0]]).unwrap();
        assert!((spectral_norm(&w) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn warmup_starts_near_target() {
        let mut cfg = MethodConfig::new(Method::McInfoNce);
        cfg.warmup_kappa = true;
        let enc = Encoder::new(cfg, tiny_dims()).unwrap();
        let b = enc.param("unc.b2").unwrap().item().unwrap();
        assert!((crate::autodiff::softplus(b) - WARMUP_KAPPA).abs() < 1e-12);
    }
}
