//! Minibatch training with Adam and the warmup + cosine schedule.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::autodiff::{lr_schedule, OptimizerState};
use crate::data::{SyntheticDataset, SyntheticSample};
use crate::error::{Error, Result};
use crate::estimators::{Batch, Encoder, Method, MethodConfig};
use crate::tensor::Tensor;

/// A training set: dataset rows plus labels remapped to `0..classes`.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub classes: Vec<usize>,
}

impl LabeledSet {
    pub fn new(ds: &SyntheticDataset, indices: &[usize]) -> Self {
        let classes: Vec<usize> = indices.iter().map(|&i| ds.samples[i].label).collect::<BTreeSet<_>>().into_iter().collect();
        let labels =
            indices.iter().map(|&i| classes.binary_search(&ds.samples[i].label).expect("class collected above")).collect();
        LabeledSet { indices: indices.to_vec(), labels, classes }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainedModel {
    pub encoder: Encoder,
    /// Sample ids the training loader handed to the model.
    pub consumed_ids: BTreeSet<u64>,
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
}

pub fn observations(ds: &SyntheticDataset, indices: &[usize]) -> Tensor {
    let samples: Vec<&SyntheticSample> = indices.iter().map(|&i| &ds.samples[i]).collect();
    observations_of(&samples).expect("rows share the observation dimension")
}

/// Stacks the observations of `samples` into an `[n, D]` matrix.
pub fn observations_of(samples: &[&SyntheticSample]) -> Result<Tensor> {
    let d = samples.first().map_or(0, |s| s.x.len());
    let mut data = Vec::with_capacity(samples.len() * d);
    for s in samples {
        data.extend_from_slice(&s.x);
    }
    Tensor::new(vec![samples.len(), d], data)
}

fn make_batch(ds: &SyntheticDataset, set: &LabeledSet, rows: &[usize], method: Method, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let labels = rows.iter().map(|&r| set.labels[r]).collect();
    let idx: Vec<usize> = rows.iter().map(|&r| set.indices[r]).collect();
    if !method.is_unsupervised() {
        return Ok(Batch { x: observations(ds, &idx), x2: None, labels });
    }
    let d = ds.obs_dim();
    let mut v1 = Vec::with_capacity(idx.len() * d);
    let mut v2 = Vec::with_capacity(idx.len() * d);
    for &i in &idx {
        v1.extend(ds.draw_view(&ds.samples[i], rng)?);
        v2.extend(ds.draw_view(&ds.samples[i], rng)?);
    }
    Ok(Batch { x: Tensor::new(vec![idx.len(), d], v1)?, x2: Some(Tensor::new(vec![idx.len(), d], v2)?), labels })
}

/// Runs `epochs` epochs of training on `set`, starting from `encoder`.
pub fn fit(
    mut encoder: Encoder,
    ds: &SyntheticDataset,
    set: &LabeledSet,
    train: &TrainConfig,
    epochs: usize,
) -> Result<TrainedModel> {
    let mut consumed = BTreeSet::new();
    if epochs == 0 {
        return Ok(TrainedModel { encoder, consumed_ids: consumed, epochs_run: 0, final_loss: None });
    }
    if set.len() < 2 {
        return Err(Error::InvalidArgument(format!("training needs at least 2 samples, got {}", set.len())));
    }
    let method = encoder.method();
    let mut rng = ChaCha8Rng::seed_from_u64(encoder.config.seed);
    rng.set_stream(2);
    let mut opt = OptimizerState::new(&encoder.param_values());
    let warmup = train.warmup_epochs.min(epochs - 1);
    let all_x = observations(ds, &set.indices);
    encoder.refresh_sngp_covariance(&all_x)?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut last = None;
    for epoch in 0..epochs {
        let lr = lr_schedule(epoch, warmup, epochs, encoder.config.lr)?;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for rows in order.chunks(train.batch_size_for(method).min(set.len())) {
            if rows.len() < 2 {
                continue;
            }
            let batch = make_batch(ds, set, rows, method, &mut rng)?;
            let (g, loss, ids) = encoder.loss_graph(&batch, &mut rng)?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged(format!("{method}: loss {value} at epoch {epoch}")));
            }
            let grads = g.backward(loss)?;
            let grads: Vec<Tensor> = ids.iter().map(|&id| grads.wrt(&g, id)).collect();
            if grads.iter().any(|t| !t.all_finite()) {
                return Err(Error::Diverged(format!("{method}: non-finite gradient at epoch {epoch}")));
            }
            let mut params = encoder.param_values();
            opt.step(&mut params, &grads, lr)?;
            if params.iter().any(|t| !t.all_finite()) {
                return Err(Error::Diverged(format!("{method}: non-finite parameters at epoch {epoch}")));
            }
            encoder.set_param_values(params)?;
            consumed.extend(rows.iter().map(|&r| ds.samples[set.indices[r]].id));
            total += value;
            batches += 1;
        }
        encoder.refresh_sngp_covariance(&all_x)?;
        last = Some(total / batches.max(1) as f64);
    }
    Ok(TrainedModel { encoder, consumed_ids: consumed, epochs_run: epochs, final_loss: last })
}

/// Fresh encoder for `cfg` trained on `indices` of `ds`.
pub fn train_method(cfg: &MethodConfig, train: &TrainConfig, ds: &SyntheticDataset, indices: &[usize]) -> Result<TrainedModel> {
    let set = LabeledSet::new(ds, indices);
    let mut cfg = cfg.clone();
    cfg.n_mc = train.n_mc;
    cfg.n_members = train.n_members;
    let classes = if cfg.method.is_unsupervised() { set.classes.len().max(2) } else { set.classes.len() };
    let encoder = Encoder::new(cfg, train.dims(ds.obs_dim(), classes))?;
    fit(encoder, ds, &set, train, train.epochs)
}
