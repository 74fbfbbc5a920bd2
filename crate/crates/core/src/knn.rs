//! Exact top-1 neighbor search. Queries are processed in blocks on the rayon
//! pool; each query scans the corpus in index order and only a strict
//! improvement replaces the incumbent, so ties resolve to the lowest index no
//! matter how queries are partitioned.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

/// Row-major `n × p` embeddings, unit-normalized when the metric is cosine.
#[derive(Clone, Debug)]
pub struct EmbeddingMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
    metric: Metric,
}

impl EmbeddingMatrix {
    pub fn new(rows: &[Vec<f64>], metric: Metric) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * p);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != p {
                return Err(Error::shape("embedding_matrix", format!("row {i} has {} entries, expected {p}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(data, rows.len(), p, metric)
    }

    pub fn from_flat(mut data: Vec<f64>, n: usize, p: usize, metric: Metric) -> Result<Self> {
        if data.len() != n * p {
            return Err(Error::shape("embedding_matrix", format!("{} values for {n} x {p}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "embedding_matrix" });
        }
        if metric == Metric::Cosine {
            for i in 0..n {
                let row = &mut data[i * p..(i + 1) * p];
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::InvalidArgument(format!("row {i} is the zero vector under cosine")));
                }
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Ok(EmbeddingMatrix { n, p, data, metric })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    fn nearest(&self, i: usize) -> usize {
        let q = self.row(i);
        let mut best = usize::MAX;
        let mut best_score = f64::NEG_INFINITY;
        for j in 0..self.n {
            if j == i {
                continue;
            }
            let r = self.row(j);
            let score = match self.metric {
                Metric::Cosine => {
                    let mut s = 0.0;
                    for k in 0..self.p {
                        s += q[k] * r[k];
                    }
                    s
                }
                Metric::Euclidean => {
                    let mut s = 0.0;
                    for k in 0..self.p {
                        let d = q[k] - r[k];
                        s += d * d;
                    }
                    -s
                }
            };
            if best == usize::MAX || score > best_score {
                best = j;
                best_score = score;
            }
        }
        best
    }
}

/// Index of each row's nearest other row.
pub fn top1_neighbors(m: &EmbeddingMatrix) -> Result<Vec<usize>> {
    top1_neighbors_blocked(m, DEFAULT_BLOCK)
}

pub fn top1_neighbors_blocked(m: &EmbeddingMatrix, block: usize) -> Result<Vec<usize>> {
    if m.n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 rows for neighbor search, got {}", m.n)));
    }
    if block == 0 {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    let mut out = vec![0usize; m.n];
    out.par_chunks_mut(block).enumerate().for_each(|(b, slots)| {
        let start = b * block;
        for (k, slot) in slots.iter_mut().enumerate() {
            *slot = m.nearest(start + k);
        }
    });
    Ok(out)
}
