//! Graph convolutional filters.
//!
//! Nearest-neighbor form: `x̂ = Σ_{j=0..k} h_j B^j x`.
//! Furthest-neighborhood form: `x̂ = h_1 F (Σ_{j=2..k} h_j N^{j-1}) x`.
//!
//! Training and ranking only need user `u`'s predictions, so both forms are
//! also evaluated from the left as row filters `e_u^T (...)`, one basis row
//! per hop.

use serde::{Deserialize, Serialize};

use super::graph::NeighborGraph;
use super::ratings::RatingMatrix;
use super::Method;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcfWeights {
    pub user_id: usize,
    pub method: Method,
    /// `h_0..h_k`
    pub h: Vec<f64>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

impl GcfWeights {
    /// `h_1 = 1`, everything else 0.
    pub fn init(user_id: usize, method: Method, hops: usize) -> Self {
        let mut h = vec![0.0; hops + 1];
        if hops >= 1 {
            h[1] = 1.0;
        }
        Self {
            user_id,
            method,
            h,
            initial_loss: None,
            final_loss: None,
        }
    }

    pub fn hops(&self) -> usize {
        self.h.len() - 1
    }
}

fn check_len(g: &NeighborGraph, x: &[f64]) -> Result<()> {
    if g.n_users() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "graph filter input",
            expected: g.n_users(),
            got: x.len(),
        });
    }
    Ok(())
}

/// `Σ_{j=0..k} h_j B^j x` by repeated sparse products.
pub fn predict_nn(h: &[f64], b: &NeighborGraph, x: &[f64]) -> Result<Vec<f64>> {
    check_len(b, x)?;
    let mut acc: Vec<f64> = x.iter().map(|v| h.first().copied().unwrap_or(0.0) * v).collect();
    let mut v = x.to_vec();
    for &hj in h.iter().skip(1) {
        v = b.mat_vec(&v);
        acc.iter_mut().zip(&v).for_each(|(a, b)| *a += hj * b);
    }
    Ok(acc)
}

/// `h_1 F (Σ_{j=2..k} h_j N^{j-1}) x`. `h_0` is ignored.
pub fn predict_fnpc(h: &[f64], f: &NeighborGraph, n: &NeighborGraph, x: &[f64]) -> Result<Vec<f64>> {
    if h.len() < 3 {
        return Err(Error::validation("furthest-neighborhood filter needs k >= 2"));
    }
    check_len(f, x)?;
    check_len(n, x)?;
    let mut inner = vec![0.0; x.len()];
    let mut v = x.to_vec();
    for &hj in &h[2..] {
        v = n.mat_vec(&v);
        inner.iter_mut().zip(&v).for_each(|(a, b)| *a += hj * b);
    }
    Ok(f.mat_vec(&inner).into_iter().map(|y| h[1] * y).collect())
}

/// Graphs a method filters over.
#[derive(Clone, Copy, Debug)]
pub enum Filter<'a> {
    Nearest(&'a NeighborGraph),
    Furthest { f: &'a NeighborGraph, n: &'a NeighborGraph },
}

/// Per-hop row vectors for user `u`.
///
/// Nearest: `basis[j] = e_u^T B^j`, `j = 0..k`.
/// Furthest: `basis[j] = e_u^T F N^{j-1}` for `j = 2..k`; entries 0 and 1
/// are zero.
pub fn hop_basis(filter: Filter, user: usize, hops: usize) -> Vec<Vec<f64>> {
    let n_users = match filter {
        Filter::Nearest(b) => b.n_users(),
        Filter::Furthest { f, .. } => f.n_users(),
    };
    let mut basis = vec![vec![0.0; n_users]; hops + 1];
    match filter {
        Filter::Nearest(b) => {
            basis[0][user] = 1.0;
            for j in 1..=hops {
                basis[j] = b.vec_mat(&basis[j - 1]);
            }
        }
        Filter::Furthest { f, n } => {
            if hops >= 2 {
                let mut e = vec![0.0; n_users];
                e[user] = 1.0;
                let mut v = f.vec_mat(&e);
                for row in basis.iter_mut().skip(2) {
                    v = n.vec_mat(&v);
                    row.clone_from(&v);
                }
            }
        }
    }
    basis
}

/// Hop features of one item: `basis[j] · X[:, item]`.
fn item_features(basis: &[Vec<f64>], x: &RatingMatrix, item: usize) -> Vec<f64> {
    basis
        .iter()
        .map(|b| x.cols[item].iter().map(|&(w, r)| b[w] * r).sum())
        .collect()
}

/// Prediction from hop features.
fn predict_from(method: Method, h: &[f64], phi: &[f64]) -> f64 {
    match method {
        Method::Nn => h.iter().zip(phi).map(|(a, b)| a * b).sum(),
        _ => h[1] * h.iter().zip(phi).skip(2).map(|(a, b)| a * b).sum::<f64>(),
    }
}

fn mse(method: Method, h: &[f64], feats: &[Vec<f64>], targets: &[f64]) -> f64 {
    feats
        .iter()
        .zip(targets)
        .map(|(phi, t)| (predict_from(method, h, phi) - t).powi(2))
        .sum::<f64>()
        / targets.len() as f64
}

/// Exact gradient of the holdout MSE with respect to `h`.
pub fn mse_gradient(method: Method, h: &[f64], feats: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; h.len()];
    let scale = 2.0 / targets.len() as f64;
    for (phi, t) in feats.iter().zip(targets) {
        let r = scale * (predict_from(method, h, phi) - t);
        match method {
            Method::Nn => g.iter_mut().zip(phi).for_each(|(gj, p)| *gj += r * p),
            _ => {
                let inner: f64 = h.iter().zip(phi).skip(2).map(|(a, b)| a * b).sum();
                g[1] += r * inner;
                for j in 2..h.len() {
                    g[j] += r * h[1] * phi[j];
                }
            }
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub steps: usize,
    pub lr: f64,
}

/// Full-batch gradient descent on the user's holdout MSE. A step that raises
/// the loss is undone and the learning rate halved.
pub fn train_weights(
    mut w: GcfWeights,
    filter: Filter,
    x: &RatingMatrix,
    holdout: &[(usize, f64)],
    settings: TrainSettings,
) -> GcfWeights {
    if holdout.is_empty() {
        log::warn!("user {} has no holdout ratings; weights stay at init", w.user_id);
        return w;
    }
    let basis = hop_basis(filter, w.user_id, w.hops());
    let feats: Vec<Vec<f64>> = holdout.iter().map(|&(i, _)| item_features(&basis, x, i)).collect();
    let targets: Vec<f64> = holdout.iter().map(|&(_, t)| t).collect();
    let mut loss = mse(w.method, &w.h, &feats, &targets);
    w.initial_loss = Some(loss);
    let mut lr = settings.lr;
    for _ in 0..settings.steps {
        let g = mse_gradient(w.method, &w.h, &feats, &targets);
        let mut cand = w.h.clone();
        for (c, gj) in cand.iter_mut().zip(&g) {
            *c -= lr * gj;
        }
        if w.method != Method::Nn {
            cand[0] = 0.0;
        }
        let next = mse(w.method, &cand, &feats, &targets);
        if next > loss || !next.is_finite() {
            lr *= 0.5;
        } else {
            w.h = cand;
            loss = next;
        }
    }
    w.final_loss = Some(loss);
    w
}

/// `r_u` such that `x̂_u(i) = r_u · X[:, i]` for every item.
pub fn row_filter(w: &GcfWeights, filter: Filter) -> Vec<f64> {
    let basis = hop_basis(filter, w.user_id, w.hops());
    let n = basis[0].len();
    let mut r = vec![0.0; n];
    let coef = |j: usize| match w.method {
        Method::Nn => w.h[j],
        _ if j >= 2 => w.h[1] * w.h[j],
        _ => 0.0,
    };
    for (j, b) in basis.iter().enumerate() {
        let c = coef(j);
        if c != 0.0 {
            r.iter_mut().zip(b).for_each(|(ri, bi)| *ri += c * bi);
        }
    }
    r
}

/// Predicted rating of every item for one user.
pub fn predict_user(w: &GcfWeights, filter: Filter, x: &RatingMatrix) -> Vec<f64> {
    let r = row_filter(w, filter);
    let mut scores = vec![0.0; x.n_items];
    for (u, row) in x.rows.iter().enumerate() {
        if r[u] != 0.0 {
            for &(i, rating) in row {
                scores[i] += r[u] * rating;
            }
        }
    }
    scores
}
