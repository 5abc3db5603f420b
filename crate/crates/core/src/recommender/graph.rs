use std::cmp::Ordering;
use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Nearest,
    Furthest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationSource {
    Cpc,
    Ratings,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Nearest => "nearest",
            Self::Furthest => "furthest",
        })
    }
}

impl fmt::Display for CorrelationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cpc => "cpc",
            Self::Ratings => "ratings",
        })
    }
}

/// Sparse user-user graph with at most `n` retained correlations per row.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    pub kind: GraphKind,
    pub source: CorrelationSource,
    /// Per row, `(col, weight)` in selection order.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    /// `G x`
    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(c, w)| w * x[c]).sum())
            .collect()
    }

    /// `r^T G`
    pub fn vec_mat(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_users()];
        for (row, &ri) in self.rows.iter().zip(r) {
            if ri != 0.0 {
                for &(c, w) in row {
                    out[c] += ri * w;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n_users();
        let mut m = Array2::zeros((n, n));
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, w) in row {
                m[(r, c)] = w;
            }
        }
        m
    }

    /// `row,col,weight,kind,source` triplets, no header.
    pub fn csv_rows(&self, out: &mut String) {
        use std::fmt::Write as _;
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, w) in row {
                writeln!(out, "{r},{c},{w},{},{}", self.kind, self.source).unwrap();
            }
        }
    }
}

fn rank(a: f64, b: f64, kind: GraphKind) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => match kind {
            GraphKind::Nearest => b.total_cmp(&a),
            GraphKind::Furthest => a.total_cmp(&b),
        },
    }
}

fn select_row(corr: &Array2<f64>, i: usize, n: usize, kind: GraphKind) -> Vec<(usize, f64)> {
    let mut cand: Vec<usize> = (0..corr.ncols()).filter(|&j| j != i).collect();
    cand.sort_by(|&a, &b| rank(corr[(i, a)], corr[(i, b)], kind).then(a.cmp(&b)));
    cand.truncate(n);
    cand.into_iter()
        .map(|j| {
            let v = corr[(i, j)];
            (j, if v.is_nan() { 0.0 } else { v })
        })
        .collect()
}

/// Furthest (`n` most negative) and nearest (`n` most positive) neighbor
/// graphs. Ties go to the lower user index; NaN correlations rank last.
pub fn build_graphs(corr: &Array2<f64>, n: usize, source: CorrelationSource) -> Result<(NeighborGraph, NeighborGraph)> {
    let users = corr.nrows();
    if corr.ncols() != users {
        return Err(Error::DimensionMismatch {
            context: "correlation matrix",
            expected: users,
            got: corr.ncols(),
        });
    }
    if n >= users {
        return Err(Error::validation(format!(
            "{n} neighbors requested among {users} users"
        )));
    }
    let build = |kind| NeighborGraph {
        kind,
        source,
        rows: (0..users)
            .into_par_iter()
            .map(|i| select_row(corr, i, n, kind))
            .collect(),
    };
    Ok((build(GraphKind::Furthest), build(GraphKind::Nearest)))
}
