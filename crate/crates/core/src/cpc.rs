//! Constructed political coordinates.
//!
//! A user's polarized embedding is the rating-weighted mean of `D_p` over
//! the observed part of their history. Landmark users anchor a bounding box;
//! each user's coordinates are the range-normalized L2 distances to the
//! landmarks, and users are compared by Pearson correlation of those
//! coordinates.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::corpus::ArticleRecord;
use crate::disentangler::DisentanglerModel;
use crate::error::{Error, Result};
use crate::population::{InteractionLog, Landmark, Population};
use crate::scalar::Scalar;
use crate::stats::pearson;

/// Floor for degenerate landmark ranges.
pub const RANGE_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct PolarizedEmbedding<T> {
    pub user_id: usize,
    pub w: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet<T> {
    /// (typology, embedding), in typology order.
    pub landmarks: Vec<(usize, PolarizedEmbedding<T>)>,
    pub names: Vec<String>,
    pub range: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpcVector<T> {
    pub user_id: usize,
    pub coords: Vec<T>,
}

/// `D_p` of every pool article, indexed like the pool.
pub fn polarized_table<T: Scalar>(model: &DisentanglerModel<T>, corpus: &[ArticleRecord]) -> Result<Vec<Array1<T>>> {
    corpus
        .par_iter()
        .map(|a| model.embed(a).map(|e| e.d_p))
        .collect()
}

/// Rating-weighted mean of `D_p` over observed entries.
pub fn polarized_embedding_from<T: Scalar>(d_p: &[Array1<T>], log: &InteractionLog) -> Result<PolarizedEmbedding<T>> {
    let dim = d_p.first().map_or(0, |v| v.len());
    let mut w = Array1::<T>::zeros(dim);
    let mut total = T::zero();
    for e in log.observed() {
        let row = d_p.get(e.article).ok_or_else(|| {
            Error::validation(format!("log of user {} references article index {} outside the corpus", log.user_id, e.article))
        })?;
        let p = T::lit(e.rating);
        w.scaled_add(p, row);
        total += p;
    }
    if total <= T::zero() {
        return Err(Error::UndefinedEmbedding(log.user_id));
    }
    w /= total;
    Ok(PolarizedEmbedding { user_id: log.user_id, w })
}

pub fn polarized_embedding<T: Scalar>(
    model: &DisentanglerModel<T>,
    log: &InteractionLog,
    corpus: &[ArticleRecord],
) -> Result<PolarizedEmbedding<T>> {
    let dim = model.half_dim();
    let mut w = Array1::<T>::zeros(dim);
    let mut total = T::zero();
    for e in log.observed() {
        let a = corpus.get(e.article).ok_or_else(|| {
            Error::validation(format!("log of user {} references article index {} outside the corpus", log.user_id, e.article))
        })?;
        let p = T::lit(e.rating);
        w.scaled_add(p, &model.embed(a)?.d_p);
        total += p;
    }
    if total <= T::zero() {
        return Err(Error::UndefinedEmbedding(log.user_id));
    }
    w /= total;
    Ok(PolarizedEmbedding { user_id: log.user_id, w })
}

impl<T: Scalar> LandmarkSet<T> {
    /// Builds the set from already embedded landmarks.
    pub fn from_embeddings(landmarks: Vec<(usize, PolarizedEmbedding<T>)>, names: Vec<String>) -> Result<Self> {
        let first = landmarks
            .first()
            .ok_or_else(|| Error::DegenerateLandmarks("no landmarks".into()))?;
        let dim = first.1.w.len();
        let mut lo = first.1.w.clone();
        let mut hi = first.1.w.clone();
        for (_, e) in &landmarks[1..] {
            if e.w.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "landmark embedding",
                    expected: dim,
                    got: e.w.len(),
                });
            }
            lo.zip_mut_with(&e.w, |a, &b| *a = a.min(b));
            hi.zip_mut_with(&e.w, |a, &b| *a = a.max(b));
        }
        let distinct = landmarks.iter().any(|(_, e)| e.w != first.1.w);
        if !distinct {
            return Err(Error::DegenerateLandmarks(format!(
                "{} landmarks share one embedding",
                landmarks.len()
            )));
        }
        let floor = T::lit(RANGE_FLOOR);
        let range = (&hi - &lo).mapv(|r| if r < floor { floor } else { r });
        Ok(Self { landmarks, names, range })
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.range.len()
    }
}

pub fn build_landmark_set<T: Scalar>(
    model: &DisentanglerModel<T>,
    landmarks: &[Landmark],
    corpus: &[ArticleRecord],
) -> Result<LandmarkSet<T>> {
    let embedded = landmarks
        .iter()
        .map(|l| Ok((l.typology, polarized_embedding(model, &l.log, corpus)?)))
        .collect::<Result<Vec<_>>>()?;
    LandmarkSet::from_embeddings(embedded, landmarks.iter().map(|l| l.name.clone()).collect())
}

/// Range-normalized difference vector `(w_u - w_l) / range`.
pub fn normalized_difference<T: Scalar>(user: &PolarizedEmbedding<T>, landmark: &PolarizedEmbedding<T>, range: &Array1<T>) -> Array1<T> {
    (&user.w - &landmark.w) / range
}

pub fn cpc_vector<T: Scalar>(user: &PolarizedEmbedding<T>, ls: &LandmarkSet<T>) -> Result<CpcVector<T>> {
    if user.w.len() != ls.dim() {
        return Err(Error::DimensionMismatch {
            context: "cpc user embedding",
            expected: ls.dim(),
            got: user.w.len(),
        });
    }
    let coords = ls
        .landmarks
        .iter()
        .map(|(_, l)| {
            let d = normalized_difference(user, l, &ls.range);
            d.dot(&d).sqrt()
        })
        .collect();
    Ok(CpcVector {
        user_id: user.user_id,
        coords,
    })
}

/// Embeds every user of the population and places them in CPC space.
pub fn population_cpcs<T: Scalar>(
    d_p: &[Array1<T>],
    population: &Population,
    ls: &LandmarkSet<T>,
) -> Result<Vec<CpcVector<T>>> {
    population
        .logs
        .par_iter()
        .map(|log| cpc_vector(&polarized_embedding_from(d_p, log)?, ls))
        .collect()
}

/// Pearson correlation between users' CPC vectors. Zero-variance vectors
/// correlate 0 with everyone but themselves.
pub fn cpc_correlation<T: Scalar>(cpcs: &[CpcVector<T>]) -> Result<Array2<T>> {
    let n = cpcs.len();
    if n < 2 {
        return Err(Error::validation("CPC correlation needs at least 2 users"));
    }
    for c in cpcs {
        if pearson(&c.coords, &c.coords).is_none() {
            log::warn!("user {} has a zero-variance CPC vector; its correlations are 0", c.user_id);
        }
    }
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        T::one()
                    } else if j < i {
                        T::zero()
                    } else {
                        pearson(&cpcs[i].coords, &cpcs[j].coords).unwrap_or(T::zero())
                    }
                })
                .collect()
        })
        .collect();
    let mut m = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate().skip(i) {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// `user_id,typology,<names...>`
pub fn cpc_csv<T: Scalar>(cpcs: &[CpcVector<T>], population: &Population, names: &[String]) -> String {
    let mut out = String::from("user_id,typology");
    for n in names {
        write!(out, ",{}", n.replace(' ', "_")).unwrap();
    }
    out.push('\n');
    for c in cpcs {
        write!(out, "{},{}", c.user_id, population.typology_names[population.typology_of(c.user_id)].replace(' ', "_")).unwrap();
        for v in &c.coords {
            write!(out, ",{}", v.to_f64_lossy()).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Reads `cpc_csv` output back; typology names are ignored.
pub fn parse_cpc_csv(text: &str) -> Result<Vec<CpcVector<f64>>> {
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, line)| {
            let bad = || Error::validation(format!("cpc line {}: malformed", ln + 1));
            let mut f = line.split(',');
            let user_id = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            f.next().ok_or_else(bad)?;
            let coords = f.map(|v| v.parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
            Ok(CpcVector { user_id, coords })
        })
        .collect()
}

/// One row per landmark (`typology,w...`) followed by a `range` row.
pub fn landmark_csv<T: Scalar>(ls: &LandmarkSet<T>) -> String {
    let mut out = String::from("typology");
    for i in 0..ls.dim() {
        write!(out, ",w{i}").unwrap();
    }
    out.push('\n');
    let rows = ls
        .landmarks
        .iter()
        .map(|(t, e)| (ls.names[*t].replace(' ', "_"), &e.w))
        .chain(std::iter::once(("range".to_string(), &ls.range)));
    for (name, w) in rows {
        out.push_str(&name);
        for v in w {
            write!(out, ",{}", v.to_f64_lossy()).unwrap();
        }
        out.push('\n');
    }
    out
}
