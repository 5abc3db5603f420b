//! Neighbor-graph recommenders: NN (nearest neighbors over rating
//! correlation), FN-NN (furthest-neighborhood filter over rating
//! correlation) and FNPC (furthest-neighborhood filter over CPC
//! correlation).

mod gcf;
mod graph;
mod ratings;

use std::fmt::{self, Write as _};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gcf::{
    hop_basis, mse_gradient, predict_fnpc, predict_nn, predict_user, row_filter, train_weights, Filter, GcfWeights,
    TrainSettings,
};
pub use graph::{build_graphs, CorrelationSource, GraphKind, NeighborGraph};
pub use ratings::{rating_pearson, RatingMatrix};

use crate::corpus::ArticleRecord;
use crate::error::{Error, Result};
use crate::population::Population;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "nn")]
    Nn,
    #[serde(rename = "fn-nn")]
    FnNn,
    #[serde(rename = "fnpc")]
    Fnpc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Nn, Method::FnNn, Method::Fnpc];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nn => "nn",
            Self::FnNn => "fn-nn",
            Self::Fnpc => "fnpc",
        }
    }

    pub fn source(self) -> CorrelationSource {
        match self {
            Self::Fnpc => CorrelationSource::Cpc,
            _ => CorrelationSource::Ratings,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nn" => Ok(Self::Nn),
            "fn-nn" | "fnnn" | "fn_nn" => Ok(Self::FnNn),
            "fnpc" => Ok(Self::Fnpc),
            other => Err(Error::validation(format!("unknown method {other:?} (nn, fn-nn, fnpc)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommenderConfig {
    pub n_neighbors: usize,
    pub hops: usize,
    pub sgd_steps: usize,
    pub lr: f64,
    pub top_r: usize,
}

impl Default for RecommenderConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 8,
            hops: 5,
            sgd_steps: 40,
            lr: 0.05,
            top_r: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    /// Pool index.
    pub article: usize,
    pub article_id: u64,
    pub predicted: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationSet {
    pub user_id: usize,
    pub items: Vec<Recommendation>,
    /// Fewer than the requested number of unread articles existed.
    pub short: bool,
}

/// Top `r` unread articles by predicted rating, ties by lower article id.
pub fn recommend(
    w: &GcfWeights,
    filter: Filter,
    x: &RatingMatrix,
    population: &Population,
    corpus: &[ArticleRecord],
    r: usize,
) -> Result<RecommendationSet> {
    if x.n_items != corpus.len() {
        return Err(Error::DimensionMismatch {
            context: "rating matrix items",
            expected: corpus.len(),
            got: x.n_items,
        });
    }
    let log = &population.logs[w.user_id];
    let scores = predict_user(w, filter, x);
    let mut unread: Vec<usize> = (0..corpus.len()).filter(|&i| !log.contains(i)).collect();
    unread.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(corpus[a].article_id.cmp(&corpus[b].article_id))
    });
    let short = unread.len() < r;
    if short && r > 0 {
        log::warn!("user {} has only {} unread articles", w.user_id, unread.len());
    }
    unread.truncate(r);
    Ok(RecommendationSet {
        user_id: w.user_id,
        items: unread
            .into_iter()
            .map(|i| Recommendation {
                article: i,
                article_id: corpus[i].article_id,
                predicted: scores[i],
            })
            .collect(),
        short,
    })
}

/// Everything one method produced.
#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub furthest: NeighborGraph,
    pub nearest: NeighborGraph,
    pub weights: Vec<GcfWeights>,
    pub recommendations: Vec<RecommendationSet>,
}

impl MethodRun {
    pub fn filter(&self) -> Filter<'_> {
        match self.method {
            Method::Nn => Filter::Nearest(&self.nearest),
            _ => Filter::Furthest {
                f: &self.furthest,
                n: &self.nearest,
            },
        }
    }
}

/// Trains per-user weights and recommends for every user. `correlation` is
/// CPC-Corr for FNPC and rating Pearson for the other methods.
pub fn run_method(
    method: Method,
    population: &Population,
    correlation: &Array2<f64>,
    x: &RatingMatrix,
    corpus: &[ArticleRecord],
    config: &RecommenderConfig,
) -> Result<MethodRun> {
    if method != Method::Nn && config.hops < 2 {
        return Err(Error::validation("furthest-neighborhood filter needs k >= 2"));
    }
    let (furthest, nearest) = build_graphs(correlation, config.n_neighbors, method.source())?;
    let mut run = MethodRun {
        method,
        furthest,
        nearest,
        weights: Vec::new(),
        recommendations: Vec::new(),
    };
    let settings = TrainSettings {
        steps: config.sgd_steps,
        lr: config.lr,
    };
    let filter = run.filter();
    let results: Vec<(GcfWeights, RecommendationSet)> = (0..population.len())
        .into_par_iter()
        .map(|u| {
            let holdout: Vec<(usize, f64)> = population.logs[u].holdout().map(|e| (e.article, e.rating)).collect();
            let w = train_weights(GcfWeights::init(u, method, config.hops), filter, x, &holdout, settings);
            let recs = recommend(&w, filter, x, population, corpus, config.top_r)?;
            Ok((w, recs))
        })
        .collect::<Result<_>>()?;
    let (weights, recommendations) = results.into_iter().unzip();
    run.weights = weights;
    run.recommendations = recommendations;
    Ok(run)
}

/// `user_id,rank,article_id,predicted_rating,method`
pub fn recommendations_csv(method: Method, sets: &[RecommendationSet]) -> String {
    let mut out = String::from("user_id,rank,article_id,predicted_rating,method\n");
    for s in sets {
        for (rank, r) in s.items.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", s.user_id, rank + 1, r.article_id, r.predicted, method).unwrap();
        }
    }
    out
}

/// `row,col,weight,kind,source`
pub fn graphs_csv(graphs: &[&NeighborGraph]) -> String {
    let mut out = String::from("row,col,weight,kind,source\n");
    for g in graphs {
        g.csv_rows(&mut out);
    }
    out
}

/// Parses a graphs CSV back into its furthest and nearest graphs.
pub fn parse_graphs_csv(text: &str, n_users: usize) -> Result<(NeighborGraph, NeighborGraph)> {
    let mut graphs: Vec<NeighborGraph> = [GraphKind::Furthest, GraphKind::Nearest]
        .into_iter()
        .map(|kind| NeighborGraph {
            kind,
            source: CorrelationSource::Ratings,
            rows: vec![Vec::new(); n_users],
        })
        .collect();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::validation(format!("graphs line {}: {what}", ln + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let row: usize = f[0].parse().map_err(|_| bad("bad row"))?;
        let col: usize = f[1].parse().map_err(|_| bad("bad col"))?;
        let weight: f64 = f[2].parse().map_err(|_| bad("bad weight"))?;
        if row >= n_users || col >= n_users {
            return Err(bad("user index outside population"));
        }
        let g = match f[3] {
            "furthest" => &mut graphs[0],
            "nearest" => &mut graphs[1],
            _ => return Err(bad("kind must be furthest or nearest")),
        };
        g.source = match f[4] {
            "cpc" => CorrelationSource::Cpc,
            "ratings" => CorrelationSource::Ratings,
            _ => return Err(bad("source must be cpc or ratings")),
        };
        g.rows[row].push((col, weight));
    }
    let nearest = graphs.pop().expect("two graphs");
    let furthest = graphs.pop().expect("two graphs");
    Ok((furthest, nearest))
}

/// Parses a recommendations CSV back into per-user sets, resolving article
/// ids against the pool.
pub fn parse_recommendations_csv(text: &str, corpus: &[ArticleRecord], n_users: usize) -> Result<Vec<RecommendationSet>> {
    let index: std::collections::HashMap<u64, usize> =
        corpus.iter().enumerate().map(|(i, a)| (a.article_id, i)).collect();
    let mut sets: Vec<RecommendationSet> = (0..n_users)
        .map(|u| RecommendationSet {
            user_id: u,
            items: Vec::new(),
            short: false,
        })
        .collect();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::validation(format!("recommendations line {}: {what}", ln + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let user: usize = f[0].parse().map_err(|_| bad("bad user_id"))?;
        let article_id: u64 = f[2].parse().map_err(|_| bad("bad article_id"))?;
        let predicted: f64 = f[3].parse().map_err(|_| bad("bad predicted_rating"))?;
        let article = *index.get(&article_id).ok_or_else(|| bad("unknown article_id"))?;
        sets.get_mut(user)
            .ok_or_else(|| bad("user_id outside population"))?
            .items
            .push(Recommendation {
                article,
                article_id,
                predicted,
            });
    }
    Ok(sets)
}
