//! Synthetic article corpus with a planted topic/bias signal, plus the text
//! ingestion/export format for externally computed token features.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from, stage_seed, sub_seed};

pub const N_TOPICS: usize = 14;
pub const N_BIAS: usize = 5;
pub const BIAS_SCORES: [i8; N_BIAS] = [-2, -1, 0, 1, 2];

pub const TOPIC_NAMES: [&str; N_TOPICS] = [
    "abortion",
    "environment",
    "guns",
    "health care",
    "immigration",
    "LGBTQ",
    "racism",
    "taxes",
    "technology",
    "trade",
    "Trump impeachment",
    "US military",
    "US 2020 election",
    "welfare",
];

/// Share of articles per topic in the reference news dataset.
pub const TOPIC_SHARES: [f64; N_TOPICS] = [
    0.028, 0.035, 0.037, 0.109, 0.098, 0.025, 0.082, 0.057, 0.027, 0.048, 0.118, 0.153, 0.145,
    0.038,
];

const MAX_SYNTHETIC_TOPICS: usize = 3;
const DIST_TOL: f64 = 1e-9;

/// One news article: topics, a 5-point bias score and its token matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ArticleRecord {
    pub article_id: u64,
    /// Sorted, distinct topic indices.
    pub topics: Vec<usize>,
    pub bias_score: i8,
    /// `T x d_tok` token features.
    pub token_features: Array2<f64>,
}

impl ArticleRecord {
    pub fn new(
        article_id: u64,
        mut topics: Vec<usize>,
        bias_score: i8,
        token_features: Array2<f64>,
    ) -> Result<Self> {
        topics.sort_unstable();
        topics.dedup();
        if topics.is_empty() {
            return Err(Error::validation(format!("article {article_id}: no topics")));
        }
        if let Some(&t) = topics.iter().find(|&&t| t >= N_TOPICS) {
            return Err(Error::validation(format!(
                "article {article_id}: topic {t} out of range"
            )));
        }
        if !(-2..=2).contains(&bias_score) {
            return Err(Error::validation(format!(
                "article {article_id}: bias_score {bias_score} out of range"
            )));
        }
        Ok(Self {
            article_id,
            topics,
            bias_score,
            token_features,
        })
    }

    /// Column of the article matrix holding the ones.
    #[inline]
    pub fn bias_index(&self) -> usize {
        (self.bias_score + 2) as usize
    }

    /// -1 left, 0 center, +1 right.
    #[inline]
    pub fn bias_class(&self) -> i8 {
        self.bias_score.signum()
    }

    /// Class index 0/1/2 for left/center/right.
    #[inline]
    pub fn class_index(&self) -> usize {
        (self.bias_class() + 1) as usize
    }

    #[inline]
    pub fn covers(&self, topic: usize) -> bool {
        self.topics.binary_search(&topic).is_ok()
    }

    /// Binary 14x5 article matrix.
    pub fn article_matrix(&self) -> [[u8; N_BIAS]; N_TOPICS] {
        let mut a = [[0u8; N_BIAS]; N_TOPICS];
        let j = self.bias_index();
        for &t in &self.topics {
            a[t][j] = 1;
        }
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_articles: usize,
    pub topic_distribution: Vec<f64>,
    pub bias_distribution: Vec<f64>,
    pub token_count: usize,
    pub token_dim: usize,
    pub signal_to_noise: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_articles: 4000,
            topic_distribution: TOPIC_SHARES.to_vec(),
            bias_distribution: vec![0.2; N_BIAS],
            token_count: 20,
            token_dim: 64,
            signal_to_noise: 4.0,
            seed: 0,
        }
    }
}

fn check_distribution(name: &str, d: &[f64], len: usize) -> Result<()> {
    if d.len() != len {
        return Err(Error::validation(format!(
            "{name} has {} entries, expected {len}",
            d.len()
        )));
    }
    if d.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::validation(format!("{name} has a negative entry")));
    }
    let s: f64 = d.iter().sum();
    if (s - 1.0).abs() > DIST_TOL {
        return Err(Error::validation(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        check_distribution("topic_distribution", &self.topic_distribution, N_TOPICS)?;
        check_distribution("bias_distribution", &self.bias_distribution, N_BIAS)?;
        if self.token_count == 0 || self.token_dim == 0 {
            return Err(Error::validation("token_count and token_dim must be positive"));
        }
        if !(self.signal_to_noise > 0.0) {
            return Err(Error::validation("signal_to_noise must be positive"));
        }
        Ok(())
    }
}

/// Injective encoding of the five bias scores: an ordinal coordinate
/// followed by a one-hot block.
const BIAS_CODE_DIM: usize = 1 + N_BIAS;

fn bias_code(score: i8) -> [f64; BIAS_CODE_DIM] {
    let mut g = [0.0; BIAS_CODE_DIM];
    g[0] = f64::from(score) / 2.0;
    g[1 + (score + 2) as usize] = 1.0;
    g
}

/// The fixed random linear maps that plant topic and bias structure into
/// token features.
#[derive(Clone, Debug)]
pub struct PlantedSignal {
    topic_maps: Vec<Array2<f64>>,
    bias_maps: Vec<Array2<f64>>,
}

impl PlantedSignal {
    pub fn new(config: &CorpusConfig) -> Self {
        let mut rng = rng_from(stage_seed(config.seed, "corpus/maps"));
        let (t, d) = (config.token_count, config.token_dim);
        let mut draw = |_: usize| {
            Array2::from_shape_simple_fn((t, d), || {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            })
        };
        let topic_maps = (0..N_TOPICS).map(&mut draw).collect();
        let bias_maps = (0..BIAS_CODE_DIM).map(&mut draw).collect();
        Self {
            topic_maps,
            bias_maps,
        }
    }

    fn features(
        &self,
        topics: &[usize],
        bias: i8,
        snr: f64,
        rng: &mut crate::seed::Rng,
    ) -> Array2<f64> {
        let shape = self.topic_maps[0].raw_dim();
        let mut x = Array2::<f64>::zeros(shape);
        let w = 1.0 / topics.len() as f64;
        for &t in topics {
            x.scaled_add(w, &self.topic_maps[t]);
        }
        for (k, g) in bias_code(bias).iter().enumerate() {
            if *g != 0.0 {
                x.scaled_add(*g, &self.bias_maps[k]);
            }
        }
        let scale = 1.0 / snr;
        x.mapv_inplace(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + scale * z
        });
        x
    }
}

fn weighted_pick(weights: &[f64], rng: &mut crate::seed::Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last
}

/// Generates the item pool (`split = "pool"`, ids from 0).
pub fn generate_corpus(config: &CorpusConfig) -> Result<Vec<ArticleRecord>> {
    generate_articles(config, "pool", config.n_articles, 0)
}

/// Generates `n` articles from the same planted maps as the pool but an
/// independent draw stream labelled by `split`.
pub fn generate_articles(
    config: &CorpusConfig,
    split: &str,
    n: usize,
    first_id: u64,
) -> Result<Vec<ArticleRecord>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    let signal = PlantedSignal::new(config);
    let stream = stage_seed(config.seed, &format!("corpus/articles/{split}"));
    let positive_topics = config.topic_distribution.iter().filter(|&&p| p > 0.0).count();
    let max_topics = MAX_SYNTHETIC_TOPICS.min(positive_topics);

    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(sub_seed(stream, i as u64));
            let k = rng.random_range(1..=max_topics);
            let mut weights = config.topic_distribution.clone();
            let mut topics = Vec::with_capacity(k);
            for _ in 0..k {
                let t = weighted_pick(&weights, &mut rng);
                weights[t] = 0.0;
                topics.push(t);
            }
            let bias = BIAS_SCORES[weighted_pick(&config.bias_distribution, &mut rng)];
            let features = signal.features(&topics, bias, config.signal_to_noise, &mut rng);
            ArticleRecord::new(first_id + i as u64, topics, bias, features)
        })
        .collect()
}

/// Serializes articles in the ingestion format.
pub fn export_articles_string(articles: &[ArticleRecord]) -> Result<String> {
    let (t, d) = match articles.first() {
        Some(a) => a.token_features.dim(),
        None => (0, 0),
    };
    let mut out = String::new();
    writeln!(out, "d_tok={d} T={t}").unwrap();
    for a in articles {
        if a.token_features.dim() != (t, d) {
            return Err(Error::DimensionMismatch {
                context: "export token matrix",
                expected: t * d,
                got: a.token_features.len(),
            });
        }
        let topics: Vec<String> = a.topics.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{},{},{}", a.article_id, topics.join(";"), a.bias_score).unwrap();
        for row in a.token_features.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn export_articles(path: &Path, articles: &[ArticleRecord]) -> Result<()> {
    let s = export_articles_string(articles)?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn ingest_articles(path: &Path) -> Result<Vec<ArticleRecord>> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_articles(&s)
}

fn ingest_err(record: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        record: record.into(),
        reason: reason.into(),
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let mut d_tok = None;
    let mut t = None;
    for field in line.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| ingest_err("header", format!("malformed field `{field}`")))?;
        let v: usize = value
            .parse()
            .map_err(|_| ingest_err("header", format!("bad integer `{value}`")))?;
        match key {
            "d_tok" => d_tok = Some(v),
            "T" => t = Some(v),
            _ => return Err(ingest_err("header", format!("unknown key `{key}`"))),
        }
    }
    match (d_tok, t) {
        (Some(d), Some(t)) if d > 0 && t > 0 => Ok((d, t)),
        _ => Err(ingest_err("header", "expected `d_tok=<int> T=<int>`")),
    }
}

pub fn parse_articles(s: &str) -> Result<Vec<ArticleRecord>> {
    let mut lines = s.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| ingest_err("header", "empty file"))?;
    let (d_tok, t) = parse_header(header)?;

    let mut out = Vec::new();
    while let Some(line) = lines.next() {
        let rec_name = format!("record {}", out.len());
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(ingest_err(
                rec_name,
                format!("expected `id, topics, bias_score`, got `{line}`"),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| ingest_err(&rec_name, format!("bad id `{}`", fields[0])))?;
        let rec_name = format!("record {} (id {id})", out.len());
        let topics = fields[1]
            .split(';')
            .map(|x| x.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| ingest_err(&rec_name, format!("bad topics `{}`", fields[1])))?;
        let bias: i64 = fields[2]
            .parse()
            .map_err(|_| ingest_err(&rec_name, format!("bad bias_score `{}`", fields[2])))?;
        if !(-2..=2).contains(&bias) {
            return Err(ingest_err(
                &rec_name,
                format!("bias_score {bias} out of range [-2, 2]"),
            ));
        }
        let mut feats = Array2::<f64>::zeros((t, d_tok));
        for r in 0..t {
            let row = lines
                .next()
                .ok_or_else(|| ingest_err(&rec_name, format!("missing token row {r}")))?;
            let vals = row
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| ingest_err(&rec_name, format!("malformed token row {r}")))?;
            if vals.len() != d_tok {
                return Err(ingest_err(
                    &rec_name,
                    format!(
                        "dimension mismatch in token row {r}: header d_tok={d_tok}, got {}",
                        vals.len()
                    ),
                ));
            }
            for (c, v) in vals.into_iter().enumerate() {
                feats[(r, c)] = v;
            }
        }
        let rec = ArticleRecord::new(id, topics, bias as i8, feats)
            .map_err(|e| ingest_err(&rec_name, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}
