//! Recommendation metrics and the per-typology report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleRecord, N_BIAS, N_TOPICS};
use crate::error::{Error, Result};
use crate::population::{interaction_probability, Population, UserBiasMatrix};
use crate::recommender::{Method, NeighborGraph, RecommendationSet};
use crate::stats::{mean, std_dev};

pub use crate::stats::normalized_entropy;

/// Mass on bias scores -2..=2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasDistribution {
    pub masses: [f64; N_BIAS],
}

impl BiasDistribution {
    pub fn new(masses: [f64; N_BIAS]) -> Result<Self> {
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::validation(format!("bias masses {masses:?} must be nonnegative")));
        }
        let s: f64 = masses.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("bias masses sum to {s}, not 1")));
        }
        Ok(Self { masses })
    }

    pub fn delta(index: usize) -> Self {
        let mut masses = [0.0; N_BIAS];
        masses[index] = 1.0;
        Self { masses }
    }

    pub fn uniform() -> Self {
        Self {
            masses: [1.0 / N_BIAS as f64; N_BIAS],
        }
    }

    /// Normalizes nonnegative counts.
    pub fn from_counts(counts: [f64; N_BIAS]) -> Option<Self> {
        let s: f64 = counts.iter().sum();
        (s > 0.0).then(|| Self {
            masses: counts.map(|c| c / s),
        })
    }

    pub fn cdf(&self) -> [f64; N_BIAS] {
        let mut acc = 0.0;
        self.masses.map(|m| {
            acc += m;
            acc
        })
    }
}

/// Bias histogram of the articles covering `topic`.
pub fn topic_bias_distribution(articles: &[&ArticleRecord], topic: usize) -> Result<BiasDistribution> {
    let mut counts = [0.0; N_BIAS];
    for a in articles.iter().filter(|a| a.covers(topic)) {
        counts[a.bias_index()] += 1.0;
    }
    BiasDistribution::from_counts(counts).ok_or(Error::EmptyTopic(topic))
}

/// Sum of absolute CDF differences over the 5-point support.
pub fn wasserstein(u: &BiasDistribution, r: &BiasDistribution) -> f64 {
    u.cdf().iter().zip(r.cdf()).map(|(a, b)| (a - b).abs()).sum()
}

/// Mean per-topic distance over topics present in both lists, with the
/// per-topic values. `None` when no topic is shared.
pub fn user_wd(history: &[&ArticleRecord], recs: &[&ArticleRecord]) -> Option<(f64, Vec<(usize, f64)>)> {
    let per_topic: Vec<(usize, f64)> = (0..N_TOPICS)
        .filter_map(|t| {
            let u = topic_bias_distribution(history, t).ok()?;
            let r = topic_bias_distribution(recs, t).ok()?;
            Some((t, wasserstein(&u, &r)))
        })
        .collect();
    let vals: Vec<f64> = per_topic.iter().map(|&(_, w)| w).collect();
    Some((mean(&vals)?, per_topic))
}

/// Expected click-through: mean interaction probability of the recommended
/// articles.
pub fn ctr(ub: &UserBiasMatrix, recs: &[&ArticleRecord]) -> Option<f64> {
    let ps: Vec<f64> = recs.iter().map(|a| interaction_probability(ub, a)).collect();
    mean(&ps)
}

/// Shares of each bias score among the recommendations.
pub fn bias_shares(recs: &[&ArticleRecord]) -> Option<[f64; N_BIAS]> {
    let mut counts = [0.0; N_BIAS];
    for a in recs {
        counts[a.bias_index()] += 1.0;
    }
    BiasDistribution::from_counts(counts).map(|d| d.masses)
}

pub fn political_tolerance(ub: &UserBiasMatrix) -> Result<f64> {
    let dist = BiasDistribution::from_counts(ub.column_sums()).ok_or(Error::ZeroBiasMatrix)?;
    Ok(normalized_entropy(&dist.masses))
}

/// Mean over recommended topics of the mean bias of recommendations
/// covering that topic.
pub fn average_bias(recs: &[&ArticleRecord]) -> Option<f64> {
    let topic_means: Vec<f64> = (0..N_TOPICS)
        .filter_map(|t| {
            let b: Vec<f64> = recs
                .iter()
                .filter(|a| a.covers(t))
                .map(|a| f64::from(a.bias_score))
                .collect();
            mean(&b)
        })
        .collect();
    mean(&topic_means)
}

/// For each source typology, the mean over its users of the typology
/// shares among their furthest neighbors.
pub fn fn_distribution(furthest: &NeighborGraph, population: &Population) -> Vec<Vec<f64>> {
    let k = population.typology_names.len();
    let mut sums = vec![vec![0.0; k]; k];
    let mut counts = vec![0usize; k];
    for (u, row) in furthest.rows.iter().enumerate() {
        if row.is_empty() {
            continue;
        }
        let src = population.typology_of(u);
        counts[src] += 1;
        let w = 1.0 / row.len() as f64;
        for &(v, _) in row {
            sums[src][population.typology_of(v)] += w;
        }
    }
    for (row, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            row.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

/// Number of typologies with nonzero mass in a distribution row.
pub fn span(row: &[f64]) -> usize {
    row.iter().filter(|&&v| v > 0.0).count()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UserMethodMetrics {
    pub ctr: Option<f64>,
    pub wd: Option<f64>,
    pub wd_topics: Vec<(usize, f64)>,
    pub ne: Option<f64>,
    pub ab: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user_id: usize,
    pub typology: usize,
    pub pt: f64,
    pub methods: BTreeMap<Method, UserMethodMetrics>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub ctr: Option<f64>,
    pub wd_mean: Option<f64>,
    pub wd_sd: Option<f64>,
    pub ne: Option<f64>,
    pub ab: Option<f64>,
    /// Users without a topic shared between history and recommendations.
    pub wd_excluded: usize,
    /// Users with no recommendations.
    pub empty: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypologyRow {
    pub typology: String,
    pub users: usize,
    pub share: f64,
    pub pt: f64,
    pub methods: BTreeMap<Method, MethodSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub methods: Vec<Method>,
    pub missing_methods: Vec<Method>,
    pub typologies: Vec<TypologyRow>,
    /// Share-weighted averages; AB uses absolute per-typology values.
    pub global: TypologyRow,
    pub fn_distribution: BTreeMap<Method, Vec<Vec<f64>>>,
    pub users: Vec<UserMetrics>,
}

/// Per-method inputs to the report.
pub struct MethodResult<'a> {
    pub method: Method,
    pub recommendations: &'a [RecommendationSet],
    pub furthest: Option<&'a NeighborGraph>,
}

fn user_metrics(ub: &UserBiasMatrix, history: &[&ArticleRecord], recs: &[&ArticleRecord]) -> UserMethodMetrics {
    let (wd, wd_topics) = match user_wd(history, recs) {
        Some((m, t)) => (Some(m), t),
        None => (None, Vec::new()),
    };
    UserMethodMetrics {
        ctr: ctr(ub, recs),
        wd,
        wd_topics,
        ne: bias_shares(recs).map(|q| normalized_entropy(&q)),
        ab: average_bias(recs),
    }
}

fn weighted(rows: &[(f64, Option<f64>)]) -> Option<f64> {
    let (mut s, mut w) = (0.0, 0.0);
    for &(share, v) in rows {
        if let Some(v) = v {
            s += share * v;
            w += share;
        }
    }
    (w > 0.0).then(|| s / w)
}

pub fn build_report(population: &Population, corpus: &[ArticleRecord], results: &[MethodResult]) -> Result<MetricsReport> {
    let n_typ = population.typology_names.len();
    let methods: Vec<Method> = results.iter().map(|r| r.method).collect();
    let missing_methods: Vec<Method> = Method::ALL.into_iter().filter(|m| !methods.contains(m)).collect();
    if !missing_methods.is_empty() {
        log::warn!("report is partial; methods not run: {missing_methods:?}");
    }
    for r in results {
        if r.recommendations.len() != population.len() {
            return Err(Error::DimensionMismatch {
                context: "recommendation sets",
                expected: population.len(),
                got: r.recommendations.len(),
            });
        }
    }

    let users: Vec<UserMetrics> = (0..population.len())
        .map(|u| {
            let ub = &population.users[u];
            let history: Vec<&ArticleRecord> = population.logs[u].entries.iter().map(|e| &corpus[e.article]).collect();
            let methods = results
                .iter()
                .map(|r| {
                    let recs: Vec<&ArticleRecord> =
                        r.recommendations[u].items.iter().map(|i| &corpus[i.article]).collect();
                    (r.method, user_metrics(ub, &history, &recs))
                })
                .collect();
            Ok(UserMetrics {
                user_id: u,
                typology: ub.typology,
                pt: political_tolerance(ub)?,
                methods,
            })
        })
        .collect::<Result<_>>()?;

    let counts = population.typology_counts();
    let total = population.len().max(1) as f64;
    let typologies: Vec<TypologyRow> = (0..n_typ)
        .map(|t| {
            let members: Vec<&UserMetrics> = users.iter().filter(|m| m.typology == t).collect();
            let pts: Vec<f64> = members.iter().map(|m| m.pt).collect();
            let methods = methods
                .iter()
                .map(|&method| {
                    let pick = |f: fn(&UserMethodMetrics) -> Option<f64>| -> Vec<f64> {
                        members.iter().filter_map(|m| f(&m.methods[&method])).collect()
                    };
                    let wds = pick(|m| m.wd);
                    let ctrs = pick(|m| m.ctr);
                    let summary = MethodSummary {
                        ctr: mean(&ctrs),
                        wd_mean: mean(&wds),
                        wd_sd: std_dev(&wds),
                        ne: mean(&pick(|m| m.ne)),
                        ab: mean(&pick(|m| m.ab)),
                        wd_excluded: members.len() - wds.len(),
                        empty: members.len() - ctrs.len(),
                    };
                    (method, summary)
                })
                .collect();
            TypologyRow {
                typology: population.typology_names[t].clone(),
                users: counts[t],
                share: counts[t] as f64 / total,
                pt: mean(&pts).unwrap_or(f64::NAN),
                methods,
            }
        })
        .collect();

    let global = global_row(&typologies, &methods);
    let fn_distribution = results
        .iter()
        .filter_map(|r| r.furthest.map(|f| (r.method, fn_distribution(f, population))))
        .collect();
    Ok(MetricsReport {
        methods,
        missing_methods,
        typologies,
        global,
        fn_distribution,
        users,
    })
}

/// Share-weighted average of the per-typology rows.
pub fn global_row(rows: &[TypologyRow], methods: &[Method]) -> TypologyRow {
    let col = |f: &dyn Fn(&TypologyRow) -> Option<f64>| -> Option<f64> {
        weighted(&rows.iter().map(|r| (r.share, f(r))).collect::<Vec<_>>())
    };
    let methods = methods
        .iter()
        .map(|m| {
            let get = |r: &TypologyRow| r.methods.get(m).cloned().unwrap_or_default();
            let summary = MethodSummary {
                ctr: col(&|r| get(r).ctr),
                wd_mean: col(&|r| get(r).wd_mean),
                wd_sd: col(&|r| get(r).wd_sd),
                ne: col(&|r| get(r).ne),
                ab: col(&|r| get(r).ab.map(f64::abs)),
                wd_excluded: rows.iter().map(|r| get(r).wd_excluded).sum(),
                empty: rows.iter().map(|r| get(r).empty).sum(),
            };
            (*m, summary)
        })
        .collect();
    TypologyRow {
        typology: "global".into(),
        users: rows.iter().map(|r| r.users).sum(),
        share: rows.iter().map(|r| r.share).sum(),
        pt: col(&|r| Some(r.pt).filter(|v| v.is_finite())).unwrap_or(f64::NAN),
        methods,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Table-style CSV with the columns of the methods in `report.methods`.
pub fn report_csv(report: &MetricsReport) -> String {
    type Col = (&'static str, Option<Method>, fn(&TypologyRow) -> String);
    fn m(row: &TypologyRow, method: Method) -> MethodSummary {
        row.methods.get(&method).cloned().unwrap_or_default()
    }
    fn wd(row: &TypologyRow, method: Method) -> String {
        let s = m(row, method);
        match (s.wd_mean, s.wd_sd) {
            (Some(a), Some(b)) => format!("{a:.6} ± {b:.6}"),
            (Some(a), None) => format!("{a:.6}"),
            _ => String::new(),
        }
    }
    let columns: [Col; 11] = [
        ("CTR_NN", Some(Method::Nn), |r| cell(m(r, Method::Nn).ctr)),
        ("CTR_FNPC", Some(Method::Fnpc), |r| cell(m(r, Method::Fnpc).ctr)),
        ("WD_NN", Some(Method::Nn), |r| wd(r, Method::Nn)),
        ("WD_FNPC", Some(Method::Fnpc), |r| wd(r, Method::Fnpc)),
        ("PT", None, |r| format!("{:.6}", r.pt)),
        ("NE_NN", Some(Method::Nn), |r| cell(m(r, Method::Nn).ne)),
        ("NE_FNNN", Some(Method::FnNn), |r| cell(m(r, Method::FnNn).ne)),
        ("NE_FNPC", Some(Method::Fnpc), |r| cell(m(r, Method::Fnpc).ne)),
        ("AB_NN", Some(Method::Nn), |r| cell(m(r, Method::Nn).ab)),
        ("AB_FNNN", Some(Method::FnNn), |r| cell(m(r, Method::FnNn).ab)),
        ("AB_FNPC", Some(Method::Fnpc), |r| cell(m(r, Method::Fnpc).ab)),
    ];
    let kept: Vec<&Col> = columns
        .iter()
        .filter(|(_, method, _)| method.is_none_or(|x| report.methods.contains(&x)))
        .collect();
    let mut out = String::from("typology");
    for (name, _, _) in &kept {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for row in report.typologies.iter().chain(std::iter::once(&report.global)) {
        out.push_str(&row.typology.replace(' ', "_"));
        for (_, _, f) in &kept {
            out.push(',');
            out.push_str(&f(row));
        }
        out.push('\n');
    }
    out
}

/// Source typologies as rows, neighbor typologies as columns.
pub fn fn_distribution_csv(names: &[String], dist: &[Vec<f64>]) -> String {
    let mut out = String::from("source");
    for n in names {
        write!(out, ",{}", n.replace(' ', "_")).unwrap();
    }
    out.push('\n');
    for (n, row) in names.iter().zip(dist) {
        out.push_str(&n.replace(' ', "_"));
        for v in row {
            write!(out, ",{v:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn art(id: u64, topics: Vec<usize>, bias: i8) -> ArticleRecord {
        ArticleRecord::new(id, topics, bias, Array2::zeros((1, 1))).unwrap()
    }

    #[test]
    fn topic_histograms() {
        let a = art(0, vec![0], -2);
        let b = art(1, vec![0, 3], -2);
        let c = art(2, vec![3], 1);
        let d = art(3, vec![3], -1);
        assert_eq!(topic_bias_distribution(&[&a, &b], 0).unwrap().masses, [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(topic_bias_distribution(&[&c, &d], 3).unwrap().masses, [0.0, 0.5, 0.0, 0.5, 0.0]);
        assert_eq!(topic_bias_distribution(&[&b, &c], 3).unwrap().masses, [0.5, 0.0, 0.0, 0.5, 0.0]);
        assert!(matches!(topic_bias_distribution(&[&a], 5), Err(Error::EmptyTopic(5))));
    }

    #[test]
    fn wasserstein_examples() {
        let u = BiasDistribution::uniform();
        assert_eq!(wasserstein(&u, &u), 0.0);
        assert!((wasserstein(&BiasDistribution::delta(0), &BiasDistribution::delta(4)) - 4.0).abs() < 1e-12);
        assert!((wasserstein(&BiasDistribution::delta(1), &u) - 1.4).abs() < 1e-12);
        assert!(BiasDistribution::new([0.5, 0.4, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn user_wd_averages_shared_topics() {
        let h = [art(0, vec![0], -2), art(1, vec![1], -2), art(2, vec![2], 0)];
        let r = [art(3, vec![0], 2), art(4, vec![1], -1)];
        let hr: Vec<&ArticleRecord> = h.iter().collect();
        let rr: Vec<&ArticleRecord> = r.iter().collect();
        let (m, topics) = user_wd(&hr, &rr).unwrap();
        assert_eq!(topics, vec![(0, 4.0), (1, 1.0)]);
        assert!((m - 2.5).abs() < 1e-12);
        assert_eq!(user_wd(&hr, &hr).unwrap().0, 0.0);
        assert!(user_wd(&hr[2..], &rr).is_none());
    }

    #[test]
    fn ctr_ab_pt_examples() {
        let mut ub = UserBiasMatrix {
            user_id: 0,
            typology: 0,
            b: [[1.0; 5]; 14],
        };
        let recs = [art(0, vec![0], 2), art(1, vec![1], 2)];
        let rr: Vec<&ArticleRecord> = recs.iter().collect();
        assert_eq!(ctr(&ub, &rr), Some(1.0));
        assert_eq!(average_bias(&rr), Some(2.0));
        assert!((political_tolerance(&ub).unwrap() - 1.0).abs() < 1e-12);
        ub.b[0][0] = 0.2;
        ub.b[1][4] = 0.6;
        let one_each = [art(0, vec![0], -2), art(1, vec![1], 2)];
        let oe: Vec<&ArticleRecord> = one_each.iter().collect();
        assert!((ctr(&ub, &oe).unwrap() - 0.4).abs() < 1e-12);
        let mixed = [art(0, vec![0], -1), art(1, vec![0], 1)];
        assert_eq!(average_bias(&mixed.iter().collect::<Vec<_>>()), Some(0.0));
        let two = [art(0, vec![0], -2), art(1, vec![1], 0)];
        assert_eq!(average_bias(&two.iter().collect::<Vec<_>>()), Some(-1.0));
        let mut single = [[0.0; 5]; 14];
        single.iter_mut().for_each(|r| r[3] = 0.7);
        ub.b = single;
        assert_eq!(political_tolerance(&ub).unwrap(), 0.0);
        ub.b = [[0.0; 5]; 14];
        assert!(matches!(political_tolerance(&ub), Err(Error::ZeroBiasMatrix)));
        assert_eq!(ctr(&ub, &[]), None);
    }

    fn row(name: &str, share: f64, ctr_v: f64, ab: f64) -> TypologyRow {
        let mut methods = BTreeMap::new();
        methods.insert(
            Method::Nn,
            MethodSummary {
                ctr: Some(ctr_v),
                ab: Some(ab),
                ..Default::default()
            },
        );
        TypologyRow {
            typology: name.into(),
            users: 1,
            share,
            pt: 0.5,
            methods,
        }
    }

    #[test]
    fn global_row_weights_and_absolute_ab() {
        let rows = vec![row("a", 0.5, 0.4, -1.2), row("b", 0.5, 0.6, 1.2)];
        let g = global_row(&rows, &[Method::Nn]);
        assert!((g.methods[&Method::Nn].ctr.unwrap() - 0.5).abs() < 1e-12);
        assert!((g.methods[&Method::Nn].ab.unwrap() - 1.2).abs() < 1e-12);
        assert!(!g.methods.contains_key(&Method::Fnpc));
    }
}
