use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::population::Population;

/// Sparse user-item matrix of observed ratings, kept both by row and by
/// column. Holdout interactions are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingMatrix {
    pub n_items: usize,
    /// Per user, `(item, rating)` sorted by item.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Per item, `(user, rating)` sorted by user.
    pub cols: Vec<Vec<(usize, f64)>>,
}

impl RatingMatrix {
    pub fn from_rows(n_items: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut cols = vec![Vec::new(); n_items];
        for (u, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(i, _)| i);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::validation(format!("user {u} rates item {} twice", w[0].0)));
                }
            }
            for &(i, r) in row.iter() {
                if i >= n_items {
                    return Err(Error::validation(format!("item {i} outside {n_items} items")));
                }
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::validation(format!("rating {r} of user {u} outside [0, 1]")));
                }
                cols[i].push((u, r));
            }
        }
        Ok(Self { n_items, rows, cols })
    }

    /// Observed-tagged ratings of every user over the article pool.
    pub fn from_population(population: &Population, n_items: usize) -> Result<Self> {
        let rows = population
            .logs
            .iter()
            .map(|log| log.observed().map(|e| (e.article, e.rating)).collect())
            .collect();
        Self::from_rows(n_items, rows)
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, user: usize, item: usize) -> f64 {
        self.rows[user]
            .binary_search_by_key(&item, |&(i, _)| i)
            .map_or(0.0, |k| self.rows[user][k].1)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n_users(), self.n_items));
        for (u, row) in self.rows.iter().enumerate() {
            for &(i, r) in row {
                m[(u, i)] = r;
            }
        }
        m
    }
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Pearson correlation between full rating rows (unrated items count as 0).
/// Zero-variance rows give NaN, meaning "missing".
pub fn rating_pearson(x: &RatingMatrix) -> Array2<f64> {
    let n = x.n_users();
    let v = x.n_items as f64;
    let stats: Vec<(f64, f64)> = x
        .rows
        .iter()
        .map(|r| {
            let mean = r.iter().map(|&(_, y)| y).sum::<f64>() / v;
            let ss = r.iter().map(|&(_, y)| y * y).sum::<f64>() - v * mean * mean;
            (mean, ss)
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (0..n)
                .map(|b| {
                    let (ma, sa) = stats[a];
                    let (mb, sb) = stats[b];
                    if sa <= 0.0 || sb <= 0.0 {
                        return f64::NAN;
                    }
                    if a == b {
                        return 1.0;
                    }
                    let cov = sparse_dot(&x.rows[a], &x.rows[b]) - v * ma * mb;
                    (cov / (sa * sb).sqrt()).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    let mut m = Array2::zeros((n, n));
    for (a, row) in rows.into_iter().enumerate() {
        for (b, val) in row.into_iter().enumerate() {
            m[(a, b)] = val;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::pearson;

    #[test]
    fn sparse_pearson_matches_dense_rows() {
        let x = RatingMatrix::from_rows(
            6,
            vec![
                vec![(0, 0.5), (3, 0.9)],
                vec![(0, 0.25), (3, 0.45)],
                vec![(1, 0.7), (2, 0.1), (5, 0.3)],
                vec![(3, 0.2)],
            ],
        )
        .unwrap();
        let c = rating_pearson(&x);
        let d = x.to_dense();
        for a in 0..4 {
            for b in 0..4 {
                let r: Vec<f64> = d.row(a).to_vec();
                let s: Vec<f64> = d.row(b).to_vec();
                let want = pearson(&r, &s).unwrap();
                assert!((c[(a, b)] - want).abs() < 1e-12, "{a},{b}");
            }
        }
        // proportional rows over the same support
        assert!((c[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_row_is_missing() {
        let x = RatingMatrix::from_rows(3, vec![vec![(0, 0.5)], vec![]]).unwrap();
        let c = rating_pearson(&x);
        assert!(c[(0, 1)].is_nan() && c[(1, 1)].is_nan());
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(RatingMatrix::from_rows(2, vec![vec![(2, 0.5)]]).is_err());
        assert!(RatingMatrix::from_rows(2, vec![vec![(0, 1.5)]]).is_err());
        assert!(RatingMatrix::from_rows(2, vec![vec![(0, 0.5), (0, 0.2)]]).is_err());
    }
}
