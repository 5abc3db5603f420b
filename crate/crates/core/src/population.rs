//! Simulated users: typology profiles, user bias matrices, interaction
//! histories and landmark users.

use std::fs;
use std::path::Path;

use rand::{Rng as _, RngCore};
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleRecord, N_BIAS, N_TOPICS};
use crate::error::{Error, Result};
use crate::seed::{rng_from, sub_seed, Rng};

const DEFAULT_PROFILES: &str = include_str!("../data/typologies.json");
const SHARE_TOL: f64 = 1e-9;

/// Stance of one typology on one topic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicStance {
    /// Column 0..4 of the dominant bias score (score + 2).
    pub dominant_index: usize,
    /// Beta shape parameter for the dominant entry.
    pub agreement: f64,
    /// Multipliers at distance 1..4 from the dominant column.
    pub decay: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypologyProfile {
    pub name: String,
    pub share: f64,
    pub topics: Vec<TopicStance>,
}

impl TypologyProfile {
    pub fn validate(&self) -> Result<()> {
        let name = &self.name;
        if !(0.0..=1.0).contains(&self.share) {
            return Err(Error::validation(format!("{name}: share {} outside [0,1]", self.share)));
        }
        if self.topics.len() != N_TOPICS {
            return Err(Error::validation(format!(
                "{name}: {} topic entries, expected {N_TOPICS}",
                self.topics.len()
            )));
        }
        for (t, s) in self.topics.iter().enumerate() {
            if s.dominant_index >= N_BIAS {
                return Err(Error::validation(format!(
                    "{name}: topic {t} dominant_index {} out of range",
                    s.dominant_index
                )));
            }
            if !(s.agreement > 0.0 && s.agreement <= 1.0) {
                return Err(Error::validation(format!(
                    "{name}: topic {t} agreement {} must lie in (0, 1]",
                    s.agreement
                )));
            }
            if s.decay.iter().any(|d| !(0.0..=1.0).contains(d)) {
                return Err(Error::validation(format!("{name}: topic {t} decay outside [0,1]")));
            }
            if s.decay.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::validation(format!(
                    "{name}: topic {t} decay profile must be non-increasing"
                )));
            }
        }
        Ok(())
    }
}

/// Ordered set of typology profiles. The order fixes typology indices and
/// therefore the coordinate order of CPC vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProfileSet {
    pub profiles: Vec<TypologyProfile>,
}

impl ProfileSet {
    pub fn new(profiles: Vec<TypologyProfile>) -> Result<Self> {
        let set = Self { profiles };
        set.validate()?;
        Ok(set)
    }

    /// The shipped nine-typology profiles.
    pub fn default_profiles() -> Self {
        Self::from_json(DEFAULT_PROFILES).expect("shipped profile file is valid")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let set: ProfileSet = serde_json::from_str(s)?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() {
            return Err(Error::validation("profile set is empty"));
        }
        for p in &self.profiles {
            p.validate()?;
        }
        let total: f64 = self.profiles.iter().map(|p| p.share).sum();
        if (total - 1.0).abs() > SHARE_TOL {
            return Err(Error::validation(format!("typology shares sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.profiles.iter().map(|p| p.name.clone()).collect()
    }

    pub fn shares(&self) -> Vec<f64> {
        self.profiles.iter().map(|p| p.share).collect()
    }

    /// Largest-remainder apportionment of `n_users` over the shares; ties in
    /// the remainder go to the lower typology index.
    pub fn apportion(&self, n_users: usize) -> Vec<usize> {
        let quotas: Vec<f64> = self.profiles.iter().map(|p| p.share * n_users as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().take(n_users.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }
}

pub type BiasGrid = [[f64; N_BIAS]; N_TOPICS];

/// Per-user 14x5 grid of interaction probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserBiasMatrix {
    pub user_id: usize,
    pub typology: usize,
    pub b: BiasGrid,
}

impl UserBiasMatrix {
    /// Column sums over topics.
    pub fn column_sums(&self) -> [f64; N_BIAS] {
        let mut s = [0.0; N_BIAS];
        for row in &self.b {
            for (acc, v) in s.iter_mut().zip(row) {
                *acc += v;
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Index into the item pool.
    pub article: usize,
    pub article_id: u64,
    pub rating: f64,
    pub holdout: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub user_id: usize,
    pub entries: Vec<LogEntry>,
}

impl InteractionLog {
    pub fn observed(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(|e| !e.holdout)
    }

    pub fn holdout(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(|e| e.holdout)
    }

    pub fn contains(&self, article: usize) -> bool {
        self.entries.iter().any(|e| e.article == article)
    }
}

/// Draws one user's bias matrix: the dominant entry of each topic row from
/// `Beta(agreement, 1)`, neighbours scaled by the decay profile.
pub fn sample_user_bias_matrix(
    profile: &TypologyProfile,
    user_id: usize,
    typology: usize,
    rng: &mut Rng,
) -> Result<UserBiasMatrix> {
    profile.validate()?;
    let mut b = [[0.0; N_BIAS]; N_TOPICS];
    for (row, stance) in b.iter_mut().zip(&profile.topics) {
        let beta = Beta::new(stance.agreement, 1.0)
            .map_err(|e| Error::validation(format!("beta({}, 1): {e}", stance.agreement)))?;
        let peak: f64 = beta.sample(rng);
        decay_row(row, peak, stance.dominant_index, &stance.decay);
    }
    Ok(UserBiasMatrix {
        user_id,
        typology,
        b,
    })
}

fn decay_row(row: &mut [f64; N_BIAS], peak: f64, dominant: usize, decay: &[f64; 4]) {
    for (j, v) in row.iter_mut().enumerate() {
        let offset = j.abs_diff(dominant);
        *v = if offset == 0 {
            peak
        } else {
            peak * decay[offset - 1]
        };
    }
}

/// Mean of `b[t][bias]` over the topics the article covers.
pub fn interaction_probability(ub: &UserBiasMatrix, article: &ArticleRecord) -> f64 {
    let j = article.bias_index();
    let s: f64 = article.topics.iter().map(|&t| ub.b[t][j]).sum();
    s / article.topics.len() as f64
}

/// Walks the pool in a random order, logging each article with probability
/// `p_uv`, until `h` interactions are accepted. A random half is tagged
/// holdout using a stream split off before the walk.
pub fn simulate_history(
    ub: &UserBiasMatrix,
    corpus: &[ArticleRecord],
    h: usize,
    rng: &mut Rng,
) -> Result<InteractionLog> {
    if corpus.len() < h {
        return Err(Error::validation(format!(
            "pool of {} articles is smaller than history length {h}",
            corpus.len()
        )));
    }
    let mut holdout_rng = rng_from(rng.next_u64());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut entries = Vec::with_capacity(h);
    for i in 0..order.len() {
        if entries.len() == h {
            break;
        }
        let j = rng.random_range(i..order.len());
        order.swap(i, j);
        let idx = order[i];
        let p = interaction_probability(ub, &corpus[idx]);
        if rng.random::<f64>() < p {
            entries.push(LogEntry {
                article: idx,
                article_id: corpus[idx].article_id,
                rating: p,
                holdout: false,
            });
        }
    }
    if entries.len() < h {
        return Err(Error::PoolExhausted {
            user: ub.user_id,
            accepted: entries.len(),
            wanted: h,
        });
    }
    // Partial Fisher-Yates picks h/2 positions for the holdout set.
    let mut positions: Vec<usize> = (0..h).collect();
    for i in 0..h / 2 {
        let j = holdout_rng.random_range(i..h);
        positions.swap(i, j);
        entries[positions[i]].holdout = true;
    }
    Ok(InteractionLog {
        user_id: ub.user_id,
        entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub typology_names: Vec<String>,
    pub users: Vec<UserBiasMatrix>,
    pub logs: Vec<InteractionLog>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn typology_of(&self, user: usize) -> usize {
        self.users[user].typology
    }

    pub fn typology_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.typology_names.len()];
        for u in &self.users {
            c[u.typology] += 1;
        }
        c
    }
}

/// Builds `n_users` users, typologies apportioned by share and laid out in
/// profile order. User `i` draws from stream `sub_seed(seed, i)`.
pub fn build_population(
    profiles: &ProfileSet,
    n_users: usize,
    corpus: &[ArticleRecord],
    h: usize,
    seed: u64,
) -> Result<Population> {
    profiles.validate()?;
    let counts = profiles.apportion(n_users);
    let typologies: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(t, &c)| std::iter::repeat_n(t, c))
        .collect();
    let simulated: Vec<(UserBiasMatrix, InteractionLog)> = typologies
        .par_iter()
        .enumerate()
        .map(|(user, &t)| {
            let mut rng = rng_from(sub_seed(seed, user as u64));
            let ub = sample_user_bias_matrix(&profiles.profiles[t], user, t, &mut rng)?;
            let log = simulate_history(&ub, corpus, h, &mut rng)?;
            Ok((ub, log))
        })
        .collect::<Result<_>>()?;
    let (users, logs) = simulated.into_iter().unzip();
    Ok(Population {
        typology_names: profiles.names(),
        users,
        logs,
    })
}

/// Prototype user of one typology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub typology: usize,
    pub name: String,
    pub ub: UserBiasMatrix,
    pub log: InteractionLog,
}

/// One landmark per typology: the mean bias matrix of its users, with a
/// freshly simulated history of the same length.
pub fn build_landmarks(
    population: &Population,
    corpus: &[ArticleRecord],
    h: usize,
    seed: u64,
) -> Result<Vec<Landmark>> {
    let n_typ = population.typology_names.len();
    let mut sums = vec![[[0.0; N_BIAS]; N_TOPICS]; n_typ];
    let mut counts = vec![0usize; n_typ];
    for u in &population.users {
        counts[u.typology] += 1;
        for (srow, row) in sums[u.typology].iter_mut().zip(&u.b) {
            for (s, v) in srow.iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    (0..n_typ)
        .map(|t| {
            if counts[t] == 0 {
                return Err(Error::EmptyTypology(population.typology_names[t].clone()));
            }
            let mut b = sums[t];
            let n = counts[t] as f64;
            b.iter_mut().flatten().for_each(|v| *v /= n);
            let ub = UserBiasMatrix {
                user_id: t,
                typology: t,
                b,
            };
            let mut rng = rng_from(sub_seed(seed, t as u64));
            let log = simulate_history(&ub, corpus, h, &mut rng)?;
            Ok(Landmark {
                typology: t,
                name: population.typology_names[t].clone(),
                ub,
                log,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};
    use ndarray::Array2;

    fn article(id: u64, topics: Vec<usize>, bias: i8) -> ArticleRecord {
        ArticleRecord::new(id, topics, bias, Array2::zeros((1, 1))).unwrap()
    }

    fn uniform_profile(name: &str, share: f64, dominant: usize, decay: [f64; 4]) -> TypologyProfile {
        TypologyProfile {
            name: name.into(),
            share,
            topics: vec![
                TopicStance {
                    dominant_index: dominant,
                    agreement: 0.92,
                    decay,
                };
                N_TOPICS
            ],
        }
    }

    fn grid_with_row(row: [f64; 5]) -> UserBiasMatrix {
        let mut b = [[0.0; 5]; 14];
        b[0] = row;
        UserBiasMatrix {
            user_id: 0,
            typology: 0,
            b,
        }
    }

    fn small_corpus(n: usize) -> Vec<ArticleRecord> {
        generate_corpus(&CorpusConfig {
            n_articles: n,
            token_count: 1,
            token_dim: 1,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn worked_example_row() {
        let mut row = [0.0; 5];
        decay_row(&mut row, 0.94, 0, &[0.85, 0.69, 0.22, 0.11]);
        let want = [0.94, 0.80, 0.65, 0.21, 0.10];
        for (a, b) in row.iter().zip(want) {
            assert!((a - b).abs() < 0.005, "{row:?}");
        }
    }

    #[test]
    fn zero_decay_keeps_only_peak() {
        let p = uniform_profile("x", 1.0, 2, [0.0; 4]);
        let ub = sample_user_bias_matrix(&p, 0, 0, &mut rng_from(3)).unwrap();
        for row in ub.b {
            assert!(row[2] > 0.0);
            assert_eq!([row[0], row[1], row[3], row[4]], [0.0; 4]);
        }
    }

    #[test]
    fn beta_peak_mean_matches_analytic() {
        let p = TypologyProfile {
            topics: vec![
                TopicStance {
                    dominant_index: 0,
                    agreement: 0.92,
                    decay: [0.5; 4],
                };
                N_TOPICS
            ],
            ..uniform_profile("x", 1.0, 0, [0.0; 4])
        };
        let mut rng = rng_from(11);
        let draws = 100_000 / N_TOPICS + 1;
        let mut sum = 0.0;
        let mut n = 0.0;
        for _ in 0..draws {
            let ub = sample_user_bias_matrix(&p, 0, 0, &mut rng).unwrap();
            for row in ub.b {
                sum += row[0];
                n += 1.0;
            }
        }
        let mean = sum / n;
        let analytic = 0.92 / 1.92;
        assert!((mean - analytic).abs() < 0.005, "{mean} vs {analytic}");
    }

    #[test]
    fn rejects_bad_profiles() {
        let mut p = uniform_profile("x", 1.0, 0, [0.85, 0.69, 0.22, 0.11]);
        p.topics[3].agreement = 0.0;
        assert!(matches!(
            sample_user_bias_matrix(&p, 0, 0, &mut rng_from(0)),
            Err(Error::Validation(_))
        ));
        let p = uniform_profile("x", 1.0, 0, [0.5, 0.6, 0.2, 0.1]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn interaction_probability_examples() {
        let ub = grid_with_row([0.94, 0.80, 0.65, 0.21, 0.10]);
        assert_eq!(interaction_probability(&ub, &article(0, vec![0], -2)), 0.94);
        assert_eq!(interaction_probability(&ub, &article(1, vec![0], 2)), 0.10);
        let mut ub = ub;
        ub.b[3][2] = 0.4;
        ub.b[5][2] = 0.6;
        let p = interaction_probability(&ub, &article(2, vec![3, 5], 0));
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn all_ones_accepts_first_draws() {
        let corpus = small_corpus(40);
        let ub = UserBiasMatrix {
            user_id: 0,
            typology: 0,
            b: [[1.0; 5]; 14],
        };
        let log = simulate_history(&ub, &corpus, 20, &mut rng_from(5)).unwrap();
        assert_eq!(log.entries.len(), 20);
        assert!(log.entries.iter().all(|e| e.rating == 1.0));
        // Same walk order as a fresh permutation with the same stream.
        let mut rng = rng_from(5);
        let _ = rng.next_u64();
        let mut order: Vec<usize> = (0..40).collect();
        for i in 0..20 {
            let j = rng.random_range(i..40);
            order.swap(i, j);
            let _ = rng.random::<f64>();
            assert_eq!(log.entries[i].article, order[i]);
        }
        assert_eq!(log.holdout().count(), 10);
        assert_eq!(log.observed().count(), 10);
    }

    #[test]
    fn all_zero_exhausts_pool() {
        let corpus = small_corpus(30);
        let ub = UserBiasMatrix {
            user_id: 4,
            typology: 0,
            b: [[0.0; 5]; 14],
        };
        match simulate_history(&ub, &corpus, 20, &mut rng_from(1)) {
            Err(Error::PoolExhausted { user, accepted, .. }) => {
                assert_eq!((user, accepted), (4, 0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn logged_ratings_exceed_pool_mean() {
        let corpus = small_corpus(4000);
        let profiles = ProfileSet::default_profiles();
        let liberal = &profiles.profiles[1];
        assert_eq!(liberal.name, "solid liberals");
        let mut rng = rng_from(21);
        let ub = sample_user_bias_matrix(liberal, 0, 1, &mut rng).unwrap();
        let pool_mean: f64 = corpus.iter().map(|a| interaction_probability(&ub, a)).sum::<f64>()
            / corpus.len() as f64;
        // Expected logged rating under acceptance sampling: E[p^2] / E[p].
        let second: f64 = corpus
            .iter()
            .map(|a| interaction_probability(&ub, a).powi(2))
            .sum::<f64>()
            / corpus.len() as f64;
        let expected = second / pool_mean;
        let mut total = 0.0;
        let reps = 50;
        for _ in 0..reps {
            let log = simulate_history(&ub, &corpus, 20, &mut rng).unwrap();
            total += log.entries.iter().map(|e| e.rating).sum::<f64>() / 20.0;
        }
        let empirical = total / reps as f64;
        assert!(empirical > pool_mean, "{empirical} <= {pool_mean}");
        assert!(expected > pool_mean);
        assert!((empirical - expected).abs() < 0.05, "{empirical} vs {expected}");
    }

    #[test]
    fn apportionment() {
        let profiles = ProfileSet::default_profiles();
        let counts = profiles.apportion(1000);
        assert_eq!(counts.iter().sum::<usize>(), 1000);
        assert_eq!(counts[1], 200);
        let equal = ProfileSet::new(
            (0..9)
                .map(|i| uniform_profile(&format!("t{i}"), 1.0 / 9.0, 2, [0.5; 4]))
                .collect(),
        )
        .unwrap();
        assert_eq!(equal.apportion(9), vec![1; 9]);
        assert_eq!(equal.apportion(0), vec![0; 9]);
    }

    #[test]
    fn population_invariants_and_determinism() {
        let corpus = small_corpus(400);
        let profiles = ProfileSet::default_profiles();
        let pop = build_population(&profiles, 60, &corpus, 20, 9).unwrap();
        assert_eq!(pop.len(), 60);
        for (ub, log) in pop.users.iter().zip(&pop.logs) {
            assert!(ub.b.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(log.entries.len(), 20);
            assert_eq!(log.holdout().count(), 10);
            let mut ids: Vec<_> = log.entries.iter().map(|e| e.article).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 20);
            for e in &log.entries {
                assert_eq!(e.rating, interaction_probability(ub, &corpus[e.article]));
            }
            for (row, stance) in ub.b.iter().zip(&profiles.profiles[ub.typology].topics) {
                let d = stance.dominant_index;
                for j in 0..5 {
                    let closer = if j < d { j + 1 } else if j > d { j - 1 } else { j };
                    assert!(row[j] <= row[closer] + 1e-15);
                }
            }
        }
        assert_eq!(pop, build_population(&profiles, 60, &corpus, 20, 9).unwrap());
        let empty = build_population(&profiles, 0, &corpus, 20, 9).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn landmarks_are_typology_means() {
        let corpus = small_corpus(300);
        let profiles = ProfileSet::default_profiles();
        let pop = build_population(&profiles, 30, &corpus, 20, 2).unwrap();
        let lms = build_landmarks(&pop, &corpus, 20, 3).unwrap();
        assert_eq!(lms.len(), 9);
        let by = &pop.users.iter().filter(|u| u.typology == 0).collect::<Vec<_>>();
        if by.len() == 1 {
            assert_eq!(lms[0].ub.b, by[0].b);
        }
        let mut mean = 0.0;
        for u in by {
            mean += u.b[4][1];
        }
        mean /= by.len() as f64;
        assert!((lms[0].ub.b[4][1] - mean).abs() < 1e-15);
        assert_eq!(lms, build_landmarks(&pop, &corpus, 20, 3).unwrap());
    }

    #[test]
    fn landmark_of_two_users_is_midpoint() {
        let corpus = small_corpus(100);
        let mut a = grid_with_row([0.2, 0.2, 0.2, 0.2, 0.2]);
        let mut b = grid_with_row([0.4, 0.4, 0.4, 0.4, 0.4]);
        for t in 0..14 {
            a.b[t] = [0.2; 5];
            b.b[t] = [0.4; 5];
        }
        b.user_id = 1;
        let pop = Population {
            typology_names: vec!["only".into()],
            users: vec![a, b],
            logs: vec![],
        };
        let lms = build_landmarks(&pop, &corpus, 10, 0).unwrap();
        for v in lms[0].ub.b.iter().flatten() {
            assert!((v - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_typology_is_an_error() {
        let corpus = small_corpus(100);
        let pop = Population {
            typology_names: vec!["a".into(), "b".into()],
            users: vec![UserBiasMatrix {
                user_id: 0,
                typology: 0,
                b: [[0.5; 5]; 14],
            }],
            logs: vec![],
        };
        assert!(matches!(
            build_landmarks(&pop, &corpus, 4, 0),
            Err(Error::EmptyTypology(name)) if name == "b"
        ));
    }
}
