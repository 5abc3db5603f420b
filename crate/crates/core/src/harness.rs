//! End-to-end pipeline over an output directory.
//!
//! Stages run in order and each reads its inputs from disk:
//! `gen-corpus`, `simulate`, `train-disentangler`, `build-cpc`,
//! `recommend` (per method) and `evaluate`. Every stage writes
//! `<stage>.manifest.json` with the seed, a hash of the stage's config, a
//! hash of its input files and the hash of every output. A stage whose
//! manifest matches is skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{export_articles, generate_articles, generate_corpus, ingest_articles, ArticleRecord, CorpusConfig};
use crate::cpc::{
    build_landmark_set, cpc_correlation, cpc_csv, landmark_csv, parse_cpc_csv, polarized_table, population_cpcs,
};
use crate::disentangler::{DisentanglerConfig, DisentanglerModel, Evaluation, TrainingCurve};
use crate::error::{Error, Result};
use crate::evaluation::{build_report, fn_distribution_csv, report_csv, MethodResult, MetricsReport};
use crate::population::{build_landmarks, build_population, Landmark, Population, ProfileSet};
use crate::recommender::{
    graphs_csv, parse_graphs_csv, parse_recommendations_csv, rating_pearson, recommendations_csv, run_method,
    Method, RatingMatrix, RecommenderConfig,
};
use crate::seed::{rng_from, stage_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    /// Typology profile file; the shipped defaults when absent.
    pub profiles: Option<PathBuf>,
    pub n_users: usize,
    pub history_len: usize,
    pub recommender: RecommenderConfig,
    pub disentangler: DisentanglerConfig,
    pub methods: Vec<Method>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            profiles: None,
            n_users: 1000,
            history_len: 20,
            recommender: RecommenderConfig::default(),
            disentangler: DisentanglerConfig::default(),
            methods: Method::ALL.to_vec(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// 1000 users over 4000 articles.
    pub fn paper_scale() -> Self {
        Self::default()
    }

    /// Smoke scale: 50 users, 200 articles, 2 epochs.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.apply_desk();
        c
    }

    pub fn apply_paper_scale(&mut self) {
        let d = Self::default();
        self.n_users = d.n_users;
        self.corpus.n_articles = d.corpus.n_articles;
        self.disentangler = d.disentangler;
    }

    pub fn apply_desk(&mut self) {
        self.n_users = 50;
        self.corpus.n_articles = 200;
        let dc = &mut self.disentangler;
        dc.epochs = 2;
        dc.train_articles = 200;
        dc.heldout_articles = 100;
        dc.epoch_articles = 200;
        dc.pretrain_articles = 200;
        dc.pretrain_steps = 5;
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.disentangler.validate()?;
        if self.n_users < 2 {
            return Err(Error::validation("n_users must be at least 2"));
        }
        if self.history_len < 2 {
            return Err(Error::validation("history_len must be at least 2"));
        }
        if self.recommender.n_neighbors >= self.n_users {
            return Err(Error::validation("n_neighbors must be below n_users"));
        }
        if self.methods.is_empty() {
            return Err(Error::validation("no methods selected"));
        }
        Ok(())
    }

    fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            seed: stage_seed(self.seed, "corpus"),
            ..self.corpus.clone()
        }
    }

    fn profile_set(&self) -> Result<ProfileSet> {
        match &self.profiles {
            Some(p) => ProfileSet::load(p),
            None => Ok(ProfileSet::default_profiles()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Cached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub seed: u64,
    pub stage_seed: u64,
    pub config_hash: String,
    pub input_hash: String,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub curve: TrainingCurve,
    pub heldout: Evaluation,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stage that produces a given artifact.
fn producer_of(file: &str) -> &'static str {
    match file {
        "corpus.txt" => "gen-corpus",
        "population.json" | "landmarks.json" => "simulate",
        "cpc.csv" | "landmarks.csv" => "build-cpc",
        f if f.starts_with("model") || f == "training.json" => "train-disentangler",
        f if f.starts_with("recommendations_") || f.starts_with("graphs_") || f.starts_with("weights_") => "recommend",
        _ => "run-all",
    }
}

const MODEL_FILES: [&str; 11] = [
    "model/model.json",
    "model/attention.bin",
    "model/attention.json",
    "model/encoder.bin",
    "model/encoder.json",
    "model/decoder_p.bin",
    "model/decoder_p.json",
    "model/decoder_f.bin",
    "model/decoder_f.json",
    "model/classifier.bin",
    "model/classifier.json",
];

pub struct Pipeline {
    pub config: RunConfig,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
        Ok(Self { config })
    }

    pub fn out(&self) -> &Path {
        &self.config.out_dir
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.config.out_dir.join(rel)
    }

    fn read(&self, rel: &str) -> Result<Vec<u8>> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(Error::MissingArtifact {
                path: p,
                producer: producer_of(rel),
            });
        }
        fs::read(&p).map_err(|e| Error::io(&p, e))
    }

    fn read_string(&self, rel: &str) -> Result<String> {
        String::from_utf8(self.read(rel)?).map_err(|_| Error::validation(format!("{rel} is not UTF-8")))
    }

    fn write(&self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    fn input_hash(&self, inputs: &[String]) -> Result<String> {
        let mut h = Sha256::new();
        for rel in inputs {
            h.update(rel.as_bytes());
            h.update(sha256_hex(&self.read(rel)?).as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    fn manifest_path(stage: &str) -> String {
        format!("{stage}.manifest.json")
    }

    fn is_cached(&self, stage: &str, config_hash: &str, input_hash: &str) -> bool {
        let Ok(text) = fs::read_to_string(self.path(&Self::manifest_path(stage))) else {
            return false;
        };
        let Ok(m) = serde_json::from_str::<StageManifest>(&text) else {
            return false;
        };
        m.config_hash == config_hash
            && m.input_hash == input_hash
            && m.outputs
                .iter()
                .all(|(rel, hash)| fs::read(self.path(rel)).is_ok_and(|b| sha256_hex(&b) == *hash))
    }

    /// Runs `body` unless the stage's manifest is current. `body` returns
    /// the relative paths it wrote.
    fn stage<C: Serialize>(
        &self,
        stage: &'static str,
        name: &str,
        config: &C,
        inputs: &[String],
        body: impl FnOnce(u64) -> Result<Vec<String>>,
    ) -> Result<StageOutcome> {
        let wrap = |e: Error| Error::Stage {
            stage,
            source: Box::new(e),
        };
        let keyed = (self.config.seed, config);
        let config_hash = sha256_hex(serde_json::to_string(&keyed).map_err(|e| wrap(e.into()))?.as_bytes());
        let input_hash = self.input_hash(inputs).map_err(wrap)?;
        if self.is_cached(name, &config_hash, &input_hash) {
            log::info!("{name}: cached");
            return Ok(StageOutcome::Cached);
        }
        log::info!("{name}: running");
        let seed = stage_seed(self.config.seed, name);
        let outputs = body(seed).map_err(wrap)?;
        let outputs = outputs
            .into_iter()
            .map(|rel| Ok((rel.clone(), sha256_hex(&self.read(&rel)?))))
            .collect::<Result<BTreeMap<_, _>>>()
            .map_err(wrap)?;
        let manifest = StageManifest {
            stage: name.to_string(),
            seed: self.config.seed,
            stage_seed: seed,
            config_hash,
            input_hash,
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| wrap(e.into()))?;
        self.write(&Self::manifest_path(name), text).map_err(wrap)?;
        Ok(StageOutcome::Ran)
    }

    pub fn load_corpus(&self) -> Result<Vec<ArticleRecord>> {
        if !self.path("corpus.txt").exists() {
            return Err(Error::MissingArtifact {
                path: self.path("corpus.txt"),
                producer: "gen-corpus",
            });
        }
        ingest_articles(&self.path("corpus.txt"))
    }

    pub fn load_population(&self) -> Result<Population> {
        Ok(serde_json::from_slice(&self.read("population.json")?)?)
    }

    pub fn load_landmarks(&self) -> Result<Vec<Landmark>> {
        Ok(serde_json::from_slice(&self.read("landmarks.json")?)?)
    }

    pub fn load_model(&self) -> Result<DisentanglerModel<f64>> {
        if !self.path("model/model.json").exists() {
            return Err(Error::MissingArtifact {
                path: self.path("model/model.json"),
                producer: "train-disentangler",
            });
        }
        Ok(DisentanglerModel::load(&self.path("model"))?.0)
    }

    pub fn load_training(&self) -> Result<TrainingReport> {
        Ok(serde_json::from_slice(&self.read("training.json")?)?)
    }

    pub fn gen_corpus(&self) -> Result<StageOutcome> {
        let cfg = self.config.corpus_config();
        self.stage("gen-corpus", "gen-corpus", &cfg, &[], |_| {
            let corpus = generate_corpus(&cfg)?;
            export_articles(&self.path("corpus.txt"), &corpus)?;
            Ok(vec!["corpus.txt".into()])
        })
    }

    pub fn simulate(&self) -> Result<StageOutcome> {
        let profiles = self.config.profile_set().map_err(|e| Error::Stage {
            stage: "simulate",
            source: Box::new(e),
        })?;
        let cfg = (&profiles, self.config.n_users, self.config.history_len);
        self.stage("simulate", "simulate", &cfg, &["corpus.txt".into()], |_| {
            let corpus = self.load_corpus()?;
            let root = self.config.seed;
            let pop = build_population(
                &profiles,
                self.config.n_users,
                &corpus,
                self.config.history_len,
                stage_seed(root, "population"),
            )?;
            let landmarks = build_landmarks(&pop, &corpus, self.config.history_len, stage_seed(root, "landmarks"))?;
            self.write("population.json", serde_json::to_string(&pop)?)?;
            self.write("landmarks.json", serde_json::to_string(&landmarks)?)?;
            Ok(vec!["population.json".into(), "landmarks.json".into()])
        })
    }

    pub fn train_disentangler(&self) -> Result<StageOutcome> {
        let dc = self.config.disentangler.clone();
        let cc = self.config.corpus_config();
        self.stage("train-disentangler", "train-disentangler", &(&dc, &cc), &[], |seed| {
            let train = generate_articles(&cc, "train", dc.train_articles, 1_000_000)?;
            let heldout = generate_articles(&cc, "heldout", dc.heldout_articles, 2_000_000)?;
            let mut rng = rng_from(seed);
            let mut model = DisentanglerModel::<f64>::new(&dc, cc.token_dim, &mut rng)?;
            let mut curve = TrainingCurve::default();
            if !dc.skip_pretraining {
                let n = dc.pretrain_articles.min(train.len());
                curve.pretrain = model.pretrain(&train[..n], dc.pretrain_steps, dc.batch_size, dc.pretrain_lr, &mut rng)?;
            }
            let main = model.train(&train, &dc, &mut rng)?;
            curve.epochs = main.epochs;
            curve.updates = main.updates;
            let heldout = model.evaluate(&heldout)?;
            log::info!(
                "disentangler held-out accuracy D_p {:.3}, D_f {:.3}, recon {:.4} / var {:.4}",
                heldout.accuracy_p,
                heldout.accuracy_f,
                heldout.recon_mse,
                heldout.c_variance
            );
            model.save(&self.path("model"), &dc)?;
            self.write(
                "training.json",
                serde_json::to_string_pretty(&TrainingReport { curve, heldout })?,
            )?;
            let mut out: Vec<String> = MODEL_FILES.iter().map(|s| s.to_string()).collect();
            out.push("training.json".into());
            Ok(out)
        })
    }

    pub fn build_cpc(&self) -> Result<StageOutcome> {
        let mut inputs: Vec<String> = vec!["corpus.txt".into(), "population.json".into(), "landmarks.json".into()];
        inputs.extend(MODEL_FILES.iter().map(|s| s.to_string()));
        self.stage("build-cpc", "build-cpc", &(), &inputs, |_| {
            let corpus = self.load_corpus()?;
            let pop = self.load_population()?;
            let landmarks = self.load_landmarks()?;
            let model = self.load_model()?;
            let ls = build_landmark_set(&model, &landmarks, &corpus)?;
            let table = polarized_table(&model, &corpus)?;
            let cpcs = population_cpcs(&table, &pop, &ls)?;
            self.write("cpc.csv", cpc_csv(&cpcs, &pop, &ls.names))?;
            self.write("landmarks.csv", landmark_csv(&ls))?;
            Ok(vec!["cpc.csv".into(), "landmarks.csv".into()])
        })
    }

    pub fn recommend(&self, method: Method) -> Result<StageOutcome> {
        let mut inputs: Vec<String> = vec!["corpus.txt".into(), "population.json".into()];
        if method == Method::Fnpc {
            inputs.push("cpc.csv".into());
        }
        let label = format!("recommend-{method}");
        let rc = self.config.recommender.clone();
        self.stage("recommend", &label, &(&rc, method), &inputs, |_| {
            let corpus = self.load_corpus()?;
            let pop = self.load_population()?;
            let x = RatingMatrix::from_population(&pop, corpus.len())?;
            let corr = match method {
                Method::Fnpc => {
                    let cpcs = parse_cpc_csv(&self.read_string("cpc.csv")?)?;
                    if cpcs.len() != pop.len() {
                        return Err(Error::DimensionMismatch {
                            context: "cpc rows",
                            expected: pop.len(),
                            got: cpcs.len(),
                        });
                    }
                    cpc_correlation(&cpcs)?
                }
                _ => rating_pearson(&x),
            };
            let run = run_method(method, &pop, &corr, &x, &corpus, &rc)?;
            let g = format!("graphs_{method}.csv");
            let r = format!("recommendations_{method}.csv");
            let w = format!("weights_{method}.json");
            self.write(&g, graphs_csv(&[&run.furthest, &run.nearest]))?;
            self.write(&r, recommendations_csv(method, &run.recommendations))?;
            self.write(&w, serde_json::to_string(&run.weights)?)?;
            Ok(vec![g, r, w])
        })
    }

    pub fn evaluate(&self) -> Result<MetricsReport> {
        let methods = self.config.methods.clone();
        let mut inputs: Vec<String> = vec!["corpus.txt".into(), "population.json".into()];
        for m in &methods {
            inputs.push(format!("recommendations_{m}.csv"));
            inputs.push(format!("graphs_{m}.csv"));
        }
        self.stage("evaluate", "evaluate", &methods, &inputs, |_| {
            let corpus = self.load_corpus()?;
            let pop = self.load_population()?;
            let mut loaded = Vec::new();
            for &m in &methods {
                let recs = parse_recommendations_csv(&self.read_string(&format!("recommendations_{m}.csv"))?, &corpus, pop.len())?;
                let (f, _) = parse_graphs_csv(&self.read_string(&format!("graphs_{m}.csv"))?, pop.len())?;
                loaded.push((m, recs, f));
            }
            let results: Vec<MethodResult> = loaded
                .iter()
                .map(|(m, recs, f)| MethodResult {
                    method: *m,
                    recommendations: recs,
                    furthest: Some(f),
                })
                .collect();
            let report = build_report(&pop, &corpus, &results)?;
            let mut out = vec!["report.csv".to_string(), "report.json".to_string()];
            self.write("report.csv", report_csv(&report))?;
            self.write("report.json", serde_json::to_string_pretty(&report)?)?;
            for (m, dist) in &report.fn_distribution {
                let name = format!("fn_distribution_{m}.csv");
                self.write(&name, fn_distribution_csv(&pop.typology_names, dist))?;
                out.push(name);
            }
            Ok(out)
        })?;
        self.load_report()
    }

    pub fn load_report(&self) -> Result<MetricsReport> {
        Ok(serde_json::from_slice(&self.read("report.json")?)?)
    }

    pub fn run_all(&self) -> Result<MetricsReport> {
        self.gen_corpus()?;
        self.simulate()?;
        self.train_disentangler()?;
        if self.config.methods.contains(&Method::Fnpc) {
            self.build_cpc()?;
        }
        for &m in &self.config.methods {
            self.recommend(m)?;
        }
        self.evaluate()
    }
}

pub fn run_pipeline(config: RunConfig) -> Result<MetricsReport> {
    Pipeline::new(config)?.run_all()
}
