//! Bias disentangling autoencoder.
//!
//! Tokens are pooled by attention into `c` (dim M), encoded to a latent
//! (dim m) and decoded twice into a polarized half `D_p` and a polarity-free
//! half `D_f` (dim M/2 each). A softmax classifier over the three bias
//! classes is trained on `D_p`, while `D_f` is pushed to make that same
//! classifier fail. `[D_p ; D_f]` reconstructs `c`.
//!
//! Credit assignment per loss term:
//! - classification `-ln C(D_p)_j`: classifier, polarized decoder, encoder;
//! - confusion `-1 / ln C(D_f)_j`: free decoder and encoder (classifier held);
//! - reconstruction `1/2 |c - [D_p ; D_f]|^2`: encoder and both decoders.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::ArticleRecord;
use crate::error::{Error, Result};
use crate::nn::{
    self, accumulate, Activation, AttentionPool, AttentionSpec, DenseNet, DenseSpec, Optimizer,
    ParamManifest, Parametrized,
};
use crate::scalar::Scalar;
use crate::seed::Rng;

pub const N_CLASSES: usize = 3;
/// Probability clamp for the classification and confusion terms.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisentanglerConfig {
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub encoder_hidden: Option<usize>,
    pub decoder_hidden: Option<usize>,
    pub classifier_hidden: Option<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Articles visited per epoch.
    pub epoch_articles: usize,
    pub pretrain_articles: usize,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub skip_pretraining: bool,
    /// Size of the synthetic training split.
    pub train_articles: usize,
    /// Size of the held-out evaluation split.
    pub heldout_articles: usize,
}

impl Default for DisentanglerConfig {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            latent_dim: 128,
            heads: 8,
            dropout: 0.1,
            encoder_hidden: None,
            decoder_hidden: None,
            classifier_hidden: None,
            lr: 0.001,
            batch_size: 50,
            epochs: 32,
            epoch_articles: 1000,
            pretrain_articles: 3000,
            pretrain_steps: 60,
            pretrain_lr: 0.001,
            skip_pretraining: false,
            train_articles: 4000,
            heldout_articles: 1000,
        }
    }
}

impl DisentanglerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim % 2 != 0 || self.embed_dim == 0 {
            return Err(Error::validation("embed_dim must be even and positive"));
        }
        if self.latent_dim == 0 || self.batch_size == 0 {
            return Err(Error::validation("latent_dim and batch_size must be positive"));
        }
        Ok(())
    }

    fn half(&self) -> usize {
        self.embed_dim / 2
    }
}

/// Attention, encoder, two decoders and the polarity classifier.
#[derive(Clone, Debug)]
pub struct DisentanglerModel<T> {
    pub attention: AttentionPool<T>,
    pub encoder: DenseNet<T>,
    pub decoder_p: DenseNet<T>,
    pub decoder_f: DenseNet<T>,
    pub classifier: DenseNet<T>,
}

impl<T: Scalar> PartialEq for DisentanglerModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.attention == other.attention
            && self.encoder.spec() == other.encoder.spec()
            && self.encoder.params() == other.encoder.params()
            && self.decoder_p.spec() == other.decoder_p.spec()
            && self.decoder_p.params() == other.decoder_p.params()
            && self.decoder_f.spec() == other.decoder_f.spec()
            && self.decoder_f.params() == other.decoder_f.params()
            && self.classifier.spec() == other.classifier.spec()
            && self.classifier.params() == other.classifier.params()
    }
}

/// `c`, `D_p` and `D_f` for one article.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T> {
    pub c: Array1<T>,
    pub d_p: Array1<T>,
    pub d_f: Array1<T>,
}

/// Articles with one-hot bias labels.
#[derive(Clone, Debug)]
pub struct TrainBatch<'a> {
    pub articles: Vec<&'a ArticleRecord>,
    pub labels: Vec<[f64; N_CLASSES]>,
}

impl<'a> TrainBatch<'a> {
    pub fn new(articles: impl IntoIterator<Item = &'a ArticleRecord>) -> Self {
        let articles: Vec<_> = articles.into_iter().collect();
        let labels = articles
            .iter()
            .map(|a| {
                let mut y = [0.0; N_CLASSES];
                y[a.class_index()] = 1.0;
                y
            })
            .collect();
        Self { articles, labels }
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    fn class(&self, i: usize) -> usize {
        self.labels[i]
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot label")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub class: f64,
    pub conf: f64,
    pub recon: f64,
}

impl LossTerms {
    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("L_class", self.class),
            ("L_conf", self.conf),
            ("L_recon", self.recon),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss(name));
            }
        }
        Ok(())
    }
}

/// Per-epoch means of the loss components.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub pretrain: Vec<f64>,
    pub epochs: Vec<LossTerms>,
    pub updates: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy_p: f64,
    pub accuracy_f: f64,
    pub recon_mse: f64,
    pub c_variance: f64,
}

/// `-ln p` and its derivative, with `p` clamped to `[eps, 1 - eps]`.
pub fn class_term(p: f64) -> (f64, f64) {
    let q = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let d = if q == p { -1.0 / p } else { 0.0 };
    (-q.ln(), d)
}

/// `-1 / ln p` and its derivative, with `p` clamped to `[eps, 1 - eps]`.
pub fn conf_term(p: f64) -> (f64, f64) {
    let q = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let l = q.ln();
    let d = if q == p { 1.0 / (q * l * l) } else { 0.0 };
    (-1.0 / l, d)
}

fn tokens_as<T: Scalar>(a: &ArticleRecord) -> ndarray::Array2<T> {
    a.token_features.mapv(T::lit)
}

fn argmax<T: Scalar>(v: &Array1<T>) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Flat gradients for each trainable sub-network.
struct Grads<T> {
    encoder: Vec<T>,
    decoder_p: Vec<T>,
    decoder_f: Vec<T>,
    classifier: Vec<T>,
}

impl<T: Scalar> DisentanglerModel<T> {
    pub fn new(config: &DisentanglerConfig, token_dim: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let m_big = config.embed_dim;
        let m = config.latent_dim;
        let half = config.half();
        let enc_h = config.encoder_hidden.unwrap_or((m_big + m) / 2);
        let dec_h = config.decoder_hidden.unwrap_or((m + half) / 2);
        let cls_h = config.classifier_hidden.unwrap_or((half + N_CLASSES) / 2);
        let attention = AttentionPool::new(
            &AttentionSpec {
                token_dim,
                output_dim: m_big,
                heads: config.heads,
                dropout: config.dropout,
            },
            rng,
        )?;
        let encoder = DenseNet::new(&[m_big, enc_h, m], Activation::Linear, true, rng)?;
        let decoder_p = DenseNet::new(&[m, dec_h, half], Activation::Linear, true, rng)?;
        let decoder_f = DenseNet::new(&[m, dec_h, half], Activation::Linear, true, rng)?;
        let classifier = DenseNet::new(&[half, cls_h, N_CLASSES], Activation::Softmax, false, rng)?;
        Ok(Self {
            attention,
            encoder,
            decoder_p,
            decoder_f,
            classifier,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.attention.output_dim()
    }

    pub fn half_dim(&self) -> usize {
        self.decoder_p.output_dim()
    }

    /// Deterministic `c` for an article.
    pub fn pool(&self, article: &ArticleRecord) -> Result<Array1<T>> {
        self.attention.infer(tokens_as::<T>(article).view())
    }

    /// Decoder outputs for a pooled vector.
    pub fn decode(&self, c: ArrayView1<T>) -> Result<(Array1<T>, Array1<T>)> {
        let z = self.encoder.infer(c)?;
        Ok((self.decoder_p.infer(z.view())?, self.decoder_f.infer(z.view())?))
    }

    pub fn embed(&self, article: &ArticleRecord) -> Result<Embedding<T>> {
        let c = self.pool(article)?;
        let (d_p, d_f) = self.decode(c.view())?;
        Ok(Embedding { c, d_p, d_f })
    }

    pub fn classify(&self, d: ArrayView1<T>) -> Result<Array1<T>> {
        self.classifier.infer(d)
    }

    /// Mean loss terms over a batch, evaluated deterministically.
    pub fn loss(&self, batch: &TrainBatch) -> Result<LossTerms> {
        if batch.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        let cs = batch
            .articles
            .iter()
            .map(|a| self.pool(a))
            .collect::<Result<Vec<_>>>()?;
        let classes: Vec<usize> = (0..batch.len()).map(|i| batch.class(i)).collect();
        let (terms, _) = self.loss_and_grads(&cs, &classes, false)?;
        Ok(terms)
    }

    /// Loss terms over pooled inputs and, if asked, the credit-assigned
    /// gradients of their mean.
    fn loss_and_grads(
        &self,
        cs: &[Array1<T>],
        classes: &[usize],
        want_grads: bool,
    ) -> Result<(LossTerms, Option<Grads<T>>)> {
        let n = cs.len();
        let inv_n = 1.0 / n as f64;
        let half = self.half_dim();
        let mut terms = LossTerms::default();
        let mut grads = want_grads.then(|| Grads {
            encoder: vec![T::zero(); self.encoder.num_params()],
            decoder_p: vec![T::zero(); self.decoder_p.num_params()],
            decoder_f: vec![T::zero(); self.decoder_f.num_params()],
            classifier: vec![T::zero(); self.classifier.num_params()],
        });
        for (c, &j) in cs.iter().zip(classes) {
            let (z, enc_tape) = self.encoder.forward_tape(c.view())?;
            let (dp, tape_p) = self.decoder_p.forward_tape(z.view())?;
            let (df, tape_f) = self.decoder_f.forward_tape(z.view())?;
            let (prob_p, tape_cp) = self.classifier.forward_tape(dp.view())?;
            let (prob_f, tape_cf) = self.classifier.forward_tape(df.view())?;

            let (l_class, d_class) = class_term(prob_p[j].to_f64_lossy());
            let (l_conf, d_conf) = conf_term(prob_f[j].to_f64_lossy());
            let c_p = c.slice(s![..half]);
            let c_f = c.slice(s![half..]);
            let r_p = &dp - &c_p;
            let r_f = &df - &c_f;
            let l_recon = 0.5 * (r_p.iter().chain(r_f.iter()).map(|v| (*v * *v).to_f64_lossy()).sum::<f64>());
            terms.class += l_class * inv_n;
            terms.conf += l_conf * inv_n;
            terms.recon += l_recon * inv_n;

            if let Some(g) = grads.as_mut() {
                let w = T::lit(inv_n);
                let mut up_p = Array1::zeros(N_CLASSES);
                up_p[j] = T::lit(d_class * inv_n);
                let (g_cls, g_dp_class) = self.classifier.backward_tape(&tape_cp, up_p.view())?;
                accumulate(&mut g.classifier, &g_cls);

                let mut up_f = Array1::zeros(N_CLASSES);
                up_f[j] = T::lit(d_conf * inv_n);
                // classifier parameters are held fixed for the confusion term
                let (_, g_df_conf) = self.classifier.backward_tape(&tape_cf, up_f.view())?;

                let g_dp = g_dp_class + &(&r_p * w);
                let g_df = g_df_conf + &(&r_f * w);
                let (gp, gz_p) = self.decoder_p.backward_tape(&tape_p, g_dp.view())?;
                let (gf, gz_f) = self.decoder_f.backward_tape(&tape_f, g_df.view())?;
                accumulate(&mut g.decoder_p, &gp);
                accumulate(&mut g.decoder_f, &gf);
                let (ge, _) = self.encoder.backward_tape(&enc_tape, (gz_p + gz_f).view())?;
                accumulate(&mut g.encoder, &ge);
            }
        }
        terms.total = terms.class + terms.conf + terms.recon;
        terms.check()?;
        Ok((terms, grads))
    }

    /// Pretrains attention and encoder to make latents of opposing-class
    /// articles orthogonal: minimises the mean squared cosine between the
    /// latents of random (left, right) pairs. Returns the per-step loss.
    pub fn pretrain(
        &mut self,
        articles: &[ArticleRecord],
        steps: usize,
        pairs_per_step: usize,
        lr: f64,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        let left: Vec<&ArticleRecord> = articles.iter().filter(|a| a.bias_class() < 0).collect();
        let right: Vec<&ArticleRecord> = articles.iter().filter(|a| a.bias_class() > 0).collect();
        if left.is_empty() || right.is_empty() {
            return Err(Error::Pretraining(format!(
                "no opposing pairs ({} left, {} right articles)",
                left.len(),
                right.len()
            )));
        }
        let mut opt_att = Optimizer::<T>::adam(lr);
        let mut opt_enc = Optimizer::<T>::adam(lr);
        let mut curve = Vec::with_capacity(steps);
        let inv = T::lit(1.0 / pairs_per_step.max(1) as f64);
        for _ in 0..steps {
            let mut g_att = vec![T::zero(); self.attention.num_params()];
            let mut g_enc = vec![T::zero(); self.encoder.num_params()];
            let mut loss = 0.0;
            for _ in 0..pairs_per_step {
                let a = left[rng.random_range(0..left.len())];
                let b = right[rng.random_range(0..right.len())];
                let (ca, ta) = self.attention.forward_tape(tokens_as::<T>(a).view(), Some(rng))?;
                let (cb, tb) = self.attention.forward_tape(tokens_as::<T>(b).view(), Some(rng))?;
                let (za, ea) = self.encoder.forward_tape(ca.view())?;
                let (zb, eb) = self.encoder.forward_tape(cb.view())?;
                let (cos, ga, gb) = cosine_with_grads(&za, &zb);
                loss += (cos * cos).to_f64_lossy();
                let k = T::lit(2.0) * cos * inv;
                for (z_grad, enc_tape, att_tape) in [(ga, &ea, &ta), (gb, &eb, &tb)] {
                    let (ge, gc) = self.encoder.backward_tape(enc_tape, (z_grad * k).view())?;
                    accumulate(&mut g_enc, &ge);
                    let gatt = self.attention.backward_tape(att_tape, &gc)?;
                    accumulate(&mut g_att, &gatt);
                }
            }
            opt_att.step(&mut self.attention, &g_att)?;
            opt_enc.step(&mut self.encoder, &g_enc)?;
            curve.push(loss / pairs_per_step.max(1) as f64);
        }
        Ok(curve)
    }

    /// Main training with the attention layer frozen. Returns per-epoch
    /// loss means; aborts if the total loss stays above ten times its
    /// initial value for three consecutive epochs.
    pub fn train(
        &mut self,
        articles: &[ArticleRecord],
        config: &DisentanglerConfig,
        rng: &mut Rng,
    ) -> Result<TrainingCurve> {
        if articles.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let cs = articles
            .iter()
            .map(|a| self.pool(a))
            .collect::<Result<Vec<_>>>()?;
        let classes: Vec<usize> = articles.iter().map(|a| a.class_index()).collect();
        let (initial, _) = self.loss_and_grads(&cs, &classes, false)?;

        let mut opts: [Optimizer<T>; 4] = std::array::from_fn(|_| Optimizer::adam(config.lr));
        let per_epoch = config.epoch_articles.min(articles.len()).max(1);
        let mut order: Vec<usize> = (0..articles.len()).collect();
        let mut cursor = order.len();
        let mut curve = TrainingCurve::default();
        let mut over = 0;
        for epoch in 0..config.epochs {
            let mut epoch_terms = LossTerms::default();
            let mut seen = 0;
            let mut taken = Vec::with_capacity(per_epoch);
            while taken.len() < per_epoch {
                if cursor == order.len() {
                    order.shuffle(rng);
                    cursor = 0;
                }
                taken.push(order[cursor]);
                cursor += 1;
            }
            for chunk in taken.chunks(config.batch_size) {
                let bc: Vec<Array1<T>> = chunk.iter().map(|&i| cs[i].clone()).collect();
                let bl: Vec<usize> = chunk.iter().map(|&i| classes[i]).collect();
                let (terms, grads) = self.loss_and_grads(&bc, &bl, true)?;
                let g = grads.expect("gradients requested");
                opts[0].step(&mut self.encoder, &g.encoder)?;
                opts[1].step(&mut self.decoder_p, &g.decoder_p)?;
                opts[2].step(&mut self.decoder_f, &g.decoder_f)?;
                opts[3].step(&mut self.classifier, &g.classifier)?;
                curve.updates += 1;
                let w = chunk.len() as f64;
                epoch_terms.class += terms.class * w;
                epoch_terms.conf += terms.conf * w;
                epoch_terms.recon += terms.recon * w;
                seen += chunk.len();
            }
            let inv = 1.0 / seen as f64;
            epoch_terms.class *= inv;
            epoch_terms.conf *= inv;
            epoch_terms.recon *= inv;
            epoch_terms.total = epoch_terms.class + epoch_terms.conf + epoch_terms.recon;
            curve.epochs.push(epoch_terms);
            if epoch_terms.total > 10.0 * initial.total {
                over += 1;
                if over >= 3 {
                    return Err(Error::Diverged {
                        epoch,
                        loss: epoch_terms.total,
                        initial: initial.total,
                    });
                }
            } else {
                over = 0;
            }
        }
        Ok(curve)
    }

    /// Classifier accuracy on both halves and reconstruction quality.
    pub fn evaluate(&self, articles: &[ArticleRecord]) -> Result<Evaluation> {
        if articles.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let m = self.embed_dim();
        let n = articles.len() as f64;
        let mut hits_p = 0usize;
        let mut hits_f = 0usize;
        let mut sq_err = 0.0;
        let mut sum = vec![0.0; m];
        let mut sum_sq = vec![0.0; m];
        for a in articles {
            let e = self.embed(a)?;
            let j = a.class_index();
            hits_p += usize::from(argmax(&self.classify(e.d_p.view())?) == j);
            hits_f += usize::from(argmax(&self.classify(e.d_f.view())?) == j);
            for (i, &ci) in e.c.iter().enumerate() {
                let rec = if i < m / 2 { e.d_p[i] } else { e.d_f[i - m / 2] };
                let c = ci.to_f64_lossy();
                sq_err += (c - rec.to_f64_lossy()).powi(2);
                sum[i] += c;
                sum_sq[i] += c * c;
            }
        }
        let c_variance = sum
            .iter()
            .zip(&sum_sq)
            .map(|(s, q)| q / n - (s / n).powi(2))
            .sum::<f64>()
            / m as f64;
        Ok(Evaluation {
            accuracy_p: hits_p as f64 / n,
            accuracy_f: hits_f as f64 / n,
            recon_mse: sq_err / (n * m as f64),
            c_variance,
        })
    }

    /// Writes one parameter file per sub-network plus `model.json`.
    pub fn save(&self, dir: &Path, config: &DisentanglerConfig) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let att = serde_json::to_value(self.attention.spec())?;
        nn::write_params(
            dir,
            "attention",
            &manifest("attention", self.attention.num_params(), att),
            &self.attention.params(),
        )?;
        for (name, net) in self.dense_nets() {
            let arch = serde_json::to_value(net.spec())?;
            nn::write_params(dir, name, &manifest(name, net.num_params(), arch), &net.params())?;
        }
        let path = dir.join("model.json");
        let text = serde_json::to_string_pretty(&ModelManifest {
            embed_dim: self.embed_dim(),
            latent_dim: self.encoder.output_dim(),
            half_dim: self.half_dim(),
            token_dim: self.attention.token_dim(),
            config: config.clone(),
        })?;
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<(Self, DisentanglerConfig)> {
        let path = dir.join("model.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mm: ModelManifest = serde_json::from_str(&text)?;
        let (am, ap) = nn::read_params::<T>(dir, "attention")?;
        let spec: AttentionSpec = serde_json::from_value(am.architecture)?;
        if spec.token_dim != mm.token_dim || spec.output_dim != mm.embed_dim {
            return Err(Error::validation("attention checkpoint does not match model.json"));
        }
        let mut attention = AttentionPool::zeros(&spec)?;
        attention.set_params(&ap)?;
        let load_dense = |name: &str| -> Result<DenseNet<T>> {
            let (m, p) = nn::read_params::<T>(dir, name)?;
            let spec: DenseSpec = serde_json::from_value(m.architecture)?;
            let mut net = DenseNet::from_spec(&spec)?;
            net.set_params(&p)?;
            Ok(net)
        };
        let model = Self {
            attention,
            encoder: load_dense("encoder")?,
            decoder_p: load_dense("decoder_p")?,
            decoder_f: load_dense("decoder_f")?,
            classifier: load_dense("classifier")?,
        };
        Ok((model, mm.config))
    }

    fn dense_nets(&self) -> [(&'static str, &DenseNet<T>); 4] {
        [
            ("encoder", &self.encoder),
            ("decoder_p", &self.decoder_p),
            ("decoder_f", &self.decoder_f),
            ("classifier", &self.classifier),
        ]
    }
}

fn manifest(name: &str, count: usize, architecture: serde_json::Value) -> ParamManifest {
    ParamManifest {
        name: name.into(),
        count,
        architecture,
    }
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    embed_dim: usize,
    latent_dim: usize,
    half_dim: usize,
    token_dim: usize,
    config: DisentanglerConfig,
}

/// Cosine similarity and its gradients w.r.t. both arguments.
pub fn cosine_with_grads<T: Scalar>(a: &Array1<T>, b: &Array1<T>) -> (T, Array1<T>, Array1<T>) {
    let eps = T::lit(1e-12);
    let na = a.dot(a).sqrt().max(eps);
    let nb = b.dot(b).sqrt().max(eps);
    let cos = a.dot(b) / (na * nb);
    let ga = b / (na * nb) - &(a * (cos / (na * na)));
    let gb = a / (na * nb) - &(b * (cos / (nb * nb)));
    (cos, ga, gb)
}
