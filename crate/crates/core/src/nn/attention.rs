use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dense::outer;
use super::{push_slice, softmax, softmax_backward, Parametrized};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub token_dim: usize,
    pub output_dim: usize,
    pub heads: usize,
    pub dropout: f64,
}

/// Multi-head attention pooling of a `T x d_tok` token matrix into one
/// vector of dim `M`. Each head owns a learned query that attends over the
/// projected tokens; head outputs are concatenated and projected.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPool<T> {
    pub heads: usize,
    pub dropout: f64,
    /// `M x d_tok`, head `h` owns rows `h*dh..(h+1)*dh`.
    pub w_key: Array2<T>,
    pub w_value: Array2<T>,
    /// `heads x dh`
    pub query: Array2<T>,
    /// `M x M`
    pub w_out: Array2<T>,
    pub b_out: Array1<T>,
}

#[derive(Clone, Debug)]
pub struct AttentionTape<T> {
    tokens: Array2<T>,
    keys: Array2<T>,
    values: Array2<T>,
    /// Softmax weights before dropout, `heads x T`.
    weights: Array2<T>,
    /// Dropout multipliers (0 or 1/(1-p)), same shape as `weights`.
    mask: Option<Array2<T>>,
    pooled: Array1<T>,
}

fn glorot<T: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Array2<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::lit(rng.random_range(-limit..limit)))
}

impl<T: Scalar> AttentionPool<T> {
    pub fn new(spec: &AttentionSpec, rng: &mut Rng) -> Result<Self> {
        let mut pool = Self::zeros(spec)?;
        let m = spec.output_dim;
        let dh = m / spec.heads;
        pool.w_key = glorot(m, spec.token_dim, rng);
        pool.w_value = glorot(m, spec.token_dim, rng);
        pool.query = glorot(spec.heads, dh, rng);
        pool.w_out = glorot(m, m, rng);
        Ok(pool)
    }

    pub fn zeros(spec: &AttentionSpec) -> Result<Self> {
        if spec.heads == 0 || spec.output_dim % spec.heads != 0 {
            return Err(Error::validation(format!(
                "attention output dim {} not divisible by {} heads",
                spec.output_dim, spec.heads
            )));
        }
        if !(0.0..1.0).contains(&spec.dropout) {
            return Err(Error::validation("dropout must lie in [0, 1)"));
        }
        let m = spec.output_dim;
        Ok(Self {
            heads: spec.heads,
            dropout: spec.dropout,
            w_key: Array2::zeros((m, spec.token_dim)),
            w_value: Array2::zeros((m, spec.token_dim)),
            query: Array2::zeros((spec.heads, m / spec.heads)),
            w_out: Array2::zeros((m, m)),
            b_out: Array1::zeros(m),
        })
    }

    pub fn spec(&self) -> AttentionSpec {
        AttentionSpec {
            token_dim: self.token_dim(),
            output_dim: self.output_dim(),
            heads: self.heads,
            dropout: self.dropout,
        }
    }

    pub fn token_dim(&self) -> usize {
        self.w_key.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_key.nrows()
    }

    fn head_dim(&self) -> usize {
        self.output_dim() / self.heads
    }

    /// Pools `tokens`. Passing an rng enables dropout on the attention
    /// weights; `None` is deterministic inference.
    pub fn forward_tape(
        &self,
        tokens: ArrayView2<T>,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<(Array1<T>, AttentionTape<T>)> {
        if tokens.ncols() != self.token_dim() {
            return Err(Error::DimensionMismatch {
                context: "attention tokens",
                expected: self.token_dim(),
                got: tokens.ncols(),
            });
        }
        if tokens.nrows() == 0 {
            return Err(Error::validation("attention over zero tokens"));
        }
        let n_tok = tokens.nrows();
        let dh = self.head_dim();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let keys = tokens.dot(&self.w_key.t());
        let values = tokens.dot(&self.w_value.t());
        let mut weights = Array2::zeros((self.heads, n_tok));
        for h in 0..self.heads {
            let q = self.query.row(h);
            let kh = keys.slice(s![.., h * dh..(h + 1) * dh]);
            let scores: Vec<T> = kh.rows().into_iter().map(|k| k.dot(&q) * scale).collect();
            for (t, p) in softmax(&scores).into_iter().enumerate() {
                weights[(h, t)] = p;
            }
        }
        let mask = match dropout_rng {
            Some(rng) if self.dropout > 0.0 => {
                let keep = T::one() / T::lit(1.0 - self.dropout);
                let p = self.dropout;
                Some(Array2::from_shape_simple_fn((self.heads, n_tok), || {
                    if rng.random::<f64>() < p {
                        T::zero()
                    } else {
                        keep
                    }
                }))
            }
            _ => None,
        };
        let effective = match &mask {
            Some(m) => &weights * m,
            None => weights.clone(),
        };
        let mut pooled = Array1::zeros(self.output_dim());
        for h in 0..self.heads {
            let vh = values.slice(s![.., h * dh..(h + 1) * dh]);
            let oh = effective.row(h).dot(&vh);
            pooled.slice_mut(s![h * dh..(h + 1) * dh]).assign(&oh);
        }
        let c = self.w_out.dot(&pooled) + &self.b_out;
        Ok((
            c,
            AttentionTape {
                tokens: tokens.to_owned(),
                keys,
                values,
                weights,
                mask,
                pooled,
            },
        ))
    }

    pub fn infer(&self, tokens: ArrayView2<T>) -> Result<Array1<T>> {
        self.forward_tape(tokens, None).map(|(c, _)| c)
    }

    /// Flat parameter gradient for upstream gradient `g_c`.
    pub fn backward_tape(&self, tape: &AttentionTape<T>, g_c: &Array1<T>) -> Result<Vec<T>> {
        if g_c.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "attention backward",
                expected: self.output_dim(),
                got: g_c.len(),
            });
        }
        let dh = self.head_dim();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let n_tok = tape.tokens.nrows();
        let g_w_out = outer(g_c, &tape.pooled);
        let g_pooled = self.w_out.t().dot(g_c);

        let mut g_keys = Array2::<T>::zeros(tape.keys.raw_dim());
        let mut g_values = Array2::<T>::zeros(tape.values.raw_dim());
        let mut g_query = Array2::<T>::zeros(self.query.raw_dim());
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let g_o = g_pooled.slice(s![cols.clone()]);
            let a = tape.weights.row(h);
            let mut g_a = vec![T::zero(); n_tok];
            for t in 0..n_tok {
                let m = tape.mask.as_ref().map_or(T::one(), |m| m[(h, t)]);
                let a_eff = a[t] * m;
                let v = tape.values.slice(s![t, cols.clone()]);
                g_values.slice_mut(s![t, cols.clone()]).scaled_add(a_eff, &g_o);
                g_a[t] = g_o.dot(&v) * m;
            }
            let g_s = softmax_backward(a.as_slice().expect("contiguous"), &g_a);
            let q = self.query.row(h);
            for t in 0..n_tok {
                let gs = g_s[t] * scale;
                let k = tape.keys.slice(s![t, cols.clone()]);
                g_query.row_mut(h).scaled_add(gs, &k);
                g_keys.slice_mut(s![t, cols.clone()]).scaled_add(gs, &q);
            }
        }
        let g_w_key = g_keys.t().dot(&tape.tokens);
        let g_w_value = g_values.t().dot(&tape.tokens);

        let mut flat = Vec::with_capacity(self.num_params());
        push_slice(&mut flat, g_w_key.iter().copied());
        push_slice(&mut flat, g_w_value.iter().copied());
        push_slice(&mut flat, g_query.iter().copied());
        push_slice(&mut flat, g_w_out.iter().copied());
        push_slice(&mut flat, g_c.iter().copied());
        Ok(flat)
    }
}

impl<T: Scalar> Parametrized<T> for AttentionPool<T> {
    fn num_params(&self) -> usize {
        self.w_key.len() + self.w_value.len() + self.query.len() + self.w_out.len() + self.b_out.len()
    }

    fn export_params(&self, out: &mut Vec<T>) {
        push_slice(out, self.w_key.iter().copied());
        push_slice(out, self.w_value.iter().copied());
        push_slice(out, self.query.iter().copied());
        push_slice(out, self.w_out.iter().copied());
        push_slice(out, self.b_out.iter().copied());
    }

    fn import_params(&mut self, src: &[T]) {
        let mut it = src.iter().copied();
        for arr in [&mut self.w_key, &mut self.w_value, &mut self.query, &mut self.w_out] {
            arr.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
        }
        self.b_out.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
    }
}
