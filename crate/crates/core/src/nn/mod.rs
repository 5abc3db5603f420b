//! Small differentiable building blocks with hand-written exact gradients:
//! dense nets (LeakyReLU, residual and shortcut connections, softmax head),
//! learned-query attention pooling, Adam/SGD and flat parameter IO.

mod attention;
mod dense;
mod io;
mod optim;

pub use attention::{AttentionPool, AttentionSpec, AttentionTape};
pub use dense::{Activation, Dense, DenseNet, DenseSpec, DenseTape, LEAKY_SLOPE};
pub use io::{params_from_le_bytes, params_to_le_bytes, read_params, write_params, ParamManifest};
pub use optim::{Optimizer, OptimizerKind};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Anything with a flat, ordered parameter vector. Gradients returned by the
/// backward passes use the same ordering.
pub trait Parametrized<T: Scalar> {
    fn num_params(&self) -> usize;

    fn export_params(&self, out: &mut Vec<T>);

    /// Reads `num_params()` values from the front of `src`.
    fn import_params(&mut self, src: &[T]);

    fn params(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.num_params());
        self.export_params(&mut v);
        v
    }

    fn set_params(&mut self, src: &[T]) -> Result<()> {
        if src.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: self.num_params(),
                got: src.len(),
            });
        }
        self.import_params(src);
        Ok(())
    }

    fn params_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

pub(crate) fn push_slice<T: Scalar>(out: &mut Vec<T>, it: impl IntoIterator<Item = T>) {
    out.extend(it);
}

/// Adds `src` into `dst` elementwise.
pub fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

pub fn scale<T: Scalar>(v: &mut [T], k: T) {
    v.iter_mut().for_each(|x| *x *= k);
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Vector-Jacobian product of softmax: `p * (g - <p, g>)`.
pub fn softmax_backward<T: Scalar>(p: &[T], g: &[T]) -> Vec<T> {
    let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
    p.iter().zip(g).map(|(&a, &b)| a * (b - dot)).collect()
}
