use crate::scalar::Scalar;

/// Two-pass Pearson correlation. `None` when either side has zero variance
/// or the lengths differ.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = T::lit(a.len() as f64);
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return None;
    }
    let r = sab / (saa.sqrt() * sbb.sqrt());
    Some(r.max(-T::one()).min(T::one()))
}

/// Shannon entropy of `q` divided by `ln(q.len())`, with `0 ln 0 = 0`.
pub fn normalized_entropy(q: &[f64]) -> f64 {
    if q.len() < 2 {
        return 0.0;
    }
    let h: f64 = q.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    (h / (q.len() as f64).ln()).clamp(0.0, 1.0)
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt())
}
