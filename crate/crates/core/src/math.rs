//! Small numerically-stable scalar and vector helpers.
//!
//! These are internal building blocks; the public API exposes losses and
//! gradients, not these primitives. All routines avoid overflow for
//! arguments of any magnitude.

/// Logistic sigmoid σ(z) = 1/(1+e^{-z}), stable for large |z|.
///
/// For z ≥ 0 uses 1/(1+e^{-z}); for z < 0 uses e^z/(1+e^z) so the
/// exponential argument is always non-positive.
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Softplus log(1 + e^z), stable for large |z|.
///
/// For z ≥ 30 the direct form overflows its intermediate well before the
/// result does; use the identity log(1+e^z) = z + log(1+e^{-z}).
pub(crate) fn softplus(z: f64) -> f64 {
    if z >= 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// log Σ e^{z_i} with the max subtracted before exponentiation.
///
/// Defined for non-empty slices; a single element returns itself exactly.
pub(crate) fn logsumexp(zs: &[f64]) -> f64 {
    debug_assert!(!zs.is_empty(), "logsumexp of empty slice");
    let m = zs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = zs.iter().map(|&z| (z - m).exp()).sum();
    m + sum.ln()
}

/// Dot product. Panics in debug builds on length mismatch.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len(), "dot length mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
