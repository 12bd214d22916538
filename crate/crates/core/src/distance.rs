//! Distance and similarity kernels.
//!
//! Inputs and outputs are `f32`; accumulation happens in `f64` over eight
//! independent lanes so the reduction vectorizes without reassociating a
//! single serial sum.

use crate::error::{GateError, Result};

const LANES: usize = 8;

/// Squared Euclidean distance without dimension checks.
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..LANES {
            let d = xa[l] as f64 - xb[l] as f64;
            acc[l] += d * d;
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        let d = *x as f64 - *y as f64;
        acc[l] += d * d;
    }
    lane_sum(&acc) as f32
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += xa[l] as f64 * xb[l] as f64;
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[l] += *x as f64 * *y as f64;
    }
    lane_sum(&acc)
}

#[inline]
fn lane_sum(acc: &[f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Euclidean distance between two vectors of equal dimension.
pub fn l2_distance(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(GateError::invalid(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(l2_sq(a, b).sqrt())
}

/// Cosine similarity, clamped to `[-1, 1]`. Zero-norm inputs are rejected.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(GateError::invalid(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(GateError::invalid("cosine similarity of a zero-norm vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_l2(a: &[f32], b: &[f32]) -> f64 {
        let mut s = 0.0f64;
        for i in 0..a.len() {
            let d = a[i] as f64 - b[i] as f64;
            s += d * d;
        }
        s.sqrt()
    }

    #[test]
    fn l2_hand_cases() {
        assert_eq!(l2_distance(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(l2_distance(&[0.0], &[0.0, 1.0]), Err(GateError::InvalidArgument(_))));
    }

    #[test]
    fn cosine_hand_cases() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), -1.0);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-10.0f32..10.0, dim)
    }

    proptest! {
        #[test]
        fn l2_matches_naive_loop(a in vec_strategy(32), b in vec_strategy(32)) {
            let fast = l2_distance(&a, &b).unwrap() as f64;
            let slow = naive_l2(&a, &b);
            prop_assert!((fast - slow).abs() <= 1e-5 * slow.max(1e-12));
        }

        #[test]
        fn l2_triangle_inequality(a in vec_strategy(17), b in vec_strategy(17), c in vec_strategy(17)) {
            let ab = l2_distance(&a, &b).unwrap();
            let bc = l2_distance(&b, &c).unwrap();
            let ac = l2_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-5);
            prop_assert_eq!(ab, l2_distance(&b, &a).unwrap());
        }

        #[test]
        fn cosine_scale_invariant(a in vec_strategy(9), b in vec_strategy(9), c in 0.01f32..100.0) {
            prop_assume!(dot(&a, &a) > 1e-6 && dot(&b, &b) > 1e-6);
            let scaled: Vec<f32> = b.iter().map(|x| x * c).collect();
            let s1 = cosine_similarity(&a, &b).unwrap();
            let s2 = cosine_similarity(&a, &scaled).unwrap();
            prop_assert!((s1 - s2).abs() <= 1e-6);
        }
    }
}
