use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// `(x - t)_+^k`. For `k = 0` this is the indicator `1{x >= t}` (closed on
/// the left, matching the half-open B-spline intervals).
#[inline]
pub fn trunc_pow(x: f64, t: f64, k: u32) -> f64 {
    let d = x - t;
    if k == 0 {
        return if d >= 0.0 { 1.0 } else { 0.0 };
    }
    if d <= 0.0 {
        0.0
    } else {
        d.powi(k as i32)
    }
}

/// First derivative of `(x - t)_+^k` with respect to `x`.
#[inline]
pub fn trunc_pow_dx(x: f64, t: f64, k: u32) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let d = x - t;
    if d <= 0.0 {
        0.0
    } else {
        k as f64 * d.powi(k as i32 - 1)
    }
}

/// `m`-th derivative in `x`: `k(k-1)...(k-m+1) (x - t)_+^(k-m)`.
///
/// At `m = k` this is the step `k! 1{x >= t}`.
pub fn truncated_power_deriv(x: f64, t: f64, k: u32, m: u32) -> Result<f64> {
    if m > k {
        return Err(Error::invalid(
            "truncated_power_deriv",
            format!("derivative order {m} exceeds spline order {k}"),
        ));
    }
    let falling: f64 = (0..m).map(|i| (k - i) as f64).product();
    Ok(falling * trunc_pow(x, t, k - m))
}

/// Elementwise `(x - t)_+^k`, differentiable in `x`.
pub fn truncated_power(tape: &mut Tape, x: &Tensor, t: f64, k: u32) -> Result<Tensor> {
    let out = x.data().iter().map(|&v| trunc_pow(v, t, k)).collect();
    let xd = x.shared_data();
    tape.custom(
        "truncated_power",
        &[x],
        x.shape(),
        out,
        Box::new(move |g, _| {
            let gx = g
                .iter()
                .zip(xd.iter())
                .map(|(gi, &v)| gi * trunc_pow_dx(v, t, k))
                .collect();
            vec![Some(gx)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn values() {
        assert_eq!(trunc_pow(0.2, 0.5, 3), 0.0);
        assert_eq!(trunc_pow(1.5, 0.5, 3), 1.0);
        assert_eq!(trunc_pow(1.0, 0.5, 2), 0.25);
        assert_eq!(trunc_pow(0.5, 0.5, 0), 1.0);
        assert_eq!(trunc_pow(0.49, 0.5, 0), 0.0);
    }

    #[test]
    fn derivatives() {
        assert_eq!(truncated_power_deriv(1.5, 0.5, 3, 1).unwrap(), 3.0);
        assert_eq!(truncated_power_deriv(1.5, 0.5, 3, 2).unwrap(), 6.0);
        assert_eq!(truncated_power_deriv(0.9, 0.5, 3, 3).unwrap(), 6.0);
        assert_eq!(truncated_power_deriv(0.1, 0.5, 3, 3).unwrap(), 0.0);
        assert_eq!(
            truncated_power_deriv(0.7, 0.5, 3, 0).unwrap(),
            trunc_pow(0.7, 0.5, 3)
        );
        assert!(truncated_power_deriv(1.0, 0.0, 2, 3).is_err());
    }

    /// m-th derivatives for m < k are continuous across the knot: central
    /// finite differences of order m taken just left and just right of t agree.
    #[test]
    fn continuity_below_order_k() {
        let t = 0.3;
        let k = 3;
        for m in 0..k {
            let h = 1e-3;
            let fd = |x: f64| -> f64 {
                // m-th central difference of trunc_pow
                let mut acc = 0.0;
                for i in 0..=m {
                    let c = binom(m, i) * if i % 2 == 0 { 1.0 } else { -1.0 };
                    acc += c * trunc_pow(x + (m as f64 / 2.0 - i as f64) * h, t, k);
                }
                acc / h.powi(m as i32)
            };
            let eps = 1e-7;
            let left = truncated_power_deriv(t - eps, t, k, m).unwrap();
            let right = truncated_power_deriv(t + eps, t, k, m).unwrap();
            assert!((left - right).abs() < 1e-6, "m={m}");
            // the finite-difference derivative is itself continuous at t
            assert!((fd(t - eps) - fd(t + eps)).abs() < 1e-6, "m={m}");
        }
    }

    fn binom(n: u32, k: u32) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn jump_of_k_factorial() {
        let t = 0.0;
        let below = truncated_power_deriv(-1e-9, t, 3, 3).unwrap();
        let above = truncated_power_deriv(1e-9, t, 3, 3).unwrap();
        assert_eq!(above - below, 6.0);
    }

    #[test]
    fn analytic_derivative_matches_autodiff() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-2.0..2.0);
            let t: f64 = rng.random_range(-2.0..2.0);
            if (x - t).abs() < 1e-9 {
                continue;
            }
            let mut tape = Tape::new();
            let xv = tape.leaf(&Tensor::scalar(x));
            let y = truncated_power(&mut tape, &xv, t, 3).unwrap();
            tape.backward(&y).unwrap();
            let auto = tape.grad(&xv).unwrap().item().unwrap();
            let analytic = truncated_power_deriv(x, t, 3, 1).unwrap();
            assert_eq!(auto, analytic);
        }
    }

    proptest! {
        #[test]
        fn vanishes_left_of_knot(x in -5.0f64..5.0, t in -5.0f64..5.0, k in 1u32..5) {
            prop_assume!(x < t);
            prop_assert_eq!(trunc_pow(x, t, k), 0.0);
        }
    }
}
