use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// `Σ a_r x^r` by Horner's rule; `coeffs` is ordered `a_0..a_k`.
pub fn poly_value(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// `m`-th derivative `Σ_{r>=m} r!/(r-m)! a_r x^(r-m)`.
///
/// Returns 0 when `m` exceeds the degree.
pub fn poly_deriv(coeffs: &[f64], x: f64, m: usize) -> f64 {
    if m >= coeffs.len() {
        return 0.0;
    }
    coeffs[m..]
        .iter()
        .enumerate()
        .rev()
        .fold(0.0, |acc, (i, &a)| {
            let r = i + m;
            let falling: f64 = (0..m).map(|q| (r - q) as f64).product();
            acc * x + falling * a
        })
}

/// Elementwise polynomial with coefficients taken from `coeffs` in storage
/// order; differentiable in both `coeffs` and `x`.
pub fn poly_eval(tape: &mut Tape, coeffs: &Tensor, x: &Tensor) -> Result<Tensor> {
    if coeffs.is_empty() {
        return Err(Error::invalid("poly_eval", "empty coefficient vector"));
    }
    let c = coeffs.shared_data();
    let xd = x.shared_data();
    let out = xd.iter().map(|&v| poly_value(&c, v)).collect();
    let nc = c.len();
    tape.custom(
        "poly_eval",
        &[coeffs, x],
        x.shape(),
        out,
        Box::new(move |g, needs| {
            let gc = needs[0].then(|| {
                let mut gc = vec![0.0; nc];
                for (gi, &v) in g.iter().zip(xd.iter()) {
                    let mut p = 1.0;
                    for slot in gc.iter_mut() {
                        *slot += gi * p;
                        p *= v;
                    }
                }
                gc
            });
            let gx = needs[1].then(|| {
                g.iter()
                    .zip(xd.iter())
                    .map(|(gi, &v)| gi * poly_deriv(&c, v, 1))
                    .collect()
            });
            vec![gc, gx]
        }),
    )
}
