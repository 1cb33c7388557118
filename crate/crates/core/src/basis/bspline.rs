//! Cox–de Boor B-spline evaluation.
//!
//! Intervals are half-open, `[t_j, t_{j+1})`, so order-0 bases tile the
//! line without overlap and every basis vanishes at the right end of the
//! knot vector.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Checks that `knots` is non-decreasing and long enough for order `k`.
/// Returns the number of basis functions.
pub fn validate_knots(knots: &[f64], k: usize) -> Result<usize> {
    if knots.len() < k + 2 {
        return Err(Error::invalid(
            "bspline",
            format!(
                "{} knots are insufficient for order {k} (need at least {})",
                knots.len(),
                k + 2
            ),
        ));
    }
    if let Some(i) = knots.windows(2).position(|w| !(w[0] <= w[1])) {
        return Err(Error::invalid(
            "bspline",
            format!("knot vector decreases at index {i}"),
        ));
    }
    Ok(knots.len() - k - 1)
}

/// Uniform knot vector with `intervals` cells on `[lo, hi]`, extended by
/// `k` cells on each side. Yields `intervals + k` basis functions whose
/// partition of unity holds on `[lo, hi)`.
pub fn uniform_extended_grid(lo: f64, hi: f64, intervals: usize, k: usize) -> Vec<f64> {
    let h = (hi - lo) / intervals as f64;
    (0..=intervals + 2 * k)
        .map(|j| lo + (j as f64 - k as f64) * h)
        .collect()
}

/// Index `s` with `t_s <= x < t_{s+1}`, or `None` outside `[t_0, t_last)`.
fn find_span(knots: &[f64], x: f64) -> Option<usize> {
    let last = *knots.last()?;
    if !(x >= knots[0] && x < last) {
        return None;
    }
    // first index with t > x, minus one
    let s = knots.partition_point(|&t| t <= x) - 1;
    Some(s)
}

/// Scratch space for local evaluation of the `k + 1` bases that can be
/// nonzero at a point.
#[derive(Clone, Debug)]
pub struct BSplineScratch {
    k: usize,
    level: Vec<f64>,
    prev: Vec<f64>,
}

impl BSplineScratch {
    pub fn new(k: usize) -> Self {
        BSplineScratch {
            k,
            level: vec![0.0; k + 1],
            prev: vec![0.0; k + 1],
        }
    }

    /// Evaluates bases `B_{s-k..=s, k}(x)` into `values` (and their
    /// x-derivatives into `derivs` when given). Returns `s - k` as a signed
    /// offset, or `None` when `x` lies outside the knot vector. Entries whose
    /// index falls outside `0..n_basis` are zero and must be skipped.
    pub fn eval(
        &mut self,
        knots: &[f64],
        x: f64,
        values: &mut [f64],
        derivs: Option<&mut [f64]>,
    ) -> Option<isize> {
        let k = self.k;
        let s = find_span(knots, x)?;
        let m = knots.len();
        let t = |i: isize| -> Option<f64> {
            (i >= 0 && (i as usize) < m).then(|| knots[i as usize])
        };
        // level[q] holds B_{s-p+q, p}; start with B_{s,0} = 1.
        self.level.iter_mut().for_each(|v| *v = 0.0);
        self.level[0] = 1.0;
        let mut derivs = derivs;
        for p in 1..=k {
            std::mem::swap(&mut self.level, &mut self.prev);
            if p == k {
                if let Some(d) = derivs.as_deref_mut() {
                    // B'_{j,k} = k [B_{j,k-1}/(t_{j+k}-t_j) - B_{j+1,k-1}/(t_{j+k+1}-t_{j+1})]
                    for q in 0..=k {
                        let j = s as isize - k as isize + q as isize;
                        let left = if q >= 1 { self.prev[q - 1] } else { 0.0 };
                        let right = if q < k { self.prev[q] } else { 0.0 };
                        let mut v = 0.0;
                        if let (Some(tj), Some(tjk)) = (t(j), t(j + k as isize)) {
                            if tjk > tj {
                                v += left / (tjk - tj);
                            }
                        }
                        if let (Some(tj1), Some(tjk1)) = (t(j + 1), t(j + k as isize + 1)) {
                            if tjk1 > tj1 {
                                v -= right / (tjk1 - tj1);
                            }
                        }
                        d[q] = k as f64 * v;
                    }
                }
            }
            for q in 0..=p {
                let j = s as isize - p as isize + q as isize;
                // B_{j,p-1} sits at prev[q-1], B_{j+1,p-1} at prev[q]
                let bj = if q >= 1 { self.prev[q - 1] } else { 0.0 };
                let bj1 = if q < p { self.prev[q] } else { 0.0 };
                let mut v = 0.0;
                if bj != 0.0 {
                    if let (Some(tj), Some(tjp)) = (t(j), t(j + p as isize)) {
                        if tjp > tj {
                            v += (x - tj) / (tjp - tj) * bj;
                        }
                    }
                }
                if bj1 != 0.0 {
                    if let (Some(tj1), Some(tjp1)) = (t(j + 1), t(j + p as isize + 1)) {
                        if tjp1 > tj1 {
                            v += (tjp1 - x) / (tjp1 - tj1) * bj1;
                        }
                    }
                }
                self.level[q] = v;
            }
        }
        if k == 0 {
            if let Some(d) = derivs.as_deref_mut() {
                d[0] = 0.0;
            }
        }
        values[..=k].copy_from_slice(&self.level[..=k]);
        Some(s as isize - k as isize)
    }
}

/// All basis values at every element of `x`: a `x.len() x n_basis` matrix.
pub fn bspline_eval(x: &Tensor, knots: &[f64], k: usize) -> Result<Tensor> {
    let n = validate_knots(knots, k)?;
    let mut out = vec![0.0; x.len() * n];
    let mut scratch = BSplineScratch::new(k);
    let mut vals = vec![0.0; k + 1];
    for (row, &xv) in x.data().iter().enumerate() {
        if let Some(first) = scratch.eval(knots, xv, &mut vals, None) {
            for (q, v) in vals.iter().enumerate() {
                let j = first + q as isize;
                if j >= 0 && (j as usize) < n {
                    out[row * n + j as usize] = *v;
                }
            }
        }
    }
    Tensor::new(x.len(), n, out)
}

/// Value of `Σ_j c_j B_{j,k}(x)`.
pub fn bspline_value(coeffs: &[f64], knots: &[f64], k: usize, x: f64) -> Result<f64> {
    let n = validate_knots(knots, k)?;
    if coeffs.len() != n {
        return Err(Error::invalid(
            "bspline",
            format!("{} coefficients for {n} basis functions", coeffs.len()),
        ));
    }
    let mut scratch = BSplineScratch::new(k);
    let mut vals = vec![0.0; k + 1];
    let Some(first) = scratch.eval(knots, x, &mut vals, None) else {
        return Ok(0.0);
    };
    Ok(vals
        .iter()
        .enumerate()
        .filter_map(|(q, v)| {
            let j = first + q as isize;
            (j >= 0 && (j as usize) < n).then(|| v * coeffs[j as usize])
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook recursion, evaluated literally.
    fn naive(knots: &[f64], j: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            return if knots[j] <= x && x < knots[j + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[j + p] - knots[j];
        if d1 > 0.0 {
            v += (x - knots[j]) / d1 * naive(knots, j, p - 1, x);
        }
        let d2 = knots[j + p + 1] - knots[j + 1];
        if d2 > 0.0 {
            v += (knots[j + p + 1] - x) / d2 * naive(knots, j + 1, p - 1, x);
        }
        v
    }

    #[test]
    fn order_zero_is_interval_indicator() {
        let knots = [0.0, 1.0, 2.0, 3.0];
        let x = Tensor::column(&[0.0, 0.5, 1.0, 2.999, 3.0, -0.1]);
        let b = bspline_eval(&x, &knots, 0).unwrap();
        assert_eq!(b.row_slice(0), &[1.0, 0.0, 0.0]);
        assert_eq!(b.row_slice(1), &[1.0, 0.0, 0.0]);
        assert_eq!(b.row_slice(2), &[0.0, 1.0, 0.0]);
        assert_eq!(b.row_slice(3), &[0.0, 0.0, 1.0]);
        assert_eq!(b.row_slice(4), &[0.0, 0.0, 0.0]);
        assert_eq!(b.row_slice(5), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn hat_apex() {
        let b = bspline_eval(&Tensor::column(&[1.0]), &[0.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(b.data(), &[1.0]);
    }

    #[test]
    fn partition_of_unity_on_interior() {
        for k in 0..=3 {
            let knots = uniform_extended_grid(-1.0, 1.0, 8, k);
            let xs: Vec<f64> = (0..200).map(|i| -1.0 + (i as f64 + 0.5) / 100.0).collect();
            let b = bspline_eval(&Tensor::column(&xs), &knots, k).unwrap();
            for r in 0..xs.len() {
                let row = b.row_slice(r);
                assert!(row.iter().all(|&v| v >= 0.0));
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "k={k} x={} sum={s}", xs[r]);
            }
        }
    }

    #[test]
    fn local_matches_literal_recursion() {
        let knots = [-1.3, -0.7, -0.2, 0.0, 0.4, 0.45, 1.1, 1.6, 2.0];
        for k in 0..=3 {
            let n = knots.len() - k - 1;
            for i in 0..300 {
                let x = -1.5 + i as f64 * 0.012;
                let b = bspline_eval(&Tensor::column(&[x]), &knots, k).unwrap();
                for j in 0..n {
                    let want = naive(&knots, j, k, x);
                    assert!((b.get(0, j) - want).abs() < 1e-13, "k={k} j={j} x={x}");
                }
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let knots = uniform_extended_grid(-1.0, 1.0, 5, 3);
        let mut scratch = BSplineScratch::new(3);
        let (mut v, mut d, mut vp, mut vm) = ([0.0; 4], [0.0; 4], [0.0; 4], [0.0; 4]);
        let h = 1e-6;
        for i in 0..97 {
            let x = -0.97 + i as f64 * 0.02;
            let f0 = scratch.eval(&knots, x, &mut v, Some(&mut d)).unwrap();
            let f1 = scratch.eval(&knots, x + h, &mut vp, None).unwrap();
            let f2 = scratch.eval(&knots, x - h, &mut vm, None).unwrap();
            if f0 != f1 || f0 != f2 {
                continue; // straddles a knot
            }
            for q in 0..4 {
                let fd = (vp[q] - vm[q]) / (2.0 * h);
                assert!((fd - d[q]).abs() < 1e-6, "x={x} q={q}");
            }
        }
    }

    #[test]
    fn insufficient_or_decreasing_knots() {
        let x = Tensor::column(&[0.0]);
        assert!(bspline_eval(&x, &[0.0, 1.0], 1).is_err());
        assert!(bspline_eval(&x, &[0.0, 2.0, 1.0, 3.0], 1).is_err());
    }
}
