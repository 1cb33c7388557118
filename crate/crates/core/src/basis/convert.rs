//! Change of basis from a B-spline expansion to truncated powers plus a
//! global polynomial.
//!
//! On an interval, a degree-`k` spline with simple knots is uniquely
//! `Σ_r a_r x^r + Σ_j c_j (x - t_j)_+^k` over the knots strictly inside
//! the interval. The coefficients are found by least squares on a dense
//! collocation grid, with the system's condition number reported.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bspline::{bspline_value, validate_knots};
use super::poly::poly_value;
use super::truncated::trunc_pow;
use crate::error::{Error, Result};

/// Systems whose (column-scaled) condition exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionDomain {
    /// `[t_k, t_n]`, where the B-splines form a partition of unity. The map
    /// between coefficient vectors is square and invertible here.
    #[default]
    Interior,
    /// `[t_0, t_last]`, the union of all supports.
    Support,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedExpansion {
    pub k: usize,
    pub knots: Vec<f64>,
    pub trunc_coeffs: Vec<f64>,
    /// `a_0..a_k`.
    pub poly: Vec<f64>,
    pub domain: (f64, f64),
    pub condition: f64,
}

impl TruncatedExpansion {
    pub fn value(&self, x: f64) -> f64 {
        let k = self.k as u32;
        poly_value(&self.poly, x)
            + self
                .knots
                .iter()
                .zip(&self.trunc_coeffs)
                .map(|(&t, &c)| c * trunc_pow(x, t, k))
                .sum::<f64>()
    }
}

/// Collocation points per knot interval.
fn samples_per_interval(k: usize) -> usize {
    4 * (k + 1)
}

pub fn bspline_to_truncated(
    coeffs_b: &[f64],
    knots: &[f64],
    k: usize,
    domain: ConversionDomain,
) -> Result<TruncatedExpansion> {
    let n = validate_knots(knots, k)?;
    if coeffs_b.len() != n {
        return Err(Error::invalid(
            "bspline_to_truncated",
            format!("{} coefficients for {n} basis functions", coeffs_b.len()),
        ));
    }
    let (lo, hi) = match domain {
        ConversionDomain::Interior => (knots[k], knots[n]),
        ConversionDomain::Support => (knots[0], knots[knots.len() - 1]),
    };
    if !(lo < hi) {
        return Err(Error::invalid(
            "bspline_to_truncated",
            format!("empty conversion domain [{lo}, {hi}]"),
        ));
    }
    let inner: Vec<f64> = knots.iter().copied().filter(|&t| t > lo && t < hi).collect();
    if inner.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid(
            "bspline_to_truncated",
            "repeated interior knots lower the continuity below what truncated powers express",
        ));
    }

    // breakpoints of the domain, sampled strictly inside each piece
    let mut breaks = vec![lo];
    breaks.extend(&inner);
    breaks.push(hi);
    let per = samples_per_interval(k);
    let xs: Vec<f64> = breaks
        .windows(2)
        .flat_map(|w| (0..per).map(move |s| w[0] + (w[1] - w[0]) * (s as f64 + 0.5) / per as f64))
        .collect();

    let ncol = k + 1 + inner.len();
    let ku = k as u32;
    let mut a = DMatrix::<f64>::zeros(xs.len(), ncol);
    let mut b = DVector::<f64>::zeros(xs.len());
    for (r, &x) in xs.iter().enumerate() {
        let mut p = 1.0;
        for c in 0..=k {
            a[(r, c)] = p;
            p *= x;
        }
        for (j, &t) in inner.iter().enumerate() {
            a[(r, k + 1 + j)] = trunc_pow(x, t, ku);
        }
        b[r] = bspline_value(coeffs_b, knots, k, x)?;
    }

    let scales: Vec<f64> = (0..ncol)
        .map(|c| {
            let s = a.column(c).norm();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    for (c, s) in scales.iter().enumerate() {
        a.column_mut(c).scale_mut(1.0 / s);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let sol = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::invalid("bspline_to_truncated", e.to_string()))?;
    let coef: Vec<f64> = sol.iter().zip(&scales).map(|(v, s)| v / s).collect();
    Ok(TruncatedExpansion {
        k,
        knots: inner,
        trunc_coeffs: coef[k + 1..].to_vec(),
        poly: coef[..=k].to_vec(),
        domain: (lo, hi),
        condition,
    })
}
