//! Univariate basis families and their derivatives.

pub mod activation;
pub mod bspline;
pub mod convert;
pub mod knots;
pub mod poly;
pub mod truncated;

use serde::{Deserialize, Serialize};

pub use activation::{sigmoid, silu, silu_deriv, silu_value, sine_basis};
pub use bspline::{bspline_eval, bspline_value, uniform_extended_grid, BSplineScratch};
pub use convert::{bspline_to_truncated, ConversionDomain, TruncatedExpansion};
pub use knots::{KnotMode, KnotSet, KnotSharing};
pub use poly::{poly_deriv, poly_eval, poly_value};
pub use truncated::{trunc_pow, truncated_power, truncated_power_deriv};

/// Spline order `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplineOrder(pub usize);

impl Default for SplineOrder {
    fn default() -> Self {
        SplineOrder(3)
    }
}
