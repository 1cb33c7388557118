//! Declarative model description used by configs and the CLI.

use serde::{Deserialize, Serialize};

use super::classifier::{build_classifier, HeadKind, HeadParams};
use super::kan::{KanConfig, ScaleMode};
use super::network::Network;
use super::trukan::TruKanConfig;
use crate::basis::knots::KnotMode;
use crate::error::{Error, Result};

fn d_grid() -> usize {
    8
}
fn d_order() -> usize {
    3
}
fn d_range() -> (f64, f64) {
    (-1.0, 1.0)
}
fn d_hidden() -> usize {
    64
}
fn d_knots() -> KnotMode {
    KnotMode::Fixed
}
fn d_scales() -> ScaleMode {
    ScaleMode::Pbt
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Normalized two-layer classifier head.
    Classifier {
        head: HeadKind,
        /// MLP hidden width; other heads are resized to its budget.
        #[serde(default = "d_hidden")]
        hidden: usize,
        #[serde(default)]
        params: HeadParams,
    },
    /// Stack of TruKAN layers `[in, hidden.., out]`.
    Trukan {
        hidden: Vec<usize>,
        #[serde(default = "d_grid")]
        grid: usize,
        #[serde(default = "d_order")]
        order: usize,
        #[serde(default = "d_range")]
        range: (f64, f64),
        #[serde(default = "d_knots")]
        knot_mode: KnotMode,
        #[serde(default)]
        individual: bool,
        #[serde(default)]
        bias: bool,
    },
    /// Stack of B-spline KAN layers `[in, hidden.., out]`.
    Kan {
        hidden: Vec<usize>,
        #[serde(default = "d_grid")]
        grid: usize,
        #[serde(default = "d_order")]
        order: usize,
        #[serde(default = "d_range")]
        range: (f64, f64),
        #[serde(default = "d_scales")]
        scales: ScaleMode,
    },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Classifier { head: HeadKind::Mlp, hidden: d_hidden(), params: HeadParams::default() }
    }
}

impl ModelSpec {
    /// The toy regression network: TruKAN `[2, 3, 1]`, three fixed shared
    /// knots, cubic, with output biases.
    pub fn toy_trukan() -> Self {
        ModelSpec::Trukan {
            hidden: vec![3],
            grid: 3,
            order: 3,
            range: d_range(),
            knot_mode: KnotMode::Fixed,
            individual: false,
            bias: true,
        }
    }

    pub fn build(&self, in_dim: usize, out_dim: usize, seed: u64) -> Result<Network> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("model", "input and output widths must be positive"));
        }
        let widths = |hidden: &[usize]| {
            let mut w = vec![in_dim];
            w.extend_from_slice(hidden);
            w.push(out_dim);
            w
        };
        match self {
            ModelSpec::Classifier { head, hidden, params } => {
                build_classifier(*head, in_dim, *hidden, out_dim, params, seed)
            }
            ModelSpec::Trukan { hidden, grid, order, range, knot_mode, individual, bias } => {
                let cfg = TruKanConfig {
                    range: *range,
                    knot_mode: *knot_mode,
                    individual: *individual,
                    bias: *bias,
                    ..TruKanConfig::new(1, 1, *grid, *order)
                };
                Network::trukan_stack(&widths(hidden), &cfg, seed)
            }
            ModelSpec::Kan { hidden, grid, order, range, scales } => {
                let cfg = KanConfig { range: *range, ..KanConfig::new(1, 1, *grid, *order, *scales) };
                Network::kan_stack(&widths(hidden), &cfg, seed)
            }
        }
    }
}
