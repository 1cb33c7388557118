//! Two-layer classifier heads of ten kinds with matched parameter budgets.
//!
//! Every head starts with a batch-norm stage, followed by two layers of one
//! family. `-N` kinds insert a layer norm between the two layers. Hidden
//! widths of the non-MLP kinds are solved so that their trainable count
//! lands next to the MLP head's.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dense::Dense;
use super::dropout::Dropout;
use super::kan::{KanConfig, KanLayer, ScaleMode};
use super::network::{Layer, Network};
use super::norm::{BatchNorm, LayerNorm};
use super::params::ParamStore;
use super::sinekan::{SineKanConfig, SineKanLayer};
use super::trukan::{TruKanConfig, TruKanLayer};
use crate::basis::knots::KnotMode;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeadKind {
    #[serde(rename = "mlp")]
    Mlp,
    #[serde(rename = "mlp-n")]
    MlpN,
    #[serde(rename = "kan")]
    Kan,
    #[serde(rename = "kan-n")]
    KanN,
    #[serde(rename = "sinekan")]
    SineKan,
    #[serde(rename = "sinekan-n")]
    SineKanN,
    #[serde(rename = "trukan-s")]
    TruKanS,
    #[serde(rename = "trukan-sn")]
    TruKanSN,
    #[serde(rename = "trukan-i")]
    TruKanI,
    #[serde(rename = "trukan-in")]
    TruKanIN,
}

impl HeadKind {
    pub const ALL: [HeadKind; 10] = [
        HeadKind::Mlp,
        HeadKind::MlpN,
        HeadKind::Kan,
        HeadKind::KanN,
        HeadKind::SineKan,
        HeadKind::SineKanN,
        HeadKind::TruKanS,
        HeadKind::TruKanSN,
        HeadKind::TruKanI,
        HeadKind::TruKanIN,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Mlp => "mlp",
            HeadKind::MlpN => "mlp-n",
            HeadKind::Kan => "kan",
            HeadKind::KanN => "kan-n",
            HeadKind::SineKan => "sinekan",
            HeadKind::SineKanN => "sinekan-n",
            HeadKind::TruKanS => "trukan-s",
            HeadKind::TruKanSN => "trukan-sn",
            HeadKind::TruKanI => "trukan-i",
            HeadKind::TruKanIN => "trukan-in",
        }
    }

    pub fn normalized(self) -> bool {
        matches!(
            self,
            HeadKind::MlpN | HeadKind::KanN | HeadKind::SineKanN | HeadKind::TruKanSN | HeadKind::TruKanIN
        )
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = HeadKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::invalid("classifier", format!("unknown head kind `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

fn d_grid() -> usize {
    8
}
fn d_order() -> usize {
    3
}
fn d_range() -> (f64, f64) {
    (-1.0, 1.0)
}
fn d_dropout() -> f64 {
    0.1
}
fn d_scales() -> ScaleMode {
    ScaleMode::Pbt
}
fn d_knots() -> KnotMode {
    KnotMode::Fixed
}
fn d_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadParams {
    /// Knot count for TruKAN, interval count for KAN.
    #[serde(default = "d_grid")]
    pub grid: usize,
    #[serde(default = "d_order")]
    pub order: usize,
    #[serde(default = "d_range")]
    pub range: (f64, f64),
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    /// Sine terms per SineKAN edge.
    #[serde(default = "d_grid")]
    pub sine_grid: usize,
    #[serde(default = "d_scales")]
    pub kan_scales: ScaleMode,
    #[serde(default = "d_knots")]
    pub knot_mode: KnotMode,
    /// Resize hidden widths to the MLP head's parameter budget.
    #[serde(default = "d_true")]
    pub match_params: bool,
}

impl Default for HeadParams {
    fn default() -> Self {
        HeadParams {
            grid: d_grid(),
            order: d_order(),
            range: d_range(),
            dropout: d_dropout(),
            sine_grid: d_grid(),
            kan_scales: d_scales(),
            knot_mode: d_knots(),
            match_params: true,
        }
    }
}

impl HeadParams {
    fn trukan(&self, in_dim: usize, out_dim: usize, individual: bool) -> TruKanConfig {
        TruKanConfig {
            range: self.range,
            knot_mode: self.knot_mode,
            individual,
            ..TruKanConfig::new(in_dim, out_dim, self.grid, self.order)
        }
    }

    fn kan(&self, in_dim: usize, out_dim: usize) -> KanConfig {
        KanConfig { range: self.range, ..KanConfig::new(in_dim, out_dim, self.grid, self.order, self.kan_scales) }
    }

    fn sine(&self, in_dim: usize, out_dim: usize) -> SineKanConfig {
        SineKanConfig { in_dim, out_dim, grid: self.sine_grid }
    }
}

/// Trainable scalars of a head, from the layer formulas.
pub fn head_param_count(kind: HeadKind, in_f: usize, hidden: usize, classes: usize, hp: &HeadParams) -> usize {
    let front = 2 * in_f;
    let norm = if kind.normalized() { 2 * hidden } else { 0 };
    let layers = match kind {
        HeadKind::Mlp | HeadKind::MlpN => Dense::param_count(in_f, hidden) + Dense::param_count(hidden, classes),
        HeadKind::Kan | HeadKind::KanN => hp.kan(in_f, hidden).param_count() + hp.kan(hidden, classes).param_count(),
        HeadKind::SineKan | HeadKind::SineKanN => {
            hp.sine(in_f, hidden).param_count() + hp.sine(hidden, classes).param_count()
        }
        HeadKind::TruKanS | HeadKind::TruKanSN => {
            hp.trukan(in_f, hidden, false).param_count() + hp.trukan(hidden, classes, false).param_count()
        }
        HeadKind::TruKanI | HeadKind::TruKanIN => {
            hp.trukan(in_f, hidden, true).param_count() + hp.trukan(hidden, classes, true).param_count()
        }
    };
    front + norm + layers
}

/// Hidden width giving `kind` the parameter count of an MLP head with
/// `mlp_hidden` units. Counts are affine in the width, so two probes fix
/// the line.
pub fn matched_hidden(kind: HeadKind, in_f: usize, mlp_hidden: usize, classes: usize, hp: &HeadParams) -> usize {
    let target = head_param_count(HeadKind::Mlp, in_f, mlp_hidden, classes, hp) as f64;
    let c1 = head_param_count(kind, in_f, 1, classes, hp) as f64;
    let c2 = head_param_count(kind, in_f, 2, classes, hp) as f64;
    let slope = c2 - c1;
    ((target - (c1 - slope)) / slope).round().max(1.0) as usize
}

pub fn build_classifier(
    kind: HeadKind,
    in_features: usize,
    hidden: usize,
    classes: usize,
    hp: &HeadParams,
    seed: u64,
) -> Result<Network> {
    if in_features == 0 || hidden == 0 || classes == 0 {
        return Err(Error::invalid("classifier", "widths must be positive"));
    }
    let h = if hp.match_params && !matches!(kind, HeadKind::Mlp | HeadKind::MlpN) {
        matched_hidden(kind, in_features, hidden, classes, hp)
    } else {
        hidden
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![Layer::BatchNorm(BatchNorm::new(&mut store, "front_bn", in_features))];
    let mid_norm = |store: &mut ParamStore| Layer::LayerNorm(LayerNorm::new(store, "mid_ln", h));
    match kind {
        HeadKind::Mlp | HeadKind::MlpN => {
            layers.push(Layer::Dense(Dense::new(&mut store, "fc1", in_features, h, &mut rng)?));
            layers.push(Layer::Dropout(Dropout::new(hp.dropout)?));
            layers.push(Layer::Relu);
            if kind.normalized() {
                layers.push(mid_norm(&mut store));
            }
            layers.push(Layer::Dense(Dense::new(&mut store, "fc2", h, classes, &mut rng)?));
        }
        HeadKind::Kan | HeadKind::KanN => {
            layers.push(Layer::Kan(KanLayer::new(&mut store, "kan1", hp.kan(in_features, h), &mut rng)?));
            if kind.normalized() {
                layers.push(mid_norm(&mut store));
            }
            layers.push(Layer::Kan(KanLayer::new(&mut store, "kan2", hp.kan(h, classes), &mut rng)?));
        }
        HeadKind::SineKan | HeadKind::SineKanN => {
            layers.push(Layer::Sinekan(SineKanLayer::new(&mut store, "sine1", hp.sine(in_features, h), &mut rng)?));
            if kind.normalized() {
                layers.push(mid_norm(&mut store));
            }
            layers.push(Layer::Sinekan(SineKanLayer::new(&mut store, "sine2", hp.sine(h, classes), &mut rng)?));
        }
        HeadKind::TruKanS | HeadKind::TruKanSN | HeadKind::TruKanI | HeadKind::TruKanIN => {
            let ind = matches!(kind, HeadKind::TruKanI | HeadKind::TruKanIN);
            layers.push(Layer::Trukan(TruKanLayer::new(&mut store, "tru1", hp.trukan(in_features, h, ind), &mut rng)?));
            if kind.normalized() {
                layers.push(mid_norm(&mut store));
            }
            layers.push(Layer::Trukan(TruKanLayer::new(&mut store, "tru2", hp.trukan(h, classes, ind), &mut rng)?));
        }
    }
    let mut net = Network::new(in_features, layers, store)?;
    net.head = Some(kind);
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in HeadKind::ALL {
            assert_eq!(k.as_str().parse::<HeadKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.as_str()));
        }
        assert!("transformer".parse::<HeadKind>().is_err());
    }

    #[test]
    fn mlp_layout() {
        let net = build_classifier(HeadKind::Mlp, 8, 6, 3, &HeadParams::default(), 0).unwrap();
        let names: Vec<_> = net.layers.iter().map(|l| l.name()).collect();
        assert_eq!(names, ["batch_norm", "dense", "dropout", "relu", "dense"]);
        assert!(matches!(&net.layers[2], Layer::Dropout(d) if d.p == 0.1));
        let net = build_classifier(HeadKind::TruKanSN, 8, 6, 3, &HeadParams::default(), 0).unwrap();
        let names: Vec<_> = net.layers.iter().map(|l| l.name()).collect();
        assert_eq!(names, ["batch_norm", "trukan_shared", "layer_norm", "trukan_shared"]);
    }

    #[test]
    fn formula_matches_built_network() {
        let hp = HeadParams::default();
        for k in HeadKind::ALL {
            let net = build_classifier(k, 12, 10, 4, &hp, 1).unwrap();
            let h = if matches!(k, HeadKind::Mlp | HeadKind::MlpN) { 10 } else { matched_hidden(k, 12, 10, 4, &hp) };
            assert_eq!(net.param_count().total, head_param_count(k, 12, h, 4, &hp), "{k}");
        }
    }

    #[test]
    fn budgets_match_within_ten_percent() {
        let hp = HeadParams::default();
        let mlp = head_param_count(HeadKind::Mlp, 256, 256, 10, &hp) as f64;
        for k in HeadKind::ALL {
            let h = if matches!(k, HeadKind::Mlp | HeadKind::MlpN) { 256 } else { matched_hidden(k, 256, 256, 10, &hp) };
            let c = head_param_count(k, 256, h, 10, &hp) as f64;
            assert!((c / mlp - 1.0).abs() <= 0.1, "{k}: {c} vs {mlp}");
        }
    }
}
