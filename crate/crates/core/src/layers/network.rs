use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::HeadKind;
use super::dense::Dense;
use super::dropout::Dropout;
use super::edge::{EdgeLayer, Scope};
use super::kan::{KanConfig, KanLayer, ScaleMode};
use super::norm::{BatchNorm, LayerNorm};
use super::params::{Ctx, ParamId, ParamRole, ParamStore};
use super::sinekan::SineKanLayer;
use super::trukan::{TruKanConfig, TruKanLayer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Trukan(TruKanLayer),
    Kan(KanLayer),
    Sinekan(SineKanLayer),
    Dense(Dense),
    LayerNorm(LayerNorm),
    BatchNorm(BatchNorm),
    Dropout(Dropout),
    Relu,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Trukan(l) if l.config.individual => "trukan_individual",
            Layer::Trukan(_) => "trukan_shared",
            Layer::Kan(l) if l.config.scales == ScaleMode::Pbt => "kan_pbt",
            Layer::Kan(_) => "kan_pbf",
            Layer::Sinekan(_) => "sinekan",
            Layer::Dense(_) => "dense",
            Layer::LayerNorm(_) => "layer_norm",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Dropout(_) => "dropout",
            Layer::Relu => "relu",
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Trukan(l) => l.forward(ctx, x),
            Layer::Kan(l) => l.forward(ctx, x),
            Layer::Sinekan(l) => l.forward(ctx, x),
            Layer::Dense(l) => l.forward(ctx, x),
            Layer::LayerNorm(l) => l.forward(ctx, x),
            Layer::BatchNorm(l) => l.forward(ctx, x),
            Layer::Dropout(l) => l.forward(ctx, x),
            Layer::Relu => ctx.tape.relu(x),
        }
    }

    pub fn as_edge(&self) -> Option<&dyn EdgeLayer> {
        match self {
            Layer::Trukan(l) => Some(l),
            Layer::Kan(l) => Some(l),
            Layer::Sinekan(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_edge_mut(&mut self) -> Option<&mut dyn EdgeLayer> {
        match self {
            Layer::Trukan(l) => Some(l),
            Layer::Kan(l) => Some(l),
            Layer::Sinekan(l) => Some(l),
            _ => None,
        }
    }

    /// Output width given the input width.
    pub fn out_dim(&self, in_dim: usize) -> usize {
        match self {
            Layer::Trukan(l) => l.config.out_dim,
            Layer::Kan(l) => l.config.out_dim,
            Layer::Sinekan(l) => l.config.out_dim,
            Layer::Dense(l) => l.out_dim,
            _ => in_dim,
        }
    }

    fn expected_in(&self) -> Option<usize> {
        match self {
            Layer::Trukan(l) => Some(l.config.in_dim),
            Layer::Kan(l) => Some(l.config.in_dim),
            Layer::Sinekan(l) => Some(l.config.in_dim),
            Layer::Dense(l) => Some(l.in_dim),
            Layer::LayerNorm(l) => Some(l.dim),
            Layer::BatchNorm(l) => Some(l.dim),
            _ => None,
        }
    }

    /// Parameters with their counting scope.
    pub fn param_entries(&self) -> Vec<(ParamId, Scope)> {
        match self {
            Layer::Trukan(l) => {
                let (g, k) = (l.config.grid, l.config.order);
                let mut v = vec![(l.trunc, Scope::PerEdge(g)), (l.poly, Scope::PerEdge(k + 1))];
                v.extend(l.base.map(|id| (id, Scope::PerEdge(1))));
                v.extend(l.raw_knots.map(|id| (id, Scope::Shared)));
                v.extend(l.bias.map(|id| (id, Scope::PerOutput)));
                v
            }
            Layer::Kan(l) => vec![
                (l.base_weight, Scope::PerEdge(1)),
                (l.coeffs, Scope::PerEdge(l.config.n_basis())),
                (l.scale_base, Scope::PerEdge(1)),
                (l.scale_spline, Scope::PerEdge(1)),
            ],
            Layer::Sinekan(l) => vec![
                (l.freqs, Scope::Shared),
                (l.phases, Scope::Shared),
                (l.amplitudes, Scope::PerEdge(l.config.grid)),
                (l.bias, Scope::PerOutput),
            ],
            Layer::Dense(l) => vec![(l.weight, Scope::Shared), (l.bias, Scope::Shared)],
            Layer::LayerNorm(l) => vec![(l.gamma, Scope::Shared), (l.beta, Scope::Shared)],
            Layer::BatchNorm(l) => vec![
                (l.gamma, Scope::Shared),
                (l.beta, Scope::Shared),
                (l.running_mean, Scope::Shared),
                (l.running_var, Scope::Shared),
            ],
            Layer::Dropout(_) | Layer::Relu => Vec::new(),
        }
    }
}

impl Layer {
    fn param_ids_mut(&mut self) -> Vec<&mut ParamId> {
        match self {
            Layer::Trukan(l) => {
                let mut v = vec![&mut l.trunc, &mut l.poly];
                v.extend(l.raw_knots.as_mut());
                v.extend(l.bias.as_mut());
                v.extend(l.base.as_mut());
                v
            }
            Layer::Kan(l) => vec![&mut l.base_weight, &mut l.coeffs, &mut l.scale_base, &mut l.scale_spline],
            Layer::Sinekan(l) => vec![&mut l.freqs, &mut l.phases, &mut l.amplitudes, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::LayerNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta, &mut l.running_mean, &mut l.running_var],
            Layer::Dropout(_) | Layer::Relu => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCount {
    pub index: usize,
    pub layer: String,
    pub count: usize,
}

/// Trainable scalar counts, excluding removed edges and dead nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub by_role: BTreeMap<ParamRole, usize>,
    pub per_layer: Vec<LayerCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default)]
    pub head: Option<HeadKind>,
    pub layers: Vec<Layer>,
    pub store: ParamStore,
}

impl Network {
    pub fn new(in_dim: usize, layers: Vec<Layer>, store: ParamStore) -> Result<Self> {
        let mut d = in_dim;
        for (i, l) in layers.iter().enumerate() {
            if let Some(e) = l.expected_in() {
                if e != d {
                    return Err(Error::invalid(
                        "network",
                        format!("layer {i} ({}) expects width {e}, receives {d}", l.name()),
                    ));
                }
            }
            d = l.out_dim(d);
        }
        Ok(Network { in_dim, out_dim: d, head: None, layers, store })
    }

    /// Stack of TruKAN layers with widths `widths`, each built from
    /// `template` with its dimensions replaced.
    pub fn trukan_stack(widths: &[usize], template: &TruKanConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for (n, w) in widths.windows(2).enumerate() {
            let cfg = TruKanConfig { in_dim: w[0], out_dim: w[1], ..template.clone() };
            layers.push(Layer::Trukan(TruKanLayer::new(&mut store, &format!("layer{n}"), cfg, &mut rng)?));
        }
        Self::new(widths.first().copied().unwrap_or(0), layers, store)
    }

    pub fn kan_stack(widths: &[usize], template: &KanConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for (n, w) in widths.windows(2).enumerate() {
            let cfg = KanConfig { in_dim: w[0], out_dim: w[1], ..template.clone() };
            layers.push(Layer::Kan(KanLayer::new(&mut store, &format!("layer{n}"), cfg, &mut rng)?));
        }
        Self::new(widths.first().copied().unwrap_or(0), layers, store)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.in_dim {
            return Err(Error::Shape { op: "network", lhs: x.shape(), rhs: (x.rows(), self.in_dim) });
        }
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(ctx, &h)?;
        }
        Ok(h)
    }

    /// Evaluation-mode forward without gradient recording. Takes `&self`
    /// only, so it may run from several threads at once.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(&mut Ctx::eval(&self.store), x)
    }

    /// Splits into layers and parameters for in-place edits.
    pub fn parts_mut(&mut self) -> (&mut [Layer], &mut ParamStore) {
        (&mut self.layers, &mut self.store)
    }

    /// Indices of layers with per-edge functions.
    pub fn edge_layer_indices(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].as_edge().is_some()).collect()
    }

    /// Live outputs of layer `idx`: at least one active incoming edge and,
    /// when the next layer is also edge-based, at least one active outgoing
    /// edge.
    pub fn alive_outputs(&self, idx: usize) -> Vec<bool> {
        let Some(e) = self.layers[idx].as_edge() else {
            return Vec::new();
        };
        let next = self.layers.get(idx + 1).and_then(Layer::as_edge);
        (0..e.out_dim())
            .map(|o| {
                let incoming = (0..e.in_dim()).any(|i| e.edge_active(o, i));
                let outgoing = next.map_or(true, |n| (0..n.out_dim()).any(|q| n.edge_active(q, o)));
                incoming && outgoing
            })
            .collect()
    }

    /// Drops parameters no layer refers to and renumbers the rest in
    /// layer order.
    pub fn compact(&mut self) {
        let mut store = ParamStore::new();
        for l in &mut self.layers {
            for id in l.param_ids_mut() {
                let p = self.store.get(*id);
                *id = store.add(p.name.clone(), p.value.clone(), p.role, p.trainable);
            }
        }
        self.store = store;
    }

    pub fn param_count(&self) -> ParamCount {
        let mut by_role = BTreeMap::new();
        let mut per_layer = Vec::new();
        let mut total = 0;
        for (idx, layer) in self.layers.iter().enumerate() {
            let edge = layer.as_edge();
            let alive = if edge.is_some() { self.alive_outputs(idx).iter().filter(|&&a| a).count() } else { 0 };
            let mut count = 0;
            for (id, scope) in layer.param_entries() {
                let p = self.store.get(id);
                if !p.trainable {
                    continue;
                }
                let n = match (scope, edge) {
                    (Scope::PerEdge(m), Some(e)) => e.active_edges() * m,
                    (Scope::PerOutput, Some(_)) => alive,
                    _ => p.value.len(),
                };
                *by_role.entry(p.role).or_insert(0) += n;
                count += n;
            }
            total += count;
            per_layer.push(LayerCount { index: idx, layer: layer.name().to_string(), count });
        }
        ParamCount { total, by_role, per_layer }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::knots::KnotMode;

    fn toy_trukan() -> Network {
        let mut cfg = TruKanConfig::new(1, 1, 3, 3);
        cfg.bias = true;
        Network::trukan_stack(&[2, 3, 1], &cfg, 0).unwrap()
    }

    #[test]
    fn toy_counts() {
        assert_eq!(toy_trukan().param_count().total, 67);
        let mut cfg = TruKanConfig::new(1, 1, 3, 3);
        cfg.knot_mode = KnotMode::Learnable;
        let net = Network::trukan_stack(&[2, 3, 1], &cfg, 0).unwrap();
        let c = net.param_count();
        assert_eq!(c.by_role[&ParamRole::Knots], 4);
        assert_eq!(c.by_role[&ParamRole::SplineCoeffs], 27);
        assert_eq!(c.by_role[&ParamRole::PolyCoeffs], 36);
        let kan = Network::kan_stack(&[2, 3, 1], &KanConfig::new(1, 1, 3, 3, ScaleMode::Pbt), 0).unwrap();
        assert_eq!(kan.param_count().total, 9 * 9);
    }

    #[test]
    fn removed_edges_and_dead_nodes_leave_the_count() {
        let mut net = toy_trukan();
        let (layers, store) = net.parts_mut();
        // cut hidden node 2 off from the output
        layers[1].as_edge_mut().unwrap().remove_edge(store, 0, 2);
        let c = net.param_count();
        assert_eq!(c.total, 67 - 7 - 1);
    }

    #[test]
    fn compact_drops_orphans() {
        let mut net = toy_trukan();
        let x = Tensor::from_rows(&[&[0.1, 0.2], &[-0.5, 0.7]]).unwrap();
        let want = net.predict(&x).unwrap();
        net.store.add("orphan", Tensor::zeros(2, 2), ParamRole::Weights, true);
        let n = net.store.len();
        net.compact();
        assert_eq!(net.store.len(), n - 1);
        assert_eq!(net.predict(&x).unwrap(), want);
        assert_eq!(net.param_count().total, 67);
    }

    #[test]
    fn width_mismatch_rejected() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Dense::new(&mut store, "a", 3, 4, &mut rng).unwrap();
        let b = Dense::new(&mut store, "b", 5, 2, &mut rng).unwrap();
        assert!(Network::new(3, vec![Layer::Dense(a), Layer::Dense(b)], store).is_err());
    }

    #[test]
    fn predict_is_thread_safe() {
        let net = toy_trukan();
        let x = Tensor::from_rows(&[&[0.1, 0.2], &[-0.5, 0.7]]).unwrap();
        let want = net.predict(&x).unwrap();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..4).map(|_| s.spawn(|| net.predict(&x).unwrap())).collect();
            for h in handles {
                assert_eq!(h.join().unwrap(), want);
            }
        });
    }
}
