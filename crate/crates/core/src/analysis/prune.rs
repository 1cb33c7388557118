//! Magnitude pruning of edge-based layers.
//!
//! The score of edge `(o, i)` is the mean of `|φ_{o,i}(h_i)|` over the
//! activations `h` that reach its layer when the training inputs are run
//! through the network in evaluation mode. Layers are scored front to back,
//! each on activations of the already-pruned prefix, so a second pass sees
//! exactly the same inputs and removes nothing.
//!
//! Removing edges can strand nodes. Before a layer is scored, edges leaving
//! nodes of the directly preceding edge layer that lost every incoming edge
//! are cascaded away. After the sweep, edges entering nodes whose outgoing
//! edges are all gone are cascaded away too, back to front.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Ctx, Layer, Network};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    /// Index into `Network::layers`.
    pub layer: usize,
    pub out: usize,
    pub inp: usize,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRef {
    pub layer: usize,
    pub out: usize,
    pub inp: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub threshold: f64,
    /// Edges scored below the threshold.
    pub removed: Vec<EdgeScore>,
    /// Edges removed because a node they touch became disconnected.
    pub cascaded: Vec<EdgeRef>,
    /// Surviving scored edges.
    pub kept: Vec<EdgeScore>,
    pub params_before: usize,
    pub params_after: usize,
}

impl PruneReport {
    pub fn edges_removed(&self) -> usize {
        self.removed.len() + self.cascaded.len()
    }
}

/// Mean absolute value of every active edge of layer `idx` over the
/// columns of `h`.
pub fn edge_scores(net: &Network, idx: usize, h: &Tensor) -> Result<Vec<EdgeScore>> {
    let e = net.layers[idx]
        .as_edge()
        .ok_or_else(|| Error::invalid("prune", format!("layer {idx} has no edges")))?;
    if h.rows() == 0 {
        return Err(Error::invalid("prune", "no activations to score"));
    }
    let n = h.rows() as f64;
    let mut scores = Vec::new();
    for i in 0..e.in_dim() {
        let col: Vec<f64> = (0..h.rows()).map(|r| h.get(r, i)).collect();
        for o in 0..e.out_dim() {
            if !e.edge_active(o, i) {
                continue;
            }
            let v = e.edge_values(&net.store, o, i, &col)?;
            let score = v.iter().map(|y| y.abs()).sum::<f64>() / n;
            scores.push(EdgeScore { layer: idx, out: o, inp: i, score });
        }
    }
    scores.sort_by_key(|s| (s.out, s.inp));
    Ok(scores)
}

fn remove(net: &mut Network, r: EdgeRef) {
    let (layers, store) = net.parts_mut();
    if let Some(e) = layers[r.layer].as_edge_mut() {
        e.remove_edge(store, r.out, r.inp);
    }
}

fn has_incoming(layer: &Layer, node: usize) -> bool {
    let e = layer.as_edge().expect("edge layer");
    (0..e.in_dim()).any(|i| e.edge_active(node, i))
}

fn has_outgoing(layer: &Layer, node: usize) -> bool {
    let e = layer.as_edge().expect("edge layer");
    (0..e.out_dim()).any(|o| e.edge_active(o, node))
}

/// Removes every edge whose score on `x_train` is below `threshold`.
pub fn prune(net: &Network, x_train: &Tensor, threshold: f64) -> Result<(Network, PruneReport)> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::invalid("prune", format!("threshold {threshold} must be non-negative")));
    }
    if x_train.cols() != net.in_dim {
        return Err(Error::Shape { op: "prune", lhs: x_train.shape(), rhs: (x_train.rows(), net.in_dim) });
    }
    let mut net = net.clone();
    let params_before = net.param_count().total;
    let (mut removed, mut kept, mut cascaded) = (Vec::new(), Vec::new(), Vec::new());

    let mut h = x_train.clone();
    for idx in 0..net.layers.len() {
        if net.layers[idx].as_edge().is_some() {
            if idx > 0 && net.layers[idx - 1].as_edge().is_some() {
                let width = net.layers[idx].as_edge().unwrap().in_dim();
                for node in 0..width {
                    if has_incoming(&net.layers[idx - 1], node) {
                        continue;
                    }
                    let e = net.layers[idx].as_edge().unwrap();
                    let outs: Vec<usize> = (0..e.out_dim()).filter(|&o| e.edge_active(o, node)).collect();
                    for out in outs {
                        let r = EdgeRef { layer: idx, out, inp: node };
                        remove(&mut net, r);
                        cascaded.push(r);
                    }
                }
            }
            for s in edge_scores(&net, idx, &h)? {
                if s.score < threshold {
                    remove(&mut net, EdgeRef { layer: s.layer, out: s.out, inp: s.inp });
                    removed.push(s);
                } else {
                    kept.push(s);
                }
            }
        }
        h = net.layers[idx].forward(&mut Ctx::eval(&net.store), &h)?;
    }

    for idx in (0..net.layers.len().saturating_sub(1)).rev() {
        if net.layers[idx].as_edge().is_none() || net.layers[idx + 1].as_edge().is_none() {
            continue;
        }
        let width = net.layers[idx].as_edge().unwrap().out_dim();
        for node in 0..width {
            if has_outgoing(&net.layers[idx + 1], node) {
                continue;
            }
            let e = net.layers[idx].as_edge().unwrap();
            let ins: Vec<usize> = (0..e.in_dim()).filter(|&i| e.edge_active(node, i)).collect();
            for inp in ins {
                let r = EdgeRef { layer: idx, out: node, inp };
                remove(&mut net, r);
                cascaded.push(r);
            }
        }
    }
    let cut: Vec<EdgeRef> = cascaded.clone();
    kept.retain(|s| !cut.iter().any(|c| c.layer == s.layer && c.out == s.out && c.inp == s.inp));

    let params_after = net.param_count().total;
    Ok((net, PruneReport { threshold, removed, cascaded, kept, params_before, params_after }))
}
