use super::params::ParamStore;
use crate::error::Result;

/// Per-edge view of a KAN-family layer: each (output, input) pair carries
/// its own univariate function.
pub trait EdgeLayer {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    /// Trainable scalars owned by a single edge.
    fn params_per_edge(&self) -> usize;
    /// Value of edge `(o, i)` at `x`.
    fn edge_value(&self, store: &ParamStore, o: usize, i: usize, x: f64) -> Result<f64>;
    /// Edge `(o, i)` at every point of `xs`.
    fn edge_values(&self, store: &ParamStore, o: usize, i: usize, xs: &[f64]) -> Result<Vec<f64>> {
        xs.iter().map(|&x| self.edge_value(store, o, i, x)).collect()
    }
    /// Named additive parts of edge `(o, i)` over `xs`; they sum to
    /// [`EdgeLayer::edge_values`].
    fn edge_parts(&self, store: &ParamStore, o: usize, i: usize, xs: &[f64]) -> Result<Vec<(&'static str, Vec<f64>)>> {
        Ok(vec![("value", self.edge_values(store, o, i, xs)?)])
    }
    fn edge_active(&self, o: usize, i: usize) -> bool;
    /// Zeroes the edge's coefficients and marks it inactive.
    fn remove_edge(&mut self, store: &mut ParamStore, o: usize, i: usize);
    /// Per-output bias, if the layer has one.
    fn has_bias(&self) -> bool {
        false
    }
    /// Trainable scalars that belong to neither an edge nor a bias.
    fn shared_params(&self) -> usize {
        0
    }

    fn active_edges(&self) -> usize {
        let mut n = 0;
        for o in 0..self.out_dim() {
            for i in 0..self.in_dim() {
                n += self.edge_active(o, i) as usize;
            }
        }
        n
    }
}

/// How a parameter tensor's size scales with the layer's structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// `m` scalars for every active edge.
    PerEdge(usize),
    /// One scalar per live output node.
    PerOutput,
    /// Counted in full.
    Shared,
}
