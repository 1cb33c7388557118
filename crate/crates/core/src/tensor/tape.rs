use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl NodeId {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Backward rule of a recorded op.
///
/// Receives the output cotangent and a mask telling which inputs need a
/// gradient; returns one entry per input (`None` where not needed).
pub type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct TapeNode {
    op_name: String,
    /// Graph parents; `None` for inputs that were constants when recorded.
    inputs: Vec<Option<usize>>,
    input_shapes: Vec<(usize, usize)>,
    shape: (usize, usize),
    backward: Option<BackwardFn>,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in execution order, so the index order is a
/// topological order. A tape is owned by one training session; build a
/// fresh tape (or [`Tape::no_grad`]) per forward pass.
pub struct Tape {
    id: u64,
    recording: bool,
    check_finite: bool,
    nodes: Vec<TapeNode>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    tags: HashMap<usize, usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            recording: true,
            check_finite: false,
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
            tags: HashMap::new(),
        }
    }

    /// A tape that never records; ops only compute values.
    pub fn no_grad() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// When enabled every recorded value and cotangent is checked for NaN/Inf.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn check_finite(&self) -> bool {
        self.check_finite
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.op_name.as_str())
    }

    /// Registers `t` as a differentiable leaf.
    pub fn leaf(&mut self, t: &Tensor) -> Tensor {
        let mut out = t.detach();
        if !self.recording {
            return out;
        }
        let index = self.push(TapeNode {
            op_name: "leaf".into(),
            inputs: Vec::new(),
            input_shapes: Vec::new(),
            shape: t.shape(),
            backward: None,
        });
        out.requires_grad = true;
        out.node = Some(NodeId { tape: self.id, index });
        out
    }

    /// Like [`Tape::leaf`], but returns the existing leaf when `tag` was
    /// already registered on this tape.
    pub fn leaf_tagged(&mut self, t: &Tensor, tag: usize) -> Tensor {
        if let Some(&index) = self.tags.get(&tag) {
            let mut out = t.detach();
            out.requires_grad = true;
            out.node = Some(NodeId { tape: self.id, index });
            return out;
        }
        let out = self.leaf(t);
        if let Some(node) = out.node {
            self.tags.insert(tag, node.index);
        }
        out
    }

    fn push(&mut self, node: TapeNode) -> usize {
        self.nodes.push(node);
        self.leaf_grads.push(None);
        self.nodes.len() - 1
    }

    fn owned_node(&self, t: &Tensor) -> Option<usize> {
        match t.node {
            Some(n) if n.tape == self.id && t.requires_grad => Some(n.index),
            _ => None,
        }
    }

    /// Records a custom op. This is the extension point every kernel in the
    /// crate goes through.
    ///
    /// `backward` is only invoked for inputs that require a gradient; it
    /// must return cotangents shaped like the corresponding inputs.
    pub fn custom(
        &mut self,
        op_name: &str,
        inputs: &[&Tensor],
        shape: (usize, usize),
        data: Vec<f64>,
        backward: BackwardFn,
    ) -> Result<Tensor> {
        if data.len() != shape.0 * shape.1 {
            return Err(Error::invalid(
                "custom",
                format!("{op_name}: output length {} for shape {shape:?}", data.len()),
            ));
        }
        if self.check_finite && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: op_name.to_string(),
            });
        }
        let mut out = Tensor::from_parts(shape.0, shape.1, data);
        if !self.recording {
            return Ok(out);
        }
        let parents: Vec<Option<usize>> = inputs.iter().map(|t| self.owned_node(t)).collect();
        if parents.iter().all(Option::is_none) {
            return Ok(out);
        }
        let index = self.push(TapeNode {
            op_name: op_name.to_string(),
            inputs: parents,
            input_shapes: inputs.iter().map(|t| t.shape()).collect(),
            shape,
            backward: Some(backward),
        });
        out.requires_grad = true;
        out.node = Some(NodeId { tape: self.id, index });
        Ok(out)
    }

    /// Reverse sweep from a scalar root. Leaf gradients accumulate across
    /// calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, root: &Tensor) -> Result<()> {
        if root.shape() != (1, 1) {
            return Err(Error::NotScalar(root.shape()));
        }
        let Some(root_idx) = self.owned_node(root) else {
            return Err(Error::invalid(
                "backward",
                "root has no differentiable ancestors on this tape",
            ));
        };
        let mut cot: Vec<Option<Vec<f64>>> = vec![None; root_idx + 1];
        cot[root_idx] = Some(vec![1.0]);
        for i in (0..=root_idx).rev() {
            let Some(g) = cot[i].take() else { continue };
            let node = &self.nodes[i];
            let Some(bw) = &node.backward else {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let grads = bw(&g, &needs);
            debug_assert_eq!(grads.len(), node.inputs.len(), "{}", node.op_name);
            for (k, (parent, gi)) in node.inputs.iter().zip(grads).enumerate() {
                let (Some(p), Some(gi)) = (parent, gi) else { continue };
                let (r, c) = node.input_shapes[k];
                if gi.len() != r * c {
                    return Err(Error::invalid(
                        "backward",
                        format!(
                            "{}: cotangent for input {k} has length {}, expected {}",
                            node.op_name,
                            gi.len(),
                            r * c
                        ),
                    ));
                }
                if self.check_finite && gi.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        op: format!("{} (backward)", node.op_name),
                    });
                }
                match &mut cot[*p] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf.
    pub fn grad(&self, t: &Tensor) -> Option<Tensor> {
        let idx = self.owned_node(t)?;
        let g = self.leaf_grads[idx].as_ref()?;
        let (r, c) = self.nodes[idx].shape;
        Some(Tensor::from_parts(r, c, g.clone()))
    }

    /// Adds the tape gradient of leaf `t` into `t`'s own gradient slot.
    pub fn write_grad(&self, t: &mut Tensor) -> Result<()> {
        if let Some(g) = self.grad(t) {
            t.accumulate_grad(g.data())?;
        }
        Ok(())
    }

    /// Gradients of tagged leaves, as `(tag, grad)`.
    pub fn tagged_grads(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.tags
            .iter()
            .filter_map(|(&tag, &idx)| self.leaf_grads[idx].as_deref().map(|g| (tag, g)))
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::new(2, 3, (0..6).map(f64::from).collect()).unwrap());
        let s = tape.sum(&x).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::row(&[1.0, 2.0, 3.0]));
        let sq = tape.mul(&x, &x).unwrap();
        let s = tape.sum(&sq).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::row(&[1.0, 2.0]));
        let s = tape.sum(&x).unwrap();
        tape.backward(&s).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[2.0, 2.0]);
        tape.zero_grad();
        tape.backward(&s).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(&x), Err(Error::NotScalar((1, 2)))));
    }

    #[test]
    fn shared_consumer_sums_both_paths() {
        // f(x) = x*x + 3x  ->  f'(x) = 2x + 3
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.5));
        let a = tape.mul(&x, &x).unwrap();
        let b = tape.mul_scalar(&x, 3.0).unwrap();
        let f = tape.add(&a, &b).unwrap();
        tape.backward(&f).unwrap();
        assert_eq!(tape.grad(&x).unwrap().item().unwrap(), 2.0 * 1.5 + 3.0);
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let mut tape = Tape::no_grad();
        let x = tape.leaf(&Tensor::row(&[1.0, 2.0]));
        let s = tape.sum(&x).unwrap();
        assert!(!s.requires_grad());
        assert!(tape.is_empty());
    }

    #[test]
    fn tagged_leaf_is_reused() {
        let mut tape = Tape::new();
        let t = Tensor::row(&[1.0]);
        let a = tape.leaf_tagged(&t, 7);
        let b = tape.leaf_tagged(&t, 7);
        assert_eq!(a.node(), b.node());
        let s = tape.add(&a, &b).unwrap();
        tape.backward(&s).unwrap();
        let grads: Vec<_> = tape.tagged_grads().collect();
        assert_eq!(grads, vec![(7, &[2.0][..])]);
    }

    #[test]
    fn check_finite_mode_flags_nan() {
        let mut tape = Tape::new();
        tape.set_check_finite(true);
        let x = tape.leaf(&Tensor::row(&[f64::MAX]));
        let err = tape.mul_scalar(&x, 10.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
