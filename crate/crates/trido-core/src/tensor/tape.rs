//! Gradient tape: records one node per differentiable op, replays in reverse.

use std::cell::RefCell;

use super::{Elem, Tensor};

pub(crate) type BackwardFn<E> = Box<dyn Fn(&[E], &mut GradStore<E>)>;

pub(crate) struct Node<E: Elem> {
    len: usize,
    backward: Option<BackwardFn<E>>,
}

/// Records the computation graph for one forward pass. Nodes are appended
/// in execution order, which is a valid topological order, so the backward
/// sweep is a single reverse scan that visits each node exactly once.
///
/// A disabled tape records nothing; ops then behave as plain array math.
/// Tapes are single-threaded by design; concurrent samples use one tape each.
pub struct Tape<E: Elem> {
    nodes: RefCell<Vec<Node<E>>>,
    enabled: bool,
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            enabled: true,
        }
    }

    /// Tape that records nothing (inference mode).
    pub fn disabled() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            enabled: false,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Registers a tensor as a differentiable leaf (parameter or input).
    pub fn leaf(&self, t: &Tensor<E>) -> Tensor<E> {
        if !self.enabled {
            return t.detach();
        }
        let id = self.push(t.numel(), None);
        Tensor::tracked(t.shape().to_vec(), t.data_arc(), Some(id))
    }

    pub(crate) fn push(&self, len: usize, backward: Option<BackwardFn<E>>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { len, backward });
        nodes.len() - 1
    }

    /// Records `out_data` as the result of an op over `inputs`, if tracking
    /// applies. Returns the node id for the output tensor.
    pub(crate) fn record(
        &self,
        inputs: &[&Tensor<E>],
        out_len: usize,
        backward: BackwardFn<E>,
    ) -> Option<usize> {
        if !self.enabled || inputs.iter().all(|t| t.node().is_none()) {
            return None;
        }
        Some(self.push(out_len, Some(backward)))
    }

    /// Reverse-mode sweep from a scalar loss. The gradient of the loss with
    /// respect to itself is 1; nodes never reached keep a `None` gradient,
    /// which readers observe as zeros.
    pub fn backward(&self, loss: &Tensor<E>) -> Grads<E> {
        assert_eq!(loss.numel(), 1, "backward requires a scalar loss");
        let loss_node = loss
            .node()
            .expect("backward requires a loss connected to this tape");
        let nodes = self.nodes.borrow();
        let mut store = GradStore {
            bufs: vec![None; nodes.len()],
            lens: nodes.iter().map(|n| n.len).collect(),
        };
        store.buf(loss_node)[0] = E::one();
        for id in (0..=loss_node).rev() {
            let Some(g) = store.bufs[id].take() else {
                continue;
            };
            if let Some(backward) = &nodes[id].backward {
                backward(&g, &mut store);
            }
            store.bufs[id] = Some(g);
        }
        Grads { bufs: store.bufs }
    }
}

/// Per-node gradient accumulators, allocated lazily.
pub(crate) struct GradStore<E: Elem> {
    bufs: Vec<Option<Vec<E>>>,
    lens: Vec<usize>,
}

impl<E: Elem> GradStore<E> {
    /// Mutable gradient buffer for a node, zero-initialized on first touch.
    pub(crate) fn buf(&mut self, node: usize) -> &mut [E] {
        self.bufs[node].get_or_insert_with(|| vec![E::zero(); self.lens[node]])
    }

    /// Accumulates a dense contribution into a node's gradient.
    pub(crate) fn add(&mut self, node: usize, contrib: &[E]) {
        let buf = self.buf(node);
        debug_assert_eq!(buf.len(), contrib.len());
        for (b, c) in buf.iter_mut().zip(contrib) {
            *b += *c;
        }
    }
}

/// Gradients produced by one backward sweep, indexed by tape node.
pub struct Grads<E: Elem> {
    bufs: Vec<Option<Vec<E>>>,
}

impl<E: Elem> Grads<E> {
    /// Gradient of the loss w.r.t. a tracked tensor. Tensors the loss never
    /// reached yield all-zero gradients of the matching shape.
    pub fn get(&self, t: &Tensor<E>) -> Tensor<E> {
        let node = t.node().expect("gradient of an untracked tensor");
        match &self.bufs[node] {
            Some(g) => Tensor::new(t.shape(), g.clone()),
            None => Tensor::zeros(t.shape()),
        }
    }

    /// Raw gradient buffer by tensor, if the node was reached.
    pub fn get_opt(&self, t: &Tensor<E>) -> Option<&[E]> {
        t.node().and_then(|n| self.bufs[n].as_deref())
    }
}
