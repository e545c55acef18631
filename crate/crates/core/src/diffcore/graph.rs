use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use super::ops::Op;
use super::tensor::{NodeRef, Tensor};
use crate::error::{Error, Result};

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Option<usize>>,
    pub(crate) numel: usize,
}

#[derive(Default)]
struct GraphInner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Append-only tape of recorded operations. Insertion order is a valid
/// topological order because a node can only reference earlier nodes.
#[derive(Clone, Default)]
pub struct Graph {
    inner: Arc<Mutex<GraphInner>>,
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, GraphInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn len(&self) -> usize {
        self.lock().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn same(&self, other: &Graph) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    /// Track `t` as a differentiable input. The data is shared, not copied.
    pub fn leaf(&self, t: Tensor) -> Tensor {
        let id = self
            .push(Node {
                op: Op::Leaf,
                inputs: Vec::new(),
                numel: t.numel(),
            })
            .expect("leaf on a consumed graph");
        t.with_node(NodeRef {
            graph: self.clone(),
            id,
        })
    }

    pub(crate) fn push(&self, node: Node) -> Result<usize> {
        let mut inner = self.lock();
        if inner.consumed {
            return Err(Error::Backward("graph already consumed by backward".into()));
        }
        debug_assert!(node.inputs.iter().flatten().all(|&i| i < inner.nodes.len()));
        inner.nodes.push(node);
        Ok(inner.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// over every path; the tape is consumed.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                loss.shape()
            )));
        }
        let root = match loss.node() {
            Some(n) if n.graph.same(self) => n.id,
            Some(_) => return Err(Error::Backward("loss belongs to a different graph".into())),
            None => {
                return Err(Error::Backward(
                    "loss is not connected to any tracked tensor".into(),
                ))
            }
        };
        let nodes = {
            let mut inner = self.lock();
            if inner.consumed {
                return Err(Error::Backward("graph already consumed by backward".into()));
            }
            inner.consumed = true;
            std::mem::take(&mut inner.nodes)
        };

        let mut grads: Vec<Option<Vec<f32>>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(vec![1.0]);
        let mut leaves = HashMap::new();

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                leaves.insert(id, g);
                continue;
            }
            let in_sizes: Vec<usize> = node
                .inputs
                .iter()
                .map(|i| i.map_or(0, |i| nodes[i].numel))
                .collect();
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = node.op.backward(&g, &in_sizes, &needs);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(input), Some(ig)) = (input, ig) else {
                    continue;
                };
                if ig.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Backward(format!(
                        "{} produced a non-finite gradient",
                        node.op.name()
                    )));
                }
                match &mut grads[*input] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients {
            graph: self.clone(),
            grads: leaves,
        })
    }
}

/// Gradients of a loss with respect to every leaf it depends on.
pub struct Gradients {
    graph: Graph,
    grads: HashMap<usize, Vec<f32>>,
}

impl Gradients {
    /// `None` if `t` is not a leaf of this graph or the loss does not depend on it.
    pub fn get(&self, t: &Tensor) -> Option<&[f32]> {
        let n = t.node()?;
        if !n.graph.same(&self.graph) {
            return None;
        }
        self.grads.get(&n.id).map(Vec::as_slice)
    }

    /// Like [`Gradients::get`] but yields zeros for leaves the loss ignores.
    pub fn get_or_zero(&self, t: &Tensor) -> Vec<f32> {
        self.get(t)
            .map(<[f32]>::to_vec)
            .unwrap_or_else(|| vec![0.0; t.numel()])
    }
}
