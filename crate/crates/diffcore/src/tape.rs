//! Operation recording and reverse-mode replay.
//!
//! A [`Tape`] either records (training, gradient checks) or not (inference).
//! Each differentiable op computes its value eagerly and, when recording and
//! at least one input is tracked, appends a record holding a backward closure.
//! Records are appended in creation order, which is a topological order of the
//! graph, so replaying them last-to-first visits ops in exact reverse
//! topological order.

use std::cell::RefCell;

use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Gradient contributions for each input of an op, in input order.
pub type InputGrads<R> = Vec<Option<Tensor<R>>>;

type BackwardFn<R> = Box<dyn FnOnce(&Tensor<R>) -> Result<InputGrads<R>>>;

struct Record<R> {
    output: NodeId,
    inputs: Vec<Option<NodeId>>,
    backward: BackwardFn<R>,
}

struct Inner<R> {
    next_node: NodeId,
    records: Vec<Record<R>>,
}

pub struct Tape<R> {
    recording: bool,
    inner: RefCell<Inner<R>>,
}

/// A value flowing through the tape; `node` is set when gradients can reach it.
#[derive(Clone)]
pub struct Var<R> {
    value: Tensor<R>,
    node: Option<NodeId>,
}

impl<R: Real> Var<R> {
    pub fn value(&self) -> &Tensor<R> {
        &self.value
    }

    pub fn into_value(self) -> Tensor<R> {
        self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn tracked(&self) -> bool {
        self.node.is_some()
    }
}

impl<R: Real> std::fmt::Debug for Var<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("value", &self.value).field("node", &self.node).finish()
    }
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    /// Recording tape.
    pub fn new() -> Self {
        Tape {
            recording: true,
            inner: RefCell::new(Inner {
                next_node: 0,
                records: Vec::new(),
            }),
        }
    }

    /// Tape that never records; intermediates are freed as soon as dropped.
    pub fn no_grad() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn num_records(&self) -> usize {
        self.inner.borrow().records.len()
    }

    fn fresh_node(&self) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        let id = inner.next_node;
        inner.next_node += 1;
        id
    }

    /// Differentiable input (a parameter or anything gradients are wanted for).
    pub fn leaf(&self, value: Tensor<R>) -> Var<R> {
        let node = self.recording.then(|| self.fresh_node());
        Var { value, node }
    }

    /// Input that gradients never flow into.
    pub fn constant(&self, value: Tensor<R>) -> Var<R> {
        Var { value, node: None }
    }

    /// Registers an op result. `backward` maps the output gradient to one
    /// optional gradient per input; it is only kept when some input is tracked.
    pub fn record<F>(&self, inputs: &[&Var<R>], value: Tensor<R>, backward: F) -> Var<R>
    where
        F: FnOnce(&Tensor<R>) -> Result<InputGrads<R>> + 'static,
    {
        if !self.recording || inputs.iter().all(|v| v.node.is_none()) {
            return Var { value, node: None };
        }
        let output = self.fresh_node();
        self.inner.borrow_mut().records.push(Record {
            output,
            inputs: inputs.iter().map(|v| v.node).collect(),
            backward: Box::new(backward),
        });
        Var {
            value,
            node: Some(output),
        }
    }

    /// Replays the recorded ops backwards from a one-element `loss`.
    /// Consumes the records; the tape can be reused for a new graph afterwards.
    pub fn backward(&self, loss: &Var<R>) -> Result<Grads<R>> {
        if loss.value.len() != 1 {
            return shape_err(
                "backward",
                format!("loss must hold one value, got shape {:?}", loss.shape()),
            );
        }
        let (records, n_nodes) = {
            let mut inner = self.inner.borrow_mut();
            (std::mem::take(&mut inner.records), inner.next_node)
        };
        let mut grads: Vec<Option<Tensor<R>>> = (0..n_nodes).map(|_| None).collect();
        let Some(root) = loss.node else {
            return Ok(Grads { grads });
        };
        grads[root] = Some(Tensor::ones(loss.shape())?);
        for record in records.into_iter().rev() {
            let Some(g_out) = grads[record.output].take() else {
                continue;
            };
            // Intermediate gradients are released here; only leaves keep theirs.
            let contributions = (record.backward)(&g_out)?;
            drop(g_out);
            for (input, contribution) in record.inputs.iter().zip(contributions) {
                let (Some(id), Some(g)) = (*input, contribution) else {
                    continue;
                };
                grads[id] = Some(match grads[id].take() {
                    None => g,
                    Some(acc) => acc.zip_map(&g, |a, b| a + b)?,
                });
            }
        }
        Ok(Grads { grads })
    }
}

/// Accumulated gradients, indexed by node.
pub struct Grads<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Grads<R> {
    pub fn get(&self, var: &Var<R>) -> Option<&Tensor<R>> {
        var.node.and_then(|id| self.grads.get(id)).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros when no gradient reached it.
    pub fn get_or_zeros(&self, var: &Var<R>) -> Result<Tensor<R>> {
        match self.get(var) {
            Some(g) => Ok(g.clone()),
            None => Tensor::zeros(var.shape()),
        }
    }
}
