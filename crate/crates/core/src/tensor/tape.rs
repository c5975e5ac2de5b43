use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward closure sees: the gradient flowing into the op's output,
/// the forward inputs and output, and which inputs actually need a gradient.
pub struct BackwardCtx<'a> {
    pub grad: &'a [f64],
    pub inputs: &'a [&'a Tensor],
    pub output: &'a Tensor,
    pub needs: &'a [bool],
}

/// Returns one gradient per input (`None` where `needs` is false).
pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    op: &'static str,
    value: Rc<Tensor>,
    inputs: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Records operations in execution order. Nodes are appended only after
/// their inputs exist, so the node list is already topologically sorted.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, Var>>,
    kink_margin: Cell<f64>,
    kink_pattern: Cell<u64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            kink_margin: Cell::new(f64::INFINITY),
            kink_pattern: Cell::new(0xcbf2_9ce4_8422_2325),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Node {
            op: "constant",
            value: Rc::new(value),
            inputs: Vec::new(),
            requires_grad: false,
            backward: None,
        })
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(Node {
            op: "leaf",
            value: Rc::new(value),
            inputs: Vec::new(),
            requires_grad: true,
            backward: None,
        })
    }

    /// Binds a stored parameter to this tape. Binding the same parameter
    /// twice yields the same variable, so all its uses share one gradient.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.borrow().get(&id) {
            return *v;
        }
        let v = self.leaf(store.get(id).value.clone());
        self.params.borrow_mut().insert(id, v);
        v
    }

    /// Appends a computed value together with its backward rule.
    pub fn record(
        &self,
        op: &'static str,
        inputs: &[Var],
        output: Tensor,
        backward: BackwardFn,
    ) -> Result<Var> {
        if !output.is_finite() {
            return Err(Error::Numeric { op });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        Ok(self.push(Node {
            op,
            value: Rc::new(output),
            inputs: inputs.iter().map(|v| v.0).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        }))
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Smallest |pre-activation| seen by a piecewise-linear activation.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin.get()
    }

    /// Hash of the sign pattern of every piecewise-linear activation input.
    /// Two passes with equal patterns lie on the same linear piece.
    pub fn kink_signature(&self) -> u64 {
        self.kink_pattern.get()
    }

    pub(crate) fn note_kinks(&self, values: &[f64]) {
        let m = values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if m < self.kink_margin.get() {
            self.kink_margin.set(m);
        }
        let mut h = self.kink_pattern.get();
        for v in values {
            h = (h ^ u64::from(*v > 0.0)).wrapping_mul(0x0100_0000_01b3);
        }
        self.kink_pattern.set(h);
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &*nodes[i].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            };
            let input_grads = backward(&ctx);
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !nodes[input].requires_grad {
                    continue;
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric { op: node.op });
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }

        let params = self
            .params
            .borrow()
            .iter()
            .map(|(id, v)| (*id, *v))
            .collect();
        Ok(Grads { grads, params })
    }
}

/// Gradients of a loss with respect to every leaf and bound parameter.
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zeros if the loss does not depend on it.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(v).len()],
        }
    }

    /// Gradients indexed by parameter id; parameters absent from the tape get zeros.
    pub fn for_params(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = store
            .iter()
            .map(|p| vec![0.0; p.value.len()])
            .collect();
        for (id, var) in &self.params {
            if let Some(g) = self.get(*var) {
                out[id.index()].copy_from_slice(g);
            }
        }
        out
    }
}
