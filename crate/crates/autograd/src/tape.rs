use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Maps the output gradient to one optional gradient per parent. The flags
/// say which parents actually need one.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    op: &'static str,
    scope: Rc<str>,
}

/// Records operations for one forward pass so gradients can be replayed in
/// reverse. Nodes are appended in evaluation order, which is already a
/// topological order.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
    scopes: RefCell<Vec<String>>,
    current_scope: RefCell<Rc<str>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_grad(true)
    }

    /// A tape that never records backward closures; for inference.
    pub fn no_grad() -> Self {
        Self::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled,
            scopes: RefCell::new(Vec::new()),
            current_scope: RefCell::new(Rc::from("")),
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.insert(value, Vec::new(), None, self.grad_enabled, "leaf")
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.insert(value, Vec::new(), None, false, "constant")
    }

    /// Pushes a named scope used to label nodes created until the guard drops.
    pub fn enter(&self, name: &str) -> ScopeGuard<'_> {
        let mut scopes = self.scopes.borrow_mut();
        scopes.push(name.to_string());
        *self.current_scope.borrow_mut() = Rc::from(scopes.join("."));
        ScopeGuard { tape: self }
    }

    fn insert(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
        op: &'static str,
    ) -> Var<'_> {
        let scope = Rc::clone(&self.current_scope.borrow());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
            op,
            scope,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records an op result. The closure is kept only if some parent needs a
    /// gradient.
    pub(crate) fn push<'t>(
        &'t self,
        op: &'static str,
        value: Tensor,
        parents: &[Var<'t>],
        backward: impl Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    ) -> Result<Var<'t>> {
        if parents.iter().any(|p| !std::ptr::eq(p.tape, self)) {
            return Err(TensorError::ForeignTape);
        }
        let requires_grad = self.grad_enabled && parents.iter().any(|p| p.requires_grad());
        let backward: Option<BackwardFn> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        Ok(self.insert(
            value,
            parents.iter().map(|p| p.id).collect(),
            backward,
            requires_grad,
            op,
        ))
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse-mode sweep from a scalar output. Returns gradients for every
    /// leaf that was reached.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(output.tape, self) {
            return Err(TensorError::ForeignTape);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[output.id];
        if root.value.numel() != 1 {
            return Err(TensorError::invalid(
                "backward",
                format!("output must be scalar, got {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.id + 1];
        grads[output.id] = Some(Tensor::ones(root.value.shape().to_vec()));
        let mut leaves = HashMap::new();
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = &node.backward else {
                if node.parents.is_empty() {
                    leaves.insert(id, g);
                }
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "op {}", node.op);
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(
                    pg.shape(),
                    nodes[p].value.shape(),
                    "gradient shape from op {}",
                    node.op
                );
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { by_node: leaves })
    }

    /// Scope and op name of the earliest node holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<NodeLabel> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
            .map(|(id, n)| NodeLabel {
                id,
                op: n.op,
                scope: n.scope.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLabel {
    pub id: usize,
    pub op: &'static str,
    pub scope: String,
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scope.is_empty() {
            write!(f, "{} (node {})", self.op, self.id)
        } else {
            write!(f, "{}/{} (node {})", self.scope, self.op, self.id)
        }
    }
}

pub struct ScopeGuard<'t> {
    tape: &'t Tape,
}

impl Drop for ScopeGuard<'_> {
    fn drop(&mut self) {
        let mut scopes = self.tape.scopes.borrow_mut();
        scopes.pop();
        *self.tape.current_scope.borrow_mut() = Rc::from(scopes.join("."));
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_node: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.by_node.get(&var.id)
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.tape.nodes.borrow()[self.id].value.shape()[axis]
    }

    pub fn rank(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.rank()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Constant with the same tape, e.g. for masks.
    pub fn constant(&self, value: Tensor) -> Var<'t> {
        self.tape.constant(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones([2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn no_grad_tape_records_no_closures() {
        let tape = Tape::no_grad();
        let x = tape.leaf(Tensor::ones([2]));
        let y = x.mul(&x).unwrap().sum().unwrap();
        assert!(!y.requires_grad());
        assert!(tape.backward(y).unwrap().is_empty());
    }

    #[test]
    fn scopes_label_nodes() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        {
            let _outer = tape.enter("stage1");
            let _inner = tape.enter("psr");
            let _ = x.ln().unwrap().neg().unwrap().ln().unwrap();
        }
        let label = tape.first_non_finite().unwrap();
        assert_eq!(label.scope, "stage1.psr");
        assert_eq!(label.op, "ln");
    }
}
