//! Minimal reverse-mode differentiation graph, built define-by-run.
//!
//! Each operation allocates a node holding its forward value, a zeroed
//! gradient, references to its parents, and a backward rule mapping the
//! incoming gradient to per-parent contributions. Node ids increase with
//! creation order, so descending id order is a reverse topological order.

use std::cell::{Cell, Ref, RefCell};
use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which backward rules the RBFI-specific operations use. Forward passes are
/// identical in both modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Pseudo,
    True,
}

/// Backward recipe: (gradient at this node, value of this node) to one
/// optional contribution per parent, aligned with the parents list. `None`
/// marks a parent that does not require gradient.
pub type BackwardRule = Box<dyn Fn(&Tensor, &Tensor) -> Vec<Option<Tensor>>>;

pub struct Node {
    pub id: usize,
    pub value: Tensor,
    pub grad: Tensor,
    pub requires_grad: bool,
    parents: Vec<Var>,
    backward_rule: Option<BackwardRule>,
}

thread_local! {
    static NEXT_ID: Cell<usize> = const { Cell::new(0) };
}

fn next_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// A shared handle to a graph node.
#[derive(Clone)]
pub struct Var(Rc<RefCell<Node>>);

impl Var {
    /// A trainable leaf (gradient will be accumulated).
    pub fn leaf(value: Tensor) -> Var {
        Var::raw(value, true, vec![], None)
    }

    /// A leaf that never receives gradient.
    pub fn constant(value: Tensor) -> Var {
        Var::raw(value, false, vec![], None)
    }

    pub(crate) fn from_op(value: Tensor, parents: Vec<Var>, rule: BackwardRule) -> Var {
        let requires = parents.iter().any(Var::requires_grad);
        debug_assert!(value.all_finite(), "non-finite op output");
        Var::raw(value, requires, parents, Some(rule))
    }

    fn raw(
        value: Tensor,
        requires_grad: bool,
        parents: Vec<Var>,
        rule: Option<BackwardRule>,
    ) -> Var {
        let grad = Tensor::zeros(value.shape());
        Var(Rc::new(RefCell::new(Node {
            id: next_id(),
            value,
            grad,
            requires_grad,
            parents,
            backward_rule: rule,
        })))
    }

    pub fn id(&self) -> usize {
        self.0.borrow().id
    }

    pub fn requires_grad(&self) -> bool {
        self.0.borrow().requires_grad
    }

    pub fn value(&self) -> Ref<'_, Tensor> {
        Ref::map(self.0.borrow(), |n| &n.value)
    }

    pub fn value_clone(&self) -> Tensor {
        self.0.borrow().value.clone()
    }

    pub fn grad(&self) -> Tensor {
        self.0.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        let mut n = self.0.borrow_mut();
        n.grad = Tensor::zeros(n.value.shape());
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.0.borrow().value.item()
    }
}

/// Accumulate gradients of every reachable requires-grad node with respect
/// to a scalar root. Propagation runs through pass-local buffers, so calling
/// twice without zeroing adds a second full contribution instead of
/// re-propagating stale intermediate gradients.
pub fn backward(root: &Var) -> Result<()> {
    if !root.0.borrow().value.is_scalar() {
        return Err(Error::Usage(format!(
            "backward needs a scalar root, got shape {:?}",
            root.shape()
        )));
    }

    // Collect reachable nodes, then walk them in descending id order. Parents
    // are always created before children, so this is reverse topological.
    let mut seen: HashSet<usize> = HashSet::new();
    let mut order: Vec<Var> = Vec::new();
    let mut stack = vec![root.clone()];
    seen.insert(root.id());
    while let Some(v) = stack.pop() {
        for p in v.0.borrow().parents.iter() {
            if seen.insert(p.id()) {
                stack.push(p.clone());
            }
        }
        order.push(v);
    }
    order.sort_by_key(|v| std::cmp::Reverse(v.id()));

    let mut local: HashMap<usize, Tensor> = HashMap::new();
    local.insert(root.id(), Tensor::full(root.0.borrow().value.shape(), 1.0));

    for v in order {
        let Some(g) = local.remove(&v.id()) else {
            continue;
        };
        let (contribs, parents) = {
            let mut n = v.0.borrow_mut();
            if !n.requires_grad {
                continue;
            }
            n.grad.add_assign(&g);
            let Some(rule) = n.backward_rule.as_ref() else {
                continue;
            };
            (rule(&g, &n.value), n.parents.clone())
        };
        debug_assert_eq!(contribs.len(), parents.len());
        for (p, c) in parents.iter().zip(contribs) {
            if let Some(c) = c {
                if !p.requires_grad() {
                    continue;
                }
                match local.entry(p.id()) {
                    Entry::Occupied(mut e) => e.get_mut().add_assign(&c),
                    Entry::Vacant(e) => {
                        e.insert(c);
                    }
                }
            }
        }
    }
    Ok(())
}
