//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable row-major float arrays. Operations on tracked
//! tensors record a backward closure linking the result to its inputs; the
//! resulting graph is consumed by [`Tensor::backward`], which deposits
//! gradients into every `requires_grad` leaf reachable from the loss and
//! frees the recorded closures as it goes.
//!
//! Precision is a type parameter: `Tensor<f32>` is the runtime default,
//! `Tensor<f64>` is used wherever gradients are checked against finite
//! differences.

mod ops;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

/// Float element type for tensors. `f32` for runtime, `f64` for
/// gradient-check headroom.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Send + Sync + std::iter::Sum<Self> + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

thread_local! {
    static GRAD_ENABLED: std::cell::Cell<bool> = const { std::cell::Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on this thread. Forward values
/// are unaffected; no backward graph is built.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    GRAD_ENABLED.with(|cell| {
        let prev = cell.replace(false);
        let out = f();
        cell.set(prev);
        out
    })
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|cell| cell.get())
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Backward closure: maps the output gradient to per-parent gradient
/// contributions (None for parents that do not track gradients).
type Vjp<E> = Box<dyn Fn(&[E]) -> Vec<Option<Vec<E>>> + Send + Sync>;

struct BackOp<E: Element> {
    parents: Vec<Tensor<E>>,
    vjp: Vjp<E>,
}

struct Node<E: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<E>>>,
    op: Mutex<Option<BackOp<E>>>,
}

/// A dense multi-dimensional float array, optionally participating in the
/// gradient tape. Cloning is cheap (shared storage).
#[derive(Clone)]
pub struct Tensor<E: Element>(Arc<Node<E>>);

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.data())
            .finish()
    }
}

fn check_len<E: Element>(shape: &[usize], data: &[E]) {
    let numel: usize = shape.iter().product();
    assert_eq!(
        numel,
        data.len(),
        "shape {:?} implies {} elements, got {}",
        shape,
        numel,
        data.len()
    );
}

impl<E: Element> Tensor<E> {
    fn make(shape: Vec<usize>, data: Vec<E>, requires_grad: bool, op: Option<BackOp<E>>) -> Self {
        check_len(&shape, &data);
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: Arc::new(data),
            requires_grad,
            grad: Mutex::new(None),
            op: Mutex::new(op),
        }))
    }

    /// Constant tensor (does not track gradients).
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Self {
        Self::make(shape.to_vec(), data, false, None)
    }

    /// Trainable leaf: participates in `backward` and accumulates into its
    /// gradient buffer.
    pub fn parameter(shape: &[usize], data: Vec<E>) -> Self {
        Self::make(shape.to_vec(), data, true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_vec(shape, vec![E::zero(); numel])
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel = shape.iter().product();
        Self::from_vec(shape, vec![value; numel])
    }

    /// Rank-0 scalar.
    pub fn scalar(value: E) -> Self {
        Self::from_vec(&[], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn data(&self) -> &[E] {
        &self.0.data
    }

    fn data_arc(&self) -> Arc<Vec<E>> {
        Arc::clone(&self.0.data)
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on non-scalar shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    fn id(&self) -> u64 {
        self.0.id
    }

    /// Whether gradients flow through this tensor (trainable leaf, or result
    /// of an op over tracked inputs whose backward has not yet run).
    pub fn tracks(&self) -> bool {
        self.0.requires_grad || self.0.op.lock().unwrap().is_some()
    }

    /// Same storage, detached from the tape.
    pub fn detach(&self) -> Tensor<E> {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: self.0.shape.clone(),
            data: self.data_arc(),
            requires_grad: false,
            grad: Mutex::new(None),
            op: Mutex::new(None),
        }))
    }

    /// Accumulated gradient, if `backward` has deposited one.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.0.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().unwrap() = None;
    }

    fn accumulate_grad(&self, g: &[E]) {
        let mut slot = self.0.grad.lock().unwrap();
        match slot.as_mut() {
            Some(buf) => {
                for (b, &gi) in buf.iter_mut().zip(g) {
                    *b = *b + gi;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    fn op_parents(&self) -> Vec<Tensor<E>> {
        self.0
            .op
            .lock()
            .unwrap()
            .as_ref()
            .map(|op| op.parents.clone())
            .unwrap_or_default()
    }

    fn take_op(&self) -> Option<BackOp<E>> {
        self.0.op.lock().unwrap().take()
    }

    /// Result of an op: records the backward closure when tracking is on.
    fn with_op(
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<Tensor<E>>,
        vjp: Vjp<E>,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(Tensor::tracks);
        if track {
            Self::make(shape, data, false, Some(BackOp { parents, vjp }))
        } else {
            Self::make(shape, data, false, None)
        }
    }

    /// Reverse-mode sweep from a scalar loss. Deposits `d loss / d leaf`
    /// into every reachable `requires_grad` leaf (accumulating with any
    /// gradient already present) and clears the recorded graph.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape().to_vec(),
            });
        }

        // Iterative post-order topological sort over tracked nodes.
        enum Visit<E: Element> {
            Enter(Tensor<E>),
            Exit(Tensor<E>),
        }
        let mut topo: Vec<Tensor<E>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack = vec![Visit::Enter(self.clone())];
        while let Some(v) = stack.pop() {
            match v {
                Visit::Enter(node) => {
                    if !visited.insert(node.id()) {
                        continue;
                    }
                    let parents = node.op_parents();
                    stack.push(Visit::Exit(node));
                    for p in parents {
                        if p.tracks() && !visited.contains(&p.id()) {
                            stack.push(Visit::Enter(p));
                        }
                    }
                }
                Visit::Exit(node) => topo.push(node),
            }
        }

        let mut grads: HashMap<u64, Vec<E>> = HashMap::new();
        grads.insert(self.id(), vec![E::one()]);

        for node in topo.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            if node.requires_grad() {
                node.accumulate_grad(&g);
            }
            if let Some(op) = node.take_op() {
                let contribs = (op.vjp)(&g);
                debug_assert_eq!(contribs.len(), op.parents.len());
                for (parent, contrib) in op.parents.iter().zip(contribs) {
                    let Some(c) = contrib else { continue };
                    debug_assert_eq!(c.len(), parent.numel());
                    match grads.get_mut(&parent.id()) {
                        Some(buf) => {
                            for (b, ci) in buf.iter_mut().zip(c) {
                                *b = *b + ci;
                            }
                        }
                        None => {
                            grads.insert(parent.id(), c);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
