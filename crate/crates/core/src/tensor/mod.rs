//! Dense 4-D tensors with reverse-mode automatic differentiation.
//!
//! Tensors are `(n, c, h, w)` arrays of `f64`. Every differentiable
//! operation eagerly records a node on an implicit tape (the `grad_fn`
//! chain); [`backward`](autograd::backward) walks the recorded graph and
//! accumulates gradients into leaf tensors created with
//! `requires_grad = true`. Gradients accumulate across backward calls until
//! explicitly cleared, matching a conventional optimizer loop.
//!
//! A graph is confined to one thread. Frozen tensors (no grad) are plain
//! data and can be copied around freely.

mod adam;
mod autograd;
pub mod gradcheck;
mod ops;


pub use adam::{adam_step, AdamState};
pub use autograd::backward;
pub use ops::{
    add, batch_norm, concat_channels, conv2d, flatten_channels, l1_distance, leaky_relu,
    mean_all, mul, noise_inject, scale, softplus, sub, sub_broadcast, sum_all, upsample_nearest,
};

use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Tensor extent as (batch, channels, height, width).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn scalar() -> Self {
        Self::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// True unless running inside [`no_grad`].
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` without recording any autodiff graph. Forward passes under this
/// guard produce frozen tensors, which keeps inference and detached GAN
/// passes cheap.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub(crate) struct TensorInner {
    id: u64,
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    needs_grad: bool,
    grad_fn: Option<Rc<dyn ops::GradFn>>,
}

/// Shared handle to a tensor node. Cloning is cheap and aliases storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorInner>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        write!(
            f,
            "Tensor(shape={}, requires_grad={})",
            inner.shape, inner.requires_grad
        )
    }
}

impl Tensor {
    fn from_inner(inner: TensorInner) -> Self {
        Self {
            inner: Rc::new(RefCell::new(inner)),
        }
    }

    /// Leaf tensor from raw data.
    pub fn from_vec(data: Vec<f64>, shape: Shape) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "from_vec",
                format!("data length {} != numel of {}", data.len(), shape),
            ));
        }
        Ok(Self::from_inner(TensorInner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            grad: None,
            requires_grad: false,
            needs_grad: false,
            grad_fn: None,
        }))
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::from_vec(vec![0.0; shape.numel()], shape).expect("consistent")
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Self::from_vec(vec![value; shape.numel()], shape).expect("consistent")
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// I.i.d. standard normal samples; never tracks gradients.
    pub fn randn(shape: Shape, rng: &mut RngState) -> Self {
        let data: Vec<f64> = (0..shape.numel()).map(|_| rng.normal()).collect();
        Self::from_vec(data, shape).expect("consistent")
    }

    /// Mark this leaf as a trainable value. Only valid on leaves.
    pub fn set_requires_grad(&self, requires: bool) {
        let mut inner = self.inner.borrow_mut();
        assert!(
            inner.grad_fn.is_none(),
            "requires_grad can only be toggled on leaf tensors"
        );
        inner.requires_grad = requires;
        inner.needs_grad = requires;
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub(crate) fn needs_grad(&self) -> bool {
        self.inner.borrow().needs_grad
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    pub fn shape(&self) -> Shape {
        self.inner.borrow().shape
    }

    pub fn numel(&self) -> usize {
        self.shape().numel()
    }

    /// Borrow the flat data slice.
    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Element accessor (test/debug convenience).
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let inner = self.inner.borrow();
        inner.data[inner.shape.index(n, c, y, x)]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.shape.numel(), 1, "item() requires a scalar tensor");
        inner.data[0]
    }

    /// Overwrite data in place (same length required). Used by optimizers
    /// and weight loading; does not touch the recorded graph.
    pub fn set_data(&self, data: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(data.len(), inner.data.len(), "set_data length mismatch");
        inner.data.copy_from_slice(data);
    }

    /// Apply `f` to the mutable data slice.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        let mut inner = self.inner.borrow_mut();
        f(&mut inner.data);
    }

    /// Current accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn clear_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        match &mut inner.grad {
            Some(existing) => {
                for (a, b) in existing.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => inner.grad = Some(g.to_vec()),
        }
    }

    /// Copy of the data as a frozen leaf, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::from_vec(self.to_vec(), self.shape()).expect("consistent")
    }

    /// True if any element is NaN or infinite (checked mode helper).
    pub fn has_non_finite(&self) -> bool {
        self.inner.borrow().data.iter().any(|v| !v.is_finite())
    }

    pub(crate) fn grad_fn(&self) -> Option<Rc<dyn ops::GradFn>> {
        self.inner.borrow().grad_fn.clone()
    }

    /// Record the result of an operation. When gradients are disabled or no
    /// parent tracks gradients, the result is a plain frozen leaf.
    pub(crate) fn from_op(data: Vec<f64>, shape: Shape, grad_fn: Rc<dyn ops::GradFn>) -> Tensor {
        let track = grad_enabled() && grad_fn.parents().iter().any(|p| p.needs_grad());
        debug_assert_eq!(data.len(), shape.numel());
        Tensor::from_inner(TensorInner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            grad: None,
            requires_grad: false,
            needs_grad: track,
            grad_fn: track.then_some(grad_fn),
        })
    }
}

/// A named trainable tensor. Names are hierarchical (`"head.weight"`) and
/// unique within a model; they key the weight-file records.
#[derive(Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        tensor.set_requires_grad(true);
        Self {
            name: name.into(),
            tensor,
        }
    }

    /// Frozen variant: named but never trained (e.g. fixed feature nets).
    pub fn frozen(name: impl Into<String>, tensor: Tensor) -> Self {
        tensor.set_requires_grad(false);
        Self {
            name: name.into(),
            tensor,
        }
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }
}

/// Total scalar parameter count of a parameter list.
pub fn param_count(params: &[Parameter]) -> usize {
    params.iter().map(|p| p.numel()).sum()
}

/// Clear gradients on every parameter.
pub fn zero_grads(params: &[Parameter]) {
    for p in params {
        p.tensor.clear_grad();
    }
}
