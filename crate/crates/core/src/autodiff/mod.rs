//! Reverse-mode automatic differentiation over the operation set the
//! network needs.
//!
//! A [`Tensor`] is a reference-counted node. Operations whose inputs
//! require gradients record a backward rule and their parents; nodes get
//! increasing ids at creation, so sorting the reachable set by descending
//! id is a valid reverse topological order.

mod gradcheck;
mod ops;
mod optim;

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use gradcheck::{check_case, gradcheck, op_cases, relative_error, CaseBuilder, OpFn, ssm_shapes};
pub use ops::*;
pub use optim::{clip_grad_norm, grad_norm, Adam, AdamConfig};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Maps the upstream gradient to one optional gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[Tensor<T>]) -> Vec<Option<Vec<T>>>>;

struct GradFn<T: Scalar> {
    name: &'static str,
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// N-dimensional row-major array with an optional gradient slot.
pub struct Tensor<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.name))
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn build(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn,
        }))
    }

    fn checked(data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::arg(format!(
                "tensor data has {} values but shape {:?} needs {}",
                data.len(),
                shape,
                n
            )));
        }
        Ok(Self::build(data, shape.to_vec(), requires_grad, None))
    }

    /// A constant.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::checked(data, shape, false)
    }

    /// A trainable leaf that accumulates gradients.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::checked(data, shape, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![T::zero(); shape.iter().product()], shape.to_vec(), false, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::build(vec![v], vec![1], false, None)
    }

    /// Output of an operation. Records the backward rule only when some
    /// parent requires gradients and recording is enabled.
    pub(crate) fn from_op(
        name: &'static str,
        data: Vec<T>,
        shape: Vec<usize>,
        parents: &[&Tensor<T>],
        backward: impl Fn(&[T], &[Tensor<T>]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        if grad_enabled() && parents.iter().any(|p| p.requires_grad()) {
            let grad_fn = GradFn {
                name,
                parents: parents.iter().map(|&p| p.clone()).collect(),
                backward: Box::new(backward),
            };
            Self::build(data, shape, true, Some(grad_fn))
        } else {
            Self::build(data, shape, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the operation that produced this tensor, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::arg(format!("item() on a tensor of shape {:?}", self.shape())));
        }
        Ok(self.0.data.borrow()[0])
    }

    /// Replaces the values in place; the shape is fixed.
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::arg(format!(
                "set_data with {} values on shape {:?}",
                data.len(),
                self.shape()
            )));
        }
        *self.0.data.borrow_mut() = data;
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.0.data.borrow_mut())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.0.grad.borrow().is_some()
    }

    pub(crate) fn with_grad<R>(&self, f: impl FnOnce(Option<&mut Vec<T>>) -> R) -> R {
        f(self.0.grad.borrow_mut().as_mut())
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a += *v;
                }
            }
            None => *slot = Some(g),
        }
    }

    /// A constant sharing no graph with `self`.
    pub fn detach(&self) -> Self {
        Self::build(self.to_vec(), self.shape().to_vec(), false, None)
    }

    /// Accumulates `d self / d leaf` into every reachable leaf that
    /// requires gradients. Repeated uses of a value sum their
    /// contributions.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                stack.extend(gf.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            order.push(t);
        }
        order.sort_by_key(|t| std::cmp::Reverse(t.id()));

        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for t in order {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.0.grad_fn {
                None => t.accumulate_grad(g),
                Some(gf) => {
                    let grads = (gf.backward)(&g, &gf.parents);
                    debug_assert_eq!(grads.len(), gf.parents.len(), "{}", gf.name);
                    for (p, gp) in gf.parents.iter().zip(grads) {
                        let Some(gp) = gp else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(gp.len(), p.numel(), "{}", gf.name);
                        match pending.get_mut(&p.id()) {
                            Some(acc) => {
                                for (a, v) in acc.iter_mut().zip(&gp) {
                                    *a += *v;
                                }
                            }
                            None => {
                                pending.insert(p.id(), gp);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f64>::new(vec![1.0, 2.0], &[3]).is_err());
        assert_eq!(Tensor::<f64>::new(vec![1.0; 6], &[2, 3]).unwrap().numel(), 6);
    }

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::param(vec![1.0f64, -2.0, 3.0], &[3]).unwrap();
        sum(&x).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn l1_against_zero_gives_sign() {
        let x = Tensor::param(vec![1.5f64, -2.0, 0.0], &[3]).unwrap();
        l1(&x, &Tensor::zeros(&[3])).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn diamond_sums_paths() {
        // y = x*x + x, dy/dx = 2x + 1
        let x = Tensor::param(vec![0.5f64, -3.0, 2.0], &[3]).unwrap();
        let y = add(&mul(&x, &x).unwrap(), &x).unwrap();
        sum(&y).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -5.0, 5.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::param(vec![1.0f64, 2.0], &[2]).unwrap();
        assert!(matches!(scale(&x, 2.0).backward(), Err(Error::Argument(_))));
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::param(vec![1.0f64], &[1]).unwrap();
        let y = no_grad(|| scale(&x, 2.0));
        assert!(!y.requires_grad());
        assert!(grad_enabled());
        assert!(scale(&x, 2.0).requires_grad());
    }

    #[test]
    fn detach_cuts_graph() {
        let x = Tensor::param(vec![2.0f64], &[1]).unwrap();
        let y = mul(&x, &x.detach()).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let x = Tensor::param((0..12).map(|i| (i as f64 * 0.7).sin()).collect(), &[1, 3, 4]).unwrap();
            let w = Tensor::param((0..9).map(|i| (i as f64 * 0.3).cos()).collect(), &[3, 3, 1]).unwrap();
            let y = silu(&conv1d(&x, &w, None, 1, 0, 1).unwrap());
            sum(&mul(&y, &y).unwrap()).backward().unwrap();
            (x.grad().unwrap(), w.grad().unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradient_is_linear_in_the_loss() {
        let x = Tensor::param((0..10).map(|i| (i as f64 * 1.3).sin()).collect(), &[10]).unwrap();
        let l1_of = |x: &Tensor<f64>| sum(&mul(x, x).unwrap());
        let l2_of = |x: &Tensor<f64>| sum(&sigmoid(x));
        l1_of(&x).backward().unwrap();
        let g1 = x.grad().unwrap();
        x.zero_grad();
        l2_of(&x).backward().unwrap();
        let g2 = x.grad().unwrap();
        x.zero_grad();
        let (a, b) = (0.7, -2.5);
        add(&scale(&l1_of(&x), a), &scale(&l2_of(&x), b)).unwrap().backward().unwrap();
        for ((g, u), v) in x.grad().unwrap().iter().zip(&g1).zip(&g2) {
            assert!((g - (a * u + b * v)).abs() <= 1e-12);
        }
    }
}
