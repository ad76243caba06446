//! Dense `f64` tensors that record a backward graph as they are combined.
//!
//! Every op produces a new immutable [`Tensor`]. When at least one input
//! requires a gradient (and recording is enabled for the current thread),
//! the result keeps a reference to its inputs plus a closure that maps the
//! output gradient to input gradients. [`Tensor::backward`] walks that graph
//! in reverse topological order.
//!
//! Gradients *accumulate* into every reachable tensor that requires one.
//! Call [`Tensor::zero_grad`] (or `Module::zero_grad`) between steps.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Result, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static PARAMS_FROZEN: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with graph recording disabled on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Runs `f` with every [`crate::Parameter`] handed out as a detached
/// constant, so only explicit input leaves collect gradients.
pub fn with_frozen_params<R>(f: impl FnOnce() -> R) -> R {
    let prev = PARAMS_FROZEN.with(|g| g.replace(true));
    let out = f();
    PARAMS_FROZEN.with(|g| g.set(prev));
    out
}

pub fn params_frozen() -> bool {
    PARAMS_FROZEN.with(|g| g.get())
}

/// Maps the output gradient to one optional gradient per parent. The second
/// argument says which parents actually need one.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

pub(crate) struct GradFn {
    pub(crate) name: &'static str,
    pub(crate) parents: Vec<Tensor>,
    pub(crate) backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.name))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
        requires_grad: bool,
        grad_fn: Option<GradFn>,
    ) -> Tensor {
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    /// A constant leaf.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != numel(shape) {
            return Err(TensorError::ShapeMismatch {
                op: "new",
                shapes: vec![shape.to_vec(), vec![data.len()]],
            });
        }
        check_finite("new", &data)?;
        Ok(Self::build(shape.to_vec(), Arc::new(data), false, None))
    }

    /// A leaf that collects gradients.
    pub fn leaf(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Self::new(data, shape)?;
        Ok(t.with_requires_grad())
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::build(vec![1], Arc::new(vec![v]), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::build(
            shape.to_vec(),
            Arc::new(vec![0.0; numel(shape)]),
            false,
            None,
        )
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Self::build(shape.to_vec(), Arc::new(vec![v; numel(shape)]), false, None)
    }

    /// A fresh leaf with the same values that does require a gradient.
    pub fn with_requires_grad(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// Result of an op. Records the backward closure only when needed.
    pub(crate) fn from_op(
        name: &'static str,
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: &[&Tensor],
        backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    ) -> Result<Tensor> {
        debug_assert_eq!(data.len(), numel(&shape));
        check_finite(name, &data)?;
        let track = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let grad_fn = track.then(|| GradFn {
            name,
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Box::new(backward),
        });
        Ok(Self::build(shape, Arc::new(data), track, grad_fn))
    }

    /// Result of a shape-only op that shares storage with its input.
    pub(crate) fn view_op(name: &'static str, source: &Tensor, shape: Vec<usize>) -> Tensor {
        let track = is_grad_enabled() && source.requires_grad();
        let grad_fn = track.then(|| GradFn {
            name,
            parents: vec![source.clone()],
            backward: Box::new(|g: &[f64], _: &[bool]| vec![Some(g.to_vec())]),
        });
        Self::build(shape, source.0.data.clone(), track, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        self.0.data.clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.to_vec()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(
            self.numel(),
            1,
            "item() on a tensor of shape {:?}",
            self.shape()
        );
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar. Gradients accumulate into every
    /// reachable tensor that requires one.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            node.accumulate_grad(&g);
            let Some(grad_fn) = node.0.grad_fn.as_ref() else {
                continue;
            };
            let needs: Vec<bool> = grad_fn.parents.iter().map(|p| p.requires_grad()).collect();
            let parent_grads = (grad_fn.backward)(&g, &needs);
            for ((parent, pg), need) in grad_fn.parents.iter().zip(parent_grads).zip(needs) {
                let (Some(pg), true) = (pg, need) else {
                    continue;
                };
                debug_assert_eq!(pg.len(), parent.numel(), "{} grad size", grad_fn.name);
                match pending.get_mut(&parent.id()) {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(parent.id(), pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Parents before children, restricted to tensors that require grad.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = t.0.grad_fn.as_ref() {
                for p in &gf.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// True if `other` is reachable from `self` through the backward graph.
    pub fn depends_on(&self, other: &Tensor) -> bool {
        self.topological_order()
            .iter()
            .any(|t| t.id() == other.id())
    }
}

/// Gradient of the scalar `f(input)` with respect to `input`, with every
/// model parameter treated as a constant.
pub fn grad_wrt_input(input: &Tensor, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let x = input.detach().with_requires_grad();
    let out = with_frozen_params(|| f(&x))?;
    if out.numel() != 1 {
        return Err(TensorError::NotScalarLoss(out.shape().to_vec()));
    }
    if !out.depends_on(&x) {
        return Err(TensorError::InputNotInGraph);
    }
    out.backward()?;
    let g = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
    Tensor::new(g, x.shape())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_has_gradient_two_x() {
        let x = Tensor::leaf(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn backward_needs_scalar() {
        let x = Tensor::leaf(vec![1.0, 2.0], &[2]).unwrap();
        let y = x.relu().unwrap();
        assert_eq!(y.backward(), Err(TensorError::NotScalarLoss(vec![2])));
    }

    #[test]
    fn detached_tensor_gets_no_grad() {
        let x = Tensor::leaf(vec![2.0], &[1]).unwrap();
        let d = x.detach();
        let y = x.mul(&d).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
        assert!(d.grad().is_none());
    }

    #[test]
    fn repeated_backward_accumulates_until_zeroed() {
        let x = Tensor::leaf(vec![3.0], &[1]).unwrap();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
        x.zero_grad();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::leaf(vec![1.0], &[1]).unwrap();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        assert_eq!(
            Tensor::new(vec![f64::NAN], &[1]).unwrap_err(),
            TensorError::NonFinite { op: "new" }
        );
        let x = Tensor::new(vec![1000.0], &[1]).unwrap();
        assert!(matches!(x.exp(), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn grad_wrt_input_of_sigmoid_sum_at_zero() {
        let s = Tensor::zeros(&[2, 3]);
        let g = grad_wrt_input(&s, |x| x.sigmoid()?.sum()).unwrap();
        assert!(g.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn grad_wrt_input_of_constant_is_zero() {
        let s = Tensor::new(vec![0.3, -1.2], &[2]).unwrap();
        let g = grad_wrt_input(&s, |x| x.sum()?.scale(0.0)?.add_scalar(3.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn grad_wrt_input_detects_unused_input() {
        let s = Tensor::zeros(&[2]);
        let other = Tensor::leaf(vec![1.0], &[1]).unwrap();
        let err = grad_wrt_input(&s, |_| other.sum()).unwrap_err();
        assert_eq!(err, TensorError::InputNotInGraph);
    }
}
