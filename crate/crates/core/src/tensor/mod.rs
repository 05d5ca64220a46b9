//! Dense tensors, a tape-based reverse-mode autodiff engine, the Adam
//! optimizer and a finite-difference gradient checker.
//!
//! Parameters live in a [`ParamStore`] as 32-bit [`Tensor`]s. A forward pass
//! records operations on a [`Tape`], which may run in `f32` (training) or
//! `f64` (gradient checking) precision. `Tape::backward` returns the
//! per-parameter gradients, and `ParamStore::accumulate` adds them into the
//! parameters' grad buffers. Grad buffers are only cleared by an explicit
//! `ParamStore::zero_grad`, so repeated backward passes accumulate.

mod adam;
mod gradcheck;
mod kernels;
mod params;
mod rng;
mod tape;

use std::borrow::Cow;
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamState, WarmupSchedule};
pub use gradcheck::{
    grad_check, grad_check_owned, GradCheckOptions, GradCheckReport, Objective, OwnedObjective,
    ParamError,
};
pub use params::{Gradients, ParamId, ParamStore};
pub use rng::SeededRng;
pub use tape::{Tape, Var};

/// Element type a tape can compute in.
pub trait Scalar:
    Float + Default + Debug + Sum + AddAssign + SubAssign + Send + Sync + 'static
{
    fn cast(x: f64) -> Self;
    fn as_f64(self) -> f64;
    /// View a stored 32-bit parameter buffer in this precision.
    fn load(data: &[f32]) -> Cow<'_, [Self]>;
}

impl Scalar for f32 {
    #[inline]
    fn cast(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn load(data: &[f32]) -> Cow<'_, [f32]> {
        Cow::Borrowed(data)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cast(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn load(data: &[f32]) -> Cow<'_, [f64]> {
        Cow::Owned(data.iter().map(|&x| x as f64).collect())
    }
}

/// Dense row-major 32-bit tensor with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "tensor shape {shape:?} must have positive dimensions"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} elements but data has {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zeros: shape must be positive")
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Self {
        let n: usize = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect()).expect("from_fn: shape must be positive")
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f32]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::Dimension(format!(
                "gradient of length {} for tensor of shape {:?}",
                delta.len(),
                self.shape
            )));
        }
        let g = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
        Ok(())
    }

    /// `(rows, cols)` view used by the tape: vectors are single rows and
    /// higher ranks fold their leading dimensions into rows.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => {
                let c = *s.last().unwrap();
                (self.data.len() / c, c)
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
