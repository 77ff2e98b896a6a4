//! Black-box oracles returning value, gradient and Hessian.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Value, gradient and Hessian of the objective at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    pub point: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl OracleSample {
    pub fn dim(&self) -> usize {
        self.point.len()
    }

    /// Checks shapes, finiteness and Hessian symmetry (relative 1e-12).
    pub fn validate(&self) -> Result<()> {
        let n = self.point.len();
        if self.gradient.len() != n || self.hessian.shape() != (n, n) {
            return Err(Error::InvalidInput(format!(
                "sample shapes disagree: point {n}, gradient {}, hessian {:?}",
                self.gradient.len(),
                self.hessian.shape()
            )));
        }
        let finite = self.value.is_finite()
            && self.point.iter().all(|v| v.is_finite())
            && self.gradient.iter().all(|v| v.is_finite())
            && self.hessian.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite oracle sample".into()));
        }
        let scale = 1.0 + self.hessian.amax();
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "hessian is not symmetric (asymmetry {asym:e})"
            )));
        }
        Ok(())
    }
}

/// Activity label of a point for problems with known structure.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Region {
    /// Index of the strictly dominant piece of a max function.
    Piece(usize),
    /// Sign pattern of the inner terms of a sum of absolute values.
    Signs(Vec<i8>),
}

/// One oracle response: the sample plus smooth-region membership.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub sample: OracleSample,
    /// Whether the objective is twice continuously differentiable around the point.
    pub in_domain: bool,
    pub region: Option<Region>,
}

/// A black-box objective. Implementations must be reentrant.
pub trait Oracle {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &DVector<f64>) -> Evaluation;
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        (**self).evaluate(x)
    }
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        (**self).evaluate(x)
    }
}

/// Oracle backed by a closure, for registering objectives programmatically.
pub struct FnOracle<F> {
    dim: usize,
    f: F,
}

impl<F> FnOracle<F>
where
    F: Fn(&DVector<f64>) -> Evaluation,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Oracle for FnOracle<F>
where
    F: Fn(&DVector<f64>) -> Evaluation,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        (self.f)(x)
    }
}

/// Counts every call that reaches the wrapped oracle.
pub struct CountingOracle<O> {
    inner: O,
    calls: AtomicUsize,
}

impl<O: Oracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: Oracle> Oracle for CountingOracle<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(x)
    }
}

pub(crate) fn check_finite(x: &DVector<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}
