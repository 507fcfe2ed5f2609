//! Time-dependent vector fields `v(y, t)` and a few closed-form ones.

use std::cell::Cell;

/// A vector field on `R^d x [0, 1]`.
pub trait VectorField {
    fn dim(&self) -> usize;

    /// Writes `v(y, t)` into `out`; both slices have length `dim()`.
    fn eval(&self, y: &[f64], t: f64, out: &mut [f64]);

    fn eval_vec(&self, y: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(y, t, &mut out);
        out
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, y: &[f64], t: f64, out: &mut [f64]) {
        (**self).eval(y, t, out)
    }
}

impl<F: VectorField + ?Sized> VectorField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, y: &[f64], t: f64, out: &mut [f64]) {
        (**self).eval(y, t, out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZeroField {
    pub dim: usize,
}

impl VectorField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _y: &[f64], _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantField(pub Vec<f64>);

impl VectorField for ConstantField {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn eval(&self, _y: &[f64], _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

/// `v(y, t) = rate * y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearField {
    pub dim: usize,
    pub rate: f64,
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, y: &[f64], _t: f64, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(y) {
            *o = self.rate * v;
        }
    }
}

/// Wraps a closure `f(y, t, out)`.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], f64, &mut [f64])> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], f64, &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, y: &[f64], t: f64, out: &mut [f64]) {
        (self.f)(y, t, out)
    }
}

/// Counts every evaluation of the wrapped field.
pub struct CountingField<F> {
    inner: F,
    calls: Cell<usize>,
}

impl<F: VectorField> CountingField<F> {
    pub fn new(inner: F) -> Self {
        Self { inner, calls: Cell::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn reset(&self) {
        self.calls.set(0);
    }
}

impl<F: VectorField> VectorField for CountingField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, y: &[f64], t: f64, out: &mut [f64]) {
        self.calls.set(self.calls.get() + 1);
        self.inner.eval(y, t, out)
    }
}
