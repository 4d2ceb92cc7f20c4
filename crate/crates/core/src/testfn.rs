//! Smooth probe functions with analytic derivatives.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A smooth function on velocity space with exact gradient and Hessian.
pub trait TestFunction: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, v: &[f64]) -> f64;
    fn gradient(&self, v: &[f64]) -> DVector<f64>;
    fn hessian(&self, v: &[f64]) -> DMatrix<f64>;
    /// Ball `(center, radius)` outside of which the function vanishes, if any.
    fn support(&self) -> Option<(Vec<f64>, f64)>;
}

/// `exp(-1 / (1 - |v - c|^2 / R^2))` inside the ball of radius `R` about `c`, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialBump {
    center: Vec<f64>,
    radius: f64,
}

impl RadialBump {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::invalid("center", "must be nonempty"));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("radius", "must be positive"));
        }
        Ok(Self { center, radius })
    }

    /// Builds a bump whose support lies in the open lower half-space.
    pub fn in_half_space(center: Vec<f64>, radius: f64) -> Result<Self> {
        let last = *center.last().ok_or_else(|| Error::invalid("center", "must be nonempty"))?;
        if last + radius >= 0.0 {
            return Err(Error::invalid("radius", "support must stay below the plane v_m = 0"));
        }
        Self::new(center, radius)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `(Phi, dPhi/dq, d2Phi/dq2, d)` with `q = |v - c|^2`.
    fn parts(&self, v: &[f64]) -> Option<(f64, f64, f64, Vec<f64>)> {
        let d: Vec<f64> = v.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let r2 = self.radius * self.radius;
        let u = 1.0 - d.iter().map(|x| x * x).sum::<f64>() / r2;
        if u <= 0.0 {
            return None;
        }
        let phi = (-1.0 / u).exp();
        let dq = -phi / (u * u) / r2;
        let dqq = phi * (1.0 - 2.0 * u) / u.powi(4) / (r2 * r2);
        Some((phi, dq, dqq, d))
    }
}

impl TestFunction for RadialBump {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, v: &[f64]) -> f64 {
        self.parts(v).map_or(0.0, |p| p.0)
    }
    fn gradient(&self, v: &[f64]) -> DVector<f64> {
        match self.parts(v) {
            Some((_, dq, _, d)) => DVector::from_iterator(d.len(), d.iter().map(|x| 2.0 * dq * x)),
            None => DVector::zeros(self.dim()),
        }
    }
    fn hessian(&self, v: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        match self.parts(v) {
            Some((_, dq, dqq, d)) => {
                DMatrix::from_fn(n, n, |i, j| {
                    4.0 * dqq * d[i] * d[j] + if i == j { 2.0 * dq } else { 0.0 }
                })
            }
            None => DMatrix::zeros(n, n),
        }
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        Some((self.center.clone(), self.radius))
    }
}

/// A bump multiplied by `1 + <a, d> + sum_i b_i d_i^2`, `d = v - c`, to break radial symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyBump {
    bump: RadialBump,
    linear: Vec<f64>,
    quadratic: Vec<f64>,
}

impl PolyBump {
    pub fn new(bump: RadialBump, linear: Vec<f64>, quadratic: Vec<f64>) -> Result<Self> {
        if linear.len() != bump.dim() || quadratic.len() != bump.dim() {
            return Err(Error::invalid("linear", "coefficient lengths must match the dimension"));
        }
        Ok(Self {
            bump,
            linear,
            quadratic,
        })
    }

    fn poly(&self, v: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = self.bump.dim();
        let d: Vec<f64> = v.iter().zip(self.bump.center()).map(|(a, b)| a - b).collect();
        let value = 1.0
            + (0..n)
                .map(|i| self.linear[i] * d[i] + self.quadratic[i] * d[i] * d[i])
                .sum::<f64>();
        let grad = DVector::from_fn(n, |i, _| self.linear[i] + 2.0 * self.quadratic[i] * d[i]);
        let hess = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 * self.quadratic[i] } else { 0.0 });
        (value, grad, hess)
    }
}

impl TestFunction for PolyBump {
    fn dim(&self) -> usize {
        self.bump.dim()
    }
    fn value(&self, v: &[f64]) -> f64 {
        self.poly(v).0 * self.bump.value(v)
    }
    fn gradient(&self, v: &[f64]) -> DVector<f64> {
        let (p, gp, _) = self.poly(v);
        self.bump.gradient(v) * p + gp * self.bump.value(v)
    }
    fn hessian(&self, v: &[f64]) -> DMatrix<f64> {
        let (p, gp, hp) = self.poly(v);
        let b = self.bump.value(v);
        let gb = self.bump.gradient(v);
        self.bump.hessian(v) * p + &gp * gb.transpose() + &gb * gp.transpose() + hp * b
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        self.bump.support()
    }
}

/// `1/2 v^T S v + <b, v> + c` with symmetric `S`; not compactly supported.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProbe {
    s: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

impl QuadraticProbe {
    pub fn new(s: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        if !s.is_square() || s.nrows() != b.len() {
            return Err(Error::invalid("s", "shape mismatch"));
        }
        let sym = (&s + s.transpose()) * 0.5;
        Ok(Self { s: sym, b, c })
    }

    /// `|v|^2`.
    pub fn squared_norm(dim: usize) -> Self {
        Self {
            s: DMatrix::identity(dim, dim) * 2.0,
            b: DVector::zeros(dim),
            c: 0.0,
        }
    }

    /// The coordinate function `v_i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut b = DVector::zeros(dim);
        b[i] = 1.0;
        Self {
            s: DMatrix::zeros(dim, dim),
            b,
            c: 0.0,
        }
    }
}

impl TestFunction for QuadraticProbe {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&self, v: &[f64]) -> f64 {
        let x = DVector::from_column_slice(v);
        0.5 * x.dot(&(&self.s * &x)) + self.b.dot(&x) + self.c
    }
    fn gradient(&self, v: &[f64]) -> DVector<f64> {
        &self.s * DVector::from_column_slice(v) + &self.b
    }
    fn hessian(&self, _v: &[f64]) -> DMatrix<f64> {
        self.s.clone()
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        None
    }
}

/// A function of the first `dim - 1` coordinates only, viewed on `R^dim`.
#[derive(Debug, Clone)]
pub struct IgnoreLast<T> {
    inner: T,
}

impl<T: TestFunction> IgnoreLast<T> {
    pub fn new(inner: T) -> Self {
        Self { inner }
    }
}

impl<T: TestFunction> TestFunction for IgnoreLast<T> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }
    fn value(&self, v: &[f64]) -> f64 {
        self.inner.value(&v[..v.len() - 1])
    }
    fn gradient(&self, v: &[f64]) -> DVector<f64> {
        let g = self.inner.gradient(&v[..v.len() - 1]);
        DVector::from_fn(self.dim(), |i, _| if i < g.len() { g[i] } else { 0.0 })
    }
    fn hessian(&self, v: &[f64]) -> DMatrix<f64> {
        let h = self.inner.hessian(&v[..v.len() - 1]);
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| if i < n - 1 && j < n - 1 { h[(i, j)] } else { 0.0 })
    }
    fn support(&self) -> Option<(Vec<f64>, f64)> {
        None
    }
}
