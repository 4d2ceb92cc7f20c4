//! Periodic billiard floors: graphs of a function `F` over a flat torus.
//!
//! A [`Surface`] is the floor of the configuration region `{(x, z) : z >= F(x)}`
//! where `x` lives on `T^n = R^n / (a_1 Z x ... x a_n Z)`. The concrete
//! profiles used by the experiments are collected in the [`Profile`] enum; any
//! other floor can be plugged in by implementing [`Surface`] directly.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinate distance under which a point counts as lying on a kink.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Reduces `x` modulo `period` into `[-period/2, period/2)`.
#[inline]
pub fn wrap(x: f64, period: f64) -> f64 {
    let half = 0.5 * period;
    let mut r = x - period * (x / period + 0.5).floor();
    if r >= half {
        r -= period;
    } else if r < -half {
        r += period;
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusLattice {
    periods: Vec<f64>,
}

impl TorusLattice {
    pub fn new(periods: Vec<f64>) -> Result<Self> {
        if periods.is_empty() {
            return Err(Error::invalid("periods", "torus needs at least one period"));
        }
        if let Some(bad) = periods.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::invalid("periods", format!("period {bad} is not positive")));
        }
        Ok(Self { periods })
    }

    pub fn dim(&self) -> usize {
        self.periods.len()
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn volume(&self) -> f64 {
        self.periods.iter().product()
    }

    pub fn canonicalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.canonicalize_in_place(&mut out);
        out
    }

    pub fn canonicalize_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for (xi, &a) in x.iter_mut().zip(&self.periods) {
            *xi = wrap(*xi, a);
        }
    }

    /// Longest period; the natural length scale of the cell.
    pub fn max_period(&self) -> f64 {
        self.periods.iter().cloned().fold(0.0, f64::max)
    }
}

/// Boundary function `F` of a billiard of graph type.
///
/// Coordinates passed to the methods need not be canonical; implementations
/// reduce them onto the torus themselves.
pub trait Surface: Send + Sync + fmt::Debug {
    fn lattice(&self) -> &TorusLattice;

    fn height(&self, x: &[f64]) -> f64;

    /// Writes `grad F(x)` into `out`. Values on the singular set are unspecified.
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    /// True where `grad F` is undefined (kinks, cell boundaries of arcs, ...).
    fn is_singular(&self, x: &[f64]) -> bool;

    /// Upper bound on `|grad F|`, used by the collision marcher.
    fn lipschitz(&self) -> f64;

    /// `sup |grad F|^2` over the torus.
    fn flatness(&self) -> f64;

    fn max_height(&self) -> f64;

    fn min_height(&self) -> f64;

    /// Whether `F(-u) = F(u)` about the origin of the cell.
    fn is_symmetric(&self) -> bool;

    fn dim(&self) -> usize {
        self.lattice().dim()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, &mut g);
        g
    }
}

/// Unit normal `(e - grad F) / sqrt(1 + |grad F|^2)` of the graph at `x`, as an
/// `(n+1)`-vector with positive last component.
pub fn normal_vector<S: Surface + ?Sized>(surface: &S, x: &[f64]) -> Result<Vec<f64>> {
    if surface.is_singular(x) {
        return Err(Error::SingularPoint(surface.lattice().canonicalize(x)));
    }
    let g = surface.gradient(x);
    Ok(normal_from_gradient(&g))
}

pub(crate) fn normal_from_gradient(g: &[f64]) -> Vec<f64> {
    let norm = (1.0 + g.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let mut n: Vec<f64> = g.iter().map(|gi| -gi / norm).collect();
    n.push(1.0 / norm);
    n
}

/// Grid estimate of `sup |grad F|^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlatnessEstimate {
    /// Lower bound on the supremum.
    pub value: f64,
    pub argmax: Vec<f64>,
    pub points_per_dim: usize,
    pub refined: bool,
}

/// Maximizes `|grad F|^2` over a cell-centred grid, then refines each
/// coordinate of the best point by golden-section search within one cell.
/// The result is a lower bound on the true supremum.
pub fn grid_flatness<S: Surface + ?Sized>(surface: &S, points_per_dim: usize) -> FlatnessEstimate {
    let lattice = surface.lattice();
    let dim = lattice.dim();
    let n = points_per_dim.max(2);
    let total = n.pow(dim as u32);
    let point = |mut idx: usize| -> Vec<f64> {
        let mut x = vec![0.0; dim];
        for (d, xd) in x.iter_mut().enumerate() {
            let a = lattice.periods()[d];
            let i = idx % n;
            idx /= n;
            *xd = -0.5 * a + (i as f64 + 0.5) * a / n as f64;
        }
        x
    };
    let sq = |x: &[f64]| -> f64 {
        if surface.is_singular(x) {
            return f64::NEG_INFINITY;
        }
        surface.gradient(x).iter().map(|g| g * g).sum()
    };
    let (best_idx, best) = (0..total)
        .into_par_iter()
        .map(|i| (i, sq(&point(i))))
        .reduce(
            || (usize::MAX, f64::NEG_INFINITY),
            |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
        );
    if best_idx == usize::MAX || !best.is_finite() {
        return FlatnessEstimate {
            value: 0.0,
            argmax: vec![0.0; dim],
            points_per_dim: n,
            refined: false,
        };
    }
    let mut x = point(best_idx);
    let mut value = best;
    for d in 0..dim {
        let h = lattice.periods()[d] / n as f64;
        let (t, v) = golden_max(
            |t| {
                let mut y = x.clone();
                y[d] += t;
                sq(&y)
            },
            -h,
            h,
            60,
        );
        if v > value {
            value = v;
            x[d] += t;
        }
    }
    FlatnessEstimate {
        value,
        argmax: lattice.canonicalize(&x),
        points_per_dim: n,
        refined: true,
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Mean squared slope `int_0^1 f'(a_1 s)^2 ds` of a circular arc of radius `R`
/// spanning one period `a_1`, as a function of `kappa = a_1 / R`.
pub fn scale_free_curvature_integral(kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Domain(format!("curvature {kappa} not in (0, 1)")));
    }
    if kappa < 1e-4 {
        let k2 = kappa * kappa;
        return Ok(k2 / 12.0 + k2 * k2 / 80.0 + k2 * k2 * k2 / 448.0);
    }
    Ok(2.0 * (0.5 * kappa).atanh() / kappa - 1.0)
}

// ---------------------------------------------------------------------------
// Concrete profiles
// ---------------------------------------------------------------------------

/// `F = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatProfile {
    lattice: TorusLattice,
}

impl FlatProfile {
    pub fn new(periods: Vec<f64>) -> Result<Self> {
        Ok(Self {
            lattice: TorusLattice::new(periods)?,
        })
    }
}

impl Surface for FlatProfile {
    fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }
    fn height(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn gradient_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn is_singular(&self, _x: &[f64]) -> bool {
        false
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
    fn flatness(&self) -> f64 {
        0.0
    }
    fn max_height(&self) -> f64 {
        0.0
    }
    fn min_height(&self) -> f64 {
        0.0
    }
    fn is_symmetric(&self) -> bool {
        true
    }
}

/// Circular cap of radius `R` over one period `a_1`, vanishing at the cell ends:
/// `F(x) = sqrt(R^2 - x^2) - sqrt(R^2 - a_1^2/4)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcProfile {
    lattice: TorusLattice,
    radius: f64,
    offset: f64,
}

impl ArcProfile {
    pub fn new(a1: f64, radius: f64) -> Result<Self> {
        let lattice = TorusLattice::new(vec![a1])?;
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("radius", "must be positive"));
        }
        if a1 / radius >= 1.0 {
            return Err(Error::invalid(
                "radius",
                format!("scale-free curvature a1/R = {} must be < 1", a1 / radius),
            ));
        }
        Ok(Self {
            lattice,
            radius,
            offset: (radius * radius - 0.25 * a1 * a1).sqrt(),
        })
    }

    pub fn period(&self) -> f64 {
        self.lattice.periods()[0]
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn curvature(&self) -> f64 {
        self.period() / self.radius
    }

    #[inline]
    fn slope(&self, x: f64) -> f64 {
        let z = wrap(x, self.period());
        -z / (self.radius * self.radius - z * z).sqrt()
    }
}

impl Surface for ArcProfile {
    fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }
    fn height(&self, x: &[f64]) -> f64 {
        let z = wrap(x[0], self.period());
        (self.radius * self.radius - z * z).sqrt() - self.offset
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.slope(x[0]);
    }
    fn is_singular(&self, x: &[f64]) -> bool {
        let z = wrap(x[0], self.period());
        (0.5 * self.period() - z.abs()).abs() < SINGULAR_TOL
    }
    fn lipschitz(&self) -> f64 {
        self.flatness().sqrt()
    }
    fn flatness(&self) -> f64 {
        let half = 0.5 * self.period();
        half * half / (self.radius * self.radius - half * half)
    }
    fn max_height(&self) -> f64 {
        self.radius - self.offset
    }
    fn min_height(&self) -> f64 {
        0.0
    }
    fn is_symmetric(&self) -> bool {
        true
    }
}

/// Point mass above a wall that moves up and down, in mass-weighted coordinates:
/// `F(x_0, x_1) = sqrt(m_1/m_0) |x_0| + f(a_1 x_1) / a_1`.
///
/// `x_0` is the rescaled wall height with period `tau = (a_0/a_1) sqrt(m_0/m_1)`,
/// `x_1` the particle's position along the wall with unit period. The inner
/// contour `f` is any one-dimensional profile of period `a_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingWallProfile {
    lattice: TorusLattice,
    inner: Box<Profile>,
    a1: f64,
    m0: f64,
    m1: f64,
    slope: f64,
}

impl MovingWallProfile {
    pub fn new(inner: Profile, m0: f64, m1: f64, a0: f64) -> Result<Self> {
        if inner.dim() != 1 {
            return Err(Error::invalid("inner", "wall contour must be one-dimensional"));
        }
        for (name, v) in [("m0", m0), ("m1", m1), ("a0", a0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        let a1 = inner.lattice().periods()[0];
        let tau = a0 / a1 * (m0 / m1).sqrt();
        Ok(Self {
            lattice: TorusLattice::new(vec![tau, 1.0])?,
            inner: Box::new(inner),
            a1,
            m0,
            m1,
            slope: (m1 / m0).sqrt(),
        })
    }

    pub fn inner(&self) -> &Profile {
        &self.inner
    }

    pub fn mass_ratio(&self) -> f64 {
        self.m1 / self.m0
    }

    /// Variance of the rescaled wall velocity for a physical wall-velocity
    /// variance `sigma0_sq`.
    pub fn hidden_variance(&self, sigma0_sq: f64) -> f64 {
        self.m0 / self.m1 * sigma0_sq / (self.a1 * self.a1)
    }

    fn tau(&self) -> f64 {
        self.lattice.periods()[0]
    }
}

impl Surface for MovingWallProfile {
    fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }
    fn height(&self, x: &[f64]) -> f64 {
        let x0 = wrap(x[0], self.tau());
        self.slope * x0.abs() + self.inner.height(&[self.a1 * x[1]]) / self.a1
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let x0 = wrap(x[0], self.tau());
        out[0] = self.slope * x0.signum();
        let mut g = [0.0];
        self.inner.gradient_into(&[self.a1 * x[1]], &mut g);
        out[1] = g[0];
    }
    fn is_singular(&self, x: &[f64]) -> bool {
        let x0 = wrap(x[0], self.tau()).abs();
        x0 < SINGULAR_TOL
            || (0.5 * self.tau() - x0).abs() < SINGULAR_TOL
            || self.inner.is_singular(&[self.a1 * x[1]])
    }
    fn lipschitz(&self) -> f64 {
        self.flatness().sqrt()
    }
    fn flatness(&self) -> f64 {
        self.slope * self.slope + self.inner.flatness()
    }
    fn max_height(&self) -> f64 {
        self.slope * 0.5 * self.tau() + self.inner.max_height() / self.a1
    }
    fn min_height(&self) -> f64 {
        self.inner.min_height() / self.a1
    }
    fn is_symmetric(&self) -> bool {
        self.inner.is_symmetric()
    }
}

/// Wall of `k` bound masses and one free mass `m`:
/// `F(x) = max_i sqrt(m/m_i) |x_i|`.
#[derive(Debug, Clone, PartialEq)]
pub struct TentProfile {
    lattice: TorusLattice,
    slopes: Vec<f64>,
}

impl TentProfile {
    /// `periods` defaults to unit periods when `None`.
    pub fn new(m: f64, masses: &[f64], periods: Option<Vec<f64>>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::invalid("masses", "need at least one bound mass"));
        }
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::invalid("m", "must be positive"));
        }
        if masses.iter().any(|mi| !(mi.is_finite() && *mi > 0.0)) {
            return Err(Error::invalid("masses", "must be positive"));
        }
        let periods = periods.unwrap_or_else(|| vec![1.0; masses.len()]);
        if periods.len() != masses.len() {
            return Err(Error::invalid("periods", "one period per bound mass"));
        }
        Ok(Self {
            lattice: TorusLattice::new(periods)?,
            slopes: masses.iter().map(|mi| (m / mi).sqrt()).collect(),
        })
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Index of the active sector and the two largest weighted coordinates.
    fn sector(&self, x: &[f64]) -> (usize, f64, f64, f64) {
        let mut best = (0usize, f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0);
        for (i, (&xi, &a)) in x.iter().zip(self.lattice.periods()).enumerate() {
            let z = wrap(xi, a);
            let w = self.slopes[i] * z.abs();
            if w > best.1 {
                best = (i, w, best.1, z);
            } else if w > best.2 {
                best.2 = w;
            }
        }
        best
    }
}

impl Surface for TentProfile {
    fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }
    fn height(&self, x: &[f64]) -> f64 {
        self.sector(x).1
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let (i, _, _, z) = self.sector(x);
        out.fill(0.0);
        out[i] = self.slopes[i] * z.signum();
    }
    fn is_singular(&self, x: &[f64]) -> bool {
        let (i, top, second, z) = self.sector(x);
        let a = self.lattice.periods()[i];
        let smax = self.slopes.iter().cloned().fold(0.0, f64::max);
        (top - second).abs() < SINGULAR_TOL * smax
            || z.abs() < SINGULAR_TOL
            || (0.5 * a - z.abs()).abs() < SINGULAR_TOL
    }
    fn lipschitz(&self) -> f64 {
        self.flatness().sqrt()
    }
    fn flatness(&self) -> f64 {
        self.slopes.iter().map(|s| s * s).fold(0.0, f64::max)
    }
    fn max_height(&self) -> f64 {
        self.slopes
            .iter()
            .zip(self.lattice.periods())
            .map(|(s, a)| 0.5 * s * a)
            .fold(0.0, f64::max)
    }
    fn min_height(&self) -> f64 {
        0.0
    }
    fn is_symmetric(&self) -> bool {
        true
    }
}

/// `s F` for a base profile `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledProfile {
    base: Box<Profile>,
    factor: f64,
}

impl ScaledProfile {
    pub fn new(base: Profile, factor: f64) -> Result<Self> {
        if !factor.is_finite() {
            return Err(Error::invalid("factor", "must be finite"));
        }
        Ok(Self {
            base: Box::new(base),
            factor,
        })
    }
}

impl Surface for ScaledProfile {
    fn lattice(&self) -> &TorusLattice {
        self.base.lattice()
    }
    fn height(&self, x: &[f64]) -> f64 {
        self.factor * self.base.height(x)
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        self.base.gradient_into(x, out);
        out.iter_mut().for_each(|g| *g *= self.factor);
    }
    fn is_singular(&self, x: &[f64]) -> bool {
        self.base.is_singular(x)
    }
    fn lipschitz(&self) -> f64 {
        self.factor.abs() * self.base.lipschitz()
    }
    fn flatness(&self) -> f64 {
        self.factor * self.factor * self.base.flatness()
    }
    fn max_height(&self) -> f64 {
        if self.factor >= 0.0 {
            self.factor * self.base.max_height()
        } else {
            self.factor * self.base.min_height()
        }
    }
    fn min_height(&self) -> f64 {
        if self.factor >= 0.0 {
            self.factor * self.base.min_height()
        } else {
            self.factor * self.base.max_height()
        }
    }
    fn is_symmetric(&self) -> bool {
        self.base.is_symmetric()
    }
}

/// The built-in floors.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Flat(FlatProfile),
    Arc(ArcProfile),
    MovingWall(MovingWallProfile),
    Tent(TentProfile),
    Scaled(ScaledProfile),
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Profile::Flat($p) => $e,
            Profile::Arc($p) => $e,
            Profile::MovingWall($p) => $e,
            Profile::Tent($p) => $e,
            Profile::Scaled($p) => $e,
        }
    };
}

impl Surface for Profile {
    fn lattice(&self) -> &TorusLattice {
        dispatch!(self, p => p.lattice())
    }
    fn height(&self, x: &[f64]) -> f64 {
        dispatch!(self, p => p.height(x))
    }
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        dispatch!(self, p => p.gradient_into(x, out))
    }
    fn is_singular(&self, x: &[f64]) -> bool {
        dispatch!(self, p => p.is_singular(x))
    }
    fn lipschitz(&self) -> f64 {
        dispatch!(self, p => p.lipschitz())
    }
    fn flatness(&self) -> f64 {
        dispatch!(self, p => p.flatness())
    }
    fn max_height(&self) -> f64 {
        dispatch!(self, p => p.max_height())
    }
    fn min_height(&self) -> f64 {
        dispatch!(self, p => p.min_height())
    }
    fn is_symmetric(&self) -> bool {
        dispatch!(self, p => p.is_symmetric())
    }
}

impl Profile {
    pub fn flat(periods: Vec<f64>) -> Result<Self> {
        FlatProfile::new(periods).map(Profile::Flat)
    }

    pub fn arc(a1: f64, radius: f64) -> Result<Self> {
        ArcProfile::new(a1, radius).map(Profile::Arc)
    }

    pub fn moving_wall(inner: Profile, m0: f64, m1: f64, a0: f64) -> Result<Self> {
        MovingWallProfile::new(inner, m0, m1, a0).map(Profile::MovingWall)
    }

    pub fn tent(m: f64, masses: &[f64], periods: Option<Vec<f64>>) -> Result<Self> {
        TentProfile::new(m, masses, periods).map(Profile::Tent)
    }

    pub fn scaled(self, factor: f64) -> Result<Self> {
        ScaledProfile::new(self, factor).map(Profile::Scaled)
    }
}

fn default_a0() -> f64 {
    1.0
}

/// Tagged configuration record for the built-in profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Flat {
        periods: Vec<f64>,
    },
    Arc {
        a1: f64,
        radius: f64,
    },
    MovingWall {
        a1: f64,
        radius: f64,
        m0: f64,
        m1: f64,
        #[serde(default = "default_a0")]
        a0: f64,
    },
    Tent {
        m: f64,
        masses: Vec<f64>,
        #[serde(default)]
        periods: Option<Vec<f64>>,
    },
}

impl ProfileSpec {
    pub fn build(&self) -> Result<Profile> {
        match self {
            ProfileSpec::Flat { periods } => Profile::flat(periods.clone()),
            ProfileSpec::Arc { a1, radius } => Profile::arc(*a1, *radius),
            ProfileSpec::MovingWall {
                a1,
                radius,
                m0,
                m1,
                a0,
            } => Profile::moving_wall(Profile::arc(*a1, *radius)?, *m0, *m1, *a0),
            ProfileSpec::Tent { m, masses, periods } => Profile::tent(*m, masses, periods.clone()),
        }
    }
}
