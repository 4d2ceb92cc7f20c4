//! Scattering matrices and the second-order operators of the weak-scattering limit.
//!
//! Full velocities live in `R^{n+1}` with the first `k` coordinates hidden.
//! Test functions and evaluation points live in the observed space `R^m`,
//! `m = n + 1 - k`, whose last coordinate is the normal one. All matrices are
//! stored in full `(n+1) x (n+1)` form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Profile, Surface};
use crate::scattering::{estimate_p_phi, HiddenLaw, Sampling, Scatterer};
use crate::testfn::TestFunction;

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const ADAPTED_TOL: f64 = 1e-10;
/// Minimum grid resolution per torus dimension accepted by [`compute_a`].
pub const MIN_QUADRATURE_POINTS: usize = 1000;

/// The matrices `A`, `C`, `Lambda` and the scalars derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterMatrices {
    /// `A` at the flatness it was computed for, when known.
    pub a: Option<DMatrix<f64>>,
    /// Second moments of the hidden velocity, supported on the hidden block.
    pub c: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub hidden_dim: usize,
    pub trace_c_lambda: f64,
    pub trace_lambda_wedge: f64,
    /// `Tr(C Lambda) / Tr(Lambda^)` when the hidden block of `Lambda` is nonzero.
    pub sigma2: Option<f64>,
    pub adapted: bool,
}

fn check_symmetric_psd(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(name, "must be square"));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(name, "entries must be finite"));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(name, format!("not symmetric (defect {asym:e})")));
    }
    let min_eig = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if min_eig < -SYMMETRY_TOL {
        return Err(Error::invalid(name, format!("not positive semidefinite (eigenvalue {min_eig:e})")));
    }
    Ok(())
}

impl ScatterMatrices {
    /// Builds the triple from `Lambda` and the hidden law; `C = Var(w) Q^`.
    pub fn new(lambda: DMatrix<f64>, hidden: &HiddenLaw) -> Result<Self> {
        check_symmetric_psd("lambda", &lambda)?;
        let big_n = lambda.nrows();
        let k = hidden.k();
        if k >= big_n {
            return Err(Error::invalid("lambda", "needs at least one observed coordinate"));
        }
        let var = hidden.variance().unwrap_or(0.0);
        let c = DMatrix::from_fn(big_n, big_n, |i, j| if i == j && i < k { var } else { 0.0 });
        let trace_lambda_wedge: f64 = (0..k).map(|i| lambda[(i, i)]).sum();
        let trace_c_lambda = (&c * &lambda).trace();
        let mut off_block = 0.0f64;
        for i in 0..k {
            for j in k..big_n {
                off_block = off_block.max(lambda[(i, j)].abs());
            }
        }
        Ok(Self {
            a: None,
            c,
            hidden_dim: k,
            trace_c_lambda,
            trace_lambda_wedge,
            sigma2: (trace_lambda_wedge > 0.0).then(|| trace_c_lambda / trace_lambda_wedge),
            adapted: off_block <= ADAPTED_TOL,
            lambda,
        })
    }

    pub fn with_a(mut self, a: DMatrix<f64>) -> Result<Self> {
        check_symmetric_psd("a", &a)?;
        if a.shape() != self.lambda.shape() {
            return Err(Error::invalid("a", "shape must match lambda"));
        }
        self.a = Some(a);
        Ok(self)
    }

    pub fn full_dim(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn observed_dim(&self) -> usize {
        self.full_dim() - self.hidden_dim
    }

    pub fn trace_lambda(&self) -> f64 {
        self.lambda.trace()
    }

    /// Observed block `Lambda^v` as an `m x m` matrix.
    pub fn observed_lambda(&self) -> DMatrix<f64> {
        let k = self.hidden_dim;
        let m = self.observed_dim();
        self.lambda.view((k, k), (m, m)).into_owned()
    }

    /// Largest entry of the off-diagonal hidden/observed blocks.
    pub fn adaptation_defect(&self) -> f64 {
        let k = self.hidden_dim;
        let mut d = 0.0f64;
        for i in 0..k {
            for j in k..self.full_dim() {
                d = d.max(self.lambda[(i, j)].abs());
            }
        }
        d
    }

    fn require_adapted(&self) -> Result<()> {
        if self.adapted {
            Ok(())
        } else {
            Err(Error::NotAdapted(self.adaptation_defect()))
        }
    }

    /// Stationary density `|v_m| exp(-|v|^2 / 2 sigma^2)` of the observed
    /// velocity, up to normalization; `|v_m|` alone when there is no hidden scale.
    pub fn stationary_density(&self, v: &[f64]) -> f64 {
        let vm = v[v.len() - 1].abs();
        match self.sigma2 {
            Some(s2) => vm * (-v.iter().map(|x| x * x).sum::<f64>() / (2.0 * s2)).exp(),
            None => vm,
        }
    }

    fn check_point(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.observed_dim() {
            return Err(Error::invalid("v", format!("expected {} components", self.observed_dim())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite velocity {v:?}")));
        }
        if v[v.len() - 1] == 0.0 {
            return Err(Error::Domain("normal component v_m must be nonzero".into()));
        }
        Ok(())
    }
}

/// Symmetric PSD square root with negative rounding noise clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|x| if x > SYMMETRY_TOL { x.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn check_phi(phi: &dyn TestFunction, dim: usize) -> Result<()> {
    if phi.dim() != dim {
        return Err(Error::invalid("phi", format!("expected a function of {dim} variables")));
    }
    Ok(())
}

/// `(L Phi)(v)` for the general limit operator:
/// `-4<Lambda grad Phi, v> + (2/v_m)[a + T - Tr(Lambda) v_m^2] Phi_m
///  + 2 v_m [v_m Tr(Lambda^v H) - 2 v^T Lambda^v H e] + 2(a + T) H_mm`
/// with `a = v^T Lambda^v v` and `T = Tr(C Lambda)`.
pub fn mb_laplacian_apply(mats: &ScatterMatrices, phi: &dyn TestFunction, v: &[f64]) -> Result<f64> {
    mats.require_adapted()?;
    mats.check_point(v)?;
    check_phi(phi, v.len())?;
    let m = v.len();
    let lo = mats.observed_lambda();
    let vv = DVector::from_column_slice(v);
    let g = phi.gradient(v);
    let h = phi.hessian(v);
    let vm = v[m - 1];
    let lv = &lo * &vv;
    let a = vv.dot(&lv);
    let t = mats.trace_c_lambda;
    let big_l = mats.trace_lambda();
    let he = h.column(m - 1);
    let term1 = -4.0 * lv.dot(&g);
    let term2 = 2.0 / vm * (a + t - big_l * vm * vm) * g[m - 1];
    let term3 = 2.0 * vm * (vm * (&lo * &h).trace() - 2.0 * lv.dot(&he));
    let term4 = 2.0 * (a + t) * h[(m - 1, m - 1)];
    Ok(term1 + term2 + term3 + term4)
}

/// First-order coefficients of `L`: `-4 Lambda^v v + 2[(a + T)/v_m - Tr(Lambda) v_m] e`.
pub fn drift_vector(mats: &ScatterMatrices, v: &[f64]) -> Result<DVector<f64>> {
    mats.require_adapted()?;
    mats.check_point(v)?;
    let m = v.len();
    let lo = mats.observed_lambda();
    let vv = DVector::from_column_slice(v);
    let lv = &lo * &vv;
    let a = vv.dot(&lv);
    let vm = v[m - 1];
    let mut z = lv * -4.0;
    z[m - 1] += 2.0 * ((a + mats.trace_c_lambda) / vm - mats.trace_lambda() * vm);
    Ok(z)
}

/// Symmetric matrix `S` with second-order part of `L` equal to `Tr(S Hess)`:
/// `2 v_m^2 Lambda^v - 2 v_m (Lambda^v v e^T + e v^T Lambda^v) + 2(a + T) e e^T`.
pub fn second_order_matrix(mats: &ScatterMatrices, v: &[f64]) -> Result<DMatrix<f64>> {
    mats.require_adapted()?;
    mats.check_point(v)?;
    let m = v.len();
    let lo = mats.observed_lambda();
    let vv = DVector::from_column_slice(v);
    let lv = &lo * &vv;
    let a = vv.dot(&lv);
    let vm = v[m - 1];
    let mut e = DVector::zeros(m);
    e[m - 1] = 1.0;
    let cross = &lv * e.transpose() + &e * lv.transpose();
    let mut s = &lo * (2.0 * vm * vm) - cross * (2.0 * vm);
    s[(m - 1, m - 1)] += 2.0 * (a + mats.trace_c_lambda);
    Ok(s)
}

/// Principal symbol `2 (v_m xi - xi_m v)^T Lambda^v (v_m xi - xi_m v) + 2 T xi_m^2`.
pub fn ellipticity_symbol(mats: &ScatterMatrices, v: &[f64], xi: &[f64]) -> Result<f64> {
    mats.require_adapted()?;
    mats.check_point(v)?;
    if xi.len() != v.len() {
        return Err(Error::invalid("xi", "must have the observed dimension"));
    }
    let m = v.len();
    if !(v[m - 1] < 0.0) {
        return Err(Error::Domain("symbol is evaluated on the lower half-space".into()));
    }
    let lo = mats.observed_lambda();
    let vm = v[m - 1];
    let xm = xi[m - 1];
    let u = DVector::from_fn(m, |i, _| vm * xi[i] - xm * v[i]);
    Ok(2.0 * u.dot(&(&lo * &u)) + 2.0 * mats.trace_c_lambda * xm * xm)
}

/// One-dimensional form `2 lambda sigma^2 [(1/v - v/sigma^2) Phi' + Phi'']` on `v > 0`.
pub fn laguerre_apply(lambda: f64, sigma2: f64, phi: &dyn TestFunction, v: f64) -> Result<f64> {
    check_laguerre(lambda, sigma2, phi, v)?;
    let d1 = phi.gradient(&[v])[0];
    let d2 = phi.hessian(&[v])[(0, 0)];
    Ok(2.0 * lambda * sigma2 * ((1.0 / v - v / sigma2) * d1 + d2))
}

/// The same operator as `2 lambda sigma^2 (rho Phi')' / rho`,
/// `rho = sigma^-2 v exp(-v^2 / 2 sigma^2)`.
pub fn laguerre_sturm_liouville(lambda: f64, sigma2: f64, phi: &dyn TestFunction, v: f64) -> Result<f64> {
    check_laguerre(lambda, sigma2, phi, v)?;
    let d1 = phi.gradient(&[v])[0];
    let d2 = phi.hessian(&[v])[(0, 0)];
    let ex = (-v * v / (2.0 * sigma2)).exp();
    let rho = v * ex / sigma2;
    let drho = ex * (1.0 - v * v / sigma2) / sigma2;
    Ok(2.0 * lambda * sigma2 * (drho * d1 + rho * d2) / rho)
}

fn check_laguerre(lambda: f64, sigma2: f64, phi: &dyn TestFunction, v: f64) -> Result<()> {
    check_phi(phi, 1)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid("lambda", "must be nonnegative"));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", "must be positive"));
    }
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::Domain(format!("speed {v} must be positive")));
    }
    Ok(())
}

/// Constant-speed form `2 sum_i lambda_i [(1 - |v|^2) Phi_ii - 2 v_i Phi_i]` on the open unit ball.
pub fn legendre_apply(lambdas: &[f64], phi: &dyn TestFunction, v: &[f64]) -> Result<f64> {
    if lambdas.len() != v.len() {
        return Err(Error::invalid("lambdas", "one coefficient per coordinate"));
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::invalid("lambdas", "must be nonnegative"));
    }
    check_phi(phi, v.len())?;
    let r2: f64 = v.iter().map(|x| x * x).sum();
    if !(r2 < 1.0) {
        return Err(Error::Domain(format!("|v| = {} is not inside the unit ball", r2.sqrt())));
    }
    let g = phi.gradient(v);
    let h = phi.hessian(v);
    Ok(2.0
        * lambdas
            .iter()
            .enumerate()
            .map(|(i, l)| l * ((1.0 - r2) * h[(i, i)] - 2.0 * v[i] * g[i]))
            .sum::<f64>())
}

/// `(D Phi)(v) = sqrt2 [Lambda^{1/2}(v_m grad Phi - Phi_m v) + T^{1/2} Phi_m e]`
/// as a vector in the observed space.
pub fn mb_gradient_apply(mats: &ScatterMatrices, phi: &dyn TestFunction, v: &[f64]) -> Result<DVector<f64>> {
    mats.require_adapted()?;
    mats.check_point(v)?;
    check_phi(phi, v.len())?;
    let g = phi.gradient(v);
    Ok(mb_gradient_from(mats, &psd_sqrt(&mats.observed_lambda()), v, &g))
}

fn mb_gradient_from(mats: &ScatterMatrices, root: &DMatrix<f64>, v: &[f64], g: &DVector<f64>) -> DVector<f64> {
    let m = v.len();
    let vm = v[m - 1];
    let gm = g[m - 1];
    let u = DVector::from_fn(m, |i, _| vm * g[i] - gm * v[i]);
    let mut out = root * u;
    out[m - 1] += mats.trace_c_lambda.sqrt() * gm;
    out * std::f64::consts::SQRT_2
}

/// Central difference of `f` along coordinate `i`, Richardson-extrapolated.
fn partial<F: Fn(&[f64]) -> f64>(f: &F, v: &[f64], i: usize, step: f64) -> f64 {
    let diff = |d: f64| {
        let mut p = v.to_vec();
        let mut q = v.to_vec();
        p[i] += d;
        q[i] -= d;
        (f(&p) - f(&q)) / (2.0 * d)
    };
    (4.0 * diff(step / 2.0) - diff(step)) / 3.0
}

/// `(D* Xi)(v)`, the adjoint of [`mb_gradient_apply`] in `L^2(rho)`, computed as
/// `rho^{-1} D'(rho Xi)` with
/// `D' Y = sqrt2 [-div(v_m Lambda^{1/2} Y) + d_m <v, Lambda^{1/2} Y> - T^{1/2} d_m Y_m]`
/// and derivatives by finite differences of size `step`.
pub fn mb_adjoint_apply<X>(mats: &ScatterMatrices, xi: X, v: &[f64], step: f64) -> Result<f64>
where
    X: Fn(&[f64]) -> DVector<f64>,
{
    mats.require_adapted()?;
    mats.check_point(v)?;
    if !(step > 0.0 && step < v[v.len() - 1].abs()) {
        return Err(Error::invalid("step", "must be positive and keep the stencil off v_m = 0"));
    }
    let m = v.len();
    let root = psd_sqrt(&mats.observed_lambda());
    let ts = mats.trace_c_lambda.sqrt();
    let weighted = |u: &[f64]| xi(u) * mats.stationary_density(u);
    let mut div = 0.0;
    for i in 0..m {
        let comp = |u: &[f64]| u[m - 1] * (&root * weighted(u))[i];
        div += partial(&comp, v, i, step);
    }
    let radial = |u: &[f64]| DVector::from_column_slice(u).dot(&(&root * weighted(u)));
    let normal = |u: &[f64]| weighted(u)[m - 1];
    let dprime = -div + partial(&radial, v, m - 1, step) - ts * partial(&normal, v, m - 1, step);
    Ok(std::f64::consts::SQRT_2 * dprime / mats.stationary_density(v))
}

/// `-(D* D Phi)(v)` by finite differences.
pub fn mb_laplacian_via_gradient(mats: &ScatterMatrices, phi: &dyn TestFunction, v: &[f64], step: f64) -> Result<f64> {
    check_phi(phi, v.len())?;
    let root = psd_sqrt(&mats.observed_lambda());
    let field = |u: &[f64]| mb_gradient_from(mats, &root, u, &phi.gradient(u));
    Ok(-mb_adjoint_apply(mats, field, v, step)?)
}

/// Midpoint rule for `f` over the box `[lo, hi]` with `points_per_dim` cells per side.
pub fn box_midpoint<F>(lo: &[f64], hi: &[f64], points_per_dim: usize, f: F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = lo.len();
    let widths: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a) / points_per_dim as f64).collect();
    let cell: f64 = widths.iter().product();
    let total = points_per_dim.pow(d as u32);
    let rows = points_per_dim.pow(d.saturating_sub(1) as u32);
    let sum: f64 = (0..rows)
        .into_par_iter()
        .map(|row| {
            let mut x = vec![0.0; d];
            let mut r = row;
            for j in 1..d {
                x[j] = lo[j] + (r % points_per_dim) as f64 * widths[j] + 0.5 * widths[j];
                r /= points_per_dim;
            }
            let mut s = 0.0;
            for i0 in 0..points_per_dim {
                x[0] = lo[0] + (i0 as f64 + 0.5) * widths[0];
                s += f(&x);
            }
            s
        })
        .sum();
    debug_assert_eq!(rows * points_per_dim, total);
    sum * cell
}

/// `A = (1/|T|) int n_bar (x) n_bar dx` by the tensor midpoint rule on the
/// period cell. Singular nodes are skipped and the mean is taken over the
/// remaining ones. Returned as an `(n+1) x (n+1)` matrix.
pub fn compute_a<S: Surface + ?Sized>(surface: &S, points_per_dim: usize) -> Result<DMatrix<f64>> {
    if points_per_dim < MIN_QUADRATURE_POINTS {
        return Err(Error::invalid(
            "points_per_dim",
            format!("need at least {MIN_QUADRATURE_POINTS} points per dimension"),
        ));
    }
    Ok(midpoint_a(surface, points_per_dim))
}

fn midpoint_a<S: Surface + ?Sized>(surface: &S, p: usize) -> DMatrix<f64> {
    let n = surface.dim();
    let periods = surface.lattice().periods().to_vec();
    let rows = p.pow(n as u32 - 1);
    let (acc, regular) = (0..rows)
        .into_par_iter()
        .fold(
            || (DMatrix::<f64>::zeros(n, n), 0u64),
            |(mut acc, mut regular), row| {
                let mut x = vec![0.0; n];
                let mut r = row;
                for j in 1..n {
                    x[j] = ((r % p) as f64 + 0.5) / p as f64 * periods[j] - 0.5 * periods[j];
                    r /= p;
                }
                let mut g = vec![0.0; n];
                for i0 in 0..p {
                    x[0] = (i0 as f64 + 0.5) / p as f64 * periods[0] - 0.5 * periods[0];
                    if surface.is_singular(&x) {
                        continue;
                    }
                    regular += 1;
                    surface.gradient_into(&x, &mut g);
                    let w = 1.0 / (1.0 + g.iter().map(|t| t * t).sum::<f64>());
                    for a in 0..n {
                        for b in a..n {
                            acc[(a, b)] += w * g[a] * g[b];
                        }
                    }
                }
                (acc, regular)
            },
        )
        .reduce(|| (DMatrix::zeros(n, n), 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let total = regular.max(1) as f64;
    let mut full = DMatrix::zeros(n + 1, n + 1);
    for a in 0..n {
        for b in a..n {
            full[(a, b)] = acc[(a, b)] / total;
            full[(b, a)] = full[(a, b)];
        }
    }
    full
}

/// Outcome of [`compute_a_adaptive`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveA {
    pub a: DMatrix<f64>,
    pub points_per_dim: usize,
    /// Largest entrywise change at the final doubling.
    pub change: f64,
    pub converged: bool,
}

/// Doubles the grid from `start` until successive estimates differ by less
/// than `tol` or the grid would exceed `max_points_per_dim`.
pub fn compute_a_adaptive<S: Surface + ?Sized>(
    surface: &S,
    start: usize,
    tol: f64,
    max_points_per_dim: usize,
) -> Result<AdaptiveA> {
    let mut p = start;
    let mut a = compute_a(surface, p)?;
    loop {
        if 2 * p > max_points_per_dim {
            return Ok(AdaptiveA {
                a,
                points_per_dim: p,
                change: f64::INFINITY,
                converged: false,
            });
        }
        let next = midpoint_a(surface, 2 * p);
        let change = (&next - &a).amax();
        p *= 2;
        a = next;
        if change < tol {
            return Ok(AdaptiveA {
                a,
                points_per_dim: p,
                change,
                converged: true,
            });
        }
    }
}

/// Extrapolated `Lambda = lim A(h)/h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaFit {
    pub lambda: DMatrix<f64>,
    /// Largest RMS residual of the entrywise polynomial fits.
    pub residual: f64,
    /// Largest change of the extrapolated value when the coarsest `h` is dropped.
    pub difference: f64,
    pub ratios: Vec<DMatrix<f64>>,
}

/// Fits `A(h)/h` entrywise by a least-squares line in `h` and reads off the
/// value at `h = 0`. The fit is repeated without the coarsest `h`; the two
/// extrapolations must agree to within ten times the fit residual.
pub fn lambda_from_family<F>(family: F, h_sequence: &[f64], points_per_dim: usize) -> Result<LambdaFit>
where
    F: Fn(f64) -> Result<Profile>,
{
    if h_sequence.len() < 3 {
        return Err(Error::invalid("h_sequence", "need at least three values"));
    }
    if h_sequence.iter().any(|h| !(h.is_finite() && *h > 0.0)) || h_sequence.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("h_sequence", "must be positive and strictly decreasing"));
    }
    let mut ratios = Vec::with_capacity(h_sequence.len());
    for &h in h_sequence {
        ratios.push(compute_a(&family(h)?, points_per_dim)? / h);
    }
    let (lambda, residual) = extrapolate(h_sequence, &ratios);
    let (reduced, _) = extrapolate(&h_sequence[1..], &ratios[1..]);
    let difference = (&lambda - &reduced).amax();
    let scale = lambda.amax().max(1.0);
    if difference > 10.0 * residual + 1e-9 * scale {
        return Err(Error::NoConvergence(format!(
            "extrapolations differ by {difference:e}, fit residual {residual:e}"
        )));
    }
    Ok(LambdaFit {
        lambda: (&lambda + lambda.transpose()) * 0.5,
        residual,
        difference,
        ratios,
    })
}

fn extrapolate(hs: &[f64], ys: &[DMatrix<f64>]) -> (DMatrix<f64>, f64) {
    let x = DMatrix::from_fn(hs.len(), 2, |i, j| hs[i].powi(j as i32));
    let svd = x.clone().svd(true, true);
    let (r, c) = ys[0].shape();
    let mut out = DMatrix::zeros(r, c);
    let mut worst = 0.0f64;
    for a in 0..r {
        for b in 0..c {
            let y = DVector::from_fn(hs.len(), |i, _| ys[i][(a, b)]);
            let coef = svd.solve(&y, 1e-14).expect("svd was computed with both factors");
            out[(a, b)] = coef[0];
            let res = &x * &coef - &y;
            worst = worst.max((res.norm_squared() / hs.len() as f64).sqrt());
        }
    }
    (out, worst)
}

/// Closed-form limit operator a chain is compared against.
#[derive(Debug, Clone, PartialEq)]
pub enum LimitOperator {
    /// General form; test functions act on the observed velocity.
    Mb(ScatterMatrices),
    /// Constant-speed form; test functions act on the horizontal part of `v/|v|`.
    Legendre(Vec<f64>),
    /// One-dimensional form; test functions act on the speed `|v_m|`.
    Laguerre { lambda: f64, sigma2: f64 },
}

impl LimitOperator {
    pub fn trace_lambda(&self) -> f64 {
        match self {
            LimitOperator::Mb(m) => m.trace_lambda(),
            LimitOperator::Legendre(l) => l.iter().sum(),
            LimitOperator::Laguerre { lambda, .. } => *lambda,
        }
    }

    /// Coordinates the test function sees for an observed velocity `v`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        match self {
            LimitOperator::Mb(_) => v.to_vec(),
            LimitOperator::Legendre(_) => {
                let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v[..v.len() - 1].iter().map(|x| x / r).collect()
            }
            LimitOperator::Laguerre { .. } => vec![v[v.len() - 1].abs()],
        }
    }

    pub fn apply(&self, phi: &dyn TestFunction, v: &[f64]) -> Result<f64> {
        let u = self.project(v);
        match self {
            LimitOperator::Mb(m) => mb_laplacian_apply(m, phi, &u),
            LimitOperator::Legendre(l) => legendre_apply(l, phi, &u),
            LimitOperator::Laguerre { lambda, sigma2 } => laguerre_apply(*lambda, *sigma2, phi, u[0]),
        }
    }
}

/// What `P_h Phi - Phi` is divided by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    #[default]
    H,
    /// `Tr A(h)`; the limit is then `L Phi / Tr Lambda`.
    TraceA,
}

/// Monte Carlo settings for [`generator_convergence`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub h_sequence: Vec<f64>,
    /// Samples at flatness `h` are `ceil(n0 / h^2)`.
    pub n0: f64,
    pub max_samples: u64,
    pub seed: u64,
    pub sampling: Sampling,
    pub denominator: Denominator,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub samples: u64,
    pub estimate: f64,
    pub analytic: f64,
    pub abs_error: f64,
    pub std_error: f64,
}

/// Tabulates `(P_h Phi - Phi)(v) / h` against the limit operator over `h`.
pub fn generator_convergence<F>(
    family: F,
    hidden: &HiddenLaw,
    operator: &LimitOperator,
    phi: &dyn TestFunction,
    v: &[f64],
    config: &ConvergenceConfig,
) -> Result<Vec<ConvergenceRow>>
where
    F: Fn(f64) -> Result<Profile>,
{
    if config.h_sequence.is_empty() || config.h_sequence.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("h_sequence", "must be nonempty and strictly decreasing"));
    }
    if !(config.n0.is_finite() && config.n0 > 0.0) {
        return Err(Error::invalid("n0", "must be positive"));
    }
    let plans: Vec<(f64, u64)> = config
        .h_sequence
        .iter()
        .map(|&h| (h, (config.n0 / (h * h)).ceil() as u64))
        .collect();
    if let Some(&(_, required)) = plans.iter().find(|(_, n)| *n > config.max_samples) {
        return Err(Error::BudgetExceeded {
            required,
            cap: config.max_samples,
        });
    }
    let base = phi.value(&operator.project(v));
    let limit = operator.apply(phi, v)?;
    let mut rows = Vec::with_capacity(plans.len());
    for (i, &(h, samples)) in plans.iter().enumerate() {
        if !(h > 0.0) {
            return Err(Error::invalid("h_sequence", "values must be positive"));
        }
        let profile = family(h)?;
        let (denom, analytic) = match config.denominator {
            Denominator::H => (h, limit),
            Denominator::TraceA => (
                compute_a(&profile, MIN_QUADRATURE_POINTS)?.trace(),
                limit / operator.trace_lambda(),
            ),
        };
        let scatterer = Scatterer::new(&profile, hidden.clone())?;
        let est = estimate_p_phi(
            &scatterer,
            v,
            |out| phi.value(&operator.project(out)) - base,
            samples,
            config.seed.wrapping_add(i as u64),
            config.sampling,
        )?;
        let estimate = est.mean / denom;
        rows.push(ConvergenceRow {
            h,
            samples: est.samples,
            estimate,
            analytic,
            abs_error: (estimate - analytic).abs(),
            std_error: est.std_error / denom,
        });
    }
    Ok(rows)
}
