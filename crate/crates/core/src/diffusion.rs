//! Euler-Maruyama integration of the limit diffusions.
//!
//! Every model is normalized so that its Ito generator
//! `Z . grad + (1/2) Tr(b b^T Hess)` is exactly the corresponding limit
//! operator of [`crate::operators`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Profile;
use crate::operators::{drift_vector, psd_sqrt, ScatterMatrices};
use crate::rng::stream_rng;
use crate::scattering::{EventCounters, HiddenLaw, Scatterer};
use crate::stats::ks_two_sample;

pub const DEFAULT_MAX_RETRIES: u32 = 50;
pub const DEFAULT_MAX_HALVINGS: u32 = 10;

/// State space of a model; paths stay in the interior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateDomain {
    /// `{v in R^m : v_m < 0}`.
    HalfSpace { m: usize },
    /// `{v in R^n : |v| < 1}`.
    UnitBall { n: usize },
    /// `{v > 0}`.
    HalfLine,
    Whole { d: usize },
}

impl StateDomain {
    pub fn dim(&self) -> usize {
        match *self {
            StateDomain::HalfSpace { m } => m,
            StateDomain::UnitBall { n } => n,
            StateDomain::HalfLine => 1,
            StateDomain::Whole { d } => d,
        }
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        if v.len() != self.dim() || v.iter().any(|x| !x.is_finite()) {
            return false;
        }
        match self {
            StateDomain::HalfSpace { .. } => v[v.len() - 1] < 0.0,
            StateDomain::UnitBall { .. } => v.iter().map(|x| x * x).sum::<f64>() < 1.0,
            StateDomain::HalfLine => v[0] > 0.0,
            StateDomain::Whole { .. } => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Mb { mats: ScatterMatrices, root: DMatrix<f64> },
    Legendre { roots: Vec<f64>, lambdas: Vec<f64> },
    Laguerre { coef: f64, sigma2: f64 },
    Frozen,
}

/// A diffusion `dV = Z(V) dt + b(V) dB`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeModel {
    kind: Kind,
    domain: StateDomain,
}

impl SdeModel {
    /// Diffusion generated by the general limit operator on `H^m_-`.
    pub fn mb(mats: ScatterMatrices) -> Result<Self> {
        if !mats.adapted {
            return Err(Error::NotAdapted(mats.adaptation_defect()));
        }
        if mats.lambda.amax() == 0.0 {
            return Err(Error::invalid("lambda", "zero matrix gives no diffusion"));
        }
        let lo = mats.observed_lambda();
        let m = lo.nrows();
        if lo.row(m - 1).amax() > crate::operators::SYMMETRY_TOL {
            return Err(Error::invalid("lambda", "normal row of the observed block must vanish"));
        }
        let root = psd_sqrt(&lo);
        Ok(Self {
            kind: Kind::Mb { mats, root },
            domain: StateDomain::HalfSpace { m },
        })
    }

    /// Constant-speed diffusion on the unit ball.
    pub fn legendre(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::invalid("lambdas", "must be nonempty and nonnegative"));
        }
        if lambdas.iter().all(|l| *l == 0.0) {
            return Err(Error::invalid("lambdas", "all zero gives no diffusion"));
        }
        Ok(Self {
            domain: StateDomain::UnitBall { n: lambdas.len() },
            kind: Kind::Legendre {
                roots: lambdas.iter().map(|l| l.sqrt()).collect(),
                lambdas,
            },
        })
    }

    /// Speed diffusion `dV = 2 k V0 sigma^2 (1/V - V/sigma^2) dt + sqrt(4 k V0 sigma^2) dB`.
    pub fn laguerre(k: f64, v0: f64, sigma2: f64) -> Result<Self> {
        for (name, x) in [("k", k), ("v0", v0), ("sigma2", sigma2)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(Self {
            kind: Kind::Laguerre {
                coef: 2.0 * k * v0 * sigma2,
                sigma2,
            },
            domain: StateDomain::HalfLine,
        })
    }

    /// `dV = (1/V - V) dt + sqrt(2) dB`, stationary for `v exp(-v^2/2)`.
    pub fn normalized_laguerre() -> Self {
        Self::laguerre(1.0, 0.5, 1.0).expect("constants are valid")
    }

    /// Zero drift and zero noise in dimension `d`.
    pub fn frozen(d: usize) -> Self {
        Self {
            kind: Kind::Frozen,
            domain: StateDomain::Whole { d },
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> StateDomain {
        self.domain
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            Kind::Mb { .. } => "mb",
            Kind::Legendre { .. } => "legendre",
            Kind::Laguerre { .. } => "laguerre",
            Kind::Frozen => "frozen",
        }
    }

    /// Coordinates of this model for an observed chain velocity: the velocity
    /// itself, the horizontal part of its direction, or its speed.
    pub fn project_velocity(&self, v: &[f64]) -> Vec<f64> {
        match self.kind {
            Kind::Legendre { .. } => {
                let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v[..v.len() - 1].iter().map(|x| x / r).collect()
            }
            Kind::Laguerre { .. } => vec![v[v.len() - 1].abs()],
            Kind::Mb { .. } | Kind::Frozen => v.to_vec(),
        }
    }

    pub fn drift(&self, v: &[f64]) -> DVector<f64> {
        match &self.kind {
            Kind::Mb { mats, .. } => drift_vector(mats, v).expect("state checked by caller"),
            Kind::Legendre { lambdas, .. } => DVector::from_fn(v.len(), |i, _| -4.0 * lambdas[i] * v[i]),
            Kind::Laguerre { coef, sigma2 } => DVector::from_element(1, coef * (1.0 / v[0] - v[0] / sigma2)),
            Kind::Frozen => DVector::zeros(v.len()),
        }
    }

    /// `b(v)`, a `d x d` matrix.
    pub fn diffusion(&self, v: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            Kind::Mb { mats, root } => mb_noise(mats, root, v) * 2.0,
            Kind::Legendre { roots, .. } => {
                let r2: f64 = v.iter().map(|x| x * x).sum();
                let s = 2.0 * (1.0 - r2).max(0.0).sqrt();
                DMatrix::from_fn(v.len(), v.len(), |i, j| if i == j { s * roots[i] } else { 0.0 })
            }
            Kind::Laguerre { coef, .. } => DMatrix::from_element(1, 1, (2.0 * coef).sqrt()),
            Kind::Frozen => DMatrix::zeros(v.len(), v.len()),
        }
    }
}

/// `u -> v_m Lambda^{1/2} u - <Lambda^{1/2} v, u> e + Tr(C Lambda)^{1/2} u_m e`.
fn mb_noise(mats: &ScatterMatrices, root: &DMatrix<f64>, v: &[f64]) -> DMatrix<f64> {
    let m = v.len();
    let vm = v[m - 1];
    let rv = root * DVector::from_column_slice(v);
    let mut b = root * vm;
    for j in 0..m {
        b[(m - 1, j)] -= rv[j];
    }
    b[(m - 1, m - 1)] += mats.trace_c_lambda.sqrt();
    b
}

/// The noise map in the factorized form `b_0` with `b_0 b_0^T` equal to half the
/// second-order coefficient matrix; requires a vanishing normal row of `Lambda^v`.
pub fn factorized_noise(mats: &ScatterMatrices, v: &[f64]) -> DMatrix<f64> {
    mb_noise(mats, &psd_sqrt(&mats.observed_lambda()), v)
}

/// `-2 Lambda v + (1/v_m - v_m/sigma^2)(<Lambda v, v> + Tr(C Lambda)) e`, the drift
/// written with the logarithmic derivative of the stationary density.
pub fn density_form_drift(mats: &ScatterMatrices, v: &[f64]) -> DVector<f64> {
    let m = v.len();
    let lo = mats.observed_lambda();
    let vv = DVector::from_column_slice(v);
    let lv = &lo * &vv;
    let a = vv.dot(&lv);
    let inv_s2 = mats.sigma2.map_or(0.0, |s| 1.0 / s);
    let vm = v[m - 1];
    let mut z = lv * -2.0;
    z[m - 1] += (1.0 / vm - vm * inv_s2) * (a + mats.trace_c_lambda);
    z
}

/// `v + Z(v) dt + b(v) sqrt(dt) g`.
pub fn em_step(model: &SdeModel, v: &[f64], dt: f64, g: &[f64]) -> Vec<f64> {
    let z = model.drift(v);
    let b = model.diffusion(v);
    let noise = b * DVector::from_column_slice(g) * dt.sqrt();
    v.iter().enumerate().map(|(i, x)| x + z[i] * dt + noise[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EulerConfig {
    pub dt: f64,
    pub steps: u64,
    pub initial: Vec<f64>,
    pub seed: u64,
    /// Redraws of the Gaussian increment before a step is subdivided.
    pub max_retries: u32,
    /// Number of times a rejected step may be split into halves.
    pub max_halvings: u32,
    /// Keep every `record_every`-th state in [`Path`].
    pub record_every: u64,
}

impl EulerConfig {
    pub fn new(dt: f64, steps: u64, initial: Vec<f64>, seed: u64) -> Self {
        Self {
            dt,
            steps,
            initial,
            seed,
            max_retries: DEFAULT_MAX_RETRIES,
            max_halvings: DEFAULT_MAX_HALVINGS,
            record_every: 1,
        }
    }

    fn validate(&self, model: &SdeModel) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        if !model.domain.contains(&self.initial) {
            return Err(Error::invalid("initial", "must lie strictly inside the state domain"));
        }
        Ok(())
    }
}

/// Summary of the boundary handling over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BoundaryCounts {
    pub retries: u64,
    pub halvings: u64,
}

/// One accepted step and the redraws it needed.
struct Stepper<'a> {
    model: &'a SdeModel,
    cfg: &'a EulerConfig,
    g: Vec<f64>,
}

impl Stepper<'_> {
    fn substep<R: Rng>(&mut self, v: &[f64], dt: f64, rng: &mut R, retries: &mut u32) -> Option<Vec<f64>> {
        for attempt in 0..=self.cfg.max_retries {
            for x in self.g.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let next = em_step(self.model, v, dt, &self.g);
            if self.model.domain.contains(&next) {
                return Some(next);
            }
            if attempt < self.cfg.max_retries {
                *retries += 1;
            }
        }
        None
    }

    /// Advances by `dt`, subdividing into `2^j` substeps when needed.
    fn step<R: Rng>(&mut self, v: &[f64], rng: &mut R, index: u64) -> Result<(Vec<f64>, u32, u32)> {
        let mut retries = 0;
        'levels: for level in 0..=self.cfg.max_halvings {
            let parts = 1u64 << level;
            let h = self.cfg.dt / parts as f64;
            let mut cur = v.to_vec();
            for _ in 0..parts {
                match self.substep(&cur, h, rng, &mut retries) {
                    Some(next) => cur = next,
                    None => continue 'levels,
                }
            }
            return Ok((cur, retries, level));
        }
        Err(Error::StuckAtBoundary { step: index })
    }
}

/// Runs the Euler scheme, calling `visit(step, t, state, retries)` at step 0
/// and after every accepted step.
pub fn simulate_with<F>(model: &SdeModel, cfg: &EulerConfig, stream: u64, mut visit: F) -> Result<BoundaryCounts>
where
    F: FnMut(u64, f64, &[f64], u32),
{
    cfg.validate(model)?;
    let mut rng = stream_rng(cfg.seed, stream);
    let mut stepper = Stepper {
        model,
        cfg,
        g: vec![0.0; model.dim()],
    };
    let mut v = cfg.initial.clone();
    let mut counts = BoundaryCounts::default();
    visit(0, 0.0, &v, 0);
    for j in 1..=cfg.steps {
        let (next, retries, level) = stepper.step(&v, &mut rng, j)?;
        counts.retries += retries as u64;
        counts.halvings += level as u64;
        v = next;
        visit(j, j as f64 * cfg.dt, &v, retries);
    }
    Ok(counts)
}

/// A recorded sample path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Redraws needed by each recorded step.
    pub retries: Vec<u32>,
    pub counts: BoundaryCounts,
}

pub fn simulate_path(model: &SdeModel, cfg: &EulerConfig) -> Result<Path> {
    let cap = (cfg.steps / cfg.record_every.max(1) + 1) as usize;
    let mut path = Path {
        times: Vec::with_capacity(cap),
        states: Vec::with_capacity(cap),
        retries: Vec::with_capacity(cap),
        counts: BoundaryCounts::default(),
    };
    let every = cfg.record_every;
    path.counts = simulate_with(model, cfg, 0, |j, t, v, r| {
        if j % every == 0 {
            path.times.push(t);
            path.states.push(v.to_vec());
            path.retries.push(r);
        }
    })?;
    Ok(path)
}

/// Final states of `n_paths` independent paths, path `i` on stream `i`.
pub fn simulate_ensemble(model: &SdeModel, cfg: &EulerConfig, n_paths: u64) -> Result<(Vec<Vec<f64>>, BoundaryCounts)> {
    let results: Vec<Result<(Vec<f64>, BoundaryCounts)>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut last = Vec::new();
            let counts = simulate_with(model, cfg, i, |j, _, v, _| {
                if j == cfg.steps {
                    last = v.to_vec();
                }
            })?;
            Ok((last, counts))
        })
        .collect();
    let mut finals = Vec::with_capacity(n_paths as usize);
    let mut total = BoundaryCounts::default();
    for r in results {
        let (v, c) = r?;
        total.retries += c.retries;
        total.halvings += c.halvings;
        finals.push(v);
    }
    Ok((finals, total))
}

/// Final observed velocities of `n_paths` chains of `steps` events each.
pub fn chain_ensemble(
    profile: &Profile,
    hidden: &HiddenLaw,
    initial: &[f64],
    steps: u64,
    n_paths: u64,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, EventCounters)> {
    let scatterer = Scatterer::new(profile, hidden.clone())?;
    scatterer.check_velocity(initial)?;
    let results: Vec<Result<(Vec<f64>, EventCounters)>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let mut counters = EventCounters::default();
            let mut v = initial.to_vec();
            for _ in 0..steps {
                v = scatterer.sample(&v, &mut rng, &mut counters)?.velocity;
            }
            Ok((v, counters))
        })
        .collect();
    let mut finals = Vec::with_capacity(n_paths as usize);
    let mut total = EventCounters::default();
    for r in results {
        let (v, c) = r?;
        total.merge(&c);
        finals.push(v);
    }
    Ok((finals, total))
}

/// Settings for [`chain_vs_sde_compare`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub h_sequence: Vec<f64>,
    pub t_end: f64,
    pub n_paths: u64,
    /// Observed chain velocity at time 0.
    pub initial: Vec<f64>,
    pub sde_dt: f64,
    pub seed: u64,
}

/// Marginal distances at `t_end` for one flatness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub h: f64,
    pub chain_steps: u64,
    /// Two-sample KS statistic per model coordinate.
    pub ks: Vec<f64>,
    pub ks_p_value: Vec<f64>,
    pub mean_diff: Vec<f64>,
    /// Largest entrywise difference of the covariance matrices.
    pub cov_diff: f64,
    pub counters: EventCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub t_end: f64,
    pub n_paths: u64,
    pub sde_dt: f64,
    pub sde_mean: Vec<f64>,
    pub boundary: BoundaryCounts,
    pub rows: Vec<CompareRow>,
}

fn mean_cov(xs: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        for i in 0..d {
            mean[i] += x[i] / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for x in xs {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    (mean, cov)
}

/// Runs chains of `round(t_end / h)` events (one event per `h` of diffusion
/// time) and compares their final marginals with the diffusion's at `t_end`.
pub fn chain_vs_sde_compare<F>(family: F, hidden: &HiddenLaw, model: &SdeModel, cfg: &CompareConfig) -> Result<CompareReport>
where
    F: Fn(f64) -> Result<Profile>,
{
    if cfg.n_paths < 2 {
        return Err(Error::invalid("n_paths", "need at least two paths"));
    }
    if !(cfg.t_end.is_finite() && cfg.t_end > 0.0) {
        return Err(Error::invalid("t_end", "must be positive"));
    }
    let start = model.project_velocity(&cfg.initial);
    let sde_steps = (cfg.t_end / cfg.sde_dt).round().max(1.0) as u64;
    let euler = EulerConfig::new(cfg.t_end / sde_steps as f64, sde_steps, start, cfg.seed);
    let (sde, boundary) = simulate_ensemble(model, &euler, cfg.n_paths)?;
    let (sde_mean, sde_cov) = mean_cov(&sde);
    let d = model.dim();
    let mut rows = Vec::with_capacity(cfg.h_sequence.len());
    for (idx, &h) in cfg.h_sequence.iter().enumerate() {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::invalid("h_sequence", "values must be positive"));
        }
        let steps = (cfg.t_end / h).round().max(1.0) as u64;
        let profile = family(h)?;
        let seed = cfg.seed ^ (0x5851_f42d_4c95_7f2d_u64.wrapping_mul(idx as u64 + 1));
        let (finals, counters) = chain_ensemble(&profile, hidden, &cfg.initial, steps, cfg.n_paths, seed)?;
        let chain: Vec<Vec<f64>> = finals.iter().map(|v| model.project_velocity(v)).collect();
        let (mean, cov) = mean_cov(&chain);
        let mut ks = Vec::with_capacity(d);
        let mut ks_p = Vec::with_capacity(d);
        for i in 0..d {
            let a: Vec<f64> = chain.iter().map(|x| x[i]).collect();
            let b: Vec<f64> = sde.iter().map(|x| x[i]).collect();
            if a.iter().chain(&b).all(|x| *x == a[0]) {
                ks.push(0.0);
                ks_p.push(1.0);
                continue;
            }
            let rep = ks_two_sample(&a, &b)?;
            ks.push(rep.statistic);
            ks_p.push(rep.p_value);
        }
        rows.push(CompareRow {
            h,
            chain_steps: steps,
            ks,
            ks_p_value: ks_p,
            mean_diff: mean.iter().zip(&sde_mean).map(|(a, b)| a - b).collect(),
            cov_diff: (cov - &sde_cov).amax(),
            counters,
        });
    }
    Ok(CompareReport {
        t_end: cfg.t_end,
        n_paths: cfg.n_paths,
        sde_dt: euler.dt,
        sde_mean,
        boundary,
        rows,
    })
}
