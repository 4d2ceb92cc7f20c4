//! Random scattering events and the velocity Markov chain they generate.
//!
//! The velocity space `R^{n+1}` splits as `R^k x H^m_-`: the first `k`
//! coordinates are hidden (redrawn from a fixed law before every event), the
//! last `m` are observed and carried from one event to the next. Each event
//! draws the hidden velocity `w`, a uniform entry point on the torus, runs the
//! billiard return map and keeps the observed part of the exit velocity.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::billiard::return_map_with_height;
use crate::error::{Error, Result};
use crate::geometry::Surface;
use crate::rng::{chunks, stream_rng, StreamRng};
use crate::stats::{sample_cosine_velocity, sample_mb_full};

pub const DEFAULT_MAX_RESAMPLES: u32 = 100;
const CHUNK: u64 = 4096;

/// Law of the hidden velocity components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HiddenKind {
    /// No hidden velocities (`k = 0`).
    None,
    /// Independent centred Gaussians of variance `sigma2`.
    Gaussian { sigma2: f64 },
    /// Independent uniforms on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HiddenLaw {
    k: usize,
    kind: HiddenKind,
}

impl HiddenLaw {
    pub fn none() -> Self {
        Self {
            k: 0,
            kind: HiddenKind::None,
        }
    }

    pub fn gaussian(k: usize, sigma2: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k", "a Gaussian hidden law needs k >= 1"));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::invalid("sigma2", "must be positive"));
        }
        Ok(Self {
            k,
            kind: HiddenKind::Gaussian { sigma2 },
        })
    }

    pub fn uniform(k: usize, half_width: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k", "a uniform hidden law needs k >= 1"));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::invalid("half_width", "must be positive"));
        }
        Ok(Self {
            k,
            kind: HiddenKind::Uniform { half_width },
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> HiddenKind {
        self.kind
    }

    /// Common variance of each hidden component, `None` when `k = 0`.
    pub fn variance(&self) -> Option<f64> {
        match self.kind {
            HiddenKind::None => None,
            HiddenKind::Gaussian { sigma2 } => Some(sigma2),
            HiddenKind::Uniform { half_width } => Some(half_width * half_width / 3.0),
        }
    }

    /// Number of observed components for a floor over `T^n`.
    pub fn observed_dim(&self, n: usize) -> Result<usize> {
        if self.k > n {
            return Err(Error::invalid("k", format!("k = {} leaves no observed velocity for n = {n}", self.k)));
        }
        Ok(n + 1 - self.k)
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.kind {
            HiddenKind::None => {}
            HiddenKind::Gaussian { sigma2 } => {
                let s = sigma2.sqrt();
                out.iter_mut()
                    .for_each(|w| *w = s * rng.sample::<f64, _>(StandardNormal));
            }
            HiddenKind::Uniform { half_width } => {
                out.iter_mut()
                    .for_each(|w| *w = half_width * (2.0 * rng.random::<f64>() - 1.0));
            }
        }
    }

    /// Maps uniforms in `[0,1)^k` to a hidden velocity by inverse cdf.
    fn from_uniforms(&self, u: &[f64], out: &mut [f64]) {
        match self.kind {
            HiddenKind::None => {}
            HiddenKind::Gaussian { sigma2 } => {
                let normal = Normal::new(0.0, sigma2.sqrt()).expect("positive variance");
                for (w, &x) in out.iter_mut().zip(u) {
                    *w = normal.inverse_cdf(x.clamp(1e-300, 1.0 - 1e-16));
                }
            }
            HiddenKind::Uniform { half_width } => {
                for (w, &x) in out.iter_mut().zip(u) {
                    *w = half_width * (2.0 * x - 1.0);
                }
            }
        }
    }
}

/// Stationary laws of the velocity chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StationaryLaw {
    /// Cosine law on the hemisphere of radius `speed` (no hidden velocities).
    Cosine { m: usize, speed: f64 },
    /// Post-collision Maxwell-Boltzmann law `|v_m| exp(-|v|^2 / 2 sigma2)`.
    MaxwellBoltzmann { m: usize, sigma2: f64 },
}

impl StationaryLaw {
    /// The stationary law matching `hidden` on `H^m_-`; `speed` fixes the
    /// conserved speed when there are no hidden velocities.
    pub fn for_hidden(hidden: &HiddenLaw, m: usize, speed: f64) -> Result<Self> {
        match hidden.kind {
            HiddenKind::None => Ok(StationaryLaw::Cosine { m, speed }),
            HiddenKind::Gaussian { sigma2 } => Ok(StationaryLaw::MaxwellBoltzmann { m, sigma2 }),
            HiddenKind::Uniform { .. } => Err(Error::invalid(
                "hidden",
                "no closed-form stationary law for uniform hidden velocities",
            )),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match *self {
            StationaryLaw::Cosine { m, speed } => sample_cosine_velocity(m, speed, rng),
            StationaryLaw::MaxwellBoltzmann { m, sigma2 } => sample_mb_full(m, sigma2, rng),
        }
    }
}

/// Failures absorbed by redrawing events, summed over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounters {
    pub events: u64,
    pub collisions: u64,
    pub resamples: u64,
    pub singular_hits: u64,
    pub trapped: u64,
    pub stalled: u64,
}

impl EventCounters {
    fn record_failure(&mut self, e: &Error) {
        self.resamples += 1;
        match e {
            Error::SingularHit(_) => self.singular_hits += 1,
            Error::TrappedTrajectory(_) => self.trapped += 1,
            Error::StalledMarch(_) => self.stalled += 1,
            _ => {}
        }
    }

    pub fn merge(&mut self, other: &EventCounters) {
        self.events += other.events;
        self.collisions += other.collisions;
        self.resamples += other.resamples;
        self.singular_hits += other.singular_hits;
        self.trapped += other.trapped;
        self.stalled += other.stalled;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterOutcome {
    /// Observed part of the exit velocity, in `H^m_-`.
    pub velocity: Vec<f64>,
    pub collisions: u64,
    pub resamples: u32,
}

/// One scattering operator: a floor, a hidden law and a resampling budget.
#[derive(Debug, Clone)]
pub struct Scatterer<'a, S: Surface + ?Sized> {
    surface: &'a S,
    hidden: HiddenLaw,
    max_resamples: u32,
    ceiling: f64,
    m: usize,
}

impl<'a, S: Surface + ?Sized> Scatterer<'a, S> {
    pub fn new(surface: &'a S, hidden: HiddenLaw) -> Result<Self> {
        let m = hidden.observed_dim(surface.dim())?;
        Ok(Self {
            surface,
            hidden,
            max_resamples: DEFAULT_MAX_RESAMPLES,
            ceiling: crate::billiard::reference_height(surface),
            m,
        })
    }

    pub fn with_max_resamples(mut self, max_resamples: u32) -> Self {
        self.max_resamples = max_resamples;
        self
    }

    /// Places the reference plane at `c` instead of `sup F + 1`.
    pub fn with_reference_height(mut self, c: f64) -> Result<Self> {
        if !(c > self.surface.max_height()) {
            return Err(Error::invalid("c", "reference plane must lie above sup F"));
        }
        self.ceiling = c;
        Ok(self)
    }

    pub fn surface(&self) -> &S {
        self.surface
    }

    pub fn hidden(&self) -> &HiddenLaw {
        &self.hidden
    }

    pub fn observed_dim(&self) -> usize {
        self.m
    }

    pub fn check_velocity(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.m {
            return Err(Error::invalid("v", format!("expected {} observed components", self.m)));
        }
        if !(v[self.m - 1] < 0.0) || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("v", "last component must be negative and all finite"));
        }
        Ok(())
    }

    /// Runs the deterministic event for given hidden velocity and entry point.
    pub fn event(&self, v: &[f64], w: &[f64], entry: &[f64]) -> Result<(Vec<f64>, u64)> {
        let mut xi = Vec::with_capacity(self.hidden.k + self.m);
        xi.extend_from_slice(w);
        xi.extend_from_slice(v);
        let flight = return_map_with_height(self.surface, entry, &xi, self.ceiling)?;
        Ok((flight.exit_velocity[self.hidden.k..].to_vec(), flight.collision_count))
    }

    /// Draws one random scattering event from incoming velocity `v`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        v: &[f64],
        rng: &mut R,
        counters: &mut EventCounters,
    ) -> Result<ScatterOutcome> {
        self.check_velocity(v)?;
        let mut w = vec![0.0; self.hidden.k];
        let mut entry = vec![0.0; self.surface.dim()];
        for attempt in 0..=self.max_resamples {
            self.hidden.sample_into(rng, &mut w);
            for (x, &a) in entry.iter_mut().zip(self.surface.lattice().periods()) {
                *x = (rng.random::<f64>() - 0.5) * a;
            }
            match self.event(v, &w, &entry) {
                Ok((velocity, collisions)) => {
                    counters.events += 1;
                    counters.collisions += collisions;
                    return Ok(ScatterOutcome {
                        velocity,
                        collisions,
                        resamples: attempt,
                    });
                }
                Err(e) if e.is_resamplable() => counters.record_failure(&e),
                Err(e) => return Err(e),
            }
        }
        Err(Error::ResampleBudgetExceeded(self.max_resamples))
    }

    /// Event driven by a point `u` of the unit cube of dimension `n + k`
    /// (entry point first, then hidden velocity). Falls back to fresh random
    /// draws from `rng` if the event must be resampled.
    fn sample_from_uniforms<R: Rng + ?Sized>(
        &self,
        v: &[f64],
        u: &[f64],
        rng: &mut R,
        counters: &mut EventCounters,
    ) -> Result<ScatterOutcome> {
        let n = self.surface.dim();
        let entry: Vec<f64> = u[..n]
            .iter()
            .zip(self.surface.lattice().periods())
            .map(|(x, a)| (x - 0.5) * a)
            .collect();
        let mut w = vec![0.0; self.hidden.k];
        self.hidden.from_uniforms(&u[n..], &mut w);
        match self.event(v, &w, &entry) {
            Ok((velocity, collisions)) => {
                counters.events += 1;
                counters.collisions += collisions;
                Ok(ScatterOutcome {
                    velocity,
                    collisions,
                    resamples: 0,
                })
            }
            Err(e) if e.is_resamplable() => {
                counters.record_failure(&e);
                let mut out = self.sample(v, rng, counters)?;
                out.resamples += 1;
                Ok(out)
            }
            Err(e) => Err(e),
        }
    }
}

/// Convenience wrapper drawing one event with the default resampling budget.
pub fn sample_scatter<S: Surface + ?Sized, R: Rng + ?Sized>(
    surface: &S,
    hidden: &HiddenLaw,
    v: &[f64],
    rng: &mut R,
) -> Result<ScatterOutcome> {
    Scatterer::new(surface, *hidden)?.sample(v, rng, &mut EventCounters::default())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainConfig {
    pub hidden: HiddenLaw,
    pub initial_v: Vec<f64>,
    pub steps: u64,
    pub seed: u64,
    pub max_resamples: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSample {
    pub step: u64,
    pub v: Vec<f64>,
    pub collisions: u64,
    pub resamples: u32,
}

/// Iterator over the velocity chain: step 0 is the initial velocity, followed
/// by `steps` scattering events. Errors end the iteration.
pub struct Chain<'a, S: Surface + ?Sized> {
    scatterer: Scatterer<'a, S>,
    rng: StreamRng,
    current: Vec<f64>,
    step: u64,
    steps: u64,
    counters: EventCounters,
    done: bool,
}

impl<S: Surface + ?Sized> Chain<'_, S> {
    pub fn counters(&self) -> &EventCounters {
        &self.counters
    }
}

impl<S: Surface + ?Sized> Iterator for Chain<'_, S> {
    type Item = Result<ChainSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = if self.step == 0 {
            Ok(ChainSample {
                step: 0,
                v: self.current.clone(),
                collisions: 0,
                resamples: 0,
            })
        } else {
            match self.scatterer.sample(&self.current, &mut self.rng, &mut self.counters) {
                Ok(out) => {
                    self.current.clone_from(&out.velocity);
                    Ok(ChainSample {
                        step: self.step,
                        v: out.velocity,
                        collisions: out.collisions,
                        resamples: out.resamples,
                    })
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        };
        if self.step == self.steps {
            self.done = true;
        }
        self.step += 1;
        Some(item)
    }
}

/// Starts the velocity chain described by `config` on `surface`.
pub fn run_chain<'a, S: Surface + ?Sized>(surface: &'a S, config: &ChainConfig) -> Result<Chain<'a, S>> {
    if config.steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    let scatterer = Scatterer::new(surface, config.hidden)?.with_max_resamples(config.max_resamples);
    scatterer.check_velocity(&config.initial_v)?;
    Ok(Chain {
        scatterer,
        rng: stream_rng(config.seed, 0),
        current: config.initial_v.clone(),
        step: 0,
        steps: config.steps,
        counters: EventCounters::default(),
        done: false,
    })
}

/// How the `(entry point, hidden velocity)` pairs are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    /// Independent uniform draws.
    Iid,
    /// Randomly shifted Kronecker lattice: `replicates` independent shifts of a
    /// low-discrepancy point set. The standard error comes from the spread of
    /// the replicate means.
    ShiftedLattice { replicates: u32 },
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
    pub counters: EventCounters,
}

#[derive(Clone, Copy)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    const EMPTY: Moments = Moments {
        n: 0.0,
        mean: 0.0,
        m2: 0.0,
    };

    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if other.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * other.n / n,
            m2: self.m2 + other.m2 + d * d * self.n * other.n / n,
        }
    }

    fn std_error(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            (self.m2 / (self.n - 1.0) / self.n).sqrt()
        }
    }
}

/// Generators of the `d`-dimensional Kronecker sequence `frac(i * alpha)`,
/// with `alpha_j = phi_d^{-j}` and `phi_d` the positive root of `x^{d+1} = x + 1`.
fn kronecker_alpha(d: usize) -> Vec<f64> {
    let mut phi = 2.0f64;
    for _ in 0..100 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    (1..=d).map(|j| phi.powi(-(j as i32)).fract()).collect()
}

/// Estimates `(P phi)(v) = E[phi(V)]` over independent scattering events from `v`.
pub fn estimate_p_phi<S, F>(
    scatterer: &Scatterer<'_, S>,
    v: &[f64],
    phi: F,
    samples: u64,
    seed: u64,
    sampling: Sampling,
) -> Result<Estimate>
where
    S: Surface + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    estimate_map(scatterer, v, |out| phi(out), samples, seed, sampling)
}

/// Monte Carlo mean of `f(V)` where `V` is the observed exit velocity.
pub(crate) fn estimate_map<S, F>(
    scatterer: &Scatterer<'_, S>,
    v: &[f64],
    f: F,
    samples: u64,
    seed: u64,
    sampling: Sampling,
) -> Result<Estimate>
where
    S: Surface + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
{
    if samples < 2 {
        return Err(Error::invalid("samples", "need at least 2 samples"));
    }
    scatterer.check_velocity(v)?;
    match sampling {
        Sampling::Iid => {
            let parts: Vec<Result<(Moments, EventCounters)>> = chunks(samples, CHUNK)
                .into_par_iter()
                .map(|(stream, _, len)| {
                    let mut rng = stream_rng(seed, stream);
                    let mut counters = EventCounters::default();
                    let mut mom = Moments::EMPTY;
                    for _ in 0..len {
                        let out = scatterer.sample(v, &mut rng, &mut counters)?;
                        mom.push(f(&out.velocity));
                    }
                    Ok((mom, counters))
                })
                .collect();
            let mut total = Moments::EMPTY;
            let mut counters = EventCounters::default();
            for part in parts {
                let (m, c) = part?;
                total = total.merge(m);
                counters.merge(&c);
            }
            Ok(Estimate {
                mean: total.mean,
                std_error: total.std_error(),
                samples,
                counters,
            })
        }
        Sampling::ShiftedLattice { replicates } => {
            if replicates < 2 {
                return Err(Error::invalid("replicates", "need at least 2 random shifts"));
            }
            let per = samples / replicates as u64;
            if per == 0 {
                return Err(Error::invalid("samples", "fewer samples than replicates"));
            }
            let dim = scatterer.surface.dim() + scatterer.hidden.k;
            let alpha = kronecker_alpha(dim);
            let mut replicate_means = Moments::EMPTY;
            let mut counters = EventCounters::default();
            for r in 0..replicates as u64 {
                let mut shift_rng = stream_rng(seed, u64::MAX - r);
                let shift: Vec<f64> = (0..dim).map(|_| shift_rng.random::<f64>()).collect();
                let parts: Vec<Result<(Moments, EventCounters)>> = chunks(per, CHUNK)
                    .into_par_iter()
                    .map(|(stream, start, len)| {
                        let mut rng = stream_rng(seed ^ 0x9e37_79b9_7f4a_7c15, r * 1_000_003 + stream);
                        let mut counters = EventCounters::default();
                        let mut mom = Moments::EMPTY;
                        let mut u = vec![0.0; dim];
                        for i in start..start + len {
                            for d in 0..dim {
                                u[d] = (shift[d] + (i as f64 + 1.0) * alpha[d]).fract();
                            }
                            let out = scatterer.sample_from_uniforms(v, &u, &mut rng, &mut counters)?;
                            mom.push(f(&out.velocity));
                        }
                        Ok((mom, counters))
                    })
                    .collect();
                let mut total = Moments::EMPTY;
                for part in parts {
                    let (m, c) = part?;
                    total = total.merge(m);
                    counters.merge(&c);
                }
                replicate_means.push(total.mean);
            }
            Ok(Estimate {
                mean: replicate_means.mean,
                std_error: replicate_means.std_error(),
                samples: per * replicates as u64,
                counters,
            })
        }
    }
}

/// Detailed-balance check `|E[f(V0) g(V1)] - E[g(V0) f(V1)]|` with `V0` drawn
/// from the stationary law and `V1` one scattering event later.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetailedBalance {
    pub statistic: f64,
    pub std_error: f64,
    pub samples: u64,
}

pub fn detailed_balance_statistic<S, F, G>(
    scatterer: &Scatterer<'_, S>,
    stationary: &StationaryLaw,
    f: F,
    g: G,
    samples: u64,
    seed: u64,
) -> Result<DetailedBalance>
where
    S: Surface + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    if samples < 2 {
        return Err(Error::invalid("samples", "need at least 2 samples"));
    }
    let parts: Vec<Result<Moments>> = chunks(samples, CHUNK)
        .into_par_iter()
        .map(|(stream, _, len)| {
            let mut rng = stream_rng(seed, stream);
            let mut counters = EventCounters::default();
            let mut mom = Moments::EMPTY;
            for _ in 0..len {
                let v0 = stationary.sample(&mut rng);
                let v1 = scatterer.sample(&v0, &mut rng, &mut counters)?.velocity;
                mom.push(f(&v0) * g(&v1) - g(&v0) * f(&v1));
            }
            Ok(mom)
        })
        .collect();
    let mut total = Moments::EMPTY;
    for p in parts {
        total = total.merge(p?);
    }
    Ok(DetailedBalance {
        statistic: total.mean.abs(),
        std_error: total.std_error(),
        samples,
    })
}
