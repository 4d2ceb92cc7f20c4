//! Deterministic flight above the graph of `F` with specular reflection, and
//! the return map to the reference plane `x_{n+1} = c`.
//!
//! Velocities are `(n+1)`-vectors whose last component is the vertical one.

use crate::error::{Error, Result};
use crate::geometry::{normal_from_gradient, Surface};

/// Maximum number of marching steps in one call of [`advance_to_boundary`].
pub const MAX_MARCH_STEPS: u64 = 10_000_000;
/// Maximum number of wall collisions in one scattering event.
pub const MAX_COLLISIONS: u64 = 1_000_000;
/// Time (in units of `1/|velocity|` per unit length) a reflected state is pushed
/// along its new velocity before marching resumes.
const NUDGE: f64 = 1e-10;
/// Relative tolerance for tangential incidence.
const TANGENT_TOL: f64 = 1e-12;

/// Position `(x, z)` and velocity of a point moving above the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Advance {
    /// First contact with the floor, at canonical torus point `hit_x`.
    Hit { hit_x: Vec<f64>, hit_time: f64 },
    /// The trajectory reaches the ceiling moving upward without touching the floor.
    NoHit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightResult {
    /// Exit velocity with its vertical component made negative again.
    pub exit_velocity: Vec<f64>,
    /// Canonical torus coordinates where the trajectory crosses the reference plane.
    pub exit_position: Vec<f64>,
    pub collision_count: u64,
    pub flight_time: f64,
    /// Torus point of the first collision, if any.
    pub first_hit: Option<Vec<f64>>,
}

/// The reference plane height `sup F + 1`.
pub fn reference_height<S: Surface + ?Sized>(surface: &S) -> f64 {
    surface.max_height() + 1.0
}

/// Specular reflection `xi - 2 <n, xi> n` in the hyperplane orthogonal to the unit vector `n`.
pub fn reflect(xi: &[f64], n: &[f64]) -> Vec<f64> {
    let dot: f64 = xi.iter().zip(n).map(|(a, b)| a * b).sum();
    xi.iter().zip(n).map(|(a, b)| a - 2.0 * dot * b).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Gap between the moving point and the floor along a straight segment.
struct Gap<'a, S: Surface + ?Sized> {
    surface: &'a S,
    position: &'a [f64],
    velocity: &'a [f64],
    scratch: Vec<f64>,
}

impl<S: Surface + ?Sized> Gap<'_, S> {
    fn at(&mut self, t: f64) -> f64 {
        let n = self.scratch.len();
        for i in 0..n {
            self.scratch[i] = self.position[i] + t * self.velocity[i];
        }
        self.position[n] + t * self.velocity[n] - self.surface.height(&self.scratch)
    }
}

/// Moves the state in a straight line until it first touches the graph of `F`
/// or reaches the plane `z = ceiling` moving upward.
///
/// Steps never exceed `g / (|xi_{n+1}| + L |xi_bar|)`, where `g` is the current
/// gap and `L` the Lipschitz bound of `F`, so no crossing can be skipped. A
/// bracketed root is refined by bisection and the hit is reported at the
/// last time with positive gap.
pub fn advance_to_boundary<S: Surface + ?Sized>(
    surface: &S,
    state: &PhaseState,
    ceiling: f64,
) -> Result<Advance> {
    let n = surface.dim();
    if state.position.len() != n + 1 || state.velocity.len() != n + 1 {
        return Err(Error::invalid("state", format!("expected vectors of length {}", n + 1)));
    }
    let speed = norm(&state.velocity);
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::invalid("velocity", "must be nonzero and finite"));
    }
    let vz = state.velocity[n];
    let horizontal = norm(&state.velocity[..n]);
    let rate = vz.abs() + surface.lipschitz() * horizontal;
    let top = surface.max_height();
    let length = surface.lattice().max_period();
    let min_step = 1e-12 * length / speed;
    let time_tol = 1e-14 * length / speed;
    let z0 = state.position[n];

    let mut gap = Gap {
        surface,
        position: &state.position,
        velocity: &state.velocity,
        scratch: vec![0.0; n],
    };
    let mut t = 0.0;
    let mut g = gap.at(0.0);
    if g <= 0.0 {
        return Err(Error::SingularHit(surface.lattice().canonicalize(&state.position[..n])));
    }
    let t_ceiling = if vz > 0.0 { (ceiling - z0) / vz } else { f64::INFINITY };

    for _ in 0..MAX_MARCH_STEPS {
        let z = z0 + t * vz;
        if z > top {
            if vz > 0.0 {
                return Ok(Advance::NoHit);
            }
            if vz == 0.0 {
                // Horizontal flight above every wall never returns.
                return Err(Error::StalledMarch(0));
            }
        }
        let mut dt = if rate > 0.0 { g / rate } else { f64::INFINITY };
        if vz < 0.0 && z > top {
            dt = dt.max((z - top) / -vz);
        }
        if t + dt >= t_ceiling {
            return Ok(Advance::NoHit);
        }
        if !dt.is_finite() {
            return Err(Error::StalledMarch(0));
        }
        let dt = dt.max(min_step);
        let t_next = t + dt;
        let g_next = gap.at(t_next);
        if g_next > 0.0 {
            t = t_next;
            g = g_next;
            continue;
        }
        let (mut lo, mut hi) = (t, t_next);
        while hi - lo > time_tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if gap.at(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let hit: Vec<f64> = (0..n).map(|i| state.position[i] + lo * state.velocity[i]).collect();
        let hit_x = surface.lattice().canonicalize(&hit);
        if surface.is_singular(&hit_x) {
            return Err(Error::SingularHit(hit_x));
        }
        return Ok(Advance::Hit { hit_x, hit_time: lo });
    }
    Err(Error::StalledMarch(MAX_MARCH_STEPS))
}

/// Return map with the reference plane at `sup F + 1`.
pub fn return_map<S: Surface + ?Sized>(
    surface: &S,
    entry_x: &[f64],
    xi: &[f64],
) -> Result<FlightResult> {
    return_map_with_height(surface, entry_x, xi, reference_height(surface))
}

/// Follows the billiard trajectory entering at `(entry_x, c)` with velocity `xi`
/// until it crosses `z = c` upward again.
pub fn return_map_with_height<S: Surface + ?Sized>(
    surface: &S,
    entry_x: &[f64],
    xi: &[f64],
    c: f64,
) -> Result<FlightResult> {
    let n = surface.dim();
    if entry_x.len() != n || xi.len() != n + 1 {
        return Err(Error::invalid("xi", format!("expected {n} + 1 components")));
    }
    if !(xi[n] < 0.0) {
        return Err(Error::invalid("xi", "vertical component must be negative"));
    }
    if !(c > surface.max_height()) {
        return Err(Error::invalid("c", "reference plane must lie above sup F"));
    }
    let speed = norm(xi);
    let mut position: Vec<f64> = surface.lattice().canonicalize(entry_x);
    position.push(c);
    let mut state = PhaseState {
        position,
        velocity: xi.to_vec(),
    };
    let mut collisions = 0u64;
    let mut elapsed = 0.0;
    let mut first_hit = None;
    let mut grad = vec![0.0; n];

    loop {
        match advance_to_boundary(surface, &state, c)? {
            Advance::NoHit => {
                let vz = state.velocity[n];
                let t = (c - state.position[n]) / vz;
                let exit: Vec<f64> = (0..n)
                    .map(|i| state.position[i] + t * state.velocity[i])
                    .collect();
                let mut exit_velocity = state.velocity;
                exit_velocity[n] = -exit_velocity[n];
                return Ok(FlightResult {
                    exit_velocity,
                    exit_position: surface.lattice().canonicalize(&exit),
                    collision_count: collisions,
                    flight_time: elapsed + t,
                    first_hit,
                });
            }
            Advance::Hit { hit_x, hit_time } => {
                collisions += 1;
                if collisions > MAX_COLLISIONS {
                    return Err(Error::TrappedTrajectory(collisions - 1));
                }
                surface.gradient_into(&hit_x, &mut grad);
                let normal = normal_from_gradient(&grad);
                if dot(&state.velocity, &normal).abs() < TANGENT_TOL * speed {
                    return Err(Error::SingularHit(hit_x));
                }
                let velocity = reflect(&state.velocity, &normal);
                let mut position: Vec<f64> = state
                    .position
                    .iter()
                    .zip(&state.velocity)
                    .map(|(p, v)| p + hit_time * v)
                    .collect();
                // Keep the torus part small so rounding does not grow with distance travelled.
                let shift: Vec<f64> = surface.lattice().canonicalize(&position[..n]);
                position[..n].copy_from_slice(&shift);
                for (p, v) in position.iter_mut().zip(&velocity) {
                    *p += NUDGE * v;
                }
                if position[n] <= surface.height(&position[..n]) {
                    return Err(Error::SingularHit(hit_x));
                }
                if first_hit.is_none() {
                    first_hit = Some(hit_x);
                }
                elapsed += hit_time + NUDGE;
                state = PhaseState { position, velocity };
            }
        }
    }
}

/// Jacobian determinant `1 - <grad F(x), xi_bar> / xi_{n+1}` of the map from a
/// hit point `x` back to the entry point `x + (c - F(x)) xi_bar / xi_{n+1}`.
pub fn jacobian_det_rbar<S: Surface + ?Sized>(surface: &S, x: &[f64], xi: &[f64]) -> Result<f64> {
    let n = surface.dim();
    if xi.len() != n + 1 {
        return Err(Error::invalid("xi", format!("expected {} components", n + 1)));
    }
    if xi[n] == 0.0 {
        return Err(Error::Domain("horizontal velocity".into()));
    }
    if surface.is_singular(x) {
        return Err(Error::SingularPoint(surface.lattice().canonicalize(x)));
    }
    let g = surface.gradient(x);
    Ok(1.0 - dot(&g, &xi[..n]) / xi[n])
}

/// Radius `W(v, h) = -|v| + |v_m| / (4 sqrt(h))` of the hidden-velocity ball for
/// which every entry point leads to exactly one collision.
pub fn single_collision_bound(v: &[f64], h: f64) -> f64 {
    let vm = v.last().copied().unwrap_or(0.0);
    -norm(v) + vm.abs() / (4.0 * h.sqrt())
}
