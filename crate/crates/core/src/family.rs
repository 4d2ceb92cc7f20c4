//! One-parameter families of floors indexed by the flatness `h`, with their
//! closed-form limits `Lambda = lim A(h)/h`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Profile;
use crate::operators::{lambda_from_family, LambdaFit, ScatterMatrices};
use crate::scattering::HiddenLaw;

fn default_a0() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileFamily {
    /// `F = 0` on a unit torus of dimension `dim` for every `h`.
    Flat { dim: usize },
    /// Circular arcs of unit period with `sup |f'|^2 = h`; nothing hidden.
    ArcElastic,
    /// Tent of `k` equal bound masses with free mass `h`, all `k` wall
    /// velocities hidden.
    TentHeatBath { k: usize },
    /// The same tent with every velocity observed.
    TentElastic { k: usize },
    /// Arc-contoured wall of unit period and curvature `kappa = sqrt(4h/(1+alpha))`
    /// moving with mass ratio `m1/m0 = alpha kappa^2 / 4`; the wall velocity is hidden.
    MovingWallCoupled {
        alpha: f64,
        #[serde(default = "default_a0")]
        a0: f64,
    },
}

impl ProfileFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ProfileFamily::Flat { dim } if dim == 0 => Err(Error::invalid("dim", "must be at least 1")),
            ProfileFamily::TentHeatBath { k } | ProfileFamily::TentElastic { k } if k == 0 => {
                Err(Error::invalid("k", "must be at least 1"))
            }
            ProfileFamily::MovingWallCoupled { alpha, a0 } => {
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(Error::invalid("alpha", "must be positive"));
                }
                if !(a0.is_finite() && a0 > 0.0) {
                    return Err(Error::invalid("a0", "must be positive"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Dimension `n` of the configuration torus.
    pub fn torus_dim(&self) -> usize {
        match *self {
            ProfileFamily::Flat { dim } => dim,
            ProfileFamily::ArcElastic => 1,
            ProfileFamily::TentHeatBath { k } | ProfileFamily::TentElastic { k } => k,
            ProfileFamily::MovingWallCoupled { .. } => 2,
        }
    }

    /// Number of hidden velocity coordinates the family is meant for;
    /// `None` when any split works.
    pub fn hidden_dim(&self) -> Option<usize> {
        match *self {
            ProfileFamily::Flat { .. } => None,
            ProfileFamily::ArcElastic | ProfileFamily::TentElastic { .. } => Some(0),
            ProfileFamily::TentHeatBath { k } => Some(k),
            ProfileFamily::MovingWallCoupled { .. } => Some(1),
        }
    }

    /// Largest admissible flatness.
    pub fn max_h(&self) -> f64 {
        match *self {
            ProfileFamily::MovingWallCoupled { alpha, .. } => 1.0 + alpha,
            _ => f64::INFINITY,
        }
    }

    pub fn profile(&self, h: f64) -> Result<Profile> {
        self.validate()?;
        if !(h.is_finite() && h > 0.0 && h < self.max_h()) {
            return Err(Error::invalid("h", format!("must lie in (0, {})", self.max_h())));
        }
        match *self {
            ProfileFamily::Flat { dim } => Profile::flat(vec![1.0; dim]),
            ProfileFamily::ArcElastic => {
                let kappa2 = 4.0 * h / (1.0 + h);
                Profile::arc(1.0, 1.0 / kappa2.sqrt())
            }
            ProfileFamily::TentHeatBath { k } | ProfileFamily::TentElastic { k } => {
                Profile::tent(h, &vec![1.0; k], None)
            }
            ProfileFamily::MovingWallCoupled { alpha, a0 } => {
                let kappa2 = 4.0 * h / (1.0 + alpha);
                let inner = Profile::arc(1.0, 1.0 / kappa2.sqrt())?;
                Profile::moving_wall(inner, 4.0 / (alpha * kappa2), 1.0, a0)
            }
        }
    }

    /// Closed-form `lim A(h)/h` as an `(n+1) x (n+1)` matrix.
    pub fn analytic_lambda(&self) -> DMatrix<f64> {
        let n = self.torus_dim();
        let mut l = DMatrix::zeros(n + 1, n + 1);
        match *self {
            ProfileFamily::Flat { .. } => {}
            ProfileFamily::ArcElastic => l[(0, 0)] = 1.0 / 3.0,
            ProfileFamily::TentHeatBath { k } | ProfileFamily::TentElastic { k } => {
                for i in 0..k {
                    l[(i, i)] = 1.0 / k as f64;
                }
            }
            ProfileFamily::MovingWallCoupled { alpha, .. } => {
                l[(0, 0)] = alpha / (1.0 + alpha);
                l[(1, 1)] = 1.0 / (3.0 * (1.0 + alpha));
            }
        }
        l
    }

    /// Scattering matrices of the limit for the given hidden law.
    pub fn scatter_matrices(&self, hidden: &HiddenLaw) -> Result<ScatterMatrices> {
        self.validate()?;
        match self.hidden_dim() {
            Some(k) if k != hidden.k() => {
                return Err(Error::invalid("hidden", format!("this family hides {k} coordinates")));
            }
            None if hidden.k() > self.torus_dim() => {
                return Err(Error::invalid("hidden", "more hidden coordinates than horizontal ones"));
            }
            _ => {}
        }
        ScatterMatrices::new(self.analytic_lambda(), hidden)
    }

    /// Fits `Lambda` from quadrature over `h_sequence` and returns the fit with
    /// its largest entrywise deviation from [`Self::analytic_lambda`].
    pub fn cross_check(&self, h_sequence: &[f64], points_per_dim: usize) -> Result<(LambdaFit, f64)> {
        let fit = lambda_from_family(|h| self.profile(h), h_sequence, points_per_dim)?;
        let dev = (&fit.lambda - self.analytic_lambda()).amax();
        Ok((fit, dev))
    }
}
