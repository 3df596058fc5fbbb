//! Dieterich--Ruina rate-and-state friction.
//!
//! The friction coefficient `mu*(V, theta) = mu0 + a log(V/V0)
//! + b log(V0 theta / L)` becomes negative for small slip rates, so it is
//! cut off below the regularization velocity [`FrictionParams::v_m`]. The
//! resulting rate functional `phi` is convex and continuously
//! differentiable with a kink in curvature at `|v| = V_m`; its gradient
//! magnitude reproduces the classical friction law outside the cutoff.
//!
//! The state evolution laws are expressed through scalar convex functions
//! `psi(alpha, V)` of the transformed state `alpha = log theta`:
//!
//! ```
//! use faultsim::friction::{FrictionParams, StateLaw};
//!
//! let p = FrictionParams::table1(5e4, StateLaw::Dieterich);
//! // stationary state of the aging law at constant rate V: alpha = log(L/V)
//! let v = 1e-6;
//! let alpha_star = (p.l / v).ln();
//! assert!(p.psi_prime(alpha_star, v).abs() < 1e-15);
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrictionError {
    #[error("friction coefficient needs positive V and theta (got V={v}, theta={theta})")]
    NonpositiveArguments { v: f64, theta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateLaw {
    /// Aging law: allows healing at V = 0.
    Dieterich,
    /// Slip law: no state evolution without slip.
    Ruina,
}

/// Rate-and-state friction constants of one fault.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FrictionParams {
    /// reference velocity (m/s)
    pub v0: f64,
    /// reference friction coefficient
    pub mu0: f64,
    /// direct-effect coefficient
    pub a: f64,
    /// evolution-effect coefficient
    pub b: f64,
    /// characteristic slip distance (m)
    pub l: f64,
    /// frozen normal stress magnitude |sigma_n| (Pa)
    pub sigma_n_bar: f64,
    pub law: StateLaw,
}

impl FrictionParams {
    /// The material-table constants used by both experiments, with the
    /// frozen normal stress supplied per fault.
    pub fn table1(sigma_n_bar: f64, law: StateLaw) -> Self {
        FrictionParams {
            v0: 1e-6,
            mu0: 0.6,
            a: 0.010,
            b: 0.015,
            l: 1e-5,
            sigma_n_bar,
            law,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("V0", self.v0),
            ("mu0", self.mu0),
            ("a", self.a),
            ("b", self.b),
            ("L", self.l),
        ] {
            if !(v > 0.0) {
                return Err(format!("friction parameter {name} must be positive, got {v}"));
            }
        }
        if self.sigma_n_bar < 0.0 {
            return Err(format!("sigma_n_bar must be nonnegative, got {}", self.sigma_n_bar));
        }
        Ok(())
    }

    /// Unregularized friction coefficient `mu*(V, theta)`.
    pub fn mu_star(&self, v: f64, theta: f64) -> Result<f64, FrictionError> {
        if !(v > 0.0) || !(theta > 0.0) {
            return Err(FrictionError::NonpositiveArguments { v, theta });
        }
        Ok(self.mu0 + self.a * (v / self.v0).ln() + self.b * (self.v0 * theta / self.l).ln())
    }

    /// Regularization velocity: the unique root of `mu*(., e^alpha) = 0`,
    /// `V_m = V0 exp(-(mu0 + b log(V0 e^alpha / L)) / a)`. Monotone
    /// decreasing in alpha.
    pub fn v_m(&self, alpha: f64) -> f64 {
        let exponent = -(self.mu0 + self.b * ((self.v0 / self.l).ln() + alpha)) / self.a;
        self.v0 * exponent.clamp(-700.0, 700.0).exp()
    }

    /// Regularized friction coefficient `mu(V, e^alpha)`: `mu*` above the
    /// cutoff, zero below.
    pub fn mu_regularized(&self, v: f64, alpha: f64) -> f64 {
        let vm = self.v_m(alpha);
        if v >= vm {
            self.mu0 + self.a * (v / self.v0).ln() + self.b * ((self.v0 / self.l).ln() + alpha)
        } else {
            0.0
        }
    }

    /// Rate functional density `phi(v, alpha)` per unit fault area.
    pub fn phi(&self, v: crate::linalg::Vec2, alpha: f64) -> f64 {
        self.phi_scalar(v.norm(), alpha)
    }

    /// `phi` as a function of the slip rate magnitude.
    pub fn phi_scalar(&self, speed: f64, alpha: f64) -> f64 {
        let vm = self.v_m(alpha);
        if speed >= vm && speed > 0.0 {
            self.a * self.sigma_n_bar * (speed * (speed / vm).ln() - speed + vm)
        } else {
            0.0
        }
    }

    /// Gradient of `phi` with respect to v: `|sigma_n| mu(|v|) v / |v|`
    /// outside the cutoff, zero inside. C1 at the threshold.
    pub fn phi_grad(&self, v: crate::linalg::Vec2, alpha: f64) -> crate::linalg::Vec2 {
        let speed = v.norm();
        if speed == 0.0 {
            return crate::linalg::Vec2::zeros();
        }
        self.sigma_n_bar * self.mu_regularized(speed, alpha) * (v / speed)
    }

    /// Scalar derivative of `phi_scalar` in the signed slip rate s.
    pub fn phi_scalar_deriv(&self, s: f64, alpha: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        self.sigma_n_bar * self.mu_regularized(s.abs(), alpha) * s.signum()
    }

    /// One-dimensional second derivative of `phi` in the radial direction:
    /// `a |sigma_n| / |v|` outside the cutoff, zero inside.
    pub fn phi_second(&self, speed: f64, alpha: f64) -> f64 {
        let vm = self.v_m(alpha);
        if speed > vm && speed > 0.0 {
            self.a * self.sigma_n_bar / speed
        } else {
            0.0
        }
    }

    /// State functional `psi(alpha, V)`.
    pub fn psi(&self, alpha: f64, v: f64) -> f64 {
        debug_assert!(v >= 0.0);
        match self.law {
            StateLaw::Dieterich => (v / self.l) * alpha + (-alpha).exp(),
            StateLaw::Ruina => {
                if v == 0.0 {
                    0.0
                } else {
                    (v / self.l) * (0.5 * alpha * alpha + (v / self.l).ln() * alpha)
                }
            }
        }
    }

    /// Derivative of `psi` in alpha.
    pub fn psi_prime(&self, alpha: f64, v: f64) -> f64 {
        debug_assert!(v >= 0.0);
        match self.law {
            StateLaw::Dieterich => v / self.l - (-alpha).exp(),
            StateLaw::Ruina => {
                if v == 0.0 {
                    0.0
                } else {
                    (v / self.l) * (alpha + (v / self.l).ln())
                }
            }
        }
    }
}

/// Piecewise-constant state on the non-mortar fault nodes, together with
/// the dual cell measures used by the discrete L2 norm.
#[derive(Clone, Debug)]
pub struct StateField {
    /// transformed state alpha = log(theta) per fault node
    pub alpha: Vec<f64>,
    /// dual cell measure |C_p| (m) per fault node
    pub cell_measure: Vec<f64>,
}

impl StateField {
    pub fn constant(alpha: f64, cell_measure: Vec<f64>) -> Self {
        StateField { alpha: vec![alpha; cell_measure.len()], cell_measure }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Discrete L2(fault) norm of the difference to another field.
    pub fn l2_distance(&self, other: &StateField) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.alpha
            .iter()
            .zip(&other.alpha)
            .zip(&self.cell_measure)
            .map(|((a, b), m)| m * (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Nodal quadrature of the rate functional: `Phi_S(v, alpha) =
/// sum_p phi(jump_p, alpha_p) w_p` with weights `w_p = int lambda_p ds`.
pub fn nodal_rate_functional(
    params: &FrictionParams,
    jump_rates: &[crate::linalg::Vec2],
    state: &StateField,
    weights: &[f64],
) -> f64 {
    debug_assert_eq!(jump_rates.len(), state.len());
    debug_assert_eq!(jump_rates.len(), weights.len());
    jump_rates
        .iter()
        .zip(&state.alpha)
        .zip(weights)
        .map(|((v, &a), &w)| w * params.phi(*v, a))
        .sum()
}
