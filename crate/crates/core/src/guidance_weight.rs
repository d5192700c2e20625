//! β-distribution density used as a time-dependent guidance scale.
//!
//! For shape parameters `a, b > 1` the density
//! `β(u) = u^{a−1} (1 − u)^{b−1} / B(a, b)` is single-peaked on `[0, 1]`
//! and vanishes at both ends, so guidance built on it is silent at the very
//! start and the very end of a reverse trajectory.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// The `(a, b)`-parameterised β density with its normaliser cached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BetaShape", into = "BetaShape")]
pub struct BetaWeight {
    a: f64,
    b: f64,
    log_norm: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BetaShape {
    a: f64,
    b: f64,
}

impl TryFrom<BetaShape> for BetaWeight {
    type Error = Error;
    fn try_from(s: BetaShape) -> Result<Self> {
        BetaWeight::new(s.a, s.b)
    }
}

impl From<BetaWeight> for BetaShape {
    fn from(w: BetaWeight) -> Self {
        BetaShape { a: w.a, b: w.b }
    }
}

impl Default for BetaWeight {
    fn default() -> Self {
        BetaWeight::new(2.0, 2.0).expect("(2, 2) is a valid shape")
    }
}

/// `ln B(a, b) = ln Γ(a) + ln Γ(b) − ln Γ(a + b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

impl BetaWeight {
    /// Both shapes must exceed 1; otherwise the density does not vanish at
    /// the endpoints and the boundary conditions on guidance are lost.
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a > 1.0 && b > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta weight needs a > 1 and b > 1 so that the weight is zero at \
                 both ends of the trajectory, got a = {a}, b = {b}"
            )));
        }
        Ok(Self {
            a,
            b,
            log_norm: ln_beta(a, b),
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `ln B(a, b)`.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Location of the single maximum, `(a − 1)/(a + b − 2)`.
    pub fn mode(&self) -> f64 {
        (self.a - 1.0) / (self.a + self.b - 2.0)
    }

    /// Density at `u ∈ [0, 1]`; exactly zero at both endpoints.
    pub fn density(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidParameter(format!(
                "beta density is defined on [0, 1], got {u}"
            )));
        }
        if u == 0.0 || u == 1.0 {
            return Ok(0.0);
        }
        let log_density = (self.a - 1.0) * u.ln() + (self.b - 1.0) * (-u).ln_1p() - self.log_norm;
        Ok(log_density.exp())
    }

    /// Weight applied at reverse step `t` of `T`: the density at `t / T`.
    pub fn weight_at_step(&self, t: usize, total: usize) -> Result<f64> {
        if t == 0 || t > total {
            return Err(Error::StepOutOfRange { t, max: total });
        }
        self.density(t as f64 / total as f64)
    }
}

/// A time-dependent multiplier on the guidance term.
///
/// `Constant` exists to check that the β-scaled rule reduces to plain
/// classifier-free guidance; it does not satisfy the boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeWeight {
    Beta(BetaWeight),
    Constant { value: f64 },
}

impl TimeWeight {
    pub fn at_step(&self, t: usize, total: usize) -> Result<f64> {
        match self {
            TimeWeight::Beta(w) => w.weight_at_step(t, total),
            TimeWeight::Constant { value } => {
                if t == 0 || t > total {
                    Err(Error::StepOutOfRange { t, max: total })
                } else {
                    Ok(*value)
                }
            }
        }
    }
}

impl From<BetaWeight> for TimeWeight {
    fn from(w: BetaWeight) -> Self {
        TimeWeight::Beta(w)
    }
}
