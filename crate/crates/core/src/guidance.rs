//! Guided noise estimates.
//!
//! Every rule produces `ε̂`, the noise estimate handed to the reverse step.
//! The β-scaled rules normalise the classifier-free difference
//! `Δ = ε_c − ε_∅` by `‖Δ‖^γ` and scale it by `ω · β(t/T)`:
//!
//! ```text
//! ε̂ = ε_∅ + β(t/T) · ω · Δ / ‖Δ‖^γ
//! ```
//!
//! With `γ = 1` the guidance term has norm exactly `β(t/T) · ω`, whatever the
//! network predicts. Norms are taken over the whole flattened sample.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::guidance_weight::TimeWeight;
use crate::models::{Condition, Denoiser, NoisyClassifier};
use crate::schedule::NoiseSchedule;

/// Below this norm a difference or gradient is treated as absent.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Which guidance to apply, with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GuidanceRule {
    /// Unconditional sampling, `ε̂ = ε_∅`.
    None,
    Classifier {
        scale: f64,
    },
    #[serde(rename = "geoguide")]
    GeoGuide {
        scale: f64,
        dim: usize,
        steps: usize,
    },
    Cfg {
        scale: f64,
    },
    #[serde(rename = "cfgpp")]
    CfgPlusPlus {
        lambda: f64,
    },
    BetaCfg {
        omega: f64,
        weight: TimeWeight,
        gamma: f64,
    },
    #[serde(rename = "beta-cfgpp")]
    BetaCfgPlusPlus {
        lambda: f64,
        weight: TimeWeight,
        gamma: f64,
    },
}

impl GuidanceRule {
    pub fn name(&self) -> &'static str {
        match self {
            GuidanceRule::None => "none",
            GuidanceRule::Classifier { .. } => "classifier",
            GuidanceRule::GeoGuide { .. } => "geoguide",
            GuidanceRule::Cfg { .. } => "cfg",
            GuidanceRule::CfgPlusPlus { .. } => "cfgpp",
            GuidanceRule::BetaCfg { .. } => "beta-cfg",
            GuidanceRule::BetaCfgPlusPlus { .. } => "beta-cfgpp",
        }
    }

    /// Short human-readable description including hyperparameters.
    pub fn describe(&self) -> String {
        let weight = |w: &TimeWeight| match w {
            TimeWeight::Beta(b) => format!("beta({}, {})", b.a(), b.b()),
            TimeWeight::Constant { value } => format!("const({value})"),
        };
        match self {
            GuidanceRule::None => "none".into(),
            GuidanceRule::Classifier { scale } => format!("classifier w={scale}"),
            GuidanceRule::GeoGuide { scale, dim, steps } => format!("geoguide w={scale} D={dim} T={steps}"),
            GuidanceRule::Cfg { scale } => format!("cfg w={scale}"),
            GuidanceRule::CfgPlusPlus { lambda } => format!("cfgpp lambda={lambda}"),
            GuidanceRule::BetaCfg {
                omega,
                weight: w,
                gamma,
            } => {
                format!("beta-cfg omega={omega} {} gamma={gamma}", weight(w))
            }
            GuidanceRule::BetaCfgPlusPlus {
                lambda,
                weight: w,
                gamma,
            } => {
                format!("beta-cfgpp lambda={lambda} {} gamma={gamma}", weight(w))
            }
        }
    }

    pub fn needs_classifier(&self) -> bool {
        matches!(self, GuidanceRule::Classifier { .. } | GuidanceRule::GeoGuide { .. })
    }

    /// Whether the reverse step renoises with `ε_∅` (the CFG++ family).
    pub fn is_plus_plus(&self) -> bool {
        matches!(
            self,
            GuidanceRule::CfgPlusPlus { .. } | GuidanceRule::BetaCfgPlusPlus { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")))
            }
        };
        let unit = |v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("lambda must be in [0, 1], got {v}")))
            }
        };
        let power = |g: f64| {
            if g.is_finite() && g >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("gamma must be >= 0, got {g}")))
            }
        };
        match *self {
            GuidanceRule::None => Ok(()),
            GuidanceRule::Classifier { scale } | GuidanceRule::Cfg { scale } => finite("scale", scale),
            GuidanceRule::GeoGuide { scale, dim, steps } => {
                finite("scale", scale)?;
                if dim == 0 || steps == 0 {
                    return Err(Error::InvalidParameter("geoguide needs D >= 1 and T >= 1".into()));
                }
                Ok(())
            }
            GuidanceRule::CfgPlusPlus { lambda } => unit(lambda),
            GuidanceRule::BetaCfg { omega, gamma, .. } => {
                finite("omega", omega)?;
                power(gamma)
            }
            GuidanceRule::BetaCfgPlusPlus { lambda, gamma, .. } => {
                unit(lambda)?;
                power(gamma)
            }
        }
    }
}

/// Unconditional and conditional predictions at the same `x_t`.
#[derive(Debug, Clone, Copy)]
pub struct EpsPair<'a> {
    pub uncond: &'a [f64],
    pub cond: &'a [f64],
}

impl<'a> EpsPair<'a> {
    pub fn new(uncond: &'a [f64], cond: &'a [f64]) -> Result<Self> {
        check_dim(uncond.len(), cond.len())?;
        Ok(Self { uncond, cond })
    }

    fn difference(&self) -> Vec<f64> {
        self.cond.iter().zip(self.uncond).map(|(c, u)| c - u).collect()
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `ε̂ = ε_∅ + w (ε_c − ε_∅)`.
pub fn cfg_eps(p: &EpsPair<'_>, w: f64) -> Vec<f64> {
    p.uncond.iter().zip(p.cond).map(|(u, c)| u + w * (c - u)).collect()
}

/// `ε_∅ + scale · Δ / ‖Δ‖^γ`, with the term dropped when `γ > 0` and `Δ`
/// vanishes.
fn normalized_guidance(p: &EpsPair<'_>, scale: f64, gamma: f64) -> Vec<f64> {
    let delta = p.difference();
    let coef = if gamma == 0.0 {
        scale
    } else {
        let norm = l2_norm(&delta);
        if norm < DEGENERATE_NORM {
            0.0
        } else {
            scale / norm.powf(gamma)
        }
    };
    p.uncond.iter().zip(&delta).map(|(u, d)| u + coef * d).collect()
}

/// β-scaled, norm-normalised classifier-free guidance.
pub fn beta_cfg_eps(
    p: &EpsPair<'_>,
    omega: f64,
    weight: &TimeWeight,
    gamma: f64,
    t: usize,
    total: usize,
) -> Result<Vec<f64>> {
    let beta = weight.at_step(t, total)?;
    Ok(normalized_guidance(p, beta * omega, gamma))
}

/// The CFG++ counterpart of [`beta_cfg_eps`], with `λ` in place of `ω`.
pub fn beta_cfgpp_eps(
    p: &EpsPair<'_>,
    lambda: f64,
    weight: &TimeWeight,
    gamma: f64,
    t: usize,
    total: usize,
) -> Result<Vec<f64>> {
    beta_cfg_eps(p, lambda, weight, gamma, t, total)
}

/// Classifier guidance: `ε̂ = ε − √(1 − ᾱ_t) · w · ∇ log p(y | x_t)`.
pub fn classifier_eps(eps: &[f64], grad_log_p: &[f64], w: f64, sched: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    check_dim(eps.len(), grad_log_p.len())?;
    let coef = (1.0 - sched.alpha_bar(t)?).sqrt() * w;
    sched.check_step(t)?;
    Ok(eps.iter().zip(grad_log_p).map(|(e, g)| e - coef * g).collect())
}

/// Fixed-length classifier guidance: `ε̂ = ε − w (√D / T) · g / ‖g‖`.
///
/// `g` is `∇_{x_t} p(y | x_t)`; only its direction matters, which it shares
/// with `∇ log p`.
pub fn geoguide_eps(eps: &[f64], grad: &[f64], w: f64, dim: usize, steps: usize) -> Result<Vec<f64>> {
    check_dim(eps.len(), grad.len())?;
    let norm = l2_norm(grad);
    if norm < DEGENERATE_NORM {
        return Ok(eps.to_vec());
    }
    let coef = w * (dim as f64).sqrt() / steps as f64 / norm;
    Ok(eps.iter().zip(grad).map(|(e, g)| e - coef * g).collect())
}

/// Everything a rule may need at one reverse step.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceContext<'a> {
    pub denoiser: &'a Denoiser,
    pub classifier: Option<&'a NoisyClassifier>,
    pub class: usize,
}

/// Guided estimate together with the unconditional baseline it modifies.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedEps {
    pub guided: Array2<f64>,
    pub uncond: Array2<f64>,
}

fn map_rows<F>(a: &Array2<f64>, b: &Array2<f64>, mut f: F) -> Result<Array2<f64>>
where
    F: FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    let mut out = Array2::zeros(a.raw_dim());
    for ((ra, rb), mut ro) in a.rows().into_iter().zip(b.rows()).zip(out.rows_mut()) {
        let v = f(
            ra.as_slice().expect("standard layout"),
            rb.as_slice().expect("standard layout"),
        )?;
        ro.assign(&ndarray::ArrayView1::from(&v));
    }
    Ok(out)
}

/// Evaluates the networks a rule needs on the batch `x_t` (one sample per
/// row) and returns `ε̂`.
pub fn apply_rule(rule: &GuidanceRule, ctx: &GuidanceContext<'_>, x_t: ArrayView2<f64>, t: usize) -> Result<GuidedEps> {
    let d = ctx.denoiser;
    let total = d.schedule.len();
    let uncond = d.predict_eps_batch(x_t, t, Condition::Null)?;
    let cond = || d.predict_eps_batch(x_t, t, Condition::Class(ctx.class));
    let guided = match *rule {
        GuidanceRule::None => uncond.clone(),
        GuidanceRule::Cfg { scale } => {
            let c = cond()?;
            map_rows(&uncond, &c, |u, c| Ok(cfg_eps(&EpsPair::new(u, c)?, scale)))?
        }
        GuidanceRule::CfgPlusPlus { lambda } => {
            let c = cond()?;
            map_rows(&uncond, &c, |u, c| Ok(cfg_eps(&EpsPair::new(u, c)?, lambda)))?
        }
        GuidanceRule::BetaCfg { omega, weight, gamma } => {
            let c = cond()?;
            map_rows(&uncond, &c, |u, c| {
                beta_cfg_eps(&EpsPair::new(u, c)?, omega, &weight, gamma, t, total)
            })?
        }
        GuidanceRule::BetaCfgPlusPlus { lambda, weight, gamma } => {
            let c = cond()?;
            map_rows(&uncond, &c, |u, c| {
                beta_cfgpp_eps(&EpsPair::new(u, c)?, lambda, &weight, gamma, t, total)
            })?
        }
        GuidanceRule::Classifier { scale } => {
            let cls = ctx.classifier.ok_or(Error::MissingClassifier(rule.name()))?;
            let (_, grads) = cls.grad_log_prob_batch(x_t, t, ctx.class)?;
            map_rows(&uncond, &grads, |e, g| classifier_eps(e, g, scale, &d.schedule, t))?
        }
        GuidanceRule::GeoGuide { scale, dim, steps } => {
            let cls = ctx.classifier.ok_or(Error::MissingClassifier(rule.name()))?;
            let (logp, grads) = cls.grad_log_prob_batch(x_t, t, ctx.class)?;
            // ∇p = p ∇log p
            let mut grads_p = grads;
            for (mut row, lp) in grads_p.rows_mut().into_iter().zip(logp.iter()) {
                let p = lp.exp();
                row.mapv_inplace(|v| v * p);
            }
            map_rows(&uncond, &grads_p, |e, g| geoguide_eps(e, g, scale, dim, steps))?
        }
    };
    Ok(GuidedEps { guided, uncond })
}
