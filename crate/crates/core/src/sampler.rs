//! Reverse diffusion: DDIM and ancestral steps, guidance, and per-step
//! trajectory logging.
//!
//! Every guided step is logged as the difference between the guided update
//! and the unguided update `P(t, x_t)` from the same `x_t`. For a DDIM step
//! that difference is `e(t) · (ε̂ − ε_∅)`, so the log doubles as a check on
//! the drift coefficient.

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_float, write_preamble};
use crate::error::{check_dim, Error, Result};
use crate::guidance::{apply_rule, l2_norm, GuidanceContext, GuidanceRule};
use crate::models::{Denoiser, NoisyClassifier};
use crate::schedule::{NoiseSchedule, VarianceChoice};

/// Above this batch size only every k-th chain keeps a trajectory.
pub const FULL_LOG_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", deny_unknown_fields)]
pub enum SamplerMode {
    Ddim,
    Ancestral { variance: VarianceChoice },
}

/// Which noise estimate re-noises the predicted clean point in a CFG++ step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Renoise {
    /// `ε_∅`, the CFG++ mechanism.
    #[default]
    Unconditional,
    /// `ε̂`, which turns a CFG++ step back into a plain DDIM step.
    Guided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub rule: GuidanceRule,
    pub seed: u64,
    pub batch: usize,
    pub mode: SamplerMode,
    pub renoise: Renoise,
}

impl SamplerConfig {
    pub fn ddim(steps: usize, rule: GuidanceRule, seed: u64, batch: usize) -> Self {
        Self {
            steps,
            rule,
            seed,
            batch,
            mode: SamplerMode::Ddim,
            renoise: Renoise::Unconditional,
        }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidParameter("batch must be at least 1".into()));
        }
        if self.steps == 0 || self.steps > sched.len() {
            return Err(Error::InvalidParameter(format!(
                "sampling steps must be in [1, {}], got {}",
                sched.len(),
                self.steps
            )));
        }
        self.rule.validate()
    }
}

/// One logged reverse step of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub t_prev: usize,
    pub x_before: Vec<f64>,
    /// Guided update minus unguided update.
    pub modification: Vec<f64>,
    pub mod_norm: f64,
    /// `‖ε̂ − ε_∅‖`.
    pub eps_diff_norm: f64,
    pub x_after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample_id: usize,
    /// Ordered by decreasing `t`.
    pub steps: Vec<StepRecord>,
    pub final_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    /// One sample per row.
    pub samples: Array2<f64>,
    pub trajectories: Vec<Trajectory>,
}

/// Shared DDIM kernel: predicted clean point from `eps_denoise`, re-noised
/// with `eps_renoise`.
fn ddim_update(ab_t: f64, ab_prev: f64, x: &[f64], eps_denoise: &[f64], eps_renoise: &[f64]) -> Vec<f64> {
    let (s_t, n_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let (s_p, n_p) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    x.iter()
        .zip(eps_denoise)
        .zip(eps_renoise)
        .map(|((x, ed), er)| {
            let x0 = (x - n_t * ed) / s_t;
            s_p * x0 + n_p * er
        })
        .collect()
}

/// Deterministic DDIM step
/// `x_{t'} = √ᾱ_{t'} · (x_t − √(1−ᾱ_t) ε̂)/√ᾱ_t + √(1−ᾱ_{t'}) ε̂`.
pub fn ddim_step(sched: &NoiseSchedule, x_t: &[f64], t: usize, t_prev: usize, eps_hat: &[f64]) -> Result<Vec<f64>> {
    sched.check_pair(t, t_prev)?;
    check_dim(x_t.len(), eps_hat.len())?;
    Ok(ddim_update(
        sched.alpha_bar(t)?,
        sched.alpha_bar(t_prev)?,
        x_t,
        eps_hat,
        eps_hat,
    ))
}

/// CFG++ step: clean-point estimate from the guided `ε̂`, re-noised with
/// `eps_renoise` (normally `ε_∅`).
pub fn cfgpp_step(
    sched: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    t_prev: usize,
    eps_hat: &[f64],
    eps_renoise: &[f64],
) -> Result<Vec<f64>> {
    sched.check_pair(t, t_prev)?;
    check_dim(x_t.len(), eps_hat.len())?;
    check_dim(x_t.len(), eps_renoise.len())?;
    Ok(ddim_update(
        sched.alpha_bar(t)?,
        sched.alpha_bar(t_prev)?,
        x_t,
        eps_hat,
        eps_renoise,
    ))
}

/// Ancestral step `x_{t'} = μ_θ(x_t) + √γ · noise`, no noise on the final
/// step. With a stride of one it uses the schedule's `α_t` directly;
/// otherwise the effective `α = ᾱ_t / ᾱ_{t'}`.
pub fn ddpm_ancestral_step(
    sched: &NoiseSchedule,
    x_t: &[f64],
    t: usize,
    t_prev: usize,
    eps_hat: &[f64],
    noise: &[f64],
    variance: VarianceChoice,
) -> Result<Vec<f64>> {
    sched.check_pair(t, t_prev)?;
    check_dim(x_t.len(), eps_hat.len())?;
    check_dim(x_t.len(), noise.len())?;
    let ab_t = sched.alpha_bar(t)?;
    let ab_prev = sched.alpha_bar(t_prev)?;
    let mean = if t_prev + 1 == t {
        sched.mean_from_epsilon(t, x_t, eps_hat)?
    } else {
        let alpha = ab_t / ab_prev;
        let coef = (1.0 - alpha) / (1.0 - ab_t).sqrt();
        let scale = alpha.sqrt();
        x_t.iter().zip(eps_hat).map(|(x, e)| (x - coef * e) / scale).collect()
    };
    if t_prev == 0 {
        return Ok(mean);
    }
    let beta = if t_prev + 1 == t {
        sched.beta(t)?
    } else {
        1.0 - ab_t / ab_prev
    };
    let var = match variance {
        VarianceChoice::Beta => beta,
        VarianceChoice::PosteriorBeta => (1.0 - ab_prev) / (1.0 - ab_t) * beta,
    };
    let sd = var.sqrt();
    Ok(mean.iter().zip(noise).map(|(m, n)| m + sd * n).collect())
}

/// Per-chain random stream: seeded by `seed`, stream number `index`, so a
/// chain's draws do not depend on batch layout or thread count.
pub fn chain_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws `x_T ~ N(0, I)` for every chain.
pub fn initial_points(seed: u64, batch: usize, dim: usize) -> (Array2<f64>, Vec<ChaCha8Rng>) {
    let mut x = Array2::zeros((batch, dim));
    let mut rngs = Vec::with_capacity(batch);
    for i in 0..batch {
        let mut rng = chain_rng(seed, i);
        let v = standard_normal_vec(&mut rng, dim);
        x.row_mut(i).assign(&Array1::from(v));
        rngs.push(rng);
    }
    (x, rngs)
}

/// Result of one guided reverse step over a batch.
pub struct GuidedStep {
    pub next: Array2<f64>,
    pub unguided: Array2<f64>,
    pub eps_diff_norms: Vec<f64>,
}

/// One guided step for every row of `x_t`. `noise` is consulted only in
/// ancestral mode.
#[allow(clippy::too_many_arguments)]
pub fn guided_step(
    cfg: &SamplerConfig,
    ctx: &GuidanceContext<'_>,
    x_t: ArrayView2<f64>,
    t: usize,
    t_prev: usize,
    noise: Option<&Array2<f64>>,
) -> Result<GuidedStep> {
    let sched = &ctx.denoiser.schedule;
    sched.check_pair(t, t_prev)?;
    let eps = apply_rule(&cfg.rule, ctx, x_t, t)?;
    let mut next = Array2::zeros(x_t.raw_dim());
    let mut unguided = Array2::zeros(x_t.raw_dim());
    let mut eps_diff_norms = Vec::with_capacity(x_t.nrows());
    let zeros = vec![0.0; x_t.ncols()];
    for r in 0..x_t.nrows() {
        let x = x_t.row(r).to_vec();
        let g = eps.guided.row(r).to_vec();
        let u = eps.uncond.row(r).to_vec();
        let diff: Vec<f64> = g.iter().zip(&u).map(|(a, b)| a - b).collect();
        eps_diff_norms.push(l2_norm(&diff));
        let (a, b) = match cfg.mode {
            SamplerMode::Ddim => {
                let guided = if cfg.rule.is_plus_plus() {
                    let renoise = match cfg.renoise {
                        Renoise::Unconditional => &u,
                        Renoise::Guided => &g,
                    };
                    cfgpp_step(sched, &x, t, t_prev, &g, renoise)?
                } else {
                    ddim_step(sched, &x, t, t_prev, &g)?
                };
                (guided, ddim_step(sched, &x, t, t_prev, &u)?)
            }
            SamplerMode::Ancestral { variance } => {
                let n = match noise {
                    Some(n) => n.row(r).to_vec(),
                    None => zeros.clone(),
                };
                (
                    ddpm_ancestral_step(sched, &x, t, t_prev, &g, &n, variance)?,
                    ddpm_ancestral_step(sched, &x, t, t_prev, &u, &n, variance)?,
                )
            }
        };
        next.row_mut(r).assign(&Array1::from(a));
        unguided.row_mut(r).assign(&Array1::from(b));
    }
    Ok(GuidedStep {
        next,
        unguided,
        eps_diff_norms,
    })
}

/// Runs the full reverse process from `x_T ~ N(0, I)` to `x_0` for `class`.
pub fn sample(
    cfg: &SamplerConfig,
    denoiser: &Denoiser,
    class: usize,
    classifier: Option<&NoisyClassifier>,
) -> Result<SampleRun> {
    let sched = &denoiser.schedule;
    cfg.validate(sched)?;
    if class >= denoiser.n_classes {
        return Err(Error::UnknownClass {
            class,
            n_classes: denoiser.n_classes,
        });
    }
    if cfg.rule.needs_classifier() && classifier.is_none() {
        return Err(Error::MissingClassifier(cfg.rule.name()));
    }
    let ctx = GuidanceContext {
        denoiser,
        classifier,
        class,
    };
    let dim = denoiser.data_dim();
    let grid = sched.sampling_grid(cfg.steps)?;
    let (mut x, mut rngs) = initial_points(cfg.seed, cfg.batch, dim);

    let stride = cfg.batch.div_ceil(FULL_LOG_LIMIT);
    let logged: Vec<usize> = (0..cfg.batch).step_by(stride).collect();
    let mut trajectories: Vec<Trajectory> = logged
        .iter()
        .map(|&i| Trajectory {
            sample_id: i,
            steps: Vec::with_capacity(grid.len()),
            final_point: Vec::new(),
        })
        .collect();

    for (k, &t) in grid.iter().enumerate() {
        let t_prev = grid.get(k + 1).copied().unwrap_or(0);
        let noise = match cfg.mode {
            SamplerMode::Ancestral { .. } if t_prev > 0 => {
                let mut n = Array2::zeros((cfg.batch, dim));
                for (i, rng) in rngs.iter_mut().enumerate() {
                    n.row_mut(i).assign(&Array1::from(standard_normal_vec(rng, dim)));
                }
                Some(n)
            }
            _ => None,
        };
        let step = guided_step(cfg, &ctx, x.view(), t, t_prev, noise.as_ref())?;
        for traj in trajectories.iter_mut() {
            let i = traj.sample_id;
            let after = step.next.row(i).to_vec();
            let modification: Vec<f64> = after.iter().zip(step.unguided.row(i)).map(|(a, b)| a - b).collect();
            traj.steps.push(StepRecord {
                t,
                t_prev,
                x_before: x.row(i).to_vec(),
                mod_norm: l2_norm(&modification),
                modification,
                eps_diff_norm: step.eps_diff_norms[i],
                x_after: after,
            });
        }
        x = step.next;
    }
    for traj in trajectories.iter_mut() {
        traj.final_point = x.row(traj.sample_id).to_vec();
    }
    Ok(SampleRun {
        samples: x,
        trajectories,
    })
}

/// Trajectory export: `sample_id,t,mod_norm,eps_diff_norm`, one row per step.
pub fn trajectories_to_csv(trajs: &[Trajectory], preamble: &[(String, String)]) -> String {
    let mut out = String::new();
    write_preamble(&mut out, preamble);
    out.push_str("sample_id,t,mod_norm,eps_diff_norm\n");
    for traj in trajs {
        for s in &traj.steps {
            out.push_str(&format!(
                "{},{},{},{}\n",
                traj.sample_id,
                s.t,
                fmt_float(s.mod_norm),
                fmt_float(s.eps_diff_norm)
            ));
        }
    }
    out
}

/// One parsed trajectory CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct TrajectoryRow {
    pub sample_id: usize,
    pub t: usize,
    pub mod_norm: f64,
    pub eps_diff_norm: f64,
}

pub fn trajectory_rows_from_csv(text: &str) -> Result<Vec<TrajectoryRow>> {
    let (_, body) = crate::csvio::split_preamble(text);
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["sample_id", "t", "mod_norm", "eps_diff_norm"] {
        return Err(Error::Malformed(format!("unexpected trajectory header {header:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Samples export: `x1,...,xD`, one row per sample.
pub fn samples_to_csv(samples: &Array2<f64>, preamble: &[(String, String)]) -> String {
    let mut out = String::new();
    write_preamble(&mut out, preamble);
    let header: Vec<String> = (1..=samples.ncols()).map(|i| format!("x{i}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in samples.rows() {
        let cells: Vec<String> = row.iter().map(|v| fmt_float(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn samples_from_csv(text: &str) -> Result<Array2<f64>> {
    let (_, body) = crate::csvio::split_preamble(text);
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let dim = rdr.headers()?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        for cell in rec.iter() {
            values.push(
                cell.parse::<f64>()
                    .map_err(|e| Error::Malformed(format!("row {}: {e}", rows + 1)))?,
            );
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, dim), values).map_err(|e| Error::Malformed(e.to_string()))
}
