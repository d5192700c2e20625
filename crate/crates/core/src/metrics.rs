//! Sample-quality metrics for the toy task.
//!
//! Geometric metrics work in raw data coordinates, where the ground-truth
//! curves live. Class purity runs the noisy classifier at `t = 1` on samples
//! in model (standardised) coordinates.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::NoisyClassifier;
use crate::sampler::Trajectory;
use crate::toydata::{ManifoldOracle, Point, Standardization, ToySpec};

/// Quantile used to calibrate the outlier radius on ground-truth draws.
pub const CALIBRATION_QUANTILE: f64 = 0.99;
pub const CALIBRATION_DRAWS: usize = 10_000;
pub const REFERENCE_DRAWS: usize = 2_000;

/// Summary of one sampling run, one JSON document per line in a results log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub outlier_rate: f64,
    pub coverage: f64,
    pub mean_manifold_distance: f64,
    pub class_purity: f64,
    pub n_samples: usize,
    pub rule: String,
    pub seed: u64,
}

fn check_radius(r: f64) -> Result<()> {
    if r.is_finite() && r > 0.0 || r == f64::INFINITY {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("radius must be positive, got {r}")))
    }
}

/// Distances of raw samples to the manifold of `class`.
pub fn manifold_distances(samples: &[Point], oracle: &ManifoldOracle, class: usize) -> Result<Vec<f64>> {
    samples.iter().map(|&p| oracle.membership_distance(p, class)).collect()
}

/// Fraction of raw samples farther than `r` from the manifold of `class`.
pub fn outlier_rate(samples: &[Point], oracle: &ManifoldOracle, class: usize, r: f64) -> Result<f64> {
    check_radius(r)?;
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let d = manifold_distances(samples, oracle, class)?;
    Ok(rate_above(&d, r))
}

fn rate_above(distances: &[f64], r: f64) -> f64 {
    distances.iter().filter(|&&d| d > r).count() as f64 / distances.len() as f64
}

/// Fraction of reference points with at least one sample within `r`.
pub fn coverage(samples: &[Point], reference: &[Point], r: f64) -> Result<f64> {
    check_radius(r)?;
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if reference.is_empty() {
        return Err(Error::Empty("reference"));
    }
    let r2 = r * r;
    let hit = reference
        .iter()
        .filter(|q| {
            samples.iter().any(|p| {
                let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
                dx * dx + dy * dy <= r2
            })
        })
        .count();
    Ok(hit as f64 / reference.len() as f64)
}

/// Fraction of model-space samples the classifier assigns to `class` at
/// the lowest noise level.
pub fn class_purity(samples: ArrayView2<f64>, classifier: Option<&NoisyClassifier>, class: usize) -> Result<f64> {
    let cls = classifier.ok_or(Error::MissingClassifier("class_purity"))?;
    if samples.nrows() == 0 {
        return Err(Error::Empty("samples"));
    }
    if class >= cls.n_classes {
        return Err(Error::UnknownClass {
            class,
            n_classes: cls.n_classes,
        });
    }
    let pred = cls.predict_batch(samples, 1)?;
    Ok(pred.iter().filter(|&&p| p == class).count() as f64 / pred.len() as f64)
}

/// Nearest-rank quantile of `values`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("quantile must be in [0, 1], got {q}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[rank - 1])
}

/// Outlier radius: the `quantile` of ground-truth membership distances over
/// `draws` points per class, each measured against its own class.
pub fn calibrate_radius(
    spec: &ToySpec,
    oracle: &ManifoldOracle,
    draws: usize,
    quantile_level: f64,
    seed: u64,
) -> Result<f64> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (points, labels) = spec.draw_raw(draws.div_ceil(spec.n_classes()), &mut rng);
    let d: Vec<f64> = points
        .iter()
        .zip(&labels)
        .map(|(&p, &c)| oracle.membership_distance(p, c))
        .collect::<Result<_>>()?;
    let r = quantile(&d, quantile_level)?;
    if r > 0.0 {
        Ok(r)
    } else {
        Err(Error::InvalidParameter(
            "ground-truth draws have zero spread; radius is undefined".into(),
        ))
    }
}

/// Fresh held-out raw draws, `n` per class.
pub fn reference_sets(spec: &ToySpec, n: usize, seed: u64) -> Result<Vec<Vec<Point>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (points, labels) = spec.draw_raw(n, &mut rng);
    let mut out = vec![Vec::with_capacity(n); spec.n_classes()];
    for (p, c) in points.into_iter().zip(labels) {
        out[c].push(p);
    }
    Ok(out)
}

/// Per-step mean and population std of modification norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub t: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn norm_profile_summary(trajs: &[Trajectory]) -> Result<Vec<ProfilePoint>> {
    let first = trajs.first().ok_or(Error::Empty("trajectories"))?;
    let grid: Vec<usize> = first.steps.iter().map(|s| s.t).collect();
    if grid.is_empty() {
        return Err(Error::Empty("trajectory steps"));
    }
    for tr in trajs {
        if tr.steps.len() != grid.len() || tr.steps.iter().zip(&grid).any(|(s, &t)| s.t != t) {
            return Err(Error::Malformed(format!(
                "trajectory {} does not share the step grid of trajectory {}",
                tr.sample_id, first.sample_id
            )));
        }
    }
    let n = trajs.len() as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mean = trajs.iter().map(|tr| tr.steps[k].mod_norm).sum::<f64>() / n;
            let var = trajs
                .iter()
                .map(|tr| (tr.steps[k].mod_norm - mean).powi(2))
                .sum::<f64>()
                / n;
            ProfilePoint {
                t,
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

/// Number of times the sequence switches between rising and falling,
/// ignoring flat stretches. Zero or one means single-modal.
pub fn direction_changes(values: &[f64]) -> usize {
    let mut last = 0i8;
    let mut changes = 0;
    for w in values.windows(2) {
        let dir = match w[1].partial_cmp(&w[0]) {
            Some(std::cmp::Ordering::Greater) => 1,
            Some(std::cmp::Ordering::Less) => -1,
            _ => 0,
        };
        if dir != 0 {
            if last != 0 && dir != last {
                changes += 1;
            }
            last = dir;
        }
    }
    changes
}

/// Model-space rows mapped back to raw coordinates.
pub fn to_raw(samples: ArrayView2<f64>, standardization: &Standardization) -> Result<Vec<Point>> {
    if samples.ncols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: samples.ncols(),
        });
    }
    Ok(samples
        .rows()
        .into_iter()
        .map(|r| standardization.inverse([r[0], r[1]]))
        .collect())
}

/// Holds the fixed radius, the oracle and the held-out references so every
/// rule is scored against the same yardstick.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub oracle: ManifoldOracle,
    pub radius: f64,
    pub references: Vec<Vec<Point>>,
}

impl Evaluator {
    /// Calibrates the radius and draws the coverage references from seeds
    /// derived from `seed`.
    pub fn calibrated(spec: &ToySpec, seed: u64) -> Result<Self> {
        let oracle = ManifoldOracle::new(spec);
        let radius = calibrate_radius(spec, &oracle, CALIBRATION_DRAWS, CALIBRATION_QUANTILE, seed)?;
        let references = reference_sets(spec, REFERENCE_DRAWS, seed.wrapping_add(1))?;
        Ok(Self {
            oracle,
            radius,
            references,
        })
    }

    pub fn evaluate(
        &self,
        samples: &Array2<f64>,
        standardization: &Standardization,
        class: usize,
        classifier: Option<&NoisyClassifier>,
        rule: &str,
        seed: u64,
    ) -> Result<EvalReport> {
        if samples.nrows() == 0 {
            return Err(Error::Empty("samples"));
        }
        let reference = self.references.get(class).ok_or(Error::UnknownClass {
            class,
            n_classes: self.references.len(),
        })?;
        let raw = to_raw(samples.view(), standardization)?;
        let d = manifold_distances(&raw, &self.oracle, class)?;
        Ok(EvalReport {
            outlier_rate: rate_above(&d, self.radius),
            coverage: coverage(&raw, reference, self.radius)?,
            mean_manifold_distance: d.iter().sum::<f64>() / d.len() as f64,
            class_purity: class_purity(samples.view(), classifier, class)?,
            n_samples: samples.nrows(),
            rule: rule.to_string(),
            seed,
        })
    }
}
