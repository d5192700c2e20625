//! Two-class synthetic 2D data with thin, branching, locally
//! one-dimensional structure.
//!
//! Each class is a pair of quadratic Bézier branches that share a junction;
//! the second class is the first rotated by 180° about the origin. Points are
//! drawn by picking a branch, a uniform curve parameter, and adding Gaussian
//! jitter along the tangent and the normal. The dataset is standardised per
//! coordinate so the `N(0, I)` prior of the diffusion model fits it.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_float, split_preamble, write_preamble};
use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Quadratic Bézier curve `B(s) = (1−s)² p0 + 2(1−s)s p1 + s² p2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub p0: Point,
    pub p1: Point,
    pub p2: Point,
}

impl Branch {
    pub fn point(&self, s: f64) -> Point {
        let (a, b, c) = ((1.0 - s) * (1.0 - s), 2.0 * (1.0 - s) * s, s * s);
        [
            a * self.p0[0] + b * self.p1[0] + c * self.p2[0],
            a * self.p0[1] + b * self.p1[1] + c * self.p2[1],
        ]
    }

    pub fn tangent(&self, s: f64) -> Point {
        [
            2.0 * (1.0 - s) * (self.p1[0] - self.p0[0]) + 2.0 * s * (self.p2[0] - self.p1[0]),
            2.0 * (1.0 - s) * (self.p1[1] - self.p0[1]) + 2.0 * s * (self.p2[1] - self.p1[1]),
        ]
    }

    /// Unit tangent and unit normal at `s`.
    pub fn frame(&self, s: f64) -> (Point, Point) {
        let d = self.tangent(s);
        let n = d[0].hypot(d[1]);
        let t = [d[0] / n, d[1] / n];
        (t, [-t[1], t[0]])
    }

    /// Dense polyline approximation with `segments + 1` vertices.
    pub fn discretize(&self, segments: usize) -> Vec<Point> {
        (0..=segments).map(|i| self.point(i as f64 / segments as f64)).collect()
    }

    pub fn length(&self) -> f64 {
        self.discretize(1000).windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    fn rotated_half_turn(&self) -> Branch {
        let r = |p: Point| [-p[0], -p[1]];
        Branch {
            p0: r(self.p0),
            p1: r(self.p1),
            p2: r(self.p2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassShape {
    pub branches: Vec<Branch>,
}

/// Full description of a toy dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpec {
    pub n_per_class: usize,
    pub seed: u64,
    pub sigma_along: f64,
    pub sigma_across: f64,
    pub classes: Vec<ClassShape>,
}

impl Default for ToySpec {
    fn default() -> Self {
        // Two forks opening towards each other; the inner branches of each
        // class run between the branches of the other.
        let first = ClassShape {
            branches: vec![
                Branch {
                    p0: [-0.9, 0.25],
                    p1: [-0.5, 0.5],
                    p2: [0.5, 0.45],
                },
                Branch {
                    p0: [-0.9, 0.25],
                    p1: [-0.6, -0.14],
                    p2: [0.3, -0.12],
                },
            ],
        };
        let second = ClassShape {
            branches: first.branches.iter().map(Branch::rotated_half_turn).collect(),
        };
        Self {
            n_per_class: 5000,
            seed: 0,
            sigma_along: 0.0,
            sigma_across: 0.02,
            classes: vec![first, second],
        }
    }
}

impl ToySpec {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::InvalidParameter("n_per_class must be at least 1".into()));
        }
        if self.classes.len() < 2 {
            return Err(Error::InvalidParameter("need at least two classes".into()));
        }
        if !(self.sigma_along >= 0.0 && self.sigma_across >= 0.0) {
            return Err(Error::InvalidParameter("jitter scales must be non-negative".into()));
        }
        for (c, class) in self.classes.iter().enumerate() {
            if class.branches.is_empty() {
                return Err(Error::InvalidParameter(format!("class {c} has no branches")));
            }
            for (i, b) in class.branches.iter().enumerate() {
                if !(b.length() > 1e-9) {
                    return Err(Error::InvalidParameter(format!("class {c} branch {i} has zero length")));
                }
            }
        }
        Ok(())
    }

    /// Draws `n_per_class` raw (unstandardised) points for every class.
    pub fn draw_raw<R: Rng + ?Sized>(&self, n_per_class: usize, rng: &mut R) -> (Vec<Point>, Vec<usize>) {
        let mut points = Vec::with_capacity(n_per_class * self.classes.len());
        let mut labels = Vec::with_capacity(points.capacity());
        for (c, class) in self.classes.iter().enumerate() {
            for _ in 0..n_per_class {
                points.push(self.draw_one(class, rng));
                labels.push(c);
            }
        }
        (points, labels)
    }

    fn draw_one<R: Rng + ?Sized>(&self, class: &ClassShape, rng: &mut R) -> Point {
        let branch = &class.branches[rng.random_range(0..class.branches.len())];
        let s: f64 = rng.random();
        let along: f64 = rng.sample(StandardNormal);
        let across: f64 = rng.sample(StandardNormal);
        let p = branch.point(s);
        let (t, n) = branch.frame(s);
        let (ja, jc) = (self.sigma_along * along, self.sigma_across * across);
        [p[0] + ja * t[0] + jc * n[0], p[1] + ja * t[1] + jc * n[1]]
    }
}

/// Per-coordinate affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardization {
    pub mean: Point,
    pub std: Point,
}

impl Standardization {
    pub fn identity() -> Self {
        Self {
            mean: [0.0, 0.0],
            std: [1.0, 1.0],
        }
    }

    pub fn fit(points: &[Point]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("points to standardise"));
        }
        let n = points.len() as f64;
        let mut mean = [0.0; 2];
        for p in points {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean = [mean[0] / n, mean[1] / n];
        let mut var = [0.0; 2];
        for p in points {
            var[0] += (p[0] - mean[0]).powi(2);
            var[1] += (p[1] - mean[1]).powi(2);
        }
        let std = [(var[0] / n).sqrt(), (var[1] / n).sqrt()];
        if !(std[0] > 0.0 && std[1] > 0.0) {
            return Err(Error::InvalidParameter(
                "data has zero spread along a coordinate".into(),
            ));
        }
        Ok(Self { mean, std })
    }

    pub fn forward(&self, p: Point) -> Point {
        [(p[0] - self.mean[0]) / self.std[0], (p[1] - self.mean[1]) / self.std[1]]
    }

    pub fn inverse(&self, p: Point) -> Point {
        [p[0] * self.std[0] + self.mean[0], p[1] * self.std[1] + self.mean[1]]
    }
}

/// Labelled points in model (standardised) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub points: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub standardization: Standardization,
}

impl LabeledSet {
    pub fn new(
        points: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        standardization: Standardization,
    ) -> Result<Self> {
        if points.nrows() != labels.len() {
            return Err(Error::Malformed(format!(
                "{} points but {} labels",
                points.nrows(),
                labels.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed("non-finite coordinate".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::UnknownClass { class: bad, n_classes });
        }
        Ok(Self {
            points,
            labels,
            n_classes,
            standardization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn point(&self, i: usize) -> Point {
        [self.points[[i, 0]], self.points[[i, 1]]]
    }

    /// Points of class `c`, mapped back to raw data coordinates.
    pub fn raw_points_of(&self, c: usize) -> Vec<Point> {
        (0..self.len())
            .filter(|&i| self.labels[i] == c)
            .map(|i| self.standardization.inverse(self.point(i)))
            .collect()
    }

    /// Mean and per-coordinate (population) standard deviation.
    pub fn bounding_stats(&self) -> (Point, Point) {
        let pts: Vec<Point> = (0..self.len()).map(|i| self.point(i)).collect();
        match Standardization::fit(&pts) {
            Ok(s) => (s.mean, s.std),
            Err(_) => ([f64::NAN; 2], [f64::NAN; 2]),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        write_preamble(
            &mut out,
            &[
                ("n_classes".into(), self.n_classes.to_string()),
                (
                    "standardization_mean".into(),
                    format!(
                        "{} {}",
                        fmt_float(self.standardization.mean[0]),
                        fmt_float(self.standardization.mean[1])
                    ),
                ),
                (
                    "standardization_std".into(),
                    format!(
                        "{} {}",
                        fmt_float(self.standardization.std[0]),
                        fmt_float(self.standardization.std[1])
                    ),
                ),
            ],
        );
        out.push_str("x1,x2,class\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_float(self.points[[i, 0]]),
                fmt_float(self.points[[i, 1]]),
                self.labels[i]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (meta, body) = split_preamble(text);
        let lookup = |key: &str| meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let pair = |key: &str| -> Result<Point> {
            let raw = lookup(key).ok_or_else(|| Error::Malformed(format!("missing `{key}` preamble line")))?;
            let vals: Vec<f64> = raw
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Malformed(format!("{key}: {e}"))))
                .collect::<Result<_>>()?;
            match vals.as_slice() {
                [a, b] => Ok([*a, *b]),
                _ => Err(Error::Malformed(format!("{key} needs two values"))),
            }
        };
        let standardization = Standardization {
            mean: pair("standardization_mean")?,
            std: pair("standardization_std")?,
        };

        let mut rdr = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["x1", "x2", "class"] {
            return Err(Error::Malformed(format!("expected header x1,x2,class, got {header:?}")));
        }
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Malformed(format!("row {}: {e}", row + 1)))
            };
            coords.push(parse(0)?);
            coords.push(parse(1)?);
            labels.push(
                rec[2]
                    .parse::<usize>()
                    .map_err(|e| Error::Malformed(format!("row {}: {e}", row + 1)))?,
            );
        }
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let n_classes = match lookup("n_classes") {
            Some(v) => v.parse().map_err(|e| Error::Malformed(format!("n_classes: {e}")))?,
            None => labels.iter().max().map_or(0, |m| m + 1),
        };
        let points = Array2::from_shape_vec((labels.len(), 2), coords).map_err(|e| Error::Malformed(e.to_string()))?;
        Self::new(points, labels, n_classes, standardization)
    }
}

/// Builds the standardised dataset described by `spec`.
pub fn generate(spec: &ToySpec) -> Result<LabeledSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (raw, labels) = spec.draw_raw(spec.n_per_class, &mut rng);
    let standardization = Standardization::fit(&raw)?;
    let mut points = Array2::zeros((raw.len(), 2));
    for (i, p) in raw.iter().enumerate() {
        let q = standardization.forward(*p);
        points[[i, 0]] = q[0];
        points[[i, 1]] = q[1];
    }
    LabeledSet::new(points, labels, spec.n_classes(), standardization)
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + s * ab[0], a[1] + s * ab[1]])
}

/// Ground-truth class manifolds as dense polylines in raw coordinates.
#[derive(Debug, Clone)]
pub struct ManifoldOracle {
    classes: Vec<Vec<Vec<Point>>>,
}

impl ManifoldOracle {
    pub const DEFAULT_SEGMENTS: usize = 10_000;

    pub fn new(spec: &ToySpec) -> Self {
        Self::with_segments(spec, Self::DEFAULT_SEGMENTS)
    }

    pub fn with_segments(spec: &ToySpec, segments: usize) -> Self {
        let classes = spec
            .classes
            .iter()
            .map(|c| c.branches.iter().map(|b| b.discretize(segments)).collect())
            .collect();
        Self { classes }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Shortest Euclidean distance from a raw point to the branches of class `c`.
    pub fn membership_distance(&self, x: Point, c: usize) -> Result<f64> {
        let branches = self.classes.get(c).ok_or(Error::UnknownClass {
            class: c,
            n_classes: self.classes.len(),
        })?;
        let mut best = f64::INFINITY;
        for poly in branches {
            for w in poly.windows(2) {
                // Cheap reject: a segment cannot beat `best` if both ends and
                // its length say so.
                let da = dist(x, w[0]);
                if da - dist(w[0], w[1]) >= best {
                    continue;
                }
                best = best.min(segment_distance(x, w[0], w[1]));
            }
        }
        Ok(best)
    }
}
