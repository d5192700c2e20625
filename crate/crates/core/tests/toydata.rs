use betacfg::toydata::Point;
use betacfg::{generate, LabeledSet, ManifoldOracle, ToySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn small(n: usize) -> LabeledSet {
    generate(&ToySpec {
        n_per_class: n,
        ..ToySpec::default()
    })
    .unwrap()
}

/// Ratio of the larger to the smaller eigenvalue of the covariance of `pts`.
fn pca_ratio(pts: &[Point]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 + disc) / (tr / 2.0 - disc).max(1e-300)
}

/// Neighbourhoods only look one-dimensional once 16 neighbours reach well
/// beyond the cross-curve jitter, so this runs at a sparse density. At the
/// default 5000 points per class the 16-neighbour radius is below the jitter
/// and almost no point passes.
#[test]
fn sparse_neighbourhoods_are_elongated() {
    for seed in 0..4 {
        let data = generate(&ToySpec {
            n_per_class: 120,
            seed,
            ..ToySpec::default()
        })
        .unwrap();
        for c in 0..2 {
            let pts = data.raw_points_of(c);
            let mut ratios: Vec<f64> = pts
                .iter()
                .map(|&p| {
                    let mut by_dist = pts.clone();
                    by_dist.sort_by(|a, b| dist(*a, p).total_cmp(&dist(*b, p)));
                    pca_ratio(&by_dist[..16])
                })
                .collect();
            let frac = ratios.iter().filter(|&&r| r > 5.0).count() as f64 / ratios.len() as f64;
            ratios.sort_by(f64::total_cmp);
            let median = ratios[ratios.len() / 2];
            assert!(frac >= 0.7 && median > 10.0, "seed {seed} class {c}: {frac} {median}");
        }
    }
}

#[test]
fn classes_stay_apart() {
    let data = small(2000);
    let (a, b) = (data.raw_points_of(0), data.raw_points_of(1));
    let gap = a
        .iter()
        .flat_map(|p| b.iter().map(move |q| dist(*p, *q)))
        .fold(f64::INFINITY, f64::min);
    assert!(gap > 0.06, "{gap}");
}

#[test]
fn standardised_set_is_centred_with_unit_spread() {
    let data = small(2000);
    for d in 0..2 {
        let col = data.points.column(d);
        let mean = col.mean().unwrap();
        let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9, "dim {d}: {mean} {var}");
    }
    assert_eq!(data.class_counts(), vec![2000, 2000]);
}

#[test]
fn generation_is_seeded() {
    assert_eq!(small(300), small(300));
    let other = generate(&ToySpec {
        n_per_class: 300,
        seed: 9,
        ..ToySpec::default()
    })
    .unwrap();
    assert_ne!(small(300).points, other.points);
}

#[test]
fn membership_distance_matches_brute_force() {
    let spec = ToySpec::default();
    let oracle = ManifoldOracle::new(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..40 {
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        for (c, class) in spec.classes.iter().enumerate() {
            let brute = class
                .branches
                .iter()
                .flat_map(|b| (0..=200_000).map(move |k| b.point(k as f64 / 200_000.0)))
                .map(|p| dist(p, x))
                .fold(f64::INFINITY, f64::min);
            let got = oracle.membership_distance(x, c).unwrap();
            assert!((got - brute).abs() < 1e-6, "{x:?} class {c}: {got} vs {brute}");
        }
    }
}

#[test]
fn offset_point_is_at_its_offset() {
    let spec = ToySpec::default();
    let oracle = ManifoldOracle::new(&spec);
    let b = &spec.classes[0].branches[0];
    let (_, normal) = b.frame(0.5);
    let p = b.point(0.5);
    let x = [p[0] + 0.01 * normal[0], p[1] + 0.01 * normal[1]];
    assert!((oracle.membership_distance(x, 0).unwrap() - 0.01).abs() < 1e-7);
    assert!(oracle.membership_distance(x, 1).unwrap() > 0.1);
    assert!(oracle.membership_distance(x, 2).is_err());
}

#[test]
fn csv_round_trip_is_exact() {
    let data = small(50);
    let back = LabeledSet::from_csv(&data.to_csv()).unwrap();
    assert_eq!(data, back);
}

#[test]
fn empty_class_request_is_rejected() {
    assert!(generate(&ToySpec {
        n_per_class: 0,
        ..ToySpec::default()
    })
    .is_err());
}
