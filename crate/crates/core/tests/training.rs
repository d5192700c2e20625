use betacfg::{
    generate, train_classifier, train_denoiser, ClassifierConfig, Condition, DenoiserConfig, LabeledSet, NoiseSchedule,
    Standardization, ToySpec,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
}

fn small_cfg(steps: usize) -> DenoiserConfig {
    DenoiserConfig {
        steps,
        hidden: vec![64, 64],
        ..DenoiserConfig::default()
    }
}

/// Both classes sit on a single point, so `ε = x_t / √(1 − ᾱ_t)` exactly and
/// the best achievable loss is zero.
#[test]
fn dirac_data_drives_loss_towards_zero() {
    let n = 200;
    let points = Array2::zeros((n, 2));
    let labels = (0..n).map(|i| i % 2).collect();
    let data = LabeledSet::new(points, labels, 2, Standardization::identity()).unwrap();
    let (_, report) = train_denoiser(&data, &small_cfg(3000), &sched(), 1).unwrap();
    assert!(
        report.initial_validation_loss > 0.5,
        "{}",
        report.initial_validation_loss
    );
    assert!(report.validation_loss < 0.05, "{}", report.validation_loss);
}

#[test]
fn toy_training_reduces_loss_and_is_deterministic() {
    let spec = ToySpec {
        n_per_class: 1000,
        ..ToySpec::default()
    };
    let data = generate(&spec).unwrap();
    let cfg = small_cfg(1500);
    let (model, report) = train_denoiser(&data, &cfg, &sched(), 7).unwrap();
    assert!(report.validation_loss < 0.5 * report.initial_validation_loss);
    let tenth = report.losses.len() / 10;
    let head: f64 = report.losses[..tenth].iter().sum::<f64>() / tenth as f64;
    assert!(report.final_loss < head, "{} vs {head}", report.final_loss);

    // The null token was trained and now answers differently from class 0.
    let x = Array2::from_shape_vec((1, 2), vec![0.3, -0.4]).unwrap();
    let null = model.predict_eps_batch(x.view(), 300, Condition::Null).unwrap();
    let c0 = model.predict_eps_batch(x.view(), 300, Condition::Class(0)).unwrap();
    assert!((&null - &c0).iter().any(|v| v.abs() > 1e-6));

    let (again, report2) = train_denoiser(&data, &cfg, &sched(), 7).unwrap();
    assert_eq!(model, again);
    assert_eq!(report, report2);
}

#[test]
fn rejects_single_class_and_bad_dropout() {
    let data = LabeledSet::new(Array2::zeros((4, 2)), vec![0; 4], 2, Standardization::identity()).unwrap();
    assert!(train_denoiser(&data, &small_cfg(10), &sched(), 0).is_err());
    let data = LabeledSet::new(Array2::zeros((4, 2)), vec![0, 1, 0, 1], 2, Standardization::identity()).unwrap();
    let cfg = DenoiserConfig {
        p_uncond: 1.5,
        ..small_cfg(10)
    };
    assert!(train_denoiser(&data, &cfg, &sched(), 0).is_err());
}

fn blobs(n: usize, seed: u64) -> LabeledSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::zeros((2 * n, 2));
    let mut labels = Vec::with_capacity(2 * n);
    for i in 0..2 * n {
        let c = i % 2;
        let centre = if c == 0 { -1.5 } else { 1.5 };
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        points[[i, 0]] = centre + 0.3 * a;
        points[[i, 1]] = 0.3 * b;
        labels.push(c);
    }
    LabeledSet::new(points, labels, 2, Standardization::identity()).unwrap()
}

#[test]
fn classifier_is_sharp_at_low_noise_and_blind_at_full_noise() {
    let data = blobs(500, 3);
    let (cls, _) = train_classifier(&data, &ClassifierConfig::default(), &sched(), 11).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let clean = cls.accuracy_at(&data, &idx, 1, 5).unwrap();
    let blind = cls.accuracy_at(&data, &idx, 1000, 5).unwrap();
    assert!(clean > 0.95, "{clean}");
    assert!((blind - 0.5).abs() < 0.05, "{blind}");
}
