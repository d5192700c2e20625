//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Every criterion is evaluated and reported. The process exits non-zero
//! only when a check could not be carried out at all (a panic or an I/O
//! error); a criterion that runs and misses its threshold prints FAIL.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use betacfg::guidance::{beta_cfg_eps, cfg_eps, geoguide_eps, l2_norm, EpsPair};
use betacfg::metrics::{direction_changes, norm_profile_summary};
use betacfg::models::noisify;
use betacfg::{
    sample, BetaWeight, Denoiser, EvalReport, Evaluator, GuidanceRule, NoiseSchedule, NoisyClassifier, SampleRun,
    SamplerConfig, Standardization, TimeWeight, ToySpec,
};
use betacfg_cli::checkpoint::Checkpoint;
use betacfg_cli::config::Seeds;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const GLOBAL_SEED: u64 = 0;

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            pass: true,
            details: Vec::new(),
        }
    }

    /// Records a sub-check; any failing sub-check fails the criterion.
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let tag = if ok { "ok  " } else { "MISS" };
        self.details.push(format!("{tag} {}", what.into()));
        self.pass &= ok;
    }

    fn note(&mut self, what: impl Into<String>) {
        self.details.push(format!("     {}", what.into()));
    }
}

/// The trained toy model shared by the model-based criteria.
struct Lab {
    denoiser: Denoiser,
    classifier: NoisyClassifier,
    standardization: Standardization,
    spec: ToySpec,
    checkpoint_text: String,
    train_time: Duration,
    dir: tempfile::TempDir,
}

fn betacfg_bin(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_betacfg"))
        .arg("--config")
        .arg(dir.join("config.toml"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .map_err(|e| format!("spawning betacfg: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "betacfg {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

const PIPELINE_CONFIG: &str = r#"
seed = 0

[sample.rule]
rule = "beta-cfg"
omega = 0.4
gamma = 1.0
weight = { kind = "beta", a = 2.0, b = 2.0 }
"#;

/// gen-data, train, sample and eval with default budgets, through the binary.
fn pipeline(dir: &Path) -> Result<(), String> {
    std::fs::write(dir.join("config.toml"), PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    for cmd in ["gen-data", "train", "sample", "eval"] {
        betacfg_bin(dir, &[cmd])?;
    }
    Ok(())
}

fn setup() -> Result<Lab, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    pipeline(dir.path())?;
    let train_time = start.elapsed();
    let checkpoint_text = std::fs::read_to_string(dir.path().join("checkpoint.json")).map_err(|e| e.to_string())?;
    let ck = Checkpoint::from_json(&checkpoint_text).map_err(|e| e.to_string())?;
    Ok(Lab {
        denoiser: ck.denoiser().map_err(|e| e.to_string())?,
        classifier: ck
            .classifier()
            .map_err(|e| e.to_string())?
            .ok_or("checkpoint has no classifier")?,
        standardization: ck.standardization.clone(),
        spec: ck.data_spec.clone().ok_or("checkpoint has no data spec")?,
        checkpoint_text,
        train_time,
        dir,
    })
}

fn beta22() -> BetaWeight {
    BetaWeight::new(2.0, 2.0).unwrap()
}

fn run(lab: &Lab, rule: GuidanceRule, steps: usize, seed: u64, batch: usize, class: usize) -> SampleRun {
    run_with(&lab.denoiser, lab, rule, steps, seed, batch, class)
}

fn run_with(
    den: &Denoiser,
    lab: &Lab,
    rule: GuidanceRule,
    steps: usize,
    seed: u64,
    batch: usize,
    class: usize,
) -> SampleRun {
    sample(
        &SamplerConfig::ddim(steps, rule, seed, batch),
        den,
        class,
        Some(&lab.classifier),
    )
    .unwrap()
}

// 1. Beta weight density.

fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    s * h / 3.0
}

fn criterion_1() -> Outcome {
    let mut o = Outcome::new();
    let shapes = [2.0, 2.5, 3.0];
    let mut worst_int = 0.0f64;
    let mut endpoints_zero = true;
    let mut worst_mirror = 0.0f64;
    for &a in &shapes {
        for &b in &shapes {
            let w = BetaWeight::new(a, b).unwrap();
            let m = BetaWeight::new(b, a).unwrap();
            worst_int = worst_int.max((simpson(|u| w.density(u).unwrap(), 100_000) - 1.0).abs());
            endpoints_zero &= w.density(0.0).unwrap() == 0.0 && w.density(1.0).unwrap() == 0.0;
            endpoints_zero &= w.weight_at_step(1000, 1000).unwrap() == 0.0;
            for k in 0..=1000 {
                let u = k as f64 / 1000.0;
                let v = (1000 - k) as f64 / 1000.0;
                worst_mirror = worst_mirror.max((w.density(u).unwrap() - m.density(v).unwrap()).abs());
            }
        }
    }
    o.check(
        worst_int < 1e-6,
        format!("max |integral - 1| = {worst_int:.2e} over 9 shapes (tol 1e-6)"),
    );
    o.check(endpoints_zero, "density is exactly 0 at u = 0 and u = 1");
    o.check(
        worst_mirror < 1e-12,
        format!("max |f_ab(u) - f_ba(1-u)| = {worst_mirror:.2e} (tol 1e-12)"),
    );
    let mid = beta22().density(0.5).unwrap();
    o.check((mid - 1.5).abs() < 1e-12, format!("beta(2,2) at 0.5 = {mid}"));
    o
}

// 2. Reduction to plain classifier-free guidance.

fn criterion_2(lab: &Lab) -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(GLOBAL_SEED + 200);
    let one = TimeWeight::Constant { value: 1.0 };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let u: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let c: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let w = rng.random_range(0.0..10.0);
        let t = rng.random_range(1..=1000);
        let p = EpsPair::new(&u, &c).unwrap();
        let a = cfg_eps(&p, w);
        let b = beta_cfg_eps(&p, w, &one, 0.0, t, 1000).unwrap();
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    o.check(
        worst <= 1e-12,
        format!("100 probes, max elementwise gap {worst:.2e} (tol 1e-12)"),
    );

    let w = 2.0;
    let mut identical = true;
    for class in 0..2 {
        let cfg = run(lab, GuidanceRule::Cfg { scale: w }, 50, 7 + class as u64, 500, class);
        let beta = run(
            lab,
            GuidanceRule::BetaCfg {
                omega: w,
                weight: one,
                gamma: 0.0,
            },
            50,
            7 + class as u64,
            500,
            class,
        );
        identical &= cfg
            .samples
            .iter()
            .zip(beta.samples.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        identical &= cfg.trajectories == beta.trajectories;
    }
    o.check(
        identical,
        "trained model, 2 classes x 500 chains: samples and trajectories bit-identical",
    );
    o
}

// 3. Fixed-norm law and vanishing endpoints.

fn criterion_3(lab: &Lab) -> Outcome {
    let mut o = Outcome::new();
    let weight = beta22();
    let omega = 1.0;
    let rule = GuidanceRule::BetaCfg {
        omega,
        weight: weight.into(),
        gamma: 1.0,
    };

    let mut worst = 0.0f64;
    let mut degenerate = 0usize;
    let mut first_zero = true;
    let mut steps_seen = 0usize;
    let mut profiles = Vec::new();
    for (nfe, batch) in [(50, 256), (1000, 64)] {
        let out = run(lab, rule, nfe, GLOBAL_SEED + 300 + nfe as u64, batch, 0);
        for tr in &out.trajectories {
            first_zero &= tr.steps[0].t == 1000 && tr.steps[0].eps_diff_norm == 0.0 && tr.steps[0].mod_norm == 0.0;
            for st in &tr.steps {
                let want = weight.density(st.t as f64 / 1000.0).unwrap() * omega;
                if want > 0.0 && st.eps_diff_norm == 0.0 {
                    degenerate += 1;
                    continue;
                }
                worst = worst.max((st.eps_diff_norm - want).abs());
                steps_seen += 1;
            }
        }
        let norms: Vec<f64> = out.trajectories[0].steps.iter().map(|st| st.eps_diff_norm).collect();
        profiles.push((nfe, norm_profile_summary(&out.trajectories).unwrap(), norms));
    }
    o.check(
        worst <= 1e-9 && degenerate == 0,
        format!("{steps_seen} logged steps, max |norm - beta*omega| = {worst:.2e} (tol 1e-9), {degenerate} degenerate"),
    );
    o.check(first_zero, "guidance norm and modification exactly 0 at t = T");

    for (nfe, prof, norms) in &profiles {
        let means: Vec<f64> = prof.iter().map(|p| p.mean).collect();
        let changes = direction_changes(&means);
        let peak = means.iter().cloned().fold(0.0, f64::max);
        let last = *means.last().unwrap();
        if *nfe == 50 {
            o.check(
                changes <= 1,
                format!("NFE=50: modification profile has {changes} direction change(s)"),
            );
            o.note(format!("NFE=50: last-step modification {last:.3e} vs peak {peak:.3e}"));
        } else {
            let norm_changes = direction_changes(norms);
            let law_last = *norms.last().unwrap();
            o.check(
                norm_changes <= 1,
                format!("NFE=1000: guidance-norm profile has {norm_changes} direction change(s)"),
            );
            o.check(
                law_last <= 0.01 * 1.5 * omega && last <= 0.01 * peak,
                format!("NFE=1000: guidance norm at t=1 is {law_last:.3e}; last-step modification {last:.3e} vs peak {peak:.3e}"),
            );
            // The DDIM coefficient jumps on the final step into t=0, which
            // can add one uptick to the modification profile.
            let tail: Vec<String> = means[means.len() - 3..].iter().map(|v| format!("{v:.3e}")).collect();
            o.note(format!(
                "NFE=1000: modification profile has {changes} direction change(s); last three steps {}",
                tail.join(", ")
            ));
        }
    }
    o
}

// 4. Gradient correctness.

const FD_H: f64 = 1e-5;

fn agree(analytic: f64, numeric: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / scale < 1e-4
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| sd * rng.sample::<f64, _>(StandardNormal))
}

fn criterion_4(lab: &Lab) -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(GLOBAL_SEED + 400);

    let mut den = lab.denoiser.clone();
    let n = 8;
    let x = normal_matrix(&mut rng, n, 2, 1.0);
    let eps = normal_matrix(&mut rng, n, 2, 1.0);
    let ts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=1000)).collect();
    let rows: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let (_, grads, _) = den.loss_gradients(x.view(), &ts, &rows, eps.view()).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|g| g.to_vec()).collect();
    let loss = |m: &Denoiser| m.loss_gradients(x.view(), &ts, &rows, eps.view()).unwrap().0;
    let mut bad = 0;
    for _ in 0..20 {
        let tensor = rng.random_range(0..analytic.len());
        let idx = rng.random_range(0..analytic[tensor].len());
        let orig = den.net.params()[tensor][idx];
        den.net.params_mut()[tensor][idx] = orig + FD_H;
        let plus = loss(&den);
        den.net.params_mut()[tensor][idx] = orig - FD_H;
        let minus = loss(&den);
        den.net.params_mut()[tensor][idx] = orig;
        bad += usize::from(!agree(analytic[tensor][idx], (plus - minus) / (2.0 * FD_H)));
    }
    o.check(
        bad == 0,
        format!("trained denoiser, training-loss weights: {bad}/20 probes off (rel 1e-4)"),
    );

    let cls = &lab.classifier;
    let mut bad = 0;
    for _ in 0..20 {
        let xp: Vec<f64> = (0..2).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let t = rng.random_range(1..=1000);
        let y = rng.random_range(0..2);
        let grad = cls.grad_log_prob(&xp, t, y).unwrap();
        let logp = |p: &[f64]| {
            let v = ndarray::ArrayView2::from_shape((1, 2), p).unwrap();
            cls.grad_log_prob_batch(v, t, y).unwrap().0[0]
        };
        let d = rng.random_range(0..2);
        let mut hi = xp.clone();
        hi[d] += FD_H;
        let mut lo = xp.clone();
        lo[d] -= FD_H;
        bad += usize::from(!agree(grad[d], (logp(&hi) - logp(&lo)) / (2.0 * FD_H)));
    }
    o.check(
        bad == 0,
        format!("trained classifier, input gradient of log p(y|x_t): {bad}/20 probes off (rel 1e-4)"),
    );
    o
}

// 5. Forward process consistency.

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn criterion_5() -> Outcome {
    let mut o = Outcome::new();
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let n = 100_000;
    let x0 = [1.0, -0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(GLOBAL_SEED + 500);
    for t in [10, 500, 1000] {
        let mut iter = [Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut shot = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for _ in 0..n {
            let mut x = x0.to_vec();
            for step in 1..=t {
                let noise: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
                x = s.forward_step(step, &x, &noise).unwrap();
            }
            let e: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let y = noisify(&x0, t, &e, &s).unwrap();
            for d in 0..2 {
                iter[d].push(x[d]);
                shot[d].push(y[d]);
            }
        }
        let mut worst = 0.0f64;
        for d in 0..2 {
            let (m1, v1) = moments(&iter[d]);
            let (m2, v2) = moments(&shot[d]);
            let se_mean = ((v1 + v2) / n as f64).sqrt();
            let se_var = (v1 * v1 + v2 * v2).sqrt() * (2.0 / (n - 1) as f64).sqrt();
            worst = worst.max((m1 - m2).abs() / se_mean).max((v1 - v2).abs() / se_var);
        }
        o.check(
            worst < 3.0,
            format!("t={t}: largest mean/variance gap {worst:.2} SE over 1e5 draws (tol 3)"),
        );
    }
    o
}

// 6. Toy-task comparison against plain classifier-free guidance.

struct Pooled {
    outlier: f64,
    coverage: f64,
    purity: f64,
    runs: Vec<EvalReport>,
}

fn pooled(lab: &Lab, ev: &Evaluator, rule: GuidanceRule, seeds: &[u64], n: usize) -> Pooled {
    let mut runs = Vec::new();
    for &s in seeds {
        for class in 0..2 {
            let seed = 1000 * s + class as u64;
            let out = run(lab, rule, 50, seed, n, class);
            runs.push(
                ev.evaluate(
                    &out.samples,
                    &lab.standardization,
                    class,
                    Some(&lab.classifier),
                    &rule.describe(),
                    seed,
                )
                .unwrap(),
            );
        }
    }
    let mean = |f: fn(&EvalReport) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    Pooled {
        outlier: mean(|r| r.outlier_rate),
        coverage: mean(|r| r.coverage),
        purity: mean(|r| r.class_purity),
        runs,
    }
}

fn spread(p: &Pooled, f: fn(&EvalReport) -> f64) -> f64 {
    let m = p.runs.iter().map(f).sum::<f64>() / p.runs.len() as f64;
    (p.runs.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (p.runs.len() - 1) as f64).sqrt()
}

fn criterion_6(lab: &Lab) -> Outcome {
    let mut o = Outcome::new();
    let seeds = Seeds::from_global(GLOBAL_SEED);
    let ev = Evaluator::calibrated(&lab.spec, seeds.calibration).unwrap();
    o.note(format!("calibrated radius r = {:.4}", ev.radius));

    let cfg_rule = GuidanceRule::Cfg { scale: 2.0 };
    let beta = |omega| GuidanceRule::BetaCfg {
        omega,
        weight: beta22().into(),
        gamma: 1.0,
    };

    // Pilot on seeds disjoint from the evaluation seeds.
    let pilot_seeds = [101, 102];
    let pilot_cfg = pooled(lab, &ev, cfg_rule, &pilot_seeds, 1000);
    o.note(format!(
        "pilot cfg w=2: outliers {:.4}, purity {:.4}",
        pilot_cfg.outlier, pilot_cfg.purity
    ));
    let mut best: Option<(f64, f64)> = None;
    let mut closest = (f64::INFINITY, 0.0);
    for omega in [0.3, 0.4, 0.5, 0.6, 0.8, 1.0] {
        let p = pooled(lab, &ev, beta(omega), &pilot_seeds, 1000);
        let gap = (p.purity - pilot_cfg.purity).abs();
        o.note(format!(
            "pilot beta-cfg omega={omega}: outliers {:.4}, purity {:.4}",
            p.outlier, p.purity
        ));
        if gap <= 0.01 && best.is_none_or(|(_, out)| p.outlier < out) {
            best = Some((omega, p.outlier));
        }
        if gap < closest.0 {
            closest = (gap, omega);
        }
    }
    let omega = match best {
        Some((w, _)) => w,
        None => {
            o.note(format!(
                "no omega within 0.01 purity in the pilot; using the closest, omega={}",
                closest.1
            ));
            closest.1
        }
    };

    let eval_seeds = [1, 2, 3, 4, 5];
    let c = pooled(lab, &ev, cfg_rule, &eval_seeds, 2000);
    let b = pooled(lab, &ev, beta(omega), &eval_seeds, 2000);
    let u = pooled(lab, &ev, GuidanceRule::Cfg { scale: 1.0 }, &eval_seeds, 2000);
    for (name, p) in [
        ("cfg w=2", &c),
        (&*format!("beta-cfg omega={omega}"), &b),
        ("conditional w=1", &u),
    ] {
        o.note(format!(
            "{name:<22} outliers {:.4} (sd {:.4})  coverage {:.4} (sd {:.4})  purity {:.4}",
            p.outlier,
            spread(p, |r| r.outlier_rate),
            p.coverage,
            spread(p, |r| r.coverage),
            p.purity
        ));
    }
    o.check(
        (b.purity - c.purity).abs() <= 0.02,
        format!("purity matched: |{:.4} - {:.4}| <= 0.02", b.purity, c.purity),
    );
    o.check(
        b.outlier <= c.outlier + 0.005,
        format!("(i) outliers {:.4} <= {:.4} + 0.005", b.outlier, c.outlier),
    );
    o.check(
        b.coverage >= c.coverage,
        format!("(ii) coverage {:.4} >= {:.4}", b.coverage, c.coverage),
    );
    o.check(
        u.outlier > c.outlier && u.outlier > b.outlier,
        format!("(iii) conditional outliers {:.4} exceed both guided rules", u.outlier),
    );
    o
}

// 7. Fixed-length classifier guidance.

fn criterion_7(lab: &Lab) -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(GLOBAL_SEED + 700);
    let (dim, steps) = (2usize, 50usize);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let eps: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let scale = 10f64.powf(rng.random_range(-6.0..3.0));
        let g: Vec<f64> = (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let w = rng.random_range(0.1..5.0);
        let out = geoguide_eps(&eps, &g, w, dim, steps).unwrap();
        let diff: Vec<f64> = out.iter().zip(&eps).map(|(a, b)| a - b).collect();
        worst = worst.max((l2_norm(&diff) - w * (dim as f64).sqrt() / steps as f64).abs());
    }
    o.check(
        worst <= 1e-12,
        format!("100 random gradients (norms 1e-6..1e3), max gap {worst:.2e} (tol 1e-12)"),
    );

    let w = 1.0;
    let run_out = run(
        lab,
        GuidanceRule::GeoGuide { scale: w, dim, steps },
        steps,
        GLOBAL_SEED + 701,
        100,
        1,
    );
    let want = w * (dim as f64).sqrt() / steps as f64;
    let (mut worst, mut checked, mut vanished) = (0.0f64, 0usize, 0usize);
    for tr in &run_out.trajectories {
        for st in &tr.steps {
            if st.eps_diff_norm == 0.0 {
                vanished += 1;
            } else {
                worst = worst.max((st.eps_diff_norm - want).abs());
                checked += 1;
            }
        }
    }
    o.check(
        worst <= 1e-12 && checked > 0,
        format!("trained classifier, {checked} logged steps: max gap {worst:.2e}; {vanished} steps with a vanishing gradient"),
    );
    o
}

// 8. Determinism and persistence.

fn compare_runs(a: &Path, b: &Path, files: &[&str]) -> Vec<String> {
    files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok() || !a.join(f).is_file())
        .map(|f| f.to_string())
        .collect()
}

fn criterion_8(lab: &Lab) -> Result<Outcome, String> {
    let mut o = Outcome::new();
    let again = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(again.path())?;
    let files = [
        "dataset.csv",
        "checkpoint.json",
        "train_loss.csv",
        "samples.csv",
        "trajectories.csv",
        "results.jsonl",
    ];
    let differ = compare_runs(lab.dir.path(), again.path(), &files);
    o.check(
        differ.is_empty(),
        format!(
            "second full pipeline run: {} of {} outputs differ {differ:?}",
            differ.len(),
            files.len()
        ),
    );

    let ck = Checkpoint::from_json(&lab.checkpoint_text).map_err(|e| e.to_string())?;
    let path = again.path().join("resaved.json");
    ck.save(&path).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let resaved = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    o.check(
        resaved == lab.checkpoint_text && back.denoiser().map_err(|e| e.to_string())? == lab.denoiser,
        "load -> save -> load of the default checkpoint is byte-identical and restores the weights",
    );

    let a = run(lab, GuidanceRule::Cfg { scale: 2.0 }, 50, 11, 300, 0);
    let reloaded = back.denoiser().map_err(|e| e.to_string())?;
    let b = run_with(&reloaded, lab, GuidanceRule::Cfg { scale: 2.0 }, 50, 11, 300, 0);
    o.check(
        a.samples == b.samples && a.trajectories == b.trajectories,
        "sampling from the reloaded checkpoint is identical",
    );
    Ok(o)
}

fn report(
    id: usize,
    title: &str,
    limit_s: f64,
    extra: Duration,
    f: impl FnOnce() -> Result<Outcome, String>,
) -> Option<bool> {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let secs = (start.elapsed() + extra).as_secs_f64();
    match result {
        Ok(Ok(mut o)) => {
            let in_time = secs < limit_s;
            if !in_time {
                o.check(false, format!("runtime {secs:.1} s exceeds {limit_s} s"));
            }
            let verdict = if o.pass { "PASS" } else { "FAIL" };
            println!("criterion {id} {verdict}  {title}  ({secs:.1} s, limit {limit_s} s)");
            for d in &o.details {
                println!("    {d}");
            }
            Some(o.pass)
        }
        Ok(Err(e)) => {
            println!("criterion {id} FAIL  {title}  (could not run: {e})");
            None
        }
        Err(_) => {
            println!("criterion {id} FAIL  {title}  (panicked)");
            None
        }
    }
}

fn main() {
    let mut results = Vec::new();
    results.push(report(1, "beta weight density", 1.0, Duration::ZERO, || {
        Ok(criterion_1())
    }));
    results.push(report(5, "forward process consistency", 30.0, Duration::ZERO, || {
        Ok(criterion_5())
    }));

    println!("training the default toy model (gen-data, train, sample, eval through the binary)...");
    let lab = match setup() {
        Ok(lab) => lab,
        Err(e) => {
            println!("setup failed: {e}");
            std::process::exit(1);
        }
    };
    println!("    trained in {:.1} s", lab.train_time.as_secs_f64());

    results.push(report(
        2,
        "reduction to classifier-free guidance",
        5.0,
        Duration::ZERO,
        || Ok(criterion_2(&lab)),
    ));
    results.push(report(
        3,
        "fixed-norm law and vanishing endpoints",
        30.0,
        Duration::ZERO,
        || Ok(criterion_3(&lab)),
    ));
    results.push(report(4, "gradient correctness", 10.0, Duration::ZERO, || {
        Ok(criterion_4(&lab))
    }));
    // The training budget counts towards this criterion's limit.
    results.push(report(
        6,
        "toy-task comparison with cfg",
        1200.0,
        lab.train_time,
        || Ok(criterion_6(&lab)),
    ));
    results.push(report(
        7,
        "fixed-length classifier guidance",
        1.0,
        Duration::ZERO,
        || Ok(criterion_7(&lab)),
    ));
    results.push(report(8, "determinism and persistence", 600.0, Duration::ZERO, || {
        criterion_8(&lab)
    }));

    let passed = results.iter().filter(|r| **r == Some(true)).count();
    println!("{passed}/{} criteria passed", results.len());
    if results.iter().any(Option::is_none) {
        std::process::exit(1);
    }
}
