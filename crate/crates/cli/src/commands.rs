//! The six subcommands. Each reads its section of the run config, writes its
//! outputs under the run directory, and finishes with a manifest.

use std::path::{Path, PathBuf};

use betacfg::csvio::split_preamble;
use betacfg::guidance_weight::BetaWeight;
use betacfg::metrics::EvalReport;
use betacfg::sampler::{samples_from_csv, samples_to_csv, trajectories_to_csv, trajectory_rows_from_csv};
use betacfg::toydata::Point;
use betacfg::{
    generate, sample, train_classifier, train_denoiser, Denoiser, Evaluator, GuidanceRule, LabeledSet, NoiseSchedule,
    NoisyClassifier, SamplerConfig, Standardization, ToySpec,
};
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, TrainingMetadata};
use crate::config::{RunConfig, RunDir, SweepRule};
use crate::error::{read_to_string, write_file, CliError, CliResult};
use crate::manifest::Manifest;
use crate::plot::{profile_svg, scatter_svg, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Generate the two-class toy dataset.
    GenData,
    /// Train the denoiser (and the noisy classifier) on a dataset.
    Train,
    /// Draw samples for one class with one guidance rule.
    Sample,
    /// Score a samples file against the ground-truth manifold.
    Eval,
    /// Sample and score every point of a hyperparameter grid.
    Sweep,
    /// Render scatter and norm-profile SVGs.
    Plot,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Plot => "plot",
        }
    }
}

pub fn run(command: Command, cfg: &RunConfig, dir: &RunDir) -> CliResult<()> {
    match command {
        Command::GenData => gen_data(cfg, dir),
        Command::Train => train(cfg, dir),
        Command::Sample => sample_cmd(cfg, dir),
        Command::Eval => eval(cfg, dir).map(|_| ()),
        Command::Sweep => sweep(cfg, dir),
        Command::Plot => plot(cfg, dir),
    }
}

fn meta_lookup<'a>(meta: &'a [(String, String)], key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn gen_data(cfg: &RunConfig, dir: &RunDir) -> CliResult<()> {
    let spec = cfg.data.spec(cfg.seeds().data);
    spec.validate().map_err(|e| CliError::Config(format!("[data]: {e}")))?;
    let data = generate(&spec)?;
    let mut text = String::new();
    betacfg::csvio::write_preamble(
        &mut text,
        &[(
            "spec".into(),
            serde_json::to_string(&spec).expect("spec is serialisable"),
        )],
    );
    text.push_str(&data.to_csv());
    let path = dir.resolve(&cfg.data.output);
    write_file(&path, text.as_bytes())?;
    Manifest::write("gen-data", cfg, &dir.root, &[], std::slice::from_ref(&path))?;
    eprintln!("wrote {} points to {}", data.len(), path.display());
    Ok(())
}

/// Dataset plus the generating spec when the file records one.
pub fn load_dataset(path: &Path) -> CliResult<(LabeledSet, Option<ToySpec>)> {
    let text = read_to_string(path)?;
    let (meta, _) = split_preamble(&text);
    let spec = meta_lookup(&meta, "spec")
        .map(|s| serde_json::from_str::<ToySpec>(s).map_err(|e| CliError::data(path, format!("spec line: {e}"))))
        .transpose()?;
    let data = LabeledSet::from_csv(&text).map_err(|e| CliError::data(path, e))?;
    Ok((data, spec))
}

pub fn train(cfg: &RunConfig, dir: &RunDir) -> CliResult<()> {
    let t = &cfg.train;
    let data_path = dir.input(&t.dataset, "dataset")?;
    let (data, spec) = load_dataset(&data_path)?;
    let sched =
        NoiseSchedule::from_params(t.schedule).map_err(|e| CliError::Config(format!("[train.schedule]: {e}")))?;
    let seeds = cfg.seeds();

    eprintln!("training denoiser for {} steps", t.denoiser.steps);
    let (den, rep) = train_denoiser(&data, &t.denoiser, &sched, seeds.denoiser)?;
    let classifier = if t.with_classifier {
        eprintln!("training classifier for {} steps", t.classifier.steps);
        Some(train_classifier(&data, &t.classifier, &sched, seeds.classifier)?)
    } else {
        None
    };

    let meta = TrainingMetadata {
        seed: seeds.denoiser,
        steps: rep.steps,
        final_loss: rep.final_loss,
        validation_loss: rep.validation_loss,
        classifier_seed: classifier.as_ref().map(|_| seeds.classifier),
        classifier_steps: classifier.as_ref().map(|(_, r)| r.steps),
        classifier_final_loss: classifier.as_ref().map(|(_, r)| r.final_loss),
    };
    let ck = Checkpoint::new(
        &den,
        classifier.as_ref().map(|(c, _)| c),
        data.standardization.clone(),
        spec,
        meta,
    );
    let ck_path = dir.resolve(&t.checkpoint);
    ck.save(&ck_path)?;

    let mut curve = String::from("model,step,loss\n");
    for (i, l) in rep.losses.iter().enumerate() {
        curve.push_str(&format!("denoiser,{i},{}\n", betacfg::csvio::fmt_float(*l)));
    }
    if let Some((_, r)) = &classifier {
        for (i, l) in r.losses.iter().enumerate() {
            curve.push_str(&format!("classifier,{i},{}\n", betacfg::csvio::fmt_float(*l)));
        }
    }
    let curve_path = dir.resolve(&t.loss_curve);
    write_file(&curve_path, curve.as_bytes())?;
    Manifest::write("train", cfg, &dir.root, &[data_path], &[ck_path.clone(), curve_path])?;
    eprintln!(
        "denoiser loss {:.4} (validation {:.4} from {:.4}); checkpoint {}",
        rep.final_loss,
        rep.validation_loss,
        rep.initial_validation_loss,
        ck_path.display()
    );
    Ok(())
}

/// Model-space samples to raw coordinates, as an array.
fn raw_array(samples: &Array2<f64>, st: &Standardization) -> Array2<f64> {
    let mut out = samples.clone();
    for mut row in out.rows_mut() {
        let p = st.inverse([row[0], row[1]]);
        row[0] = p[0];
        row[1] = p[1];
    }
    out
}

fn model_array(raw: &Array2<f64>, st: &Standardization) -> Array2<f64> {
    let mut out = raw.clone();
    for mut row in out.rows_mut() {
        let p = st.forward([row[0], row[1]]);
        row[0] = p[0];
        row[1] = p[1];
    }
    out
}

struct Loaded {
    denoiser: Denoiser,
    classifier: Option<NoisyClassifier>,
    ck: Checkpoint,
}

fn load_models(path: &Path) -> CliResult<Loaded> {
    let ck = Checkpoint::load(path)?;
    Ok(Loaded {
        denoiser: ck.denoiser()?,
        classifier: ck.classifier()?,
        ck,
    })
}

fn check_rule(rule: &GuidanceRule, has_classifier: bool, ck_path: &Path) -> CliResult<()> {
    if rule.needs_classifier() && !has_classifier {
        return Err(CliError::Config(format!(
            "rule `{}` needs a classifier but {} has no classifier block",
            rule.name(),
            ck_path.display()
        )));
    }
    Ok(())
}

/// Samples and trajectories in their export formats.
fn draw(m: &Loaded, rule: GuidanceRule, class: usize, scfg: SamplerConfig) -> CliResult<(Array2<f64>, String, String)> {
    let run = sample(&scfg, &m.denoiser, class, m.classifier.as_ref())?;
    let preamble = vec![
        (
            "rule".to_string(),
            serde_json::to_string(&rule).expect("rule is serialisable"),
        ),
        ("rule_label".to_string(), rule.describe()),
        ("class".to_string(), class.to_string()),
        ("seed".to_string(), scfg.seed.to_string()),
        ("steps".to_string(), scfg.steps.to_string()),
        (
            "mode".to_string(),
            serde_json::to_string(&scfg.mode).expect("mode is serialisable"),
        ),
        ("space".to_string(), "raw".to_string()),
    ];
    let samples_csv = samples_to_csv(&raw_array(&run.samples, &m.ck.standardization), &preamble);
    let traj_csv = trajectories_to_csv(&run.trajectories, &preamble);
    Ok((run.samples, samples_csv, traj_csv))
}

pub fn sample_cmd(cfg: &RunConfig, dir: &RunDir) -> CliResult<()> {
    let s = &cfg.sample;
    let ck_path = dir.input(&s.checkpoint, "checkpoint")?;
    let m = load_models(&ck_path)?;
    check_rule(&s.rule, m.classifier.is_some(), &ck_path)?;
    let scfg = SamplerConfig {
        steps: s.steps,
        rule: s.rule,
        seed: cfg.seeds().sampling,
        batch: s.n_samples,
        mode: s.mode,
        renoise: s.renoise,
    };
    scfg.validate(&m.denoiser.schedule)
        .map_err(|e| CliError::Config(format!("[sample]: {e}")))?;
    let (_, samples_csv, traj_csv) = draw(&m, s.rule, s.class, scfg)?;
    let samples_path = dir.resolve(&s.samples);
    let traj_path = dir.resolve(&s.trajectories);
    write_file(&samples_path, samples_csv.as_bytes())?;
    write_file(&traj_path, traj_csv.as_bytes())?;
    Manifest::write("sample", cfg, &dir.root, &[ck_path], &[samples_path.clone(), traj_path])?;
    eprintln!(
        "wrote {} samples ({}) to {}",
        s.n_samples,
        s.rule.describe(),
        samples_path.display()
    );
    Ok(())
}

fn evaluator_for(ck: &Checkpoint, cfg: &RunConfig) -> CliResult<Evaluator> {
    let spec = ck.data_spec.clone().unwrap_or_else(|| cfg.data.spec(cfg.seeds().data));
    Ok(Evaluator::calibrated(&spec, cfg.seeds().calibration)?)
}

fn require_classifier(m: &Loaded, path: &Path) -> CliResult<()> {
    if m.classifier.is_none() {
        return Err(CliError::Config(format!(
            "class purity needs a classifier but {} has no classifier block",
            path.display()
        )));
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, dir: &RunDir) -> CliResult<EvalReport> {
    let e = &cfg.eval;
    let ck_path = dir.input(&e.checkpoint, "checkpoint")?;
    let samples_path = dir.input(&e.samples, "samples")?;
    let m = load_models(&ck_path)?;
    require_classifier(&m, &ck_path)?;
    let text = read_to_string(&samples_path)?;
    let (meta, _) = split_preamble(&text);
    let raw = samples_from_csv(&text).map_err(|err| CliError::data(&samples_path, err))?;
    if raw.nrows() == 0 {
        return Err(CliError::data(&samples_path, "no samples"));
    }
    let class = match e.class {
        Some(c) => c,
        None => meta_lookup(&meta, "class")
            .ok_or_else(|| CliError::data(&samples_path, "no `class` line; set [eval] class"))?
            .parse()
            .map_err(|err| CliError::data(&samples_path, format!("class: {err}")))?,
    };
    let seed = meta_lookup(&meta, "seed")
        .and_then(|s| s.parse().ok())
        .unwrap_or(cfg.seed);
    let label = meta_lookup(&meta, "rule_label").unwrap_or("unknown");
    let ev = evaluator_for(&m.ck, cfg)?;
    let model = model_array(&raw, &m.ck.standardization);
    let rep = ev.evaluate(&model, &m.ck.standardization, class, m.classifier.as_ref(), label, seed)?;
    let line = serde_json::to_string(&rep).expect("report is serialisable");
    let results = dir.resolve(&e.results);
    write_file(&results, format!("{line}\n").as_bytes())?;
    Manifest::write("eval", cfg, &dir.root, &[ck_path, samples_path], &[results])?;
    println!("{line}");
    Ok(rep)
}

/// One grid point of a sweep.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub index: usize,
    pub ab: Option<[f64; 2]>,
    pub gamma: Option<f64>,
    pub scale: f64,
}

impl GridPoint {
    pub fn rule(&self, family: SweepRule) -> betacfg::Result<GuidanceRule> {
        let weight = || -> betacfg::Result<_> {
            let [a, b] = self.ab.expect("beta rules carry a shape");
            Ok(BetaWeight::new(a, b)?.into())
        };
        let rule = match family {
            SweepRule::Cfg => GuidanceRule::Cfg { scale: self.scale },
            SweepRule::Cfgpp => GuidanceRule::CfgPlusPlus { lambda: self.scale },
            SweepRule::BetaCfg => GuidanceRule::BetaCfg {
                omega: self.scale,
                weight: weight()?,
                gamma: self.gamma.expect("beta rules carry gamma"),
            },
            SweepRule::BetaCfgpp => GuidanceRule::BetaCfgPlusPlus {
                lambda: self.scale,
                weight: weight()?,
                gamma: self.gamma.expect("beta rules carry gamma"),
            },
        };
        rule.validate()?;
        Ok(rule)
    }
}

/// Cartesian product of the grids that apply to `family`.
pub fn grid(family: SweepRule, ab: &[[f64; 2]], gamma: &[f64], scale: &[f64]) -> Vec<GridPoint> {
    let beta = matches!(family, SweepRule::BetaCfg | SweepRule::BetaCfgpp);
    let abs: Vec<Option<[f64; 2]>> = if beta {
        ab.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let gammas: Vec<Option<f64>> = if beta {
        gamma.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let mut out = Vec::new();
    for &ab in &abs {
        for &g in &gammas {
            for &s in scale {
                out.push(GridPoint {
                    index: out.len(),
                    ab,
                    gamma: g,
                    scale: s,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    index: usize,
    rule: String,
    a: Option<f64>,
    b: Option<f64>,
    gamma: Option<f64>,
    scale: f64,
    outlier_rate: Option<f64>,
    coverage: Option<f64>,
    class_purity: Option<f64>,
    mean_manifold_distance: Option<f64>,
    n_samples: Option<usize>,
    seed: u64,
    status: String,
    error: String,
}

/// Class-averaged report for one grid point.
fn pooled(reports: &[EvalReport], rule: String, seed: u64) -> EvalReport {
    let k = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
    EvalReport {
        outlier_rate: mean(|r| r.outlier_rate),
        coverage: mean(|r| r.coverage),
        mean_manifold_distance: mean(|r| r.mean_manifold_distance),
        class_purity: mean(|r| r.class_purity),
        n_samples: reports.iter().map(|r| r.n_samples).sum(),
        rule,
        seed,
    }
}

pub fn sweep(cfg: &RunConfig, dir: &RunDir) -> CliResult<()> {
    let sw = &cfg.sweep;
    let beta = matches!(sw.rule, SweepRule::BetaCfg | SweepRule::BetaCfgpp);
    if sw.scale.is_empty() || sw.classes.is_empty() || (beta && (sw.ab.is_empty() || sw.gamma.is_empty())) {
        return Err(CliError::Config(
            "[sweep]: every grid that applies to the rule must be nonempty".into(),
        ));
    }
    if sw.workers == 0 {
        return Err(CliError::Config("[sweep]: workers must be at least 1".into()));
    }
    let ck_path = dir.input(&sw.checkpoint, "checkpoint")?;
    let m = load_models(&ck_path)?;
    require_classifier(&m, &ck_path)?;
    for &c in &sw.classes {
        if c >= m.denoiser.n_classes {
            return Err(CliError::Config(format!("[sweep]: class {c} not in the model")));
        }
    }
    let ev = evaluator_for(&m.ck, cfg)?;
    let points = grid(sw.rule, &sw.ab, &sw.gamma, &sw.scale);
    let out_dir = dir.resolve(&sw.output_dir);
    let base_seed = cfg.seeds().sampling;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sw.workers)
        .build()
        .map_err(|e| CliError::Config(format!("[sweep]: {e}")))?;
    let outcomes: Vec<(GridPoint, u64, Result<(EvalReport, Vec<PathBuf>), String>)> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let seed = base_seed.wrapping_add(1 + p.index as u64);
                let res = (|| -> CliResult<(EvalReport, Vec<PathBuf>)> {
                    let rule = p.rule(sw.rule)?;
                    let scfg = SamplerConfig::ddim(sw.steps, rule, seed, sw.n_samples);
                    scfg.validate(&m.denoiser.schedule)?;
                    let pdir = out_dir.join(format!("point-{:03}", p.index));
                    let mut reports = Vec::new();
                    let mut files = Vec::new();
                    for &class in &sw.classes {
                        let (model, samples_csv, traj_csv) = draw(&m, rule, class, scfg.clone())?;
                        let sp = pdir.join(format!("samples-c{class}.csv"));
                        let tp = pdir.join(format!("trajectories-c{class}.csv"));
                        write_file(&sp, samples_csv.as_bytes())?;
                        write_file(&tp, traj_csv.as_bytes())?;
                        files.extend([sp, tp]);
                        reports.push(ev.evaluate(
                            &model,
                            &m.ck.standardization,
                            class,
                            m.classifier.as_ref(),
                            &rule.describe(),
                            seed,
                        )?);
                    }
                    Ok((pooled(&reports, rule.describe(), seed), files))
                })();
                (p.clone(), seed, res.map_err(|e| e.to_string()))
            })
            .collect()
    });

    let mut results = String::new();
    let mut failures = String::new();
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for (p, seed, res) in &outcomes {
        let [a, b] = p.ab.map_or([None, None], |[a, b]| [Some(a), Some(b)]);
        let mut row = SummaryRow {
            index: p.index,
            rule: String::new(),
            a,
            b,
            gamma: p.gamma,
            scale: p.scale,
            outlier_rate: None,
            coverage: None,
            class_purity: None,
            mean_manifold_distance: None,
            n_samples: None,
            seed: *seed,
            status: "ok".into(),
            error: String::new(),
        };
        match res {
            Ok((rep, files)) => {
                results.push_str(&serde_json::to_string(rep).expect("report is serialisable"));
                results.push('\n');
                row.rule = rep.rule.clone();
                row.outlier_rate = Some(rep.outlier_rate);
                row.coverage = Some(rep.coverage);
                row.class_purity = Some(rep.class_purity);
                row.mean_manifold_distance = Some(rep.mean_manifold_distance);
                row.n_samples = Some(rep.n_samples);
                outputs.extend(files.iter().cloned());
            }
            Err(msg) => {
                let doc = serde_json::json!({ "index": p.index, "scale": p.scale, "ab": p.ab, "gamma": p.gamma, "error": msg });
                failures.push_str(&doc.to_string());
                failures.push('\n');
                row.status = "failed".into();
                row.error = msg.clone();
                eprintln!("grid point {} failed: {msg}", p.index);
            }
        }
        rows.push(row);
    }
    rows.sort_by(|x, y| match (x.outlier_rate, y.outlier_rate) {
        (Some(a), Some(b)) => a.total_cmp(&b).then(x.index.cmp(&y.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => x.index.cmp(&y.index),
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::data(&out_dir, e))?;
    }
    let summary = w.into_inner().map_err(|e| CliError::data(&out_dir, e))?;

    let results_path = out_dir.join("results.jsonl");
    let summary_path = out_dir.join("summary.csv");
    let failures_path = out_dir.join("failures.jsonl");
    write_file(&results_path, results.as_bytes())?;
    write_file(&summary_path, &summary)?;
    write_file(&failures_path, failures.as_bytes())?;
    outputs.extend([results_path, summary_path.clone(), failures_path]);
    Manifest::write("sweep", cfg, &dir.root, &[ck_path], &outputs)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    eprintln!(
        "{} grid points, {failed} failed; summary {}",
        rows.len(),
        summary_path.display()
    );
    Ok(())
}

fn label_for(meta: &[(String, String)], path: &Path) -> String {
    meta_lookup(meta, "rule_label").map(str::to_string).unwrap_or_else(|| {
        path.file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    })
}

fn to_points(a: &Array2<f64>) -> Vec<Point> {
    a.rows().into_iter().map(|r| [r[0], r[1]]).collect()
}

pub fn plot(cfg: &RunConfig, dir: &RunDir) -> CliResult<()> {
    let p = &cfg.plot;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();

    let background: Vec<Point> = match &p.dataset {
        Some(d) => {
            let path = dir.input(d, "dataset")?;
            let (data, _) = load_dataset(&path)?;
            inputs.push(path);
            (0..data.n_classes).flat_map(|c| data.raw_points_of(c)).collect()
        }
        None => Vec::new(),
    };
    let mut series = Vec::new();
    for s in &p.samples {
        let path = dir.input(s, "samples")?;
        let text = read_to_string(&path)?;
        let (meta, _) = split_preamble(&text);
        let pts = samples_from_csv(&text).map_err(|e| CliError::data(&path, e))?;
        if pts.nrows() > 0 && pts.ncols() != 2 {
            return Err(CliError::data(&path, "samples must have two columns"));
        }
        series.push(Series {
            label: label_for(&meta, &path),
            points: to_points(&pts),
        });
        inputs.push(path);
    }
    let scatter = dir.resolve(&p.scatter);
    let svg = scatter_svg("samples", &background, &series).map_err(|e| CliError::data(&scatter, e))?;
    write_file(&scatter, svg.as_bytes())?;
    outputs.push(scatter);

    if !p.trajectories.is_empty() {
        let mut curves = Vec::new();
        for t in &p.trajectories {
            let path = dir.input(t, "trajectories")?;
            let text = read_to_string(&path)?;
            let (meta, _) = split_preamble(&text);
            let rows = trajectory_rows_from_csv(&text).map_err(|e| CliError::data(&path, e))?;
            let mut by_t: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
            for r in rows {
                let e = by_t.entry(r.t).or_insert((0.0, 0));
                e.0 += r.mod_norm;
                e.1 += 1;
            }
            curves.push(Series {
                label: label_for(&meta, &path),
                points: by_t.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect(),
            });
            inputs.push(path);
        }
        let profile = dir.resolve(&p.profile);
        let svg = profile_svg("modification norm per step", &curves).map_err(|e| CliError::data(&profile, e))?;
        write_file(&profile, svg.as_bytes())?;
        outputs.push(profile);
    }
    Manifest::write("plot", cfg, &dir.root, &inputs, &outputs)?;
    Ok(())
}
