//! Run configuration: one TOML file with a section per command.
//!
//! Unknown keys are rejected everywhere. Relative paths resolve against the
//! output directory, so a config and its run directory move together.

use std::path::{Path, PathBuf};

use betacfg::sampler::Renoise;
use betacfg::toydata::ClassShape;
use betacfg::{ClassifierConfig, DenoiserConfig, GuidanceRule, SamplerMode, ScheduleParams, ToySpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub plot: PlotSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: FORMAT_VERSION,
            seed: 0,
            out: None,
            data: DataSection::default(),
            train: TrainSection::default(),
            sample: SampleSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            plot: PlotSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub output: PathBuf,
    pub n_per_class: usize,
    pub sigma_along: f64,
    pub sigma_across: f64,
    /// Replaces the built-in geometry when present.
    pub classes: Option<Vec<ClassShape>>,
}

impl Default for DataSection {
    fn default() -> Self {
        let spec = ToySpec::default();
        Self {
            output: "dataset.csv".into(),
            n_per_class: spec.n_per_class,
            sigma_along: spec.sigma_along,
            sigma_across: spec.sigma_across,
            classes: None,
        }
    }
}

impl DataSection {
    pub fn spec(&self, seed: u64) -> ToySpec {
        let base = ToySpec::default();
        ToySpec {
            n_per_class: self.n_per_class,
            seed,
            sigma_along: self.sigma_along,
            sigma_across: self.sigma_across,
            classes: self.classes.clone().unwrap_or(base.classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub loss_curve: PathBuf,
    pub with_classifier: bool,
    pub schedule: ScheduleParams,
    pub denoiser: DenoiserConfig,
    pub classifier: ClassifierConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset: "dataset.csv".into(),
            checkpoint: "checkpoint.json".into(),
            loss_curve: "train_loss.csv".into(),
            with_classifier: true,
            schedule: ScheduleParams::default(),
            denoiser: DenoiserConfig::default(),
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub checkpoint: PathBuf,
    pub class: usize,
    pub n_samples: usize,
    pub steps: usize,
    pub mode: SamplerMode,
    pub renoise: Renoise,
    pub rule: GuidanceRule,
    pub samples: PathBuf,
    pub trajectories: PathBuf,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            checkpoint: "checkpoint.json".into(),
            class: 0,
            n_samples: 2000,
            steps: 50,
            mode: SamplerMode::Ddim,
            renoise: Renoise::default(),
            rule: GuidanceRule::None,
            samples: "samples.csv".into(),
            trajectories: "trajectories.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub checkpoint: PathBuf,
    pub samples: PathBuf,
    /// Defaults to the class recorded in the samples file.
    pub class: Option<usize>,
    pub results: PathBuf,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            checkpoint: "checkpoint.json".into(),
            samples: "samples.csv".into(),
            class: None,
            results: "results.jsonl".into(),
        }
    }
}

/// Which rule family a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepRule {
    Cfg,
    Cfgpp,
    BetaCfg,
    BetaCfgpp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub checkpoint: PathBuf,
    pub output_dir: PathBuf,
    pub rule: SweepRule,
    pub classes: Vec<usize>,
    pub n_samples: usize,
    pub steps: usize,
    pub workers: usize,
    /// `(a, b)` shape pairs; ignored by the plain rules.
    pub ab: Vec<[f64; 2]>,
    /// Norm powers; ignored by the plain rules.
    pub gamma: Vec<f64>,
    /// ω, λ or w depending on the rule.
    pub scale: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            checkpoint: "checkpoint.json".into(),
            output_dir: "sweep".into(),
            rule: SweepRule::BetaCfg,
            classes: vec![0, 1],
            n_samples: 2000,
            steps: 50,
            workers: 4,
            ab: vec![[2.0, 2.0]],
            gamma: vec![1.0],
            scale: vec![0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotSection {
    /// Background points for the scatter plot.
    pub dataset: Option<PathBuf>,
    pub samples: Vec<PathBuf>,
    pub trajectories: Vec<PathBuf>,
    pub scatter: PathBuf,
    pub profile: PathBuf,
}

impl Default for PlotSection {
    fn default() -> Self {
        Self {
            dataset: Some("dataset.csv".into()),
            samples: vec!["samples.csv".into()],
            trajectories: vec!["trajectories.csv".into()],
            scatter: "scatter.svg".into(),
            profile: "profile.svg".into(),
        }
    }
}

/// Seeds for each stage, all derived from the global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub data: u64,
    pub denoiser: u64,
    pub classifier: u64,
    pub sampling: u64,
    pub calibration: u64,
}

impl Seeds {
    pub fn from_global(seed: u64) -> Self {
        Self {
            data: seed,
            denoiser: seed.wrapping_add(1),
            classifier: seed.wrapping_add(2),
            sampling: seed.wrapping_add(3),
            calibration: seed.wrapping_add(4),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        if cfg.version != FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "config: unsupported version {} (expected {FORMAT_VERSION})",
                cfg.version
            )));
        }
        cfg.sample
            .rule
            .validate()
            .map_err(|e| CliError::Config(format!("config: [sample] rule: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_global(self.seed)
    }
}

/// Output directory plus path resolution against it.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Resolves an input and fails with its path when it does not exist.
    pub fn input(&self, p: &Path, what: &str) -> CliResult<PathBuf> {
        let full = self.resolve(p);
        if full.is_file() {
            Ok(full)
        } else {
            Err(CliError::Config(format!("{what} not found: {}", full.display())))
        }
    }
}
