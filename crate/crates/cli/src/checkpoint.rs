//! Versioned JSON checkpoints.
//!
//! Floats are written in shortest round-trip form, so `load(save(x))`
//! restores every weight bit-for-bit and saving again reproduces the file.

use std::path::Path;

use betacfg::neural::{Activation, Dense, Mlp};
use betacfg::{Denoiser, NoiseSchedule, NoisyClassifier, ScheduleParams, Standardization, ToySpec};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_file, CliError, CliResult};

pub const CHECKPOINT_VERSION: &str = "betacfg-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerBlock {
    /// Row-major `out × in`.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetBlock {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<LayerBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserBlock {
    pub net: NetBlock,
    pub embedding: Vec<Vec<f64>>,
    pub n_classes: usize,
    pub frequencies: usize,
    pub p_uncond: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierBlock {
    pub net: NetBlock,
    pub n_classes: usize,
    pub frequencies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub steps: usize,
    pub final_loss: f64,
    pub validation_loss: f64,
    pub classifier_seed: Option<u64>,
    pub classifier_steps: Option<usize>,
    pub classifier_final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: String,
    pub schedule: ScheduleParams,
    pub denoiser: DenoiserBlock,
    pub classifier: Option<ClassifierBlock>,
    pub standardization: Standardization,
    /// Geometry of the training data, used as the ground truth by `eval`.
    pub data_spec: Option<ToySpec>,
    pub metadata: TrainingMetadata,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: &[Vec<f64>], what: &str) -> CliResult<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("checkpoint: ragged {what}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| CliError::Config(format!("checkpoint: {what}: {e}")))
}

impl NetBlock {
    pub fn from_mlp(net: &Mlp) -> Self {
        Self {
            dims: net.dims(),
            activation: net.activation(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerBlock {
                    weight: rows(&l.weight),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_mlp(&self) -> CliResult<Mlp> {
        if self.dims.len() != self.layers.len() + 1 {
            return Err(CliError::Config(format!(
                "checkpoint: {} dims declared for {} layers",
                self.dims.len(),
                self.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (self.dims[i], self.dims[i + 1]);
            let weight = matrix(&l.weight, "weight")?;
            if weight.dim() != (fan_out, fan_in) || l.bias.len() != fan_out {
                return Err(CliError::Config(format!(
                    "checkpoint: layer {i} holds {:?} weights and {} biases, dims say {fan_out}×{fan_in}",
                    weight.dim(),
                    l.bias.len()
                )));
            }
            layers.push(Dense {
                weight,
                bias: Array1::from(l.bias.clone()),
            });
        }
        Ok(Mlp::new(layers, self.activation)?)
    }
}

impl Checkpoint {
    pub fn new(
        denoiser: &Denoiser,
        classifier: Option<&NoisyClassifier>,
        standardization: Standardization,
        data_spec: Option<ToySpec>,
        metadata: TrainingMetadata,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION.into(),
            schedule: denoiser.schedule.params(),
            denoiser: DenoiserBlock {
                net: NetBlock::from_mlp(&denoiser.net),
                embedding: rows(&denoiser.embedding),
                n_classes: denoiser.n_classes,
                frequencies: denoiser.frequencies,
                p_uncond: denoiser.p_uncond,
            },
            classifier: classifier.map(|c| ClassifierBlock {
                net: NetBlock::from_mlp(&c.net),
                n_classes: c.n_classes,
                frequencies: c.frequencies,
            }),
            standardization,
            data_spec,
            metadata,
        }
    }

    pub fn schedule(&self) -> CliResult<NoiseSchedule> {
        Ok(NoiseSchedule::from_params(self.schedule)?)
    }

    pub fn denoiser(&self) -> CliResult<Denoiser> {
        let d = &self.denoiser;
        Ok(Denoiser::new(
            d.net.to_mlp()?,
            matrix(&d.embedding, "embedding")?,
            self.schedule()?,
            d.n_classes,
            d.frequencies,
            d.p_uncond,
        )?)
    }

    pub fn classifier(&self) -> CliResult<Option<NoisyClassifier>> {
        self.classifier
            .as_ref()
            .map(|c| {
                Ok(NoisyClassifier::new(
                    c.net.to_mlp()?,
                    self.schedule()?,
                    c.n_classes,
                    c.frequencies,
                )?)
            })
            .transpose()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint fields are serialisable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| CliError::Config(format!("checkpoint: {e}")))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(CliError::Config(format!(
                "checkpoint: unrecognised format `{}` (expected `{CHECKPOINT_VERSION}`)",
                ck.format_version
            )));
        }
        // Fail now rather than at first use.
        ck.denoiser()?;
        ck.classifier()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_file(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_json(&read_to_string(path)?).map_err(|e| match e {
            CliError::Config(msg) => CliError::data(path, msg),
            other => other,
        })
    }
}
