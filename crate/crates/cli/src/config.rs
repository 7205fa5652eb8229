//! Training configuration: defaults, then an optional TOML file, then flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use contrarank::objectives::LossMode;
use contrarank::trainer::{Ablation, TrainConfig};

use crate::error::{CliError, CliResult};

/// Keys accepted in a `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub mode: Option<String>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub margin: Option<f64>,
    pub seed: Option<u64>,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub min_freq: Option<usize>,
    pub eval_ks: Option<Vec<usize>>,
    pub disable_qg: Option<bool>,
    pub disable_ag: Option<bool>,
    pub treat_synth_as_positive: Option<bool>,
}

impl TrainFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// The fully resolved configuration, as recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedTrain {
    pub mode: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub min_freq: usize,
    pub eval_ks: Vec<usize>,
    pub disable_qg: bool,
    pub disable_ag: bool,
    pub treat_synth_as_positive: bool,
}

impl From<&TrainConfig> for ResolvedTrain {
    fn from(c: &TrainConfig) -> Self {
        ResolvedTrain {
            mode: c.mode.to_string(),
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            margin: c.margin,
            seed: c.seed,
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            min_freq: c.min_freq,
            eval_ks: c.eval_ks.clone(),
            disable_qg: c.ablation.disable_qg,
            disable_ag: c.ablation.disable_ag,
            treat_synth_as_positive: c.ablation.treat_synth_as_positive,
        }
    }
}

/// Applies `file` on top of the defaults.
pub fn apply_file(file: &TrainFile, base: TrainConfig) -> CliResult<TrainConfig> {
    let mode = match &file.mode {
        Some(m) => m.parse::<LossMode>()?,
        None => base.mode,
    };
    Ok(TrainConfig {
        mode,
        epochs: file.epochs.unwrap_or(base.epochs),
        learning_rate: file.learning_rate.unwrap_or(base.learning_rate),
        margin: file.margin.unwrap_or(base.margin),
        seed: file.seed.unwrap_or(base.seed),
        embed_dim: file.embed_dim.unwrap_or(base.embed_dim),
        hidden_dim: file.hidden_dim.unwrap_or(base.hidden_dim),
        min_freq: file.min_freq.unwrap_or(base.min_freq),
        eval_ks: file.eval_ks.clone().unwrap_or(base.eval_ks),
        ablation: Ablation {
            disable_qg: file.disable_qg.unwrap_or(base.ablation.disable_qg),
            disable_ag: file.disable_ag.unwrap_or(base.ablation.disable_ag),
            treat_synth_as_positive: file
                .treat_synth_as_positive
                .unwrap_or(base.ablation.treat_synth_as_positive),
        },
    })
}
