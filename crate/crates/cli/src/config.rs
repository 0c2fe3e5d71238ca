//! Per-command JSON configs. Every field has a default, unknown keys are
//! rejected, and the fully resolved struct is echoed beside the outputs so a
//! run can be reproduced from its artifacts alone.

use serde::{Deserialize, Serialize};

use cropseries_core::adapt::DaConfig;
use cropseries_core::analysis::CoverCropRule;
use cropseries_core::classifier::{AnnConfig, Pooling, TrainConfig};
use cropseries_core::phenology::{CropClass, SeasonScenario};

use crate::error::CliError;

fn default_true() -> bool {
    true
}

/// One generated dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub name: String,
    pub planting_shift_days: i32,
    pub noise_sigma: f64,
    pub cloud_drop_prob: f64,
    /// Total pixels for this scenario; `null` keeps the full class mix.
    pub count: Option<usize>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let s = SeasonScenario::default();
        ScenarioSpec {
            name: String::from("in_domain"),
            planting_shift_days: 0,
            noise_sigma: s.noise_sigma,
            cloud_drop_prob: s.cloud_drop_prob,
            count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    pub class: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub scenarios: Vec<ScenarioSpec>,
    pub mix: Vec<MixEntry>,
    pub composites_per_year: usize,
    pub composite_period_days: u32,
    pub bands: usize,
    pub window_composites: usize,
    pub stride_composites: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let base = ScenarioSpec::default();
        GenerateConfig {
            scenarios: vec![
                base.clone(),
                ScenarioSpec {
                    name: String::from("shift8"),
                    planting_shift_days: 8,
                    count: Some(1000),
                    ..base.clone()
                },
                ScenarioSpec {
                    name: String::from("shift16"),
                    planting_shift_days: 16,
                    count: Some(1000),
                    ..base
                },
            ],
            mix: vec![
                MixEntry {
                    class: String::from("corn"),
                    count: 1000,
                },
                MixEntry {
                    class: String::from("soybean"),
                    count: 1000,
                },
            ],
            composites_per_year: 46,
            composite_period_days: 8,
            bands: 7,
            window_composites: 4,
            stride_composites: 1,
        }
    }
}

impl GenerateConfig {
    pub fn parsed_mix(&self) -> Result<Vec<(CropClass, usize)>, CliError> {
        self.mix
            .iter()
            .map(|e| {
                let class = CropClass::parse(&e.class).ok_or_else(|| {
                    CliError::validation(format!("unknown crop class '{}'", e.class))
                })?;
                Ok((class, e.count))
            })
            .collect()
    }

    pub fn season(&self, spec: &ScenarioSpec) -> SeasonScenario {
        SeasonScenario {
            planting_shift_days: spec.planting_shift_days,
            noise_sigma: spec.noise_sigma,
            cloud_drop_prob: spec.cloud_drop_prob,
            composites_per_year: self.composites_per_year,
            composite_period_days: self.composite_period_days,
            bands: self.bands,
        }
    }
}

/// Stratified split fractions shared by train/adapt/evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.5,
            test_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmSection {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for LstmSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        LstmSection {
            hidden_dim: c.hidden_dim,
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
        }
    }
}

impl LstmSection {
    pub fn train_config(&self, pooling: Pooling) -> TrainConfig {
        TrainConfig {
            hidden_dim: self.hidden_dim,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            pooling,
            allow_single_class: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnSection {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AnnSection {
    fn default() -> Self {
        let c = AnnConfig::default();
        AnnSection {
            hidden_dim: c.hidden_dim,
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
        }
    }
}

impl AnnSection {
    pub fn ann_config(&self) -> AnnConfig {
        AnnConfig {
            hidden_dim: self.hidden_dim,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub disc_steps_per_mapper: usize,
    pub lambda_att: f64,
    pub mapper_res_hidden: usize,
    pub disc_hidden: usize,
}

impl Default for DaSection {
    fn default() -> Self {
        let c = DaConfig::default();
        DaSection {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            disc_steps_per_mapper: c.disc_steps_per_mapper,
            lambda_att: c.lambda_att,
            mapper_res_hidden: c.mapper_res_hidden,
            disc_hidden: c.disc_hidden,
        }
    }
}

impl DaSection {
    pub fn da_config(&self) -> DaConfig {
        DaConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            disc_steps_per_mapper: self.disc_steps_per_mapper,
            lambda_att: self.lambda_att,
            mapper_res_hidden: self.mapper_res_hidden,
            disc_hidden: self.disc_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCommandConfig {
    /// Dataset CSV; the model trains on the `train_fraction` split of it.
    pub input: String,
    /// `lstm_att`, `lstm`, or `ann`.
    pub method: String,
    pub split: SplitSpec,
    pub lstm: LstmSection,
    pub ann: AnnSection,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        TrainCommandConfig {
            input: String::from("in_domain.csv"),
            method: String::from("lstm_att"),
            split: SplitSpec::default(),
            lstm: LstmSection::default(),
            ann: AnnSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptCommandConfig {
    pub model: String,
    /// Source dataset CSV; its `train_fraction` split must be the set the
    /// model was trained on (checked by digest).
    pub source: String,
    /// Target dataset CSV; labels are ignored.
    pub target: String,
    pub split: SplitSpec,
    pub da: DaSection,
}

impl Default for AdaptCommandConfig {
    fn default() -> Self {
        AdaptCommandConfig {
            model: String::from("model.json"),
            source: String::from("in_domain.csv"),
            target: String::from("shift16.csv"),
            split: SplitSpec::default(),
            da: DaSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalScenario {
    pub name: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateCommandConfig {
    /// Dataset CSV split into the training half and the in-domain test half.
    pub train: String,
    /// Additional whole-file test scenarios (typically shifted domains).
    pub scenarios: Vec<EvalScenario>,
    pub methods: Vec<String>,
    pub split: SplitSpec,
    pub positive_class: usize,
    pub lstm: LstmSection,
    pub ann: AnnSection,
    pub da: DaSection,
}

impl Default for EvaluateCommandConfig {
    fn default() -> Self {
        EvaluateCommandConfig {
            train: String::from("in_domain.csv"),
            scenarios: vec![
                EvalScenario {
                    name: String::from("shift8"),
                    path: String::from("shift8.csv"),
                },
                EvalScenario {
                    name: String::from("shift16"),
                    path: String::from("shift16.csv"),
                },
            ],
            methods: vec![
                String::from("ann"),
                String::from("knn_dtw"),
                String::from("lstm"),
                String::from("lstm_att"),
                String::from("da"),
            ],
            split: SplitSpec::default(),
            positive_class: 0,
            lstm: LstmSection::default(),
            ann: AnnSection::default(),
            da: DaSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EarlyCommandConfig {
    pub model: String,
    pub input: String,
    pub threshold: f64,
    pub patience: usize,
    #[serde(default = "default_true")]
    pub svg: bool,
}

impl Default for EarlyCommandConfig {
    fn default() -> Self {
        EarlyCommandConfig {
            model: String::from("model.json"),
            input: String::from("in_domain.csv"),
            threshold: 0.8,
            patience: 2,
            svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleSection {
    pub harvest_step: usize,
    pub post_window: usize,
    pub green_threshold: f64,
    pub evergreen_min: f64,
    pub growing_season: (usize, usize),
    pub require_dip: bool,
}

impl Default for RuleSection {
    fn default() -> Self {
        let r = CoverCropRule::default();
        RuleSection {
            harvest_step: r.harvest_step,
            post_window: r.post_window,
            green_threshold: r.green_threshold,
            evergreen_min: r.evergreen_min,
            growing_season: r.growing_season,
            require_dip: r.require_dip,
        }
    }
}

impl RuleSection {
    pub fn rule(&self) -> CoverCropRule {
        CoverCropRule {
            harvest_step: self.harvest_step,
            post_window: self.post_window,
            green_threshold: self.green_threshold,
            evergreen_min: self.evergreen_min,
            growing_season: self.growing_season,
            require_dip: self.require_dip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverCommandConfig {
    pub input: String,
    pub rule: RuleSection,
}

impl Default for CoverCommandConfig {
    fn default() -> Self {
        CoverCommandConfig {
            input: String::from("covermix.csv"),
            rule: RuleSection::default(),
        }
    }
}

/// Parse a command config from an optional file; a missing `--config` means
/// all defaults.
pub fn load_config<T: Default + for<'de> Deserialize<'de>>(
    path: Option<&std::path::Path>,
) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = crate::fsio::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))
        }
    }
}

/// Serialized echo of the resolved config, stored beside every output.
pub fn config_echo<T: Serialize>(config: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(config)
        .map_err(|e| CliError::validation(format!("config serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}
