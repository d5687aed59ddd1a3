use std::path::{Path, PathBuf};

use increc::data::{Delimiter, ParseOptions, TimeFormat};
use increc::eval::{MethodSpec, RunPlan};
use increc::synthetic::ShapedConfig;
use increc::TrainConfig;
use serde::{Deserialize, Serialize};

/// Where interactions come from: a delimited file, or the built-in
/// generator when `synthetic` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: Delimiter,
    #[serde(default)]
    pub user_col: usize,
    #[serde(default = "one")]
    pub item_col: usize,
    #[serde(default = "two")]
    pub time_col: usize,
    #[serde(default)]
    pub skip_header: bool,
    #[serde(default = "default_time_format")]
    pub time_format: TimeFormat,
    #[serde(default = "one_u64")]
    pub time_divisor: u64,
    pub synthetic: Option<SyntheticConfig>,
}

fn default_format() -> Delimiter {
    Delimiter::Tsv
}
fn default_time_format() -> TimeFormat {
    TimeFormat::Epoch
}
fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn one_u64() -> u64 {
    1
}

impl DataConfig {
    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            format: self.format,
            user_col: self.user_col,
            item_col: self.item_col,
            time_col: self.time_col,
            skip_header: self.skip_header,
            time_format: self.time_format,
            time_divisor: self.time_divisor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_records: usize,
    pub n_groups: usize,
    pub drift: f64,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn shaped(&self) -> ShapedConfig {
        ShapedConfig {
            n_users: self.n_users,
            n_items: self.n_items,
            n_records: self.n_records,
            n_groups: self.n_groups,
            drift: self.drift,
            noise: self.noise,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub dedup: bool,
    pub min_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub base_frac: f64,
    pub n_inc: usize,
    pub base_train_frac: f64,
    pub base_val_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { base_frac: 0.6, n_inc: 4, base_train_frac: 0.8, base_val_frac: 0.1 }
    }
}

fn default_methods() -> Vec<MethodSpec> {
    use increc::train::Method;
    vec![MethodSpec::new(Method::Finetune), MethodSpec::new(Method::GraphSail)]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return err("data: set either path or synthetic, not both".into()),
            (None, None) => return err("data: one of path or synthetic is required".into()),
            _ => {}
        }
        let s = &self.split;
        if !(s.base_frac > 0.0 && s.base_frac < 1.0) {
            return err(format!("split.base_frac must be in (0, 1), got {}", s.base_frac));
        }
        if s.n_inc < 2 {
            return err(format!("split.n_inc must be at least 2, got {}", s.n_inc));
        }
        self.plan().validate().map_err(|e| ConfigError(e.to_string()))
    }

    pub fn plan(&self) -> RunPlan {
        RunPlan {
            methods: self.methods.clone(),
            seeds: self.seeds.clone(),
            train: self.train.clone(),
            base_train_frac: self.split.base_train_frac,
            base_val_frac: self.split.base_val_frac,
        }
    }

    /// The effective configuration (defaults filled in) as JSON.
    pub fn effective(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
