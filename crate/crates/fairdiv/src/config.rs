//! Run configuration: a TOML file with `[dataset]`, `[model]`, `[train]`,
//! `[sweep]`, and `[output]` sections fully determines a run. Every section
//! and key has a default, so an empty file is a valid Moon configuration.
//!
//! Validation collects one message per offending key instead of stopping at
//! the first problem.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnSchema, DEFAULT_MOON_NOISE_SD};
use crate::divergence::DivergenceKind;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, DEFAULT_CRITIC_HIDDEN, DEFAULT_DRE_BINS};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::rng::{validate_rng_id, RNG_ID};

/// Which conditional output distributions the regularizer compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FairnessNotion {
    /// Demographic parity: outputs conditioned on group only.
    Dp,
    /// Equalized odds: outputs conditioned on group and true label.
    Eo,
}

impl FairnessNotion {
    pub const ALL: [FairnessNotion; 2] = [FairnessNotion::Dp, FairnessNotion::Eo];

    pub fn as_str(self) -> &'static str {
        match self {
            FairnessNotion::Dp => "dp",
            FairnessNotion::Eo => "eo",
        }
    }
}

impl fmt::Display for FairnessNotion {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        out.write_str(self.as_str())
    }
}

impl FromStr for FairnessNotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(FairnessNotion::Dp),
            "eo" => Ok(FairnessNotion::Eo),
            other => Err(Error::config(format!(
                "notion: unknown fairness notion {other:?} (expected \"dp\" or \"eo\")"
            ))),
        }
    }
}

fn default_moon_n() -> usize {
    15_000
}

fn default_noise_sd() -> f64 {
    DEFAULT_MOON_NOISE_SD
}

fn default_train_fraction() -> f64 {
    2.0 / 3.0
}

fn default_true() -> bool {
    true
}

/// Dataset source and preprocessing switches. `kind = "moon"` draws the
/// synthetic dataset; `kind = "csv"` reads `path` under `schema`. The split
/// uses `n_train`/`n_test` when both are given and `train_fraction`
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: String,
    #[serde(default = "default_moon_n")]
    pub n: usize,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<ColumnSchema>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub n_train: Option<usize>,
    #[serde(default)]
    pub n_test: Option<usize>,
    #[serde(default)]
    pub balance: bool,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: "moon".to_string(),
            n: default_moon_n(),
            noise_sd: default_noise_sd(),
            path: None,
            schema: None,
            train_fraction: default_train_fraction(),
            n_train: None,
            n_test: None,
            balance: false,
            standardize: true,
        }
    }
}

impl DatasetConfig {
    fn collect_issues(&self, issues: &mut Vec<String>) {
        match self.kind.as_str() {
            "moon" => {
                if self.n < 2 {
                    issues.push(format!("dataset.n: need at least 2 points, got {}", self.n));
                }
                if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
                    issues.push(format!(
                        "dataset.noise_sd: must be a non-negative real, got {}",
                        self.noise_sd
                    ));
                }
            }
            "csv" => {
                if self.path.is_none() {
                    issues.push("dataset.path: required when kind = \"csv\"".to_string());
                }
                match &self.schema {
                    None => {
                        issues.push("dataset.schema: required when kind = \"csv\"".to_string())
                    }
                    Some(schema) => {
                        if let Err(err) = schema.validate() {
                            issues.push(format!("dataset.schema: {err}"));
                        }
                    }
                }
            }
            other => issues.push(format!(
                "dataset.kind: unknown kind {other:?} (expected \"moon\" or \"csv\")"
            )),
        }
        match (self.n_train, self.n_test) {
            (Some(a), Some(b)) => {
                if a == 0 || b == 0 {
                    issues.push(format!(
                        "dataset.n_train/n_test: both must be positive, got {a} and {b}"
                    ));
                }
            }
            (None, None) => {
                if !(self.train_fraction.is_finite()
                    && 0.0 < self.train_fraction
                    && self.train_fraction < 1.0)
                {
                    issues.push(format!(
                        "dataset.train_fraction: must lie strictly between 0 and 1, got {}",
                        self.train_fraction
                    ));
                }
            }
            _ => issues.push(
                "dataset.n_train/n_test: give both to fix split sizes, or neither to use \
                 train_fraction"
                    .to_string(),
            ),
        }
    }
}

fn default_classifier_hidden() -> Vec<usize> {
    vec![200, 200]
}

fn default_critic_hidden() -> Vec<usize> {
    DEFAULT_CRITIC_HIDDEN.to_vec()
}

fn default_rng() -> String {
    RNG_ID.to_string()
}

/// Network architecture and the pseudo-random generator id pinned for
/// reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_classifier_hidden")]
    pub classifier_hidden: Vec<usize>,
    #[serde(default = "default_critic_hidden")]
    pub critic_hidden: Vec<usize>,
    #[serde(default = "default_rng")]
    pub rng: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            classifier_hidden: default_classifier_hidden(),
            critic_hidden: default_critic_hidden(),
            rng: default_rng(),
        }
    }
}

impl ModelConfig {
    fn collect_issues(&self, issues: &mut Vec<String>) {
        if self.classifier_hidden.is_empty() || self.classifier_hidden.contains(&0) {
            issues.push(format!(
                "model.classifier_hidden: need positive layer widths, got {:?}",
                self.classifier_hidden
            ));
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) {
            issues.push(format!(
                "model.critic_hidden: need positive layer widths, got {:?}",
                self.critic_hidden
            ));
        }
        if let Err(err) = validate_rng_id(&self.rng) {
            issues.push(format!("model.rng: {err}"));
        }
    }
}

fn default_epochs() -> usize {
    200
}

fn default_critic_steps() -> usize {
    100
}

fn default_batch_size() -> usize {
    2048
}

fn default_lr() -> f64 {
    2e-3
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_dre_bins() -> usize {
    DEFAULT_DRE_BINS
}

fn default_notion() -> String {
    FairnessNotion::Dp.as_str().to_string()
}

fn default_divergence() -> String {
    DivergenceKind::Kl.as_str().to_string()
}

fn default_estimator() -> String {
    EstimatorKind::Variational.as_str().to_string()
}

/// Training hyperparameters for a single run. `lambda` weights the
/// divergence penalty, `epochs` and `critic_steps` are the outer and inner
/// loop lengths, and `eo_include_y0` extends the equalized-odds regularizer
/// to the negative-label slice as well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_notion")]
    pub notion: String,
    #[serde(default = "default_divergence")]
    pub divergence: String,
    #[serde(default = "default_estimator")]
    pub estimator: String,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_critic_steps")]
    pub critic_steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub classifier_lr: f64,
    #[serde(default = "default_lr")]
    pub critic_lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub eo_include_y0: bool,
    #[serde(default = "default_dre_bins")]
    pub dre_bins: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lambda: 0.0,
            notion: default_notion(),
            divergence: default_divergence(),
            estimator: default_estimator(),
            epochs: default_epochs(),
            critic_steps: default_critic_steps(),
            batch_size: default_batch_size(),
            classifier_lr: default_lr(),
            critic_lr: default_lr(),
            seed: 0,
            threshold: default_threshold(),
            eo_include_y0: false,
            dre_bins: default_dre_bins(),
        }
    }
}

impl TrainSection {
    pub fn notion(&self) -> Result<FairnessNotion> {
        self.notion.parse()
    }

    pub fn divergence(&self) -> Result<DivergenceKind> {
        self.divergence.parse()
    }

    pub fn estimator(&self) -> Result<EstimatorKind> {
        self.estimator.parse()
    }

    fn collect_issues(&self, issues: &mut Vec<String>) {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            issues.push(format!(
                "train.lambda: must be a non-negative real, got {}",
                self.lambda
            ));
        }
        for (key, parse_err) in [
            ("train.notion", self.notion().err()),
            ("train.divergence", self.divergence().err()),
            ("train.estimator", self.estimator().err()),
        ] {
            if let Some(err) = parse_err {
                issues.push(format!("{key}: {err}"));
            }
        }
        if self.epochs == 0 {
            issues.push("train.epochs: must be at least 1".to_string());
        }
        if self.critic_steps == 0 {
            issues.push("train.critic_steps: must be at least 1".to_string());
        }
        if self.batch_size < 2 {
            issues.push(format!(
                "train.batch_size: must be at least twice the group count, got {}",
                self.batch_size
            ));
        }
        for (key, lr) in
            [("train.classifier_lr", self.classifier_lr), ("train.critic_lr", self.critic_lr)]
        {
            if !(lr.is_finite() && lr > 0.0) {
                issues.push(format!("{key}: must be a positive real, got {lr}"));
            }
        }
        if !(self.threshold.is_finite() && (0.0..=1.0).contains(&self.threshold)) {
            issues.push(format!(
                "train.threshold: must lie in [0, 1], got {}",
                self.threshold
            ));
        }
        if self.dre_bins < 2 {
            issues.push(format!(
                "train.dre_bins: need at least 2 bins, got {}",
                self.dre_bins
            ));
        }
    }
}

fn default_lambda_grid() -> Vec<f64> {
    (0..10).map(|k| k as f64).collect()
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// Sweep grid: every (lambda, seed) combination becomes an independent run.
/// `workers = 0` uses the machine's available parallelism. `zeta` overrides
/// the low-bias threshold otherwise taken from the unconstrained runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub zeta: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lambda_grid: default_lambda_grid(),
            seeds: default_seeds(),
            workers: 0,
            zeta: None,
        }
    }
}

impl SweepConfig {
    fn collect_issues(&self, issues: &mut Vec<String>) {
        if self.lambda_grid.is_empty() {
            issues.push("sweep.lambda_grid: must not be empty".to_string());
        }
        if let Some(bad) = self.lambda_grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            issues.push(format!(
                "sweep.lambda_grid: every value must be a non-negative real, got {bad}"
            ));
        }
        if self.seeds.is_empty() {
            issues.push("sweep.seeds: must not be empty".to_string());
        }
        if let Some(zeta) = self.zeta {
            if !(zeta.is_finite() && zeta > 0.0) {
                issues.push(format!("sweep.zeta: must be a positive real, got {zeta}"));
            }
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out_dir() }
    }
}

/// The whole run file. Every section is optional in the TOML; defaults
/// reproduce the unconstrained Moon setup.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("config write: {e}")))
    }

    /// Checks every key and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        self.dataset.collect_issues(&mut issues);
        self.model.collect_issues(&mut issues);
        self.train.collect_issues(&mut issues);
        self.sweep.collect_issues(&mut issues);
        if self.output.dir.as_os_str().is_empty() {
            issues.push("output.dir: must not be empty".to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_match_reference_setup() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.dataset.kind, "moon");
        assert_eq!(cfg.dataset.n, 15_000);
        assert_eq!(cfg.model.classifier_hidden, vec![200, 200]);
        assert_eq!(cfg.model.critic_hidden, vec![5, 5]);
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.train.critic_steps, 100);
        assert_eq!(cfg.train.batch_size, 2048);
        assert_eq!(cfg.train.classifier_lr, 2e-3);
        assert_eq!(cfg.train.threshold, 0.5);
        assert!(!cfg.train.eo_include_y0);
        assert_eq!(cfg.sweep.lambda_grid.len(), 10);
        assert_eq!(cfg.sweep.seeds, vec![0, 1, 2, 3, 4]);
        // The default fraction reproduces the documented 10000/5000 split.
        assert_eq!((15_000.0 * cfg.dataset.train_fraction).round() as usize, 10_000);
    }

    #[test]
    fn empty_file_means_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.train.lambda = 4.5;
        cfg.train.divergence = "chi2".to_string();
        cfg.sweep.zeta = Some(0.1257);
        let text = cfg.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let cfg = RunConfig::from_toml_str(
            "[train]\nlambda = 9.0\ndivergence = \"chi2\"\n\n[dataset]\nkind = \"moon\"\nn = 100\n",
        )
        .unwrap();
        assert_eq!(cfg.train.lambda, 9.0);
        assert_eq!(cfg.train.divergence().unwrap(), DivergenceKind::PearsonChiSquared);
        assert_eq!(cfg.dataset.n, 100);
        assert_eq!(cfg.train.epochs, 200);
    }

    #[test]
    fn validation_reports_every_offending_key() {
        let mut cfg = RunConfig::default();
        cfg.train.lambda = -1.0;
        cfg.train.notion = "both".to_string();
        cfg.train.epochs = 0;
        cfg.train.threshold = 1.5;
        cfg.sweep.seeds.clear();
        let err = cfg.validate().unwrap_err();
        match err {
            Error::Config(issues) => {
                assert_eq!(issues.len(), 5, "{issues:?}");
                for key in
                    ["train.lambda", "train.notion", "train.epochs", "train.threshold", "sweep.seeds"]
                {
                    assert!(issues.iter().any(|m| m.contains(key)), "missing {key}: {issues:?}");
                }
            }
            other => panic!("expected a config error, got {other}"),
        }
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn csv_kind_requires_path_and_schema() {
        let err = RunConfig::from_toml_str("[dataset]\nkind = \"csv\"\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("dataset.path") && text.contains("dataset.schema"), "{text}");
    }

    #[test]
    fn inline_schema_parses() {
        let cfg = RunConfig::from_toml_str(
            r#"
[dataset]
kind = "csv"
path = "people.csv"

[dataset.schema]
numeric = ["age"]
categorical = ["job"]

[dataset.schema.label]
column = "outcome"
positive = "1"

[[dataset.schema.sensitive]]
column = "race"
values = ["a", "b"]
"#,
        )
        .unwrap();
        let schema = cfg.dataset.schema.unwrap();
        assert_eq!(schema.label.column, "outcome");
        assert_eq!(schema.sensitive[0].values, vec!["a", "b"]);
    }

    #[test]
    fn split_override_needs_both_counts() {
        let mut cfg = RunConfig::default();
        cfg.dataset.n_train = Some(10_000);
        assert!(cfg.validate().is_err());
        cfg.dataset.n_test = Some(5_000);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_syntax_errors_are_config_errors() {
        let err = RunConfig::from_toml_str("[train]\nlerning_rate = 0.1\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("lerning_rate"), "{err}");

        let err = RunConfig::from_toml_str("[train\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn notion_ids_parse_and_print() {
        for notion in FairnessNotion::ALL {
            assert_eq!(notion.as_str().parse::<FairnessNotion>().unwrap(), notion);
        }
        assert!("parity".parse::<FairnessNotion>().is_err());
        assert_eq!(FairnessNotion::Eo.to_string(), "eo");
    }
}
