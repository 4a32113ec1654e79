//! TOML config file and flag resolution (flags > file > defaults).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use hyfuse_core::data::{ComplementarityMode, Family, SynthSpec};
use hyfuse_core::hypergeom::PoincareConfig;
use hyfuse_core::models::{FusionOrder, ModelKind, ModelSpec};
use hyfuse_core::train::{StopMetric, TrainConfig, ValidationMode};
use serde::{Deserialize, Serialize};

use crate::{CliError, ModelFlags, Result, SynthArgs, TrainFlags};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub folds: FoldSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Option<String>,
    pub hidden_units: Option<usize>,
    pub conv_filters: Option<[usize; 2]>,
    pub kernel_size: Option<usize>,
    pub dropout: Option<f64>,
    pub fusion_width: Option<usize>,
    pub fusion_order: Option<String>,
    pub curvature: Option<f64>,
    pub ball_epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub stop_metric: Option<String>,
    pub validation: Option<String>,
    pub holdout_fraction: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSection {
    pub count: Option<usize>,
    pub stratified: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub mode: Option<String>,
    pub classes: Option<usize>,
    pub dim_a: Option<usize>,
    pub dim_b: Option<usize>,
    pub samples_per_class: Option<usize>,
    pub spread: Option<f64>,
    pub separation: Option<f64>,
    pub name_a: Option<String>,
    pub name_b: Option<String>,
    pub family_a: Option<String>,
    pub family_b: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

pub const DEFAULT_FOLDS: usize = 5;

fn parse<T: FromStr>(value: &str, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Config(format!("invalid {what} {value:?}: {e}")))
}

/// Global settings after resolution.
#[derive(Debug, Clone, Serialize)]
pub struct Globals {
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
}

pub fn globals(flag_seed: Option<u64>, flag_jobs: Option<usize>, flag_out: Option<PathBuf>, file: &FileConfig, command: &str) -> Result<Globals> {
    let jobs = flag_jobs.or(file.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    Ok(Globals {
        seed: flag_seed.or(file.seed).unwrap_or(0),
        jobs,
        out: flag_out
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from(format!("hyfuse-{command}"))),
    })
}

pub fn model_kind(flags: &ModelFlags, file: &FileConfig) -> Result<Option<ModelKind>> {
    flags
        .model
        .as_deref()
        .or(file.model.kind.as_deref())
        .map(|s| parse(s, "model kind"))
        .transpose()
}

fn parse_filters(s: &str) -> Result<[usize; 2]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([parse(a, "filter count")?, parse(b, "filter count")?]),
        _ => Err(CliError::Config(format!(
            "--conv-filters takes two comma-separated counts, got {s:?}"
        ))),
    }
}

/// Full model spec for `kind` at the given input shape.
pub fn model_spec(kind: ModelKind, input_dims: Vec<usize>, num_classes: usize, flags: &ModelFlags, file: &FileConfig) -> Result<ModelSpec> {
    let m = &file.model;
    let mut spec = ModelSpec::new(kind, input_dims, num_classes);
    spec.hidden_units = flags.hidden_units.or(m.hidden_units).unwrap_or(spec.hidden_units);
    let filters = match &flags.conv_filters {
        Some(s) => Some(parse_filters(s)?),
        None => m.conv_filters,
    };
    if let Some([a, b]) = filters {
        spec.conv_filters = (a, b);
    }
    spec.kernel_size = flags.kernel_size.or(m.kernel_size).unwrap_or(spec.kernel_size);
    spec.dropout_rate = flags.dropout.or(m.dropout).unwrap_or(spec.dropout_rate);
    spec.fusion_width = flags.fusion_width.or(m.fusion_width).unwrap_or(spec.fusion_width);
    if let Some(order) = flags.fusion_order.as_deref().or(m.fusion_order.as_deref()) {
        spec.fusion_order = parse::<FusionOrder>(order, "fusion order")?;
    }
    let defaults = PoincareConfig::default();
    spec.poincare = PoincareConfig::new(
        flags.curvature.or(m.curvature).unwrap_or(defaults.curvature),
        flags.ball_epsilon.or(m.ball_epsilon).unwrap_or(defaults.ball_epsilon),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn train_config(flags: &TrainFlags, file: &FileConfig, seed: u64) -> Result<TrainConfig> {
    let t = &file.train;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        batch_size: flags.batch_size.or(t.batch_size).unwrap_or(d.batch_size),
        learning_rate: flags.learning_rate.or(t.learning_rate).unwrap_or(d.learning_rate),
        max_epochs: flags.max_epochs.or(t.max_epochs).unwrap_or(d.max_epochs),
        early_stop_patience: flags.patience.or(t.patience).unwrap_or(d.early_stop_patience),
        early_stop_metric: match flags.stop_metric.as_deref().or(t.stop_metric.as_deref()) {
            Some(s) => parse::<StopMetric>(s, "stop metric")?,
            None => d.early_stop_metric,
        },
        adam_beta1: t.adam_beta1.unwrap_or(d.adam_beta1),
        adam_beta2: t.adam_beta2.unwrap_or(d.adam_beta2),
        adam_epsilon: t.adam_epsilon.unwrap_or(d.adam_epsilon),
        seed,
        validation: match flags.validation.as_deref().or(t.validation.as_deref()) {
            Some(s) => parse::<ValidationMode>(s, "validation mode")?,
            None => d.validation,
        },
        holdout_fraction: flags.holdout_fraction.or(t.holdout_fraction).unwrap_or(d.holdout_fraction),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn fold_settings(flag_folds: Option<usize>, unstratified: bool, file: &FileConfig) -> (usize, bool) {
    let k = flag_folds.or(file.folds.count).unwrap_or(DEFAULT_FOLDS);
    let stratified = if unstratified { false } else { file.folds.stratified.unwrap_or(true) };
    (k, stratified)
}

/// Resolved `synth` settings.
#[derive(Debug, Clone, Serialize)]
pub struct SynthSettings {
    pub spec: SynthSpec,
    pub name_a: String,
    pub name_b: String,
    pub family_a: Family,
    pub family_b: Family,
}

pub fn synth_settings(flags: &SynthArgs, file: &FileConfig, seed: u64) -> Result<SynthSettings> {
    let s = &file.synth;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        classes: flags.classes.or(s.classes).unwrap_or(d.classes),
        dim_a: flags.dim_a.or(s.dim_a).unwrap_or(d.dim_a),
        dim_b: flags.dim_b.or(s.dim_b).unwrap_or(d.dim_b),
        samples_per_class: flags.samples_per_class.or(s.samples_per_class).unwrap_or(d.samples_per_class),
        cluster_spread: flags.spread.or(s.spread).unwrap_or(d.cluster_spread),
        separation: flags.separation.or(s.separation).unwrap_or(d.separation),
        mode: match flags.mode.as_deref().or(s.mode.as_deref()) {
            Some(m) => parse::<ComplementarityMode>(m, "synth mode")?,
            None => d.mode,
        },
        seed,
    };
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let name = |flag: &Option<String>, file: &Option<String>, default: &str| -> Result<String> {
        let n = flag.clone().or_else(|| file.clone()).unwrap_or_else(|| default.to_string());
        let ok = !n.is_empty()
            && n != "manifest"
            && n.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if ok {
            Ok(n)
        } else {
            Err(CliError::Config(format!("unusable set name {n:?}")))
        }
    };
    let family = |flag: &Option<String>, file: &Option<String>, default: Family| -> Result<Family> {
        match flag.as_deref().or(file.as_deref()) {
            Some(f) => parse(f, "family"),
            None => Ok(default),
        }
    };
    let out = SynthSettings {
        spec,
        name_a: name(&flags.name_a, &s.name_a, "synth_a")?,
        name_b: name(&flags.name_b, &s.name_b, "synth_b")?,
        family_a: family(&flags.family_a, &s.family_a, Family::Rlr)?,
        family_b: family(&flags.family_b, &s.family_b, Family::Cbr)?,
    };
    if out.name_a == out.name_b {
        return Err(CliError::Config("--name-a and --name-b must differ".into()));
    }
    Ok(out)
}
