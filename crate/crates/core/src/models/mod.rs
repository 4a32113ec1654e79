//! The four downstream architectures: FCN, CNN, the concatenation baseline
//! and hyperbolic fusion.

mod checkpoint;
mod forward;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use forward::{
    forward, forward_concat, forward_hyfuse, forward_single, penultimate_features, predict_logits,
    register_params, Forward, ParamVars,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Scalar, Tensor};
use crate::hypergeom::PoincareConfig;
use crate::rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config error: {0}")]
    Config(String),
    #[error("input dimension mismatch: model expects {expected}, got {found}")]
    Dim { expected: usize, found: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Fcn,
    Cnn,
    Concat,
    Hyfuse,
}

impl ModelKind {
    pub fn is_fusion(self) -> bool {
        matches!(self, ModelKind::Concat | ModelKind::Hyfuse)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Fcn => "fcn",
            ModelKind::Cnn => "cnn",
            ModelKind::Concat => "concat",
            ModelKind::Hyfuse => "hyfuse",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fcn" => Ok(ModelKind::Fcn),
            "cnn" => Ok(ModelKind::Cnn),
            "concat" | "concatfusion" => Ok(ModelKind::Concat),
            "hyfuse" => Ok(ModelKind::Hyfuse),
            other => Err(ModelError::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Which operand goes on the left of the (non-commutative) Möbius addition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionOrder {
    /// `branch_a ⊕ branch_b`
    #[default]
    AFirst,
    /// `branch_b ⊕ branch_a`
    BFirst,
}

impl FusionOrder {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionOrder::AFirst => "a-first",
            FusionOrder::BFirst => "b-first",
        }
    }
}

impl FromStr for FusionOrder {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a-first" => Ok(FusionOrder::AFirst),
            "b-first" => Ok(FusionOrder::BFirst),
            other => Err(ModelError::Config(format!("unknown fusion order {other:?}"))),
        }
    }
}

pub const DEFAULT_HIDDEN_UNITS: usize = 128;
pub const DEFAULT_CONV_FILTERS: (usize, usize) = (64, 128);
pub const DEFAULT_KERNEL_SIZE: usize = 3;
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const DEFAULT_FUSION_WIDTH: usize = 64;
/// Scale applied to the He-uniform bound of the two fusion projections. At
/// gain 1 the projected features land far outside the unit ball, the
/// exponential map saturates and Möbius addition returns (almost) its left
/// operand.
pub const PROJECTION_INIT_GAIN: f64 = 0.1;

/// Declarative description of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dims: Vec<usize>,
    pub num_classes: usize,
    pub hidden_units: usize,
    pub conv_filters: (usize, usize),
    pub kernel_size: usize,
    pub dropout_rate: f64,
    /// Width both branches are projected to before fusion (HYFuse only).
    pub fusion_width: usize,
    pub fusion_order: FusionOrder,
    pub poincare: PoincareConfig,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, input_dims: Vec<usize>, num_classes: usize) -> Self {
        Self {
            kind,
            input_dims,
            num_classes,
            hidden_units: DEFAULT_HIDDEN_UNITS,
            conv_filters: DEFAULT_CONV_FILTERS,
            kernel_size: DEFAULT_KERNEL_SIZE,
            dropout_rate: DEFAULT_DROPOUT,
            fusion_width: DEFAULT_FUSION_WIDTH,
            fusion_order: FusionOrder::default(),
            poincare: PoincareConfig::default(),
        }
    }

    pub fn fcn(dim: usize, num_classes: usize) -> Self {
        Self::new(ModelKind::Fcn, vec![dim], num_classes)
    }

    pub fn cnn(dim: usize, num_classes: usize) -> Self {
        Self::new(ModelKind::Cnn, vec![dim], num_classes)
    }

    pub fn concat(dim_a: usize, dim_b: usize, num_classes: usize) -> Self {
        Self::new(ModelKind::Concat, vec![dim_a, dim_b], num_classes)
    }

    pub fn hyfuse(dim_a: usize, dim_b: usize, num_classes: usize) -> Self {
        Self::new(ModelKind::Hyfuse, vec![dim_a, dim_b], num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        let want = if self.kind.is_fusion() { 2 } else { 1 };
        if self.input_dims.len() != want {
            return Err(ModelError::Config(format!(
                "{} needs exactly {want} input dims, got {}",
                self.kind,
                self.input_dims.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        let positive = [
            ("hidden_units", self.hidden_units),
            ("conv_filters.0", self.conv_filters.0),
            ("conv_filters.1", self.conv_filters.1),
            ("kernel_size", self.kernel_size),
            ("fusion_width", self.fusion_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        for &d in &self.input_dims {
            if d == 0 {
                return Err(ModelError::Config("input dims must be positive".into()));
            }
            if self.kind != ModelKind::Fcn && d <= 2 * (self.kernel_size - 1) {
                return Err(ModelError::Config(format!(
                    "input dim {d} is too short for two valid convolutions with kernel {}",
                    self.kernel_size
                )));
            }
        }
        self.poincare
            .validate()
            .map_err(|e| ModelError::Config(e.to_string()))?;
        Ok(())
    }

    /// Width of the flattened conv output for an input of length `dim`.
    pub fn conv_flat_width(&self, dim: usize) -> usize {
        self.conv_filters.1 * (dim - 2 * (self.kernel_size - 1))
    }

    /// Input width of the classifier head.
    pub fn head_input_width(&self) -> usize {
        match self.kind {
            ModelKind::Fcn => self.input_dims[0],
            ModelKind::Cnn => self.conv_flat_width(self.input_dims[0]),
            ModelKind::Concat => self
                .input_dims
                .iter()
                .map(|&d| self.conv_flat_width(d))
                .sum(),
            ModelKind::Hyfuse => self.fusion_width,
        }
    }

    /// Every parameter tensor as `(name, shape)`, in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let k = self.kernel_size;
        let (f1, f2) = self.conv_filters;
        let encoder = |prefix: &str, out: &mut Vec<(String, Vec<usize>)>| {
            out.push((format!("{prefix}.conv1.weight"), vec![f1, 1, k]));
            out.push((format!("{prefix}.conv1.bias"), vec![f1]));
            out.push((format!("{prefix}.conv2.weight"), vec![f2, f1, k]));
            out.push((format!("{prefix}.conv2.bias"), vec![f2]));
        };
        match self.kind {
            ModelKind::Fcn => {}
            ModelKind::Cnn => encoder("enc", &mut out),
            ModelKind::Concat => {
                encoder("enc_a", &mut out);
                encoder("enc_b", &mut out);
            }
            ModelKind::Hyfuse => {
                encoder("enc_a", &mut out);
                encoder("enc_b", &mut out);
                for (branch, &d) in ["a", "b"].iter().zip(&self.input_dims) {
                    let flat = self.conv_flat_width(d);
                    out.push((format!("proj_{branch}.weight"), vec![self.fusion_width, flat]));
                    out.push((format!("proj_{branch}.bias"), vec![self.fusion_width]));
                }
            }
        }
        let h = self.hidden_units;
        out.push(("head.hidden.weight".into(), vec![h, self.head_input_width()]));
        out.push(("head.hidden.bias".into(), vec![h]));
        out.push(("head.out.weight".into(), vec![self.num_classes, h]));
        out.push(("head.out.bias".into(), vec![self.num_classes]));
        out.sort();
        out
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Named parameter tensors, keyed by layer path (`enc_a.conv1.weight`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Checks that names and shapes agree with `spec`.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let shapes = spec.param_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(ModelError::Config(format!(
                "spec expects {} parameter tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in shapes {
            match self.tensors.get(&name) {
                None => return Err(ModelError::Config(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(ModelError::Config(format!(
                        "parameter {name} has shape {:?}, spec expects {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Initializes parameters for `spec`: weights uniform in `±sqrt(6 / fan_in)`
/// (He-uniform, times [`PROJECTION_INIT_GAIN`] for `proj_a`/`proj_b`),
/// biases zero. Deterministic in `seed`.
pub fn build<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ModelParams<T>> {
    spec.validate()?;
    let mut tensors = BTreeMap::new();
    for (name, shape) in spec.param_shapes() {
        let len: usize = shape.iter().product();
        let data = if name.ends_with(".bias") {
            vec![T::zero(); len]
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let mut limit = (6.0 / fan_in as f64).sqrt();
            if name.starts_with("proj_") {
                limit *= PROJECTION_INIT_GAIN;
            }
            let mut rng = rng::stream(seed, &format!("init:{name}"), &[]);
            (0..len)
                .map(|_| T::from_f64(rng.random_range(-limit..limit)))
                .collect()
        };
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    Ok(ModelParams { tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fcn_param_count() {
        let spec = ModelSpec::fcn(512, 6);
        assert_eq!(spec.param_count(), 66_438);
        let params = build::<f32>(&spec, 1).unwrap();
        assert_eq!(params.count(), 66_438);
    }

    #[test]
    fn build_is_deterministic() {
        let spec = ModelSpec::hyfuse(40, 24, 4);
        let a = build::<f32>(&spec, 11).unwrap();
        let b = build::<f32>(&spec, 11).unwrap();
        let c = build::<f32>(&spec, 12).unwrap();
        for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_ne!(a, c);
    }

    #[test]
    fn cnn_flat_width() {
        let spec = ModelSpec::cnn(256, 6);
        assert_eq!(spec.head_input_width(), 32_256);
    }

    #[test]
    fn concat_width() {
        let spec = ModelSpec::concat(768, 256, 6);
        assert_eq!(spec.head_input_width(), 130_048);
    }

    #[test]
    fn hyfuse_full_size_count() {
        let n = ModelSpec::hyfuse(768, 256, 6).param_count();
        assert!((8_000_000..=13_000_000).contains(&n), "{n}");
    }

    #[test]
    fn spec_validation() {
        let mut s = ModelSpec::cnn(32, 4);
        s.input_dims.push(8);
        assert!(s.validate().is_err());
        assert!(ModelSpec::hyfuse(32, 32, 1).validate().is_err());
        assert!(ModelSpec::cnn(4, 3).validate().is_err());
        assert!(ModelSpec::fcn(4, 3).validate().is_ok());
        let mut s = ModelSpec::fcn(4, 3);
        s.dropout_rate = 1.0;
        assert!(s.validate().is_err());
        assert!(build::<f32>(&ModelSpec::hyfuse(32, 32, 1), 0).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("HYFuse".parse::<ModelKind>().unwrap(), ModelKind::Hyfuse);
        assert!("rnn".parse::<ModelKind>().is_err());
    }
}
