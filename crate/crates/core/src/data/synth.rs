//! Paired synthetic embedding sets with controllable complementarity.
//!
//! Class `c` is decomposed into a group index `c / 2` and a parity `c % 2`.
//! In [`ComplementarityMode::Split`] set A's class means depend only on the
//! group and set B's only on the parity, so neither set alone identifies the
//! class but the pair does (the class score is the sum of a linear group
//! score on A and a linear parity score on B). In
//! [`ComplementarityMode::Redundant`] both sets carry a distinct mean per
//! class.

use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, EmbeddingSet, Family, Result, Sample};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplementarityMode {
    Split,
    Redundant,
}

impl FromStr for ComplementarityMode {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(ComplementarityMode::Split),
            "redundant" => Ok(ComplementarityMode::Redundant),
            other => Err(DataError::Invalid(format!("unknown synth mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub samples_per_class: usize,
    /// Per-coordinate standard deviation of the isotropic noise.
    pub cluster_spread: f64,
    /// Norm of each class (or group/parity) mean.
    pub separation: f64,
    pub mode: ComplementarityMode,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            dim_a: 32,
            dim_b: 32,
            samples_per_class: 200,
            cluster_spread: 0.2,
            separation: 1.0,
            mode: ComplementarityMode::Split,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(DataError::Invalid("synth needs at least 2 classes".into()));
        }
        if self.dim_a == 0 || self.dim_b == 0 || self.samples_per_class == 0 {
            return Err(DataError::Invalid(
                "synth dims and samples_per_class must be positive".into(),
            ));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(DataError::Invalid("cluster_spread must be finite and >= 0".into()));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(DataError::Invalid("separation must be finite and > 0".into()));
        }
        Ok(())
    }

    /// Number of distinct means carried by set A and set B.
    fn prototype_counts(&self) -> (usize, usize) {
        match self.mode {
            ComplementarityMode::Split => (self.classes.div_ceil(2), 2),
            ComplementarityMode::Redundant => (self.classes, self.classes),
        }
    }

    fn prototype_index(&self, class: usize) -> (usize, usize) {
        match self.mode {
            ComplementarityMode::Split => (class / 2, class % 2),
            ComplementarityMode::Redundant => (class, class),
        }
    }
}

fn gaussian(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

/// `count` random directions of norm `scale`.
fn prototypes(count: usize, dim: usize, scale: f64, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x * scale / n).collect()
        })
        .collect()
}

fn draw(mean: &[f64], spread: f64, rng: &mut StreamRng) -> Vec<f32> {
    mean.iter()
        .map(|m| (m + spread * gaussian(rng)) as f32)
        .collect()
}

/// Generates the aligned pair `(A, B)`. Bit-identical for equal specs.
pub fn synth_generate(spec: &SynthSpec) -> Result<(EmbeddingSet, EmbeddingSet)> {
    spec.validate()?;
    let (na, nb) = spec.prototype_counts();
    let means_a = prototypes(na, spec.dim_a, spec.separation, &mut rng::stream(spec.seed, "synth-means", &[0]));
    let means_b = prototypes(nb, spec.dim_b, spec.separation, &mut rng::stream(spec.seed, "synth-means", &[1]));
    let mut noise_a = rng::stream(spec.seed, "synth-noise", &[0]);
    let mut noise_b = rng::stream(spec.seed, "synth-noise", &[1]);

    let class_names: Vec<String> = (0..spec.classes).map(|c| format!("class{c}")).collect();
    let mut a = EmbeddingSet::new("synth_a", spec.dim_a, class_names.clone());
    let mut b = EmbeddingSet::new("synth_b", spec.dim_b, class_names);
    a.family = Some(Family::Rlr);
    b.family = Some(Family::Cbr);

    let total = spec.classes * spec.samples_per_class;
    let width = total.to_string().len();
    for i in 0..spec.samples_per_class {
        for c in 0..spec.classes {
            let id = format!("utt{:0width$}", i * spec.classes + c);
            let (pa, pb) = spec.prototype_index(c);
            a.samples.push(Sample {
                id: id.clone(),
                label: c,
                vector: draw(&means_a[pa], spec.cluster_spread, &mut noise_a),
            });
            b.samples.push(Sample {
                id,
                label: c,
                vector: draw(&means_b[pb], spec.cluster_spread, &mut noise_b),
            });
        }
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let spec = SynthSpec {
            samples_per_class: 5,
            seed: 3,
            ..Default::default()
        };
        let (a1, b1) = synth_generate(&spec).unwrap();
        let (a2, b2) = synth_generate(&spec).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(a1.len(), 20);
        assert_eq!(a1.ids(), b1.ids());
        assert_eq!(a1.labels(), b1.labels());
    }

    #[test]
    fn split_means_ignore_the_other_factor() {
        // with zero noise, A only sees c/2 and B only sees c%2
        let spec = SynthSpec {
            samples_per_class: 1,
            cluster_spread: 0.0,
            dim_a: 6,
            dim_b: 5,
            ..Default::default()
        };
        let (a, b) = synth_generate(&spec).unwrap();
        let v = |s: &EmbeddingSet, c: usize| s.samples.iter().find(|x| x.label == c).unwrap().vector.clone();
        assert_eq!(v(&a, 0), v(&a, 1));
        assert_eq!(v(&a, 2), v(&a, 3));
        assert_ne!(v(&a, 0), v(&a, 2));
        assert_eq!(v(&b, 0), v(&b, 2));
        assert_eq!(v(&b, 1), v(&b, 3));
        assert_ne!(v(&b, 0), v(&b, 1));
    }

    #[test]
    fn invalid_specs() {
        let mut s = SynthSpec::default();
        s.classes = 1;
        assert!(synth_generate(&s).is_err());
        let mut s = SynthSpec::default();
        s.cluster_spread = f64::NAN;
        assert!(synth_generate(&s).is_err());
    }
}
