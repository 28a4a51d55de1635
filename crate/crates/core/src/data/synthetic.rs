//! Gaussian-blob classes pushed through per-domain affine maps.
//!
//! Every domain shares the same class means; a domain rotates each
//! coordinate pair, rescales, shifts and adds isotropic noise, so the same
//! label has a different conditional feature distribution in each domain.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Sample};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: usize,
    /// Angle applied to every coordinate pair `(2j, 2j+1)`.
    pub rotation: f64,
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub noise_std: f64,
}

impl DomainSpec {
    pub fn identity(domain_id: usize, input_dim: usize) -> Self {
        DomainSpec {
            domain_id,
            rotation: 0.0,
            scale: vec![1.0; input_dim],
            offset: vec![0.0; input_dim],
            noise_std: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.scale.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.is_empty() {
            return Err(Error::config("data.input_dim", "must be positive"));
        }
        if self.offset.len() != self.scale.len() {
            return Err(Error::config(
                "data.domain_offset",
                "offset and scale vectors differ in length",
            ));
        }
        if self.scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::config(
                "data.domain_scale",
                format!("domain {} has a zero or non-finite scale entry", self.domain_id),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("data.noise_std", "must be >= 0"));
        }
        if !self.rotation.is_finite() || self.offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::config("data.domain_rotation", "must be finite"));
        }
        Ok(())
    }

    /// Apply the deterministic part of the map: scale, rotate, shift.
    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().zip(&self.scale).map(|(v, s)| v * s).collect();
        let (sin, cos) = self.rotation.sin_cos();
        for pair in out.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = cos * a - sin * b;
            pair[1] = sin * a + cos * b;
        }
        for (v, o) in out.iter_mut().zip(&self.offset) {
            *v += o;
        }
        out
    }
}

/// Magnitudes used to derive the default domain family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    /// Domain `d` rotates by `d * rotation_step`.
    pub rotation_step: f64,
    /// Scale entries are drawn from `1 ± scale_jitter`.
    pub scale_jitter: f64,
    /// Offset entries are drawn from `±offset`.
    pub offset: f64,
    pub noise_std: f64,
}

/// Domain 0 is the untransformed base (plus noise); every further domain
/// gets its own rotation, scale and offset drawn under `seed`.
pub fn default_domains(
    num_domains: usize,
    input_dim: usize,
    shift: DomainShift,
    seed: u64,
) -> Vec<DomainSpec> {
    (0..num_domains)
        .map(|d| {
            let mut spec = DomainSpec::identity(d, input_dim);
            spec.noise_std = shift.noise_std;
            if d > 0 {
                let mut rng = rng::stream(seed, &format!("data/domain/{d}"));
                spec.rotation = d as f64 * shift.rotation_step;
                for s in &mut spec.scale {
                    *s = 1.0 + shift.scale_jitter * rng.random_range(-1.0..=1.0);
                }
                for o in &mut spec.offset {
                    *o = shift.offset * rng.random_range(-1.0..=1.0);
                }
            }
            spec
        })
        .collect()
}

/// Class means shared by all domains: normal entries with variance
/// `1 / input_dim`, so every mean has unit expected squared norm.
pub fn class_means(num_classes: usize, input_dim: usize, base_seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(base_seed, "data/class_means");
    let scale = 1.0 / (input_dim.max(1) as f64).sqrt();
    (0..num_classes)
        .map(|_| {
            (0..input_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect()
        })
        .collect()
}

/// Draw `samples_per_class` instances of each class in the domain `spec`.
/// Samples are ordered by class, and their `index` is their position.
pub fn make_synthetic_domain(
    spec: &DomainSpec,
    num_classes: usize,
    base_seed: u64,
    samples_per_class: usize,
) -> Result<LabeledDataset> {
    spec.validate()?;
    if num_classes < 2 {
        return Err(Error::config("data.num_classes", "need at least 2 classes"));
    }
    let p = spec.input_dim();
    let means = class_means(num_classes, p, base_seed);
    let mut rng = rng::stream(base_seed, &format!("data/noise/{}", spec.domain_id));
    let mut samples = Vec::with_capacity(num_classes * samples_per_class);
    for (label, mean) in means.iter().enumerate() {
        let center = spec.transform(mean);
        for _ in 0..samples_per_class {
            let features = center
                .iter()
                .map(|c| {
                    if spec.noise_std > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c + spec.noise_std * z
                    } else {
                        *c
                    }
                })
                .collect();
            samples.push(Sample {
                features,
                label,
                domain: spec.domain_id,
                index: samples.len(),
            });
        }
    }
    Ok(LabeledDataset {
        input_dim: p,
        samples,
    })
}
