use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{CltsError, Result};
use crate::oracles::{add_clipped_noise, TemplateRegistry};
use crate::rng::{derive_seed, derived_rng};

/// Procedural dataset description: class templates plus sampling settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub registry: TemplateRegistry,
    pub samples_per_class: usize,
    /// Standard deviation of the clipped Gaussian pixel noise.
    pub noise_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            registry: TemplateRegistry::default(),
            samples_per_class: 100,
            noise_scale: 0.05,
        }
    }
}

/// Draws `samples_per_class` samples per template: grid parameters chosen
/// uniformly, rendered, then perturbed with clipped noise.
pub fn make_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<Vec<Sample>> {
    spec.registry.validate()?;
    if spec.samples_per_class == 0 {
        return Err(CltsError::Specification("samples per class must be positive".into()));
    }
    if !(spec.noise_scale >= 0.0 && spec.noise_scale.is_finite()) {
        return Err(CltsError::Specification("noise scale must be non-negative".into()));
    }
    let mut out = Vec::with_capacity(spec.registry.templates.len() * spec.samples_per_class);
    for t in &spec.registry.templates {
        let mut rng = derived_rng(seed, "synthetic-params", u64::from(t.class));
        for i in 0..spec.samples_per_class {
            let a = t.params[0].value(rng.random_range(0..t.params[0].len()));
            let b = t.params[1].value(rng.random_range(0..t.params[1].len()));
            let clean = spec.registry.render(t.pattern, [a, b]);
            let noise_seed = derive_seed(seed, "synthetic-noise", (u64::from(t.class) << 32) | i as u64);
            out.push(Sample {
                features: add_clipped_noise(clean, noise_seed, spec.noise_scale),
                label: t.class,
            });
        }
    }
    Ok(out)
}

/// Per-class mean feature vectors.
pub fn class_means(dataset: &[Sample]) -> BTreeMap<u32, Vec<f64>> {
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for s in dataset {
        let entry = sums
            .entry(s.label)
            .or_insert_with(|| (vec![0.0; s.features.len()], 0));
        entry.0.iter_mut().zip(&s.features).for_each(|(a, b)| *a += b);
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(c, (sum, n))| (c, sum.into_iter().map(|v| v / n as f64).collect()))
        .collect()
}

/// Smallest L2 distance between the means of two distinct classes.
pub fn min_class_separation(dataset: &[Sample]) -> f64 {
    let means: Vec<Vec<f64>> = class_means(dataset).into_values().collect();
    let mut best = f64::INFINITY;
    for (i, a) in means.iter().enumerate() {
        for b in &means[i + 1..] {
            let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            best = best.min(d);
        }
    }
    best
}
