use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{MAX_CLUSTERS, MIN_CLUSTERS};
use crate::error::{CltsError, Result};
use crate::oracles::TemplateRegistry;
use crate::predictor::PredictorConfig;
use crate::rng::derive_seed;
use crate::specialist::SpecialistConfig;
use crate::stream::{load_image_dataset, make_synthetic_dataset, split_class_incremental, SplitOptions, SyntheticSpec, TaskStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    /// Images listed in a `path,label` manifest. The oracles use `templates`
    /// for captioning and generation.
    Manifest {
        root: PathBuf,
        manifest: PathBuf,
        #[serde(default)]
        templates: TemplateRegistry,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetSpec {
    /// Templates backing the captioner and generator oracles.
    pub fn templates(&self) -> &TemplateRegistry {
        match self {
            DatasetSpec::Synthetic(spec) => &spec.registry,
            DatasetSpec::Manifest { templates, .. } => templates,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            hidden: vec![128],
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub classes_per_task: usize,
    /// Class presentation order; empty means ascending class id.
    pub class_order: Vec<u32>,
    pub test_fraction: f64,
    /// Size of the labelled batch per task, which is also the number of
    /// captions stored per task.
    pub caption_batch_size: usize,
    pub specialist: SpecialistConfig,
    pub predictor: PredictorConfig,
    /// Pixel noise added by the generator oracle.
    pub generator_noise_scale: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub repetitions: usize,
    pub baseline: BaselineConfig,
    /// Bytes charged per stored feature value when sizing an exemplar
    /// buffer of the same sample count.
    pub exemplar_bytes_per_value: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            classes_per_task: 2,
            class_order: Vec::new(),
            test_fraction: 0.2,
            caption_batch_size: 64,
            specialist: SpecialistConfig::default(),
            predictor: PredictorConfig::default(),
            generator_noise_scale: 0.05,
            lambda1: 1.0,
            lambda2: 1.0,
            seed: 0,
            repetitions: 10,
            baseline: BaselineConfig::default(),
            exemplar_bytes_per_value: 8,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CltsError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative manifest paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CltsError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        if let DatasetSpec::Manifest { root, manifest, .. } = &mut config.dataset {
            let base = path.parent().unwrap_or(Path::new(""));
            *root = base.join(&*root);
            *manifest = base.join(&*manifest);
        }
        Ok(config)
    }

    /// Seed of repetition `r`: master seed plus `r`.
    pub fn repetition_seed(&self, repetition: usize) -> u64 {
        self.seed.wrapping_add(repetition as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CltsError::Config(m));
        if self.classes_per_task == 0 {
            return bad("classes_per_task must be positive".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.caption_batch_size == 0 {
            return bad("caption_batch_size must be positive".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must lie in (0,1), got {}", self.test_fraction));
        }
        let k = self.specialist.clusters.unwrap_or(self.classes_per_task);
        if !(MIN_CLUSTERS..=MAX_CLUSTERS).contains(&k) {
            return bad(format!("K = {k} outside [{MIN_CLUSTERS}, {MAX_CLUSTERS}]"));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("generator_noise_scale", self.generator_noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, v) in [
            ("specialist.vae.learning_rate", self.specialist.vae.learning_rate),
            ("predictor.learning_rate", self.predictor.learning_rate),
            ("baseline.learning_rate", self.baseline.learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.predictor.generations_per_caption == 0 {
            return bad("predictor.generations_per_caption must be positive".into());
        }
        if self.exemplar_bytes_per_value == 0 {
            return bad("exemplar_bytes_per_value must be positive".into());
        }
        if let DatasetSpec::Synthetic(spec) = &self.dataset {
            spec.registry.validate()?;
        }
        Ok(())
    }
}

/// Builds the task stream from the master seed. Every repetition sees the
/// same stream; only training randomness varies between repetitions.
pub fn build_stream(config: &ExperimentConfig) -> Result<TaskStream> {
    config.validate()?;
    let data = match &config.dataset {
        DatasetSpec::Synthetic(spec) => make_synthetic_dataset(spec, derive_seed(config.seed, "dataset", 0))?,
        DatasetSpec::Manifest { root, manifest, .. } => load_image_dataset(root, manifest, None)?,
    };
    let order = if config.class_order.is_empty() {
        let mut classes: Vec<u32> = data.iter().map(|s| s.label).collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    } else {
        config.class_order.clone()
    };
    split_class_incremental(
        &data,
        config.classes_per_task,
        &order,
        &SplitOptions {
            test_fraction: config.test_fraction,
            init_batch_size: config.caption_batch_size,
            seed: derive_seed(config.seed, "split", 0),
        },
    )
}
