//! Task specialists: one frozen VAE + K-Means + lookup bundle per task.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_json, write_json, ParamFile};
use crate::clustering::{build_lookup, clustering_loss, kmeans_fit_with, Centroids, KMeansOptions, LookupTable};
use crate::error::{CltsError, Result};
use crate::oracles::{CaptionBuffer, Captioner};
use crate::rng::{derive_seed, rng_from};
use crate::stream::TaskLease;
use crate::vae::{train_vae, VaeConfig, VaeParams};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecialistConfig {
    pub vae: VaeConfig,
    /// Clusters per specialist; `None` uses the task's class count.
    pub clusters: Option<usize>,
    pub kmeans: KMeansOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecialistReport {
    /// Mean per-sample VAE loss over the final epoch.
    pub l_vae: f64,
    pub l_clust: f64,
    pub l_ts: f64,
    pub kmeans_iterations: usize,
    pub kmeans_reseeds: usize,
}

/// Read-only once built; nothing can change a specialist after training.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpecialist {
    task_id: usize,
    classes: Vec<u32>,
    vae: VaeParams,
    centroids: Centroids,
    lookup: LookupTable,
    report: SpecialistReport,
}

#[derive(Serialize, Deserialize)]
struct LookupFile {
    task: usize,
    class_set: Vec<u32>,
    lookup: LookupTable,
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    task: usize,
    report: SpecialistReport,
}

impl TaskSpecialist {
    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn vae(&self) -> &VaeParams {
        &self.vae
    }

    pub fn centroids(&self) -> &Centroids {
        &self.centroids
    }

    pub fn lookup(&self) -> &LookupTable {
        &self.lookup
    }

    pub fn report(&self) -> &SpecialistReport {
        &self.report
    }

    /// `lookup[assign(encode_mean(x))]`.
    pub fn classify(&self, x: &[f64]) -> Result<u32> {
        let z = self.vae.encode_mean(x)?;
        Ok(self.lookup.class_of(self.centroids.assign(&z)?))
    }

    /// Writes `vae.json`, `centroids.json`, `lookup.json` and `report.json`.
    pub fn write_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CltsError::io(dir, e))?;
        write_json(&dir.join("vae.json"), &self.vae.to_param_file())?;
        write_json(&dir.join("centroids.json"), &self.centroids)?;
        write_json(
            &dir.join("lookup.json"),
            &LookupFile {
                task: self.task_id,
                class_set: self.classes.clone(),
                lookup: self.lookup.clone(),
            },
        )?;
        write_json(
            &dir.join("report.json"),
            &ReportFile {
                task: self.task_id,
                report: self.report,
            },
        )
    }

    pub fn read_checkpoint(dir: &Path) -> Result<Self> {
        let vae = VaeParams::from_param_file(read_json::<ParamFile>(&dir.join("vae.json"))?)?;
        let centroids: Centroids = read_json(&dir.join("centroids.json"))?;
        let lookup: LookupFile = read_json(&dir.join("lookup.json"))?;
        let report: ReportFile = read_json(&dir.join("report.json"))?;
        if lookup.task != report.task {
            return Err(CltsError::Contract(format!(
                "{}: lookup is for task {}, report for task {}",
                dir.display(),
                lookup.task,
                report.task
            )));
        }
        if lookup.lookup.len() != centroids.k() || centroids.dim() != vae.latent_dim() {
            return Err(CltsError::Contract(format!(
                "{}: centroids, lookup and VAE disagree in shape",
                dir.display()
            )));
        }
        Ok(TaskSpecialist {
            task_id: lookup.task,
            lookup: LookupTable::new(lookup.lookup.classes, &lookup.class_set)?,
            classes: lookup.class_set,
            vae,
            centroids,
            report: report.report,
        })
    }
}

/// Trains the specialist for the leased task: VAE, then K-Means on the
/// encoder means of all training samples, then the lookup table from the
/// labelled batch, then one caption batch appended to `buffer`.
pub fn train_specialist(
    lease: &TaskLease<'_>,
    config: &SpecialistConfig,
    captioner: &dyn Captioner,
    buffer: &mut CaptionBuffer,
    seed: u64,
) -> Result<TaskSpecialist> {
    let task = lease.task_id();
    let classes = lease.classes().to_vec();
    if buffer.last_task() + 1 != task {
        return Err(CltsError::Protocol(format!(
            "specialist for task {task} requested after task {}",
            buffer.last_task()
        )));
    }
    let train = lease.train();
    let labelled = lease.init_batch();
    let features: Vec<&[f64]> = train.iter().map(|s| s.features.as_slice()).collect();
    let input_dim = features.first().map_or(0, |f| f.len());

    let trained = VaeParams::init(
        input_dim,
        &config.vae,
        &mut rng_from(derive_seed(seed, "specialist-vae-init", task as u64)),
    )
    .and_then(|p| train_vae(p, &features, &config.vae, derive_seed(seed, "specialist-vae", task as u64)))
    .map_err(|e| e.at_stage(task, "vae"))?;
    let vae = trained.params;
    let l_vae = trained.loss_trace.last().map_or(f64::NAN, |l| l.total);

    let k = config.clusters.unwrap_or(classes.len());
    let (fit, l_clust) = features
        .iter()
        .map(|x| vae.encode_mean(x))
        .collect::<Result<Vec<_>>>()
        .and_then(|latents| {
            let fit = kmeans_fit_with(&latents, k, &config.kmeans, derive_seed(seed, "specialist-kmeans", task as u64))?;
            let loss = clustering_loss(&fit.centroids, &latents)?;
            Ok((fit, loss))
        })
        .map_err(|e| e.at_stage(task, "clustering"))?;

    let lookup = labelled
        .iter()
        .map(|s| Ok((vae.encode_mean(&s.features)?, s.label)))
        .collect::<Result<Vec<_>>>()
        .and_then(|batch| build_lookup(&fit.centroids, &batch, &classes))
        .map_err(|e| e.at_stage(task, "lookup"))?;

    let batch: Vec<&[f64]> = labelled.iter().map(|s| s.features.as_slice()).collect();
    buffer
        .append_task_captions(task, captioner, &batch)
        .map_err(|e| e.at_stage(task, "captioning"))?;

    Ok(TaskSpecialist {
        task_id: task,
        classes,
        vae,
        centroids: fit.centroids,
        lookup,
        report: SpecialistReport {
            l_vae,
            l_clust,
            l_ts: l_vae + l_clust,
            kmeans_iterations: fit.iterations,
            kmeans_reseeds: fit.reseeds.len(),
        },
    })
}
