//! Class-incremental task streams.
//!
//! A [`TaskStream`] is immutable. Training code walks it through a
//! [`StreamCursor`], which hands out one [`TaskLease`] at a time and records
//! every access to raw training data in an [`AccessLog`].

mod manifest;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CltsError, Result};
use crate::rng::derived_rng;

pub use manifest::{load_image_dataset, parse_manifest, ManifestEntry};
pub use synthetic::{class_means, make_synthetic_dataset, min_class_separation, SyntheticSpec};

/// A labelled sample. Features are a flattened image with values in [0,1],
/// row-major with channels interleaved per pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub task_id: usize,
    pub classes: Vec<u32>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Indices into `train` of the labelled batch used for lookup-table
    /// initialization and captioning.
    pub init_batch: Vec<usize>,
}

impl TaskData {
    pub fn init_samples(&self) -> impl Iterator<Item = &Sample> {
        self.init_batch.iter().map(|&i| &self.train[i])
    }

    pub fn feature_len(&self) -> usize {
        self.train.first().map_or(0, |s| s.features.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitOptions {
    pub test_fraction: f64,
    pub init_batch_size: usize,
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            test_fraction: 0.2,
            init_batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    tasks: Vec<TaskData>,
}

impl TaskStream {
    pub fn new(tasks: Vec<TaskData>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(CltsError::Config("task stream must contain at least one task".into()));
        }
        let mut seen = BTreeSet::new();
        for (i, t) in tasks.iter().enumerate() {
            if t.task_id != i + 1 {
                return Err(CltsError::Protocol(format!(
                    "task ids must be consecutive from 1; position {} holds task {}",
                    i + 1,
                    t.task_id
                )));
            }
            for &c in &t.classes {
                if !seen.insert(c) {
                    return Err(CltsError::Protocol(format!(
                        "class {c} appears in more than one task"
                    )));
                }
            }
            if let Some(s) = t.train.iter().chain(&t.test).find(|s| !t.classes.contains(&s.label)) {
                return Err(CltsError::Protocol(format!(
                    "task {} holds a sample of class {} outside its class set",
                    t.task_id, s.label
                )));
            }
        }
        Ok(TaskStream { tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn class_sets(&self) -> Vec<&[u32]> {
        self.tasks.iter().map(|t| t.classes.as_slice()).collect()
    }

    pub fn all_classes(&self) -> Vec<u32> {
        self.tasks.iter().flat_map(|t| t.classes.iter().copied()).collect()
    }

    pub fn feature_len(&self) -> usize {
        self.tasks[0].feature_len()
    }

    /// Held-out test samples of a task (1-based id). Test data is for
    /// evaluation only and is logged separately from training access.
    pub fn test_set(&self, task_id: usize) -> &[Sample] {
        &self.tasks[task_id - 1].test
    }

    pub fn cursor<'a>(&'a self, log: &'a AccessLog) -> StreamCursor<'a> {
        StreamCursor {
            stream: self,
            next: 0,
            log,
        }
    }

    /// Direct access for inspection and tests. Training code goes through
    /// [`TaskStream::cursor`].
    pub fn tasks(&self) -> &[TaskData] {
        &self.tasks
    }
}

/// Hands out tasks strictly in order. The lease borrows the cursor mutably,
/// so the next task cannot be obtained while one is still held.
pub struct StreamCursor<'a> {
    stream: &'a TaskStream,
    next: usize,
    log: &'a AccessLog,
}

impl<'a> StreamCursor<'a> {
    pub fn next_task(&mut self) -> Option<TaskLease<'_>> {
        let task = self.stream.tasks.get(self.next)?;
        self.next += 1;
        self.log.record(AuditEvent::Released { task: task.task_id });
        Some(TaskLease { task, log: self.log })
    }

    pub fn remaining(&self) -> usize {
        self.stream.tasks.len() - self.next
    }
}

pub struct TaskLease<'c> {
    task: &'c TaskData,
    log: &'c AccessLog,
}

impl<'c> TaskLease<'c> {
    pub fn task_id(&self) -> usize {
        self.task.task_id
    }

    pub fn classes(&self) -> &[u32] {
        &self.task.classes
    }

    /// Raw training samples; every call is logged.
    pub fn train(&self) -> &'c [Sample] {
        self.log.record(AuditEvent::TrainAccess {
            task: self.task.task_id,
        });
        &self.task.train
    }

    /// The labelled initialization batch; logged as training access.
    pub fn init_batch(&self) -> Vec<&'c Sample> {
        self.log.record(AuditEvent::TrainAccess {
            task: self.task.task_id,
        });
        self.task.init_samples().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum AuditEvent {
    /// A pipeline phase begins; `task` is the task it belongs to.
    Phase { phase: Phase, task: usize },
    Released { task: usize },
    TrainAccess { task: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    SpecialistTraining,
    PredictorTraining,
    Evaluation,
    BaselineTraining,
}

/// Thread-safe, append-only record of phase changes and data accesses.
#[derive(Debug, Default)]
pub struct AccessLog {
    events: Mutex<Vec<AuditEvent>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, event: AuditEvent) {
        self.events.lock().expect("access log poisoned").push(event);
    }

    pub fn enter(&self, phase: Phase, task: usize) {
        self.record(AuditEvent::Phase { phase, task });
    }

    pub fn events(&self) -> Vec<AuditEvent> {
        self.events.lock().expect("access log poisoned").clone()
    }

    /// Checks that training data of task `t` was read only while the phase
    /// `allowed` for task `t` was active. Returns the offending events.
    pub fn violations(&self, allowed: Phase) -> Vec<String> {
        let mut current: Option<(Phase, usize)> = None;
        let mut out = Vec::new();
        for e in self.events() {
            match e {
                AuditEvent::Phase { phase, task } => current = Some((phase, task)),
                AuditEvent::Released { .. } => {}
                AuditEvent::TrainAccess { task } => {
                    if current != Some((allowed, task)) {
                        out.push(format!("task {task} training data read during {current:?}"));
                    }
                }
            }
        }
        out
    }
}

/// Splits a labelled dataset into consecutive tasks of `classes_per_task`
/// classes following `order`, with a stratified train/test split and a
/// class-balanced labelled batch per task.
pub fn split_class_incremental(
    dataset: &[Sample],
    classes_per_task: usize,
    order: &[u32],
    options: &SplitOptions,
) -> Result<TaskStream> {
    if classes_per_task == 0 || order.is_empty() || !order.len().is_multiple_of(classes_per_task) {
        return Err(CltsError::Config(format!(
            "{} classes cannot be split into tasks of {classes_per_task}",
            order.len()
        )));
    }
    if !(0.0..1.0).contains(&options.test_fraction) {
        return Err(CltsError::Config(format!(
            "test fraction must lie in [0,1), got {}",
            options.test_fraction
        )));
    }
    if options.init_batch_size == 0 {
        return Err(CltsError::Config("labelled batch size must be positive".into()));
    }
    let position: BTreeMap<u32, usize> = order.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    if position.len() != order.len() {
        return Err(CltsError::Config("class order contains duplicates".into()));
    }

    let mut by_class: BTreeMap<u32, Vec<usize>> = order.iter().map(|&c| (c, Vec::new())).collect();
    for (i, s) in dataset.iter().enumerate() {
        match by_class.get_mut(&s.label) {
            Some(v) => v.push(i),
            None => {
                return Err(CltsError::Protocol(format!(
                    "sample {i} has label {} which is not in the class order",
                    s.label
                )))
            }
        }
    }

    let mut tasks = Vec::with_capacity(order.len() / classes_per_task);
    for (t, group) in order.chunks(classes_per_task).enumerate() {
        let task_id = t + 1;
        let mut train_idx: Vec<usize> = Vec::new();
        let mut test_idx: Vec<usize> = Vec::new();
        let mut train_by_class: Vec<Vec<usize>> = Vec::new();
        for &c in group {
            let mut idx = by_class[&c].clone();
            if idx.is_empty() {
                return Err(CltsError::Config(format!("class {c} has no samples")));
            }
            idx.shuffle(&mut derived_rng(options.seed, "split", u64::from(c)));
            let n_test = (idx.len() as f64 * options.test_fraction).round() as usize;
            let (test, train) = idx.split_at(n_test);
            let mut train = train.to_vec();
            let mut test = test.to_vec();
            train.sort_unstable();
            test.sort_unstable();
            train_idx.extend(&train);
            test_idx.extend(&test);
            train_by_class.push(train);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();

        let init = balanced_batch(&train_idx, &train_by_class, group, options, task_id)?;
        tasks.push(TaskData {
            task_id,
            classes: group.to_vec(),
            train: train_idx.iter().map(|&i| dataset[i].clone()).collect(),
            test: test_idx.iter().map(|&i| dataset[i].clone()).collect(),
            init_batch: init,
        });
    }
    TaskStream::new(tasks)
}

/// Picks `init_batch_size` training positions, spread as evenly as possible
/// over the task's classes (earlier classes take the remainder).
fn balanced_batch(
    train_idx: &[usize],
    train_by_class: &[Vec<usize>],
    group: &[u32],
    options: &SplitOptions,
    task_id: usize,
) -> Result<Vec<usize>> {
    let base = options.init_batch_size / group.len();
    let extra = options.init_batch_size % group.len();
    let mut picked = Vec::with_capacity(options.init_batch_size);
    for (k, (members, &c)) in train_by_class.iter().zip(group).enumerate() {
        let quota = base + usize::from(k < extra);
        if members.len() < quota {
            return Err(CltsError::Config(format!(
                "task {task_id}: class {c} has {} training samples, labelled batch needs {quota}",
                members.len()
            )));
        }
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut derived_rng(options.seed, "init-batch", u64::from(c)));
        for &dataset_index in &shuffled[..quota] {
            let pos = train_idx
                .binary_search(&dataset_index)
                .expect("class member is in the task's training set");
            picked.push(pos);
        }
    }
    picked.sort_unstable();
    Ok(picked)
}
