//! End-to-end protocol: sequential specialist training, predictor retraining
//! from the caption buffer, routed inference and reporting.

mod audit;
mod baseline;
mod config;
mod memory;
mod metrics;
mod report;

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{CltsError, Result};
use crate::oracles::{CaptionBuffer, ProceduralCaptioner, ProceduralGenerator};
use crate::predictor::{build_tp_training_set, train_tp, TaskPredictor};
use crate::rng::{derive_seed, rng_from};
use crate::specialist::{train_specialist, TaskSpecialist};
use crate::stream::{AccessLog, Phase, Sample, TaskStream};

pub use audit::{audit_persisted_state, PersistedAudit};
pub use baseline::run_naive_baseline;
pub use config::{build_stream, BaselineConfig, DatasetSpec, ExperimentConfig};
pub use memory::{
    memory_report, reference_accuracy, reference_memory_rows, ExemplarRow, MemoryReport, ReferenceAccuracy,
    ReferenceMemoryRow,
};
pub use metrics::{compute_acc, mean_over_entries, AccuracyMatrix, Summary};
pub use report::{
    read_matrix_csv, write_matrix_csv, write_run_outputs, LossReport, Method, RepetitionReport, RunReport,
    StageTiming, TaskLosses,
};

/// Routes `x` with the predictor, then classifies it with the chosen
/// specialist.
pub fn infer(specialists: &[TaskSpecialist], tp: &TaskPredictor, x: &[f64]) -> Result<u32> {
    if specialists.is_empty() || tp.tasks() != specialists.len() {
        return Err(CltsError::Contract(format!(
            "predictor routes to {} tasks but {} specialists exist",
            tp.tasks(),
            specialists.len()
        )));
    }
    specialists[tp.predict_task(x)? - 1].classify(x)
}

/// Fraction of samples for which `correct` holds.
fn accuracy<F>(samples: &[Sample], mut correct: F) -> Result<f64>
where
    F: FnMut(&Sample) -> Result<bool>,
{
    if samples.is_empty() {
        return Err(CltsError::Metric("empty test set".into()));
    }
    let mut hits = 0usize;
    for s in samples {
        hits += usize::from(correct(s)?);
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Rep-0 state kept for checkpointing.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub buffer: CaptionBuffer,
    pub specialists: Vec<TaskSpecialist>,
    /// Predictor as it stood after each task's retraining.
    pub predictors: Vec<TaskPredictor>,
}

#[derive(Clone, Debug)]
pub struct ClTsRun {
    pub report: RunReport,
    pub timings: Vec<StageTiming>,
    pub artifacts: RunArtifacts,
}

struct Repetition {
    report: RepetitionReport,
    timings: Vec<StageTiming>,
    artifacts: Option<RunArtifacts>,
    violations: Vec<String>,
}

#[derive(Clone, Copy)]
enum Router {
    Learned,
    Oracle,
}

pub fn run_clts(stream: &TaskStream, config: &ExperimentConfig) -> Result<RunReport> {
    Ok(run_clts_detailed(stream, config)?.report)
}

/// Runs every repetition (in parallel) and assembles the report, stage
/// timings and the first repetition's trained state.
pub fn run_clts_detailed(stream: &TaskStream, config: &ExperimentConfig) -> Result<ClTsRun> {
    config.validate()?;
    if stream.is_empty() {
        return Err(CltsError::Config("task stream is empty".into()));
    }
    let reps = (0..config.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(stream, config, r))
        .collect::<Result<Vec<_>>>()?;

    let mut timings = Vec::new();
    let mut violations = Vec::new();
    let mut artifacts = None;
    let mut reports = Vec::with_capacity(reps.len());
    for rep in reps {
        timings.extend(rep.timings);
        violations.extend(rep.violations.into_iter().map(|v| format!("repetition {}: {v}", rep.report.repetition)));
        artifacts = artifacts.or(rep.artifacts);
        reports.push(rep.report);
    }
    let artifacts = artifacts.expect("repetition 0 keeps its artifacts");
    let memory = memory_report(&artifacts.buffer, stream.feature_len(), config.exemplar_bytes_per_value);
    let report = RunReport::assemble(Method::Clts, stream, reports, Some(memory), violations)?;
    Ok(ClTsRun {
        report,
        timings,
        artifacts,
    })
}

fn run_repetition(stream: &TaskStream, config: &ExperimentConfig, repetition: usize) -> Result<Repetition> {
    let seed = config.repetition_seed(repetition);
    let keep = repetition == 0;
    let templates = config.dataset.templates();
    let captioner = ProceduralCaptioner::new(templates)?;
    let generator = ProceduralGenerator::new(templates.clone(), config.generator_noise_scale)?;
    let log = AccessLog::new();
    let mut cursor = stream.cursor(&log);
    let mut buffer = CaptionBuffer::new(config.caption_batch_size);
    let mut specialists: Vec<TaskSpecialist> = Vec::new();
    let mut predictors = Vec::new();
    let mut tp: Option<TaskPredictor> = None;
    let k = stream.len();
    let (mut learned, mut oracle, mut routing) = (AccuracyMatrix::new(k), AccuracyMatrix::new(k), AccuracyMatrix::new(k));
    let mut timings = Vec::new();
    let mut l_tp_by_stage = Vec::new();
    let mut tp_clamped = 0;
    let mut clock = |task: usize, stage: &str, started: Instant| {
        timings.push(StageTiming {
            repetition,
            task,
            stage: stage.into(),
            seconds: started.elapsed().as_secs_f64(),
        })
    };

    while let Some(lease) = cursor.next_task() {
        let t = lease.task_id();
        log.enter(Phase::SpecialistTraining, t);
        let started = Instant::now();
        let ts = train_specialist(&lease, &config.specialist, &captioner, &mut buffer, seed)?;
        clock(t, "specialist", started);
        if ts.report().kmeans_reseeds > 0 {
            log::info!(
                "repetition {repetition}, task {t}: {} empty clusters re-seeded",
                ts.report().kmeans_reseeds
            );
        }
        specialists.push(ts);

        log.enter(Phase::PredictorTraining, t);
        let started = Instant::now();
        let mut rng = rng_from(derive_seed(seed, "tp-init", t as u64));
        let current = match tp.take() {
            None => TaskPredictor::new(stream.feature_len(), &config.predictor.hidden, 1, &mut rng),
            Some(p) => p.expand_head(t, &mut rng),
        }
        .map_err(|e| e.at_stage(t, "predictor"))?;
        let data = build_tp_training_set(
            buffer.records(),
            &generator,
            config.predictor.generations_per_caption,
            derive_seed(seed, "tp-data", t as u64),
        )
        .map_err(|e| e.at_stage(t, "predictor-data"))?;
        let (trained, trace) = train_tp(current, &data, &config.predictor, derive_seed(seed, "tp-train", t as u64))
            .map_err(|e| e.at_stage(t, "predictor"))?;
        clock(t, "predictor", started);
        if trace.clamped > 0 {
            log::warn!(
                "repetition {repetition}, task {t}: {} predictor probabilities clamped at the floor",
                trace.clamped
            );
        }
        tp_clamped = trace.clamped;
        l_tp_by_stage.push(trace.epoch_losses.last().copied().unwrap_or(0.0));

        log.enter(Phase::Evaluation, t);
        let started = Instant::now();
        let rows = evaluate_row(stream, &specialists, &trained, t).map_err(|e| e.at_stage(t, "evaluation"))?;
        learned.push_row(rows[0].clone())?;
        oracle.push_row(rows[1].clone())?;
        routing.push_row(rows[2].clone())?;
        clock(t, "evaluation", started);
        log::debug!("repetition {repetition}, task {t}: accuracy row {:?}", rows[0]);
        if keep {
            predictors.push(trained.clone());
        }
        tp = Some(trained);
    }

    let specialist_losses: Vec<TaskLosses> = specialists
        .iter()
        .map(|ts| {
            let r = ts.report();
            TaskLosses {
                task: ts.task_id(),
                l_vae: r.l_vae,
                l_clust: r.l_clust,
                l_ts: r.l_ts,
                kmeans_reseeds: r.kmeans_reseeds,
            }
        })
        .collect();
    let l_tp = *l_tp_by_stage.last().expect("stream is non-empty");
    let combined = config.lambda1 * specialist_losses.iter().map(|l| l.l_ts).sum::<f64>() + config.lambda2 * l_tp;
    let report = RepetitionReport {
        repetition,
        seed,
        acc: compute_acc(&learned)?,
        acc_all_entries: mean_over_entries(&learned)?,
        matrix: learned,
        oracle_matrix: Some(oracle),
        routing_matrix: Some(routing),
        losses: Some(LossReport {
            specialists: specialist_losses,
            l_tp,
            l_tp_by_stage,
            lambda1: config.lambda1,
            lambda2: config.lambda2,
            combined,
            tp_clamped,
        }),
    };
    Ok(Repetition {
        report,
        timings,
        violations: log.violations(Phase::SpecialistTraining),
        artifacts: keep.then_some(RunArtifacts {
            buffer,
            specialists,
            predictors,
        }),
    })
}

/// Learned-router, oracle-router and routing accuracy on tasks `1..=t`.
fn evaluate_row(
    stream: &TaskStream,
    specialists: &[TaskSpecialist],
    tp: &TaskPredictor,
    t: usize,
) -> Result<[Vec<f64>; 3]> {
    let mut rows: [Vec<f64>; 3] = Default::default();
    for j in 1..=t {
        let test = stream.test_set(j);
        rows[0].push(route_accuracy(test, specialists, tp, Router::Learned)?);
        rows[1].push(route_accuracy(test, specialists, tp, Router::Oracle)?);
        rows[2].push(accuracy(test, |s| Ok(tp.predict_task(&s.features)? == j))?);
    }
    Ok(rows)
}

fn route_accuracy(test: &[Sample], specialists: &[TaskSpecialist], tp: &TaskPredictor, router: Router) -> Result<f64> {
    accuracy(test, |s| {
        let predicted = match router {
            Router::Learned => infer(specialists, tp, &s.features)?,
            Router::Oracle => {
                let owner = specialists
                    .iter()
                    .find(|ts| ts.classes().contains(&s.label))
                    .ok_or_else(|| CltsError::Contract(format!("no specialist owns class {}", s.label)))?;
                owner.classify(&s.features)?
            }
        };
        Ok(predicted == s.label)
    })
}
