use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::metrics::{compute_acc, mean_over_entries, AccuracyMatrix};
use super::report::{Method, RepetitionReport, RunReport};
use super::{accuracy, ExperimentConfig};
use crate::error::{CltsError, Result};
use crate::nn::{argmax, Activation, Adam, Mlp};
use crate::predictor::softmax_cross_entropy;
use crate::rng::{derive_seed, derived_rng, rng_from};
use crate::stream::{AccessLog, Phase, TaskStream};

/// One softmax classifier over every class of the stream, trained on each
/// task's raw data in turn with nothing replayed.
pub fn run_naive_baseline(stream: &TaskStream, config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    if stream.is_empty() {
        return Err(CltsError::Config("task stream is empty".into()));
    }
    let b = &config.baseline;
    if b.batch_size == 0 || b.hidden.contains(&0) {
        return Err(CltsError::Config("baseline widths and batch size must be positive".into()));
    }
    let outcomes = (0..config.repetitions)
        .into_par_iter()
        .map(|r| baseline_repetition(stream, config, r))
        .collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::new();
    let mut violations = Vec::new();
    for (report, v) in outcomes {
        violations.extend(v.into_iter().map(|m| format!("repetition {}: {m}", report.repetition)));
        reports.push(report);
    }
    RunReport::assemble(Method::NaiveBaseline, stream, reports, None, violations)
}

fn baseline_repetition(
    stream: &TaskStream,
    config: &ExperimentConfig,
    repetition: usize,
) -> Result<(RepetitionReport, Vec<String>)> {
    let b = &config.baseline;
    let seed = config.repetition_seed(repetition);
    let mut classes = stream.all_classes();
    classes.sort_unstable();
    let mut widths = vec![stream.feature_len()];
    widths.extend(&b.hidden);
    widths.push(classes.len());
    let mut net = Mlp::init(&widths, Activation::Relu, Activation::Softmax, &mut rng_from(derive_seed(seed, "baseline-init", 0)));
    let mut opt = Adam::new(b.learning_rate, &net)?;
    let log = AccessLog::new();
    let mut cursor = stream.cursor(&log);
    let mut matrix = AccuracyMatrix::new(stream.len());

    while let Some(lease) = cursor.next_task() {
        let t = lease.task_id();
        log.enter(Phase::BaselineTraining, t);
        let train = lease.train();
        let targets = train
            .iter()
            .map(|s| {
                classes
                    .binary_search(&s.label)
                    .map_err(|_| CltsError::Protocol(format!("unknown class {}", s.label)))
            })
            .collect::<Result<Vec<usize>>>()?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..b.epochs {
            order.shuffle(&mut derived_rng(seed, "baseline-shuffle", ((t as u64) << 32) | epoch as u64));
            for chunk in order.chunks(b.batch_size) {
                let batch: Vec<(&[f64], usize)> = chunk
                    .iter()
                    .map(|&i| (train[i].features.as_slice(), targets[i]))
                    .collect();
                let diverged = |e: CltsError| {
                    CltsError::Training {
                        epoch,
                        message: e.to_string(),
                    }
                    .at_stage(t, "baseline")
                };
                let (_, grads) = softmax_cross_entropy(&net, &batch).map_err(diverged)?;
                opt.step(&mut net, &grads).map_err(diverged)?;
            }
        }

        log.enter(Phase::Evaluation, t);
        let row = (1..=t)
            .map(|j| {
                accuracy(stream.test_set(j), |s| {
                    Ok(classes[argmax(&net.forward(&s.features)?)] == s.label)
                })
            })
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| e.at_stage(t, "evaluation"))?;
        matrix.push_row(row)?;
    }

    let report = RepetitionReport {
        repetition,
        seed,
        acc: compute_acc(&matrix)?,
        acc_all_entries: mean_over_entries(&matrix)?,
        matrix,
        oracle_matrix: None,
        routing_matrix: None,
        losses: None,
    };
    Ok((report, log.violations(Phase::BaselineTraining)))
}
