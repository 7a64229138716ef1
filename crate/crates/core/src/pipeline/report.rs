use std::path::Path;

use serde::{Deserialize, Serialize};

use super::memory::{reference_accuracy, MemoryReport, ReferenceAccuracy};
use super::metrics::{compute_acc, AccuracyMatrix, Summary};
use super::ClTsRun;
use crate::checkpoint::write_json;
use crate::error::{CltsError, Result};
use crate::stream::TaskStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Clts,
    NaiveBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskLosses {
    pub task: usize,
    pub l_vae: f64,
    pub l_clust: f64,
    pub l_ts: f64,
    pub kmeans_reseeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub specialists: Vec<TaskLosses>,
    /// Final-epoch predictor loss after the last task.
    pub l_tp: f64,
    pub l_tp_by_stage: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `λ1·Σ L_TS + λ2·L_TP`.
    pub combined: f64,
    pub tp_clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepetitionReport {
    pub repetition: usize,
    pub seed: u64,
    pub matrix: AccuracyMatrix,
    pub acc: f64,
    pub acc_all_entries: f64,
    /// Accuracy with the ground-truth task id used for routing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_matrix: Option<AccuracyMatrix>,
    /// Fraction of each task's test set routed to its own specialist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing_matrix: Option<AccuracyMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub tasks: usize,
    pub class_sets: Vec<Vec<u32>>,
    pub acc: Summary,
    pub acc_all_entries: Summary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_acc: Option<Summary>,
    /// Final-row routing accuracy per task across repetitions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing_accuracy: Option<Vec<Summary>>,
    pub mean_matrix: AccuracyMatrix,
    pub repetitions: Vec<RepetitionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<MemoryReport>,
    pub reference_accuracy: Vec<ReferenceAccuracy>,
    pub audit_violations: Vec<String>,
}

/// Wall-clock time of one stage; kept apart from the report so the report
/// stays reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub repetition: usize,
    pub task: usize,
    pub stage: String,
    pub seconds: f64,
}

impl RunReport {
    pub(crate) fn assemble(
        method: Method,
        stream: &TaskStream,
        repetitions: Vec<RepetitionReport>,
        memory: Option<MemoryReport>,
        audit_violations: Vec<String>,
    ) -> Result<Self> {
        let matrices: Vec<&AccuracyMatrix> = repetitions.iter().map(|r| &r.matrix).collect();
        let oracle: Option<Vec<f64>> = repetitions
            .iter()
            .map(|r| r.oracle_matrix.as_ref().map(compute_acc))
            .collect::<Option<Result<Vec<_>>>>()
            .transpose()?;
        let routing = repetitions
            .iter()
            .map(|r| r.routing_matrix.as_ref().map(|m| m.final_row().map(<[f64]>::to_vec)))
            .collect::<Option<Result<Vec<_>>>>()
            .transpose()?
            .map(|rows| {
                (0..stream.len())
                    .map(|j| Summary::of(rows.iter().map(|r| r[j]).collect()))
                    .collect()
            });
        Ok(RunReport {
            method,
            tasks: stream.len(),
            class_sets: stream.class_sets().into_iter().map(<[u32]>::to_vec).collect(),
            acc: Summary::of(repetitions.iter().map(|r| r.acc).collect()),
            acc_all_entries: Summary::of(repetitions.iter().map(|r| r.acc_all_entries).collect()),
            oracle_acc: oracle.map(Summary::of),
            routing_accuracy: routing,
            mean_matrix: AccuracyMatrix::mean(&matrices)?,
            repetitions,
            memory,
            reference_accuracy: reference_accuracy(),
            audit_violations,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn read(path: &Path) -> Result<Self> {
        crate::checkpoint::read_json(path)
    }

    /// Checks that every stored ACC equals the ACC recomputed from its
    /// matrix and that the summary agrees with the per-repetition values.
    pub fn verify_acc(&self) -> Result<()> {
        for r in &self.repetitions {
            let recomputed = compute_acc(&r.matrix)?;
            if recomputed.to_bits() != r.acc.to_bits() {
                return Err(CltsError::Metric(format!(
                    "repetition {}: stored ACC {} but matrix gives {recomputed}",
                    r.repetition, r.acc
                )));
            }
        }
        let summary = Summary::of(self.repetitions.iter().map(|r| r.acc).collect());
        if summary != self.acc {
            return Err(CltsError::Metric("ACC summary disagrees with repetitions".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRecord {
    after_task: usize,
    task: usize,
    accuracy: f64,
}

/// One `after_task,task,accuracy` row per lower-triangle entry, 1-based.
pub fn write_matrix_csv(path: &Path, matrix: &AccuracyMatrix) -> Result<()> {
    let csv_err = |e: csv::Error| CltsError::Contract(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for (i, row) in matrix.rows.iter().enumerate() {
        for (j, &accuracy) in row.iter().enumerate() {
            w.serialize(MatrixRecord {
                after_task: i + 1,
                task: j + 1,
                accuracy,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| CltsError::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<AccuracyMatrix> {
    let csv_err = |e: csv::Error| CltsError::Contract(format!("{}: {e}", path.display()));
    let mut records: Vec<MatrixRecord> = csv::Reader::from_path(path)
        .map_err(csv_err)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)?;
    records.sort_by_key(|r| (r.after_task, r.task));
    let tasks = records.iter().map(|r| r.after_task).max().unwrap_or(0);
    let mut matrix = AccuracyMatrix::new(tasks);
    for i in 1..=tasks {
        let row: Vec<f64> = records.iter().filter(|r| r.after_task == i).map(|r| r.accuracy).collect();
        matrix.push_row(row)?;
    }
    Ok(matrix)
}

/// Writes `report.json`, `matrix.csv` (mean over repetitions),
/// `captions.jsonl`, `timings.json` and per-task checkpoints of the first
/// repetition under `checkpoints/task-<t>/`.
pub fn write_run_outputs(dir: &Path, run: &ClTsRun) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CltsError::io(dir, e))?;
    let report_path = dir.join("report.json");
    std::fs::write(&report_path, run.report.to_json()?).map_err(|e| CltsError::io(&report_path, e))?;
    write_matrix_csv(&dir.join("matrix.csv"), &run.report.mean_matrix)?;
    run.artifacts.buffer.write_jsonl(&dir.join("captions.jsonl"))?;
    write_json(&dir.join("timings.json"), &run.timings)?;
    for (ts, tp) in run.artifacts.specialists.iter().zip(&run.artifacts.predictors) {
        let task_dir = dir.join("checkpoints").join(format!("task-{}", ts.task_id()));
        ts.write_checkpoint(&task_dir)?;
        write_json(&task_dir.join("tp.json"), &tp.to_param_file())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_csv_roundtrip() {
        let mut m = AccuracyMatrix::new(3);
        m.push_row(vec![0.975]).unwrap();
        m.push_row(vec![0.1, 1.0]).unwrap();
        m.push_row(vec![0.3333333333333333, 0.0, 0.55]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("matrix.csv");
        write_matrix_csv(&path, &m).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("after_task,task,accuracy\n1,1,0.975\n"), "{text}");
        assert_eq!(read_matrix_csv(&path).unwrap(), m);
    }
}
