//! Schema walk over everything a run writes to disk. Persisted state may
//! hold captions, parameters, centroids, lookups and metrics; a stored
//! numeric array that reproduces a raw sample is a violation.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{CltsError, Result};
use crate::stream::TaskStream;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PersistedAudit {
    pub files_checked: usize,
    pub arrays_checked: usize,
    pub violations: Vec<String>,
}

impl PersistedAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FileKind {
    RunReport,
    Timings,
    Captions,
    Matrix,
    ParamFile,
    Centroids,
    Lookup,
    SpecialistReport,
}

const RUN_REPORT_KEYS: &[&str] = &[
    "method", "tasks", "class_sets", "acc", "acc_all_entries", "oracle_acc", "routing_accuracy",
    "mean_matrix", "repetitions", "memory", "reference_accuracy", "audit_violations",
    // summaries and matrices
    "mean", "std", "values", "rows",
    // repetitions
    "repetition", "seed", "matrix", "oracle_matrix", "routing_matrix", "losses",
    "specialists", "l_tp", "l_tp_by_stage", "lambda1", "lambda2", "combined", "tp_clamped",
    "task", "l_vae", "l_clust", "l_ts", "kmeans_reseeds",
    // memory
    "caption_records", "caption_buffer_bytes", "values_per_sample", "primary", "quantized",
    "bytes_per_value", "exemplar_bytes", "ratio", "reference_rows", "dataset", "megabytes",
    "excess_over_clts", "acc_mean", "acc_std",
];
const TIMING_KEYS: &[&str] = &["repetition", "task", "stage", "seconds"];
const CAPTION_KEYS: &[&str] = &["task", "caption"];
const PARAM_FILE_KEYS: &[&str] = &["kind", "meta", "scalars", "activations", "tensors", "shape", "data"];
const CENTROID_KEYS: &[&str] = &["vectors"];
const LOOKUP_KEYS: &[&str] = &["task", "class_set", "lookup", "classes"];
const SPECIALIST_REPORT_KEYS: &[&str] = &[
    "task", "report", "l_vae", "l_clust", "l_ts", "kmeans_iterations", "kmeans_reseeds",
];

impl FileKind {
    fn classify(relative: &Path) -> Option<FileKind> {
        let parts: Vec<&str> = relative.iter().filter_map(|p| p.to_str()).collect();
        match parts.as_slice() {
            ["report.json"] => Some(FileKind::RunReport),
            ["timings.json"] => Some(FileKind::Timings),
            ["captions.jsonl"] => Some(FileKind::Captions),
            ["matrix.csv"] => Some(FileKind::Matrix),
            ["checkpoints", dir, file] if is_task_dir(dir) => match *file {
                "vae.json" | "tp.json" => Some(FileKind::ParamFile),
                "centroids.json" => Some(FileKind::Centroids),
                "lookup.json" => Some(FileKind::Lookup),
                "report.json" => Some(FileKind::SpecialistReport),
                _ => None,
            },
            _ => None,
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            FileKind::RunReport => RUN_REPORT_KEYS,
            FileKind::Timings => TIMING_KEYS,
            FileKind::Captions => CAPTION_KEYS,
            FileKind::Matrix => &[],
            FileKind::ParamFile => PARAM_FILE_KEYS,
            FileKind::Centroids => CENTROID_KEYS,
            FileKind::Lookup => LOOKUP_KEYS,
            FileKind::SpecialistReport => SPECIALIST_REPORT_KEYS,
        }
    }
}

fn is_task_dir(name: &str) -> bool {
    name.strip_prefix("task-")
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

/// Map keys inside a parameter file: `meta`, `scalars`, `activations` and
/// `tensors` are keyed by names rather than fixed fields.
fn param_map_key_ok(map: &str, key: &str) -> bool {
    match map {
        "meta" => matches!(key, "input_dim" | "latent_dim" | "tasks"),
        "scalars" => key == "beta",
        "activations" => layer_name_ok(key),
        "tensors" => key
            .rsplit_once('.')
            .is_some_and(|(layer, field)| matches!(field, "weights" | "bias") && layer_name_ok(layer)),
        _ => false,
    }
}

fn layer_name_ok(name: &str) -> bool {
    if matches!(name, "mean_head" | "logvar_head") {
        return true;
    }
    name.split_once('.').is_some_and(|(net, idx)| {
        matches!(net, "encoder" | "decoder" | "net") && !idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit())
    })
}

struct Walker<'a> {
    kind: FileKind,
    file: String,
    feature_len: usize,
    samples: &'a HashSet<Vec<u64>>,
    audit: &'a mut PersistedAudit,
}

impl Walker<'_> {
    fn walk(&mut self, value: &Value, path: &str, map_parent: Option<&str>) {
        match value {
            Value::Object(obj) => {
                for (k, v) in obj {
                    let ok = match map_parent {
                        Some(m) => param_map_key_ok(m, k),
                        None => self.kind.keys().contains(&k.as_str()),
                    };
                    if !ok {
                        self.violation(format!("unexpected key `{k}` at {path}"));
                    }
                    let child_map = (self.kind == FileKind::ParamFile
                        && map_parent.is_none()
                        && matches!(k.as_str(), "meta" | "scalars" | "activations" | "tensors"))
                    .then_some(k.as_str());
                    self.walk(v, &format!("{path}.{k}"), child_map);
                }
            }
            Value::Array(items) => {
                let numbers: Option<Vec<f64>> = items.iter().map(Value::as_f64).collect();
                match numbers {
                    Some(nums) if !nums.is_empty() => self.check_numbers(&nums, path),
                    _ => {
                        for (i, v) in items.iter().enumerate() {
                            self.walk(v, &format!("{path}[{i}]"), None);
                        }
                    }
                }
            }
            _ => {}
        }
    }

    /// Flags any aligned window of `feature_len` values that reproduces a
    /// raw sample bit for bit.
    fn check_numbers(&mut self, nums: &[f64], path: &str) {
        self.audit.arrays_checked += 1;
        if self.feature_len == 0 || nums.len() < self.feature_len || !nums.len().is_multiple_of(self.feature_len) {
            return;
        }
        for (i, chunk) in nums.chunks_exact(self.feature_len).enumerate() {
            let bits: Vec<u64> = chunk.iter().map(|v| v.to_bits()).collect();
            if self.samples.contains(&bits) {
                self.violation(format!("raw sample stored at {path} (window {i})"));
            }
        }
    }

    fn violation(&mut self, message: String) {
        self.audit.violations.push(format!("{}: {message}", self.file));
    }
}

fn list_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| CltsError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CltsError::io(dir, e))?.path();
        if path.is_dir() {
            list_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Walks every file under `dir`. Unknown files, unexpected keys and raw
/// samples of any task in `stream` are reported as violations.
pub fn audit_persisted_state(dir: &Path, stream: &TaskStream) -> Result<PersistedAudit> {
    let samples: HashSet<Vec<u64>> = stream
        .tasks()
        .iter()
        .flat_map(|t| t.train.iter().chain(&t.test))
        .map(|s| s.features.iter().map(|v| v.to_bits()).collect())
        .collect();
    let mut files = Vec::new();
    list_files(dir, &mut files)?;
    files.sort();

    let mut audit = PersistedAudit::default();
    for path in files {
        let relative = path.strip_prefix(dir).unwrap_or(&path).to_path_buf();
        let name = relative.display().to_string();
        audit.files_checked += 1;
        let Some(kind) = FileKind::classify(&relative) else {
            audit.violations.push(format!("{name}: not part of the persisted-state schema"));
            continue;
        };
        let text = std::fs::read_to_string(&path).map_err(|e| CltsError::io(&path, e))?;
        let documents: Vec<Value> = match kind {
            FileKind::Matrix => {
                if text.lines().next() != Some("after_task,task,accuracy") {
                    audit.violations.push(format!("{name}: unexpected header"));
                }
                if text.lines().skip(1).any(|l| l.split(',').count() != 3) {
                    audit.violations.push(format!("{name}: rows must have three columns"));
                }
                continue;
            }
            FileKind::Captions => text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<std::result::Result<_, _>>()?,
            _ => vec![serde_json::from_str(&text)?],
        };
        let mut walker = Walker {
            kind,
            file: name,
            feature_len: stream.feature_len(),
            samples: &samples,
            audit: &mut audit,
        };
        for doc in &documents {
            walker.walk(doc, "$", None);
        }
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_kinds() {
        assert_eq!(FileKind::classify(Path::new("report.json")), Some(FileKind::RunReport));
        assert_eq!(
            FileKind::classify(Path::new("checkpoints/task-3/vae.json")),
            Some(FileKind::ParamFile)
        );
        assert_eq!(
            FileKind::classify(Path::new("checkpoints/task-3/report.json")),
            Some(FileKind::SpecialistReport)
        );
        assert_eq!(FileKind::classify(Path::new("checkpoints/task-x/vae.json")), None);
        assert_eq!(FileKind::classify(Path::new("samples.json")), None);
    }

    #[test]
    fn param_names() {
        assert!(param_map_key_ok("tensors", "encoder.0.weights"));
        assert!(param_map_key_ok("tensors", "mean_head.bias"));
        assert!(param_map_key_ok("activations", "net.2"));
        assert!(!param_map_key_ok("tensors", "samples.0.weights"));
        assert!(!param_map_key_ok("meta", "features"));
    }
}
