use serde::{Deserialize, Serialize};

use crate::oracles::{buffer_memory_bytes, exemplar_memory_bytes, CaptionBuffer};

/// Replay memory in MB reported for the full-scale benchmarks. The
/// percentage is each method's excess over CLTS as printed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMemoryRow {
    pub dataset: String,
    pub method: String,
    pub megabytes: f64,
    pub excess_over_clts: Option<String>,
}

const REFERENCE_MEMORY: [(&str, &str, f64, Option<&str>); 8] = [
    ("SCIFAR10", "SCALE", 15.72, Some("+6287%")),
    ("SCIFAR10", "UPL-STAM", 3.09, Some("+1235%")),
    ("SCIFAR10", "U-TELL", 0.17, Some("+67%")),
    ("SCIFAR10", "CLTS", 0.0025, None),
    ("STinyImageNet", "SCALE", 62.91, Some("+1497%")),
    ("STinyImageNet", "UPL-STAM", 5.36, Some("+126.62%")),
    ("STinyImageNet", "U-TELL", 0.17, Some("+3.05%")),
    ("STinyImageNet", "CLTS", 0.042, None),
];

pub fn reference_memory_rows() -> Vec<ReferenceMemoryRow> {
    REFERENCE_MEMORY
        .iter()
        .map(|&(dataset, method, megabytes, excess)| ReferenceMemoryRow {
            dataset: dataset.into(),
            method: method.into(),
            megabytes,
            excess_over_clts: excess.map(str::to_owned),
        })
        .collect()
}

/// Published average accuracy (percent) of CLTS, mean ± std over 10 runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceAccuracy {
    pub dataset: String,
    pub acc_mean: f64,
    pub acc_std: f64,
}

pub fn reference_accuracy() -> Vec<ReferenceAccuracy> {
    [("SCIFAR10", 32.27, 1.18), ("SCIFAR100", 25.86, 0.80), ("STinyImageNet", 35.6, 1.22)]
        .into_iter()
        .map(|(dataset, acc_mean, acc_std)| ReferenceAccuracy {
            dataset: dataset.into(),
            acc_mean,
            acc_std,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarRow {
    pub bytes_per_value: u64,
    pub exemplar_bytes: u64,
    /// Caption-buffer bytes divided by exemplar bytes.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub caption_records: u64,
    pub caption_buffer_bytes: u64,
    pub values_per_sample: u64,
    /// Exemplar storage at the configured precision.
    pub primary: ExemplarRow,
    /// The same count stored as 8-bit pixels.
    pub quantized: ExemplarRow,
    pub reference_rows: Vec<ReferenceMemoryRow>,
}

fn exemplar_row(buffer_bytes: u64, records: u64, values_per_sample: usize, bytes_per_value: u64) -> ExemplarRow {
    let exemplar_bytes = exemplar_memory_bytes(records, &[values_per_sample], bytes_per_value);
    ExemplarRow {
        bytes_per_value,
        exemplar_bytes,
        ratio: if exemplar_bytes == 0 {
            0.0
        } else {
            buffer_bytes as f64 / exemplar_bytes as f64
        },
    }
}

/// Caption-buffer bytes against an exemplar buffer holding one raw sample
/// per caption.
pub fn memory_report(buffer: &CaptionBuffer, values_per_sample: usize, bytes_per_value: u64) -> MemoryReport {
    let bytes = buffer_memory_bytes(buffer);
    let records = buffer.len() as u64;
    MemoryReport {
        caption_records: records,
        caption_buffer_bytes: bytes,
        values_per_sample: values_per_sample as u64,
        primary: exemplar_row(bytes, records, values_per_sample, bytes_per_value),
        quantized: exemplar_row(bytes, records, values_per_sample, 1),
        reference_rows: reference_memory_rows(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_buffer_row() {
        let r = memory_report(&CaptionBuffer::new(64), 64, 8);
        assert_eq!(r.caption_buffer_bytes, 0);
        assert_eq!(r.primary.exemplar_bytes, 0);
        assert_eq!(r.primary.ratio, 0.0);
    }

    #[test]
    fn reference_constants() {
        let rows = reference_memory_rows();
        let clts: Vec<f64> = rows.iter().filter(|r| r.method == "CLTS").map(|r| r.megabytes).collect();
        assert_eq!(clts, vec![0.0025, 0.042]);
        let utell = rows
            .iter()
            .find(|r| r.method == "U-TELL" && r.dataset == "SCIFAR10")
            .unwrap();
        assert_eq!(utell.megabytes, 0.17);
        assert_eq!(utell.excess_over_clts.as_deref(), Some("+67%"));
        assert_eq!(reference_accuracy()[0].acc_mean, 32.27);
    }
}
