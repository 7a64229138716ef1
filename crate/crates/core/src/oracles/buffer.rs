//! Append-only caption buffer: the only memory carried across task boundaries.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::caption::{Caption, Captioner};
use crate::error::{CltsError, Result};

/// Bytes charged per record for its task id.
pub const TASK_ID_BYTES: u64 = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub task: usize,
    pub caption: Caption,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionBuffer {
    records: Vec<CaptionRecord>,
    batch_size: usize,
}

impl CaptionBuffer {
    pub fn new(batch_size: usize) -> Self {
        assert!(batch_size > 0, "caption batch size must be positive");
        CaptionBuffer {
            records: Vec::new(),
            batch_size,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn records(&self) -> &[CaptionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_task(&self) -> usize {
        self.records.last().map_or(0, |r| r.task)
    }

    /// Records belonging to tasks `1..=task`.
    pub fn prefix_through(&self, task: usize) -> &[CaptionRecord] {
        let end = self.records.partition_point(|r| r.task <= task);
        &self.records[..end]
    }

    /// Captions one batch of task samples and appends them. Either the whole
    /// batch is appended or, on error, nothing is.
    pub fn append_task_captions(
        &mut self,
        task: usize,
        captioner: &dyn Captioner,
        batch: &[&[f64]],
    ) -> Result<()> {
        let expected = self.last_task() + 1;
        if task != expected {
            return Err(CltsError::Protocol(format!(
                "caption buffer expects task {expected} next, got task {task}"
            )));
        }
        if batch.len() != self.batch_size {
            return Err(CltsError::Protocol(format!(
                "caption batch must hold {} samples, got {}",
                self.batch_size,
                batch.len()
            )));
        }
        let captions = batch
            .iter()
            .map(|x| captioner.caption(x))
            .collect::<Result<Vec<_>>>()?;
        self.records
            .extend(captions.into_iter().map(|caption| CaptionRecord { task, caption }));
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CltsError::io(path, e))?;
        let mut out = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| CltsError::io(path, e))?;
        }
        out.flush().map_err(|e| CltsError::io(path, e))
    }

    /// Reads a buffer back, enforcing consecutive task ids starting at 1.
    pub fn read_jsonl(path: &Path, batch_size: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| CltsError::io(path, e))?;
        let mut buffer = CaptionBuffer::new(batch_size);
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| CltsError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CaptionRecord = serde_json::from_str(&line)?;
            let last = buffer.last_task();
            if record.task != last && record.task != last + 1 {
                return Err(CltsError::Protocol(format!(
                    "{}: task {} follows task {last}",
                    path.display(),
                    record.task
                )));
            }
            buffer.records.push(record);
        }
        Ok(buffer)
    }
}

/// UTF-8 bytes of every caption plus a 4-byte task id per record.
pub fn buffer_memory_bytes(buffer: &CaptionBuffer) -> u64 {
    records_memory_bytes(buffer.records())
}

pub fn records_memory_bytes(records: &[CaptionRecord]) -> u64 {
    records
        .iter()
        .map(|r| r.caption.byte_len() as u64 + TASK_ID_BYTES)
        .sum()
}

/// Storage an exemplar replay buffer would need for the same sample count.
pub fn exemplar_memory_bytes(exemplars: u64, sample_dims: &[usize], bytes_per_value: u64) -> u64 {
    let per_sample: u64 = sample_dims.iter().map(|&d| d as u64).product();
    exemplars * per_sample * bytes_per_value
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Captions every sample with a fixed-width string.
    struct FixedCaptioner(usize);

    impl Captioner for FixedCaptioner {
        fn caption(&self, features: &[f64]) -> Result<Caption> {
            let mut s = format!("{:.1}", features[0]);
            while s.len() < self.0 {
                s.push('x');
            }
            Caption::new(s)
        }
    }

    fn batch(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64]).collect()
    }

    fn refs(b: &[Vec<f64>]) -> Vec<&[f64]> {
        b.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn appends_batches_in_task_order() {
        let mut buf = CaptionBuffer::new(64);
        let b = batch(64);
        buf.append_task_captions(1, &FixedCaptioner(10), &refs(&b)).unwrap();
        assert_eq!(buf.len(), 64);
        for t in 2..=5 {
            let before = buf.records().to_vec();
            buf.append_task_captions(t, &FixedCaptioner(10), &refs(&b)).unwrap();
            assert_eq!(&buf.records()[..before.len()], &before[..]);
        }
        assert_eq!(buf.len(), 320);
        assert!(buf.records().windows(2).all(|w| w[0].task <= w[1].task));
        assert_eq!(buf.prefix_through(2).len(), 128);
    }

    #[test]
    fn out_of_order_task_is_rejected() {
        let mut buf = CaptionBuffer::new(2);
        let b = batch(2);
        buf.append_task_captions(1, &FixedCaptioner(5), &refs(&b)).unwrap();
        let err = buf.append_task_captions(3, &FixedCaptioner(5), &refs(&b));
        assert!(matches!(err, Err(CltsError::Protocol(_))));
        assert_eq!(buf.len(), 2);
        assert!(CaptionBuffer::new(2)
            .append_task_captions(2, &FixedCaptioner(5), &refs(&b))
            .is_err());
    }

    #[test]
    fn wrong_batch_size_is_rejected() {
        let mut buf = CaptionBuffer::new(4);
        assert!(buf.append_task_captions(1, &FixedCaptioner(5), &refs(&batch(3))).is_err());
        assert!(buf.is_empty());
    }

    #[test]
    fn memory_accounting() {
        assert_eq!(buffer_memory_bytes(&CaptionBuffer::new(1)), 0);
        let mut buf = CaptionBuffer::new(64);
        let b = batch(64);
        for t in 1..=5 {
            buf.append_task_captions(t, &FixedCaptioner(40), &refs(&b)).unwrap();
        }
        // 320 records × (40 caption bytes + 4 id bytes)
        assert_eq!(buffer_memory_bytes(&buf), 14_080);
        assert_eq!(exemplar_memory_bytes(1, &[8, 8, 1], 1), 64);
        assert_eq!(exemplar_memory_bytes(320, &[32, 32, 3], 1), 983_040);
    }

    #[test]
    fn jsonl_roundtrip_and_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("captions.jsonl");
        let mut buf = CaptionBuffer::new(2);
        let b = batch(2);
        buf.append_task_captions(1, &FixedCaptioner(3), &refs(&b)).unwrap();
        buf.append_task_captions(2, &FixedCaptioner(3), &refs(&b)).unwrap();
        buf.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"task":1,"caption":"0.0"}"#);
        assert_eq!(CaptionBuffer::read_jsonl(&path, 2).unwrap(), buf);
    }

    #[test]
    fn jsonl_rejects_task_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"task\":1,\"caption\":\"a\"}\n{\"task\":3,\"caption\":\"b\"}\n").unwrap();
        assert!(CaptionBuffer::read_jsonl(&path, 1).is_err());
    }
}
