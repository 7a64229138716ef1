//! Replay memory of a caption buffer against storing one raw exemplar per
//! caption, next to the reference figures for the full-scale benchmarks.
//!
//! cargo run --example memory_accounting

use clts::oracles::{CaptionBuffer, ProceduralCaptioner};
use clts::pipeline::{build_stream, memory_report, ExperimentConfig};

fn main() -> clts::Result<()> {
    let config = ExperimentConfig::default();
    let stream = build_stream(&config)?;
    let captioner = ProceduralCaptioner::new(config.dataset.templates())?;
    let mut buffer = CaptionBuffer::new(config.caption_batch_size);
    for task in stream.tasks() {
        let batch: Vec<&[f64]> = task.init_samples().map(|s| s.features.as_slice()).collect();
        buffer.append_task_captions(task.task_id, &captioner, &batch)?;
    }

    let m = memory_report(&buffer, stream.feature_len(), config.exemplar_bytes_per_value);
    println!("{} captions take {} bytes", m.caption_records, m.caption_buffer_bytes);
    for row in [&m.primary, &m.quantized] {
        println!(
            "exemplars at {} byte(s) per value: {} bytes, caption/exemplar ratio {:.4}",
            row.bytes_per_value, row.exemplar_bytes, row.ratio
        );
    }
    println!("\nreference replay memory (MB)");
    for r in &m.reference_rows {
        println!(
            "  {:<14} {:<9} {:>7} {}",
            r.dataset,
            r.method,
            r.megabytes,
            r.excess_over_clts.as_deref().unwrap_or("")
        );
    }
    Ok(())
}
