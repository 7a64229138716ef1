//! Captions one task's labelled batch, stores the captions in the buffer,
//! writes them as JSON lines and regenerates pseudo-samples from them.
//!
//! cargo run --example caption_replay

use clts::oracles::{
    buffer_memory_bytes, exemplar_memory_bytes, CaptionBuffer, Captioner, Generator, ProceduralCaptioner,
    ProceduralGenerator,
};
use clts::pipeline::{build_stream, ExperimentConfig};

fn main() -> clts::Result<()> {
    let config = ExperimentConfig::default();
    let stream = build_stream(&config)?;
    let templates = config.dataset.templates();
    let captioner = ProceduralCaptioner::new(templates)?;
    let generator = ProceduralGenerator::new(templates.clone(), config.generator_noise_scale)?;

    let mut buffer = CaptionBuffer::new(config.caption_batch_size);
    for task in stream.tasks() {
        let batch: Vec<&[f64]> = task.init_samples().map(|s| s.features.as_slice()).collect();
        buffer.append_task_captions(task.task_id, &captioner, &batch)?;
    }
    for r in buffer.records().iter().step_by(config.caption_batch_size).take(3) {
        println!("task {}: {}", r.task, r.caption.as_str());
    }

    // A caption regenerates a sample that captions back to itself.
    let record = &buffer.records()[0];
    let pseudo = generator.generate(&record.caption, 7)?;
    println!("regenerated sample re-captions as {}", captioner.caption(&pseudo)?.as_str());

    let path = std::env::temp_dir().join("clts-captions.jsonl");
    buffer.write_jsonl(&path)?;
    let back = CaptionBuffer::read_jsonl(&path, config.caption_batch_size)?;
    assert_eq!(back.records(), buffer.records());
    println!("{} records round-tripped through {}", back.len(), path.display());

    let exemplar = exemplar_memory_bytes(buffer.len() as u64, &[stream.feature_len()], 8);
    println!(
        "caption buffer {} bytes vs {} bytes of f64 exemplars",
        buffer_memory_bytes(&buffer),
        exemplar
    );
    Ok(())
}
