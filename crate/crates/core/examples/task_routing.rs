//! Trains the task predictor from generated samples only, widening its head
//! as tasks arrive, and measures how often it routes real test samples to
//! their own task.
//!
//! cargo run --release --example task_routing

use clts::oracles::{CaptionBuffer, Captioner, ProceduralCaptioner, ProceduralGenerator};
use clts::pipeline::{build_stream, ExperimentConfig};
use clts::predictor::{build_tp_training_set, train_tp, TaskPredictor};
use clts::rng::{derive_seed, rng_from};

fn main() -> clts::Result<()> {
    let config = ExperimentConfig::default();
    let stream = build_stream(&config)?;
    let templates = config.dataset.templates();
    let captioner = ProceduralCaptioner::new(templates)?;
    let generator = ProceduralGenerator::new(templates.clone(), config.generator_noise_scale)?;
    let mut buffer = CaptionBuffer::new(config.caption_batch_size);
    let mut tp: Option<TaskPredictor> = None;

    for task in stream.tasks() {
        let t = task.task_id;
        let batch: Vec<&[f64]> = task.init_samples().map(|s| s.features.as_slice()).collect();
        buffer.append_task_captions(t, &captioner as &dyn Captioner, &batch)?;

        let mut rng = rng_from(derive_seed(config.seed, "tp-init", t as u64));
        let current = match tp.take() {
            None => TaskPredictor::new(stream.feature_len(), &config.predictor.hidden, 1, &mut rng)?,
            Some(p) => p.expand_head(t, &mut rng)?,
        };
        let data = build_tp_training_set(buffer.records(), &generator, config.predictor.generations_per_caption, t as u64)?;
        let (trained, trace) = train_tp(current, &data, &config.predictor, t as u64)?;

        let mut row = Vec::new();
        for j in 1..=t {
            let test = stream.test_set(j);
            let mut hits = 0;
            for s in test {
                hits += usize::from(trained.predict_task(&s.features)? == j);
            }
            row.push(format!("{:.3}", hits as f64 / test.len() as f64));
        }
        println!(
            "after task {t}: {} pseudo-samples, final loss {:.4}, routing {}",
            data.len(),
            trace.epoch_losses.last().copied().unwrap_or(f64::NAN),
            row.join(" ")
        );
        tp = Some(trained);
    }
    Ok(())
}
