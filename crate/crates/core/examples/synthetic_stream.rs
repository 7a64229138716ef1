//! Builds the default synthetic class-incremental stream and draws one
//! sample per class as ASCII art.
//!
//! cargo run --example synthetic_stream

use clts::pipeline::{build_stream, ExperimentConfig};
use clts::stream::min_class_separation;

const SHADES: &[u8] = b" .:-=+*#%@";

fn ascii(features: &[f64], width: usize) -> String {
    features
        .chunks(width)
        .map(|row| {
            row.iter()
                .map(|&v| SHADES[((v * (SHADES.len() - 1) as f64).round() as usize).min(SHADES.len() - 1)] as char)
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn main() -> clts::Result<()> {
    let config = ExperimentConfig::default();
    let stream = build_stream(&config)?;
    let width = config.dataset.templates().width;

    println!("{} tasks, {} features per sample", stream.len(), stream.feature_len());
    for task in stream.tasks() {
        println!(
            "task {}: classes {:?}, {} train / {} test, {} labelled",
            task.task_id,
            task.classes,
            task.train.len(),
            task.test.len(),
            task.init_batch.len()
        );
    }
    let all: Vec<_> = stream.tasks().iter().flat_map(|t| t.train.iter().cloned()).collect();
    println!("closest class means are {:.3} apart\n", min_class_separation(&all));

    for task in stream.tasks() {
        for &class in &task.classes {
            let sample = task.train.iter().find(|s| s.label == class).expect("class has samples");
            println!("class {class}\n{}\n", ascii(&sample.features, width));
        }
    }
    Ok(())
}
