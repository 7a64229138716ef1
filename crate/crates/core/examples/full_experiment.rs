//! Full class-incremental run on the synthetic stream.
//!
//! cargo run --release --example full_experiment -- [repetitions] [out-dir]

use std::path::PathBuf;

use clts::pipeline::{build_stream, run_clts_detailed, write_run_outputs, ExperimentConfig};

fn main() -> clts::Result<()> {
    let mut args = std::env::args().skip(1);
    let repetitions = args.next().map_or(3, |r| r.parse().expect("repetitions must be an integer"));
    let out = args.next().map(PathBuf::from);

    let config = ExperimentConfig {
        repetitions,
        ..ExperimentConfig::default()
    };
    let stream = build_stream(&config)?;
    let run = run_clts_detailed(&stream, &config)?;
    let report = &run.report;

    println!("tasks: {:?}", report.class_sets);
    for (i, row) in report.mean_matrix.rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|a| format!("{a:.3}")).collect();
        println!("after task {}: {}", i + 1, cells.join("  "));
    }
    let std = report.acc.std.map_or("n/a".to_string(), |s| format!("{s:.4}"));
    println!("ACC {:.4} ± {std} over {} repetitions", report.acc.mean, repetitions);
    if let Some(routing) = &report.routing_accuracy {
        let r: Vec<String> = routing.iter().map(|s| format!("{:.3}", s.mean)).collect();
        println!("routing accuracy per task: {}", r.join("  "));
    }
    let total: f64 = run.timings.iter().map(|t| t.seconds).sum();
    println!("wall clock: {total:.1}s");

    if let Some(dir) = out {
        write_run_outputs(&dir, &run)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
