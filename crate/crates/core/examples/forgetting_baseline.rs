//! Naive sequential fine-tuning next to the captioned-replay learner on the
//! same stream: the baseline forgets the first task, the replay learner
//! does not.
//!
//! cargo run --release --example forgetting_baseline -- [repetitions]

use clts::pipeline::{build_stream, run_clts, run_naive_baseline, AccuracyMatrix, ExperimentConfig};

fn show(name: &str, m: &AccuracyMatrix) {
    println!("{name}");
    for (i, row) in m.rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|a| format!("{a:.3}")).collect();
        println!("  after task {}: {}", i + 1, cells.join("  "));
    }
    println!("  task 1 drop: {:.3}", m.forgetting(1).unwrap_or(f64::NAN));
}

fn main() -> clts::Result<()> {
    let repetitions = std::env::args().nth(1).map_or(1, |r| r.parse().expect("repetitions must be an integer"));
    let config = ExperimentConfig {
        repetitions,
        ..ExperimentConfig::default()
    };
    let stream = build_stream(&config)?;
    let baseline = run_naive_baseline(&stream, &config)?;
    let clts = run_clts(&stream, &config)?;
    show("naive fine-tuning", &baseline.mean_matrix);
    show("caption replay", &clts.mean_matrix);
    println!("ACC {:.3} vs {:.3}", baseline.acc.mean, clts.acc.mean);
    Ok(())
}
