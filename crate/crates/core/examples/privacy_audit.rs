//! Runs one repetition, writes every output and walks the files to confirm
//! that no raw sample was persisted. A planted raw sample is caught.
//!
//! cargo run --release --example privacy_audit

use clts::pipeline::{audit_persisted_state, build_stream, run_clts_detailed, write_run_outputs, ExperimentConfig};

fn main() -> clts::Result<()> {
    let config = ExperimentConfig {
        repetitions: 1,
        ..ExperimentConfig::default()
    };
    let stream = build_stream(&config)?;
    let run = run_clts_detailed(&stream, &config)?;
    let dir = std::env::temp_dir().join("clts-privacy-audit");
    let _ = std::fs::remove_dir_all(&dir);
    write_run_outputs(&dir, &run)?;

    let audit = audit_persisted_state(&dir, &stream)?;
    println!(
        "{} files, {} numeric arrays checked, {} violations",
        audit.files_checked,
        audit.arrays_checked,
        audit.violations.len()
    );

    let leaked = serde_json::json!({ "vectors": [stream.tasks()[0].train[0].features] });
    std::fs::write(dir.join("checkpoints/task-1/centroids.json"), leaked.to_string()).expect("writable");
    let audit = audit_persisted_state(&dir, &stream)?;
    for v in &audit.violations {
        println!("planted leak found: {v}");
    }
    Ok(())
}
