//! Central-difference gradient checks on random small networks, once clean
//! and once with a corrupted backward pass.
//!
//! cargo run --release --example gradient_check

use clts::cli::render_checks;
use clts::diagnostics::{check_predictor_gradient, run_checks, FaultInjection};

fn main() {
    print!("{}", render_checks(&run_checks(10, None)));

    let fault = FaultInjection::new("layer2.bias");
    let report = check_predictor_gradient(0, Some(&fault));
    println!("\nwith {} corrupted:", fault.block);
    for b in &report.blocks {
        println!(
            "  {:<16} max relative error {:.2e} (analytic {:+.5}, numeric {:+.5})",
            b.name, b.max_relative_error, b.analytic, b.numeric
        );
    }
    println!("failing blocks: {:?}", report.failing_blocks());
}
