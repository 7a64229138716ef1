//! K-Means with k-means++ restarts on three Gaussian blobs, then a
//! majority-vote lookup from a few labelled points.
//!
//! cargo run --example kmeans

use clts::clustering::{build_lookup, clustering_loss, kmeans_fit};
use clts::rng::rng_from;
use rand_distr::{Distribution, Normal};

fn main() -> clts::Result<()> {
    let mut rng = rng_from(3);
    let noise = Normal::new(0.0, 0.3).expect("valid std");
    let centres = [(0.0, 0.0, 10u32), (3.0, 0.0, 11), (0.0, 3.0, 12)];
    let mut points = Vec::new();
    let mut labelled = Vec::new();
    for &(x, y, class) in &centres {
        for i in 0..40 {
            let p = vec![x + noise.sample(&mut rng), y + noise.sample(&mut rng)];
            if i < 5 {
                labelled.push((p.clone(), class));
            }
            points.push(p);
        }
    }

    let fit = kmeans_fit(&points, 3, 42)?;
    println!("best of restarts: #{} after {} iterations", fit.restart, fit.iterations);
    let trace: Vec<String> = fit.wcss_trace.iter().map(|w| format!("{w:.4}")).collect();
    println!("WCSS per iteration: {}", trace.join(" > "));
    println!("mean squared distance {:.4}", clustering_loss(&fit.centroids, &points)?);

    let classes: Vec<u32> = centres.iter().map(|c| c.2).collect();
    let lookup = build_lookup(&fit.centroids, &labelled, &classes)?;
    for (id, c) in fit.centroids.vectors().iter().enumerate() {
        println!("cluster {id} at ({:.2}, {:.2}) -> class {}", c[0], c[1], lookup.class_of(id));
    }
    let probe = [2.8, 0.2];
    println!("point {probe:?} -> class {}", lookup.class_of(fit.centroids.assign(&probe)?));
    Ok(())
}
