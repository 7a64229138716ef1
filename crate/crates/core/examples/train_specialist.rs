//! Trains the specialist of the first task (VAE, clustering of its latent
//! means, cluster-to-class lookup) and scores it on that task's test set.
//!
//! cargo run --release --example train_specialist

use clts::oracles::{CaptionBuffer, ProceduralCaptioner};
use clts::pipeline::{build_stream, ExperimentConfig};
use clts::specialist::train_specialist;
use clts::stream::AccessLog;

fn main() -> clts::Result<()> {
    let config = ExperimentConfig::default();
    let stream = build_stream(&config)?;
    let captioner = ProceduralCaptioner::new(config.dataset.templates())?;
    let mut buffer = CaptionBuffer::new(config.caption_batch_size);

    let log = AccessLog::new();
    let mut cursor = stream.cursor(&log);
    let lease = cursor.next_task().expect("stream has tasks");
    let ts = train_specialist(&lease, &config.specialist, &captioner, &mut buffer, config.seed)?;

    let r = ts.report();
    println!("task {} classes {:?}", ts.task_id(), ts.classes());
    println!("L_VAE {:.4}  L_clust {:.4}  L_TS {:.4}", r.l_vae, r.l_clust, r.l_ts);
    println!("k-means converged in {} iterations, {} re-seeds", r.kmeans_iterations, r.kmeans_reseeds);
    for cluster in 0..ts.lookup().len() {
        println!("cluster {cluster} -> class {}", ts.lookup().class_of(cluster));
    }

    let test = stream.test_set(1);
    let mut hits = 0;
    for s in test {
        hits += usize::from(ts.classify(&s.features)? == s.label);
    }
    println!("own-task accuracy {:.3} on {} test samples", hits as f64 / test.len() as f64, test.len());
    println!("{} captions stored", buffer.len());
    Ok(())
}
