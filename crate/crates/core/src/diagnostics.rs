//! Self-checks behind `clts check`: finite-difference gradient checks on
//! small random networks and round trips through the procedural oracles.

use rand::Rng as _;
use serde::Serialize;

use crate::nn::{grad_check, Activation, GradCheckReport, Mlp, Parameterized, Tensor, DEFAULT_STEP};
use crate::oracles::{
    CaptionBuffer, CaptionParams, Captioner, Generator, ProceduralCaptioner, ProceduralGenerator,
    TemplateRegistry,
};
use crate::predictor::TaskPredictor;
use crate::rng::{derived_rng, Rng};
use crate::vae::{standard_normal, VaeConfig, VaeParams};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    /// Largest relative gradient error over every network in the suite.
    pub max_relative_error: Option<f64>,
    pub detail: String,
}

/// Adds `amount` to the first analytic gradient entry of the block named
/// `block`, to prove the checker notices a broken backward pass.
#[derive(Clone, Debug)]
pub struct FaultInjection {
    pub block: String,
    pub amount: f64,
}

impl FaultInjection {
    pub fn new(block: impl Into<String>) -> Self {
        FaultInjection {
            block: block.into(),
            amount: 0.1,
        }
    }

    fn apply<M: Parameterized>(&self, model: &M, grads: &mut [Tensor]) {
        for ((name, _), g) in model.parameters().iter().zip(grads.iter_mut()) {
            if *name == self.block && !g.is_empty() {
                g.data_mut()[0] += self.amount;
            }
        }
    }
}

/// Zero biases can leave a relu exactly at its kink when a whole layer is
/// dead, where central differences and the analytic gradient disagree.
fn randomize_biases<M: Parameterized>(model: &mut M, rng: &mut Rng) {
    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(model.parameters_mut()) {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
        }
    }
}

fn random_batch(rng: &mut Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..dim).map(|_| rng.random_range(0.05..0.95)).collect())
        .collect()
}

/// Central differences straddle a relu kink when a pre-activation lies
/// within the step of zero; inputs closer than this are redrawn.
const KINK_MARGIN: f64 = 1e-3;

/// Smallest |pre-activation| over the first `layers` layers of `net` at `x`.
fn kink_distance(net: &Mlp, x: &[f64], layers: usize) -> f64 {
    let trace = net.forward_trace(x).expect("shapes match");
    trace.pre[..layers].iter().flatten().fold(f64::INFINITY, |m, z| m.min(z.abs()))
}

/// Gradient check of one random VAE with the given hidden activation.
pub fn check_vae_gradient(seed: u64, activation: Activation, fault: Option<&FaultInjection>) -> GradCheckReport {
    let mut rng = derived_rng(seed, "check-vae", 0);
    let latent_dim = rng.random_range(1..3);
    let input = 4 * latent_dim + rng.random_range(0..3);
    let config = VaeConfig {
        hidden: vec![rng.random_range(3..7), rng.random_range(2..6)],
        latent_dim,
        hidden_activation: activation,
        beta: rng.random_range(0.5..2.0),
        ..VaeConfig::default()
    };
    let mut params = VaeParams::init(input, &config, &mut rng).expect("valid small config");
    let (data, noise) = loop {
        randomize_biases(&mut params, &mut rng);
        let data = random_batch(&mut rng, 3, input);
        let noise: Vec<Vec<f64>> = (0..data.len()).map(|_| standard_normal(&mut rng, latent_dim)).collect();
        let clear = activation != Activation::Relu
            || data.iter().zip(&noise).all(|(x, e)| {
                let z = params.encode(x, e).expect("shapes match").sample;
                kink_distance(&params.encoder, x, params.encoder.layers.len()) > KINK_MARGIN
                    && kink_distance(&params.decoder, &z, params.decoder.layers.len() - 1) > KINK_MARGIN
            });
        if clear {
            break (data, noise);
        }
    };
    let batch: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    grad_check(
        &params,
        |m| {
            let (loss, mut grads) = m.loss_and_grad(&batch, &noise).expect("shapes match");
            if let Some(f) = fault {
                f.apply(m, &mut grads);
            }
            (loss.total, grads)
        },
        DEFAULT_STEP,
        GRADIENT_TOLERANCE,
    )
}

/// Gradient check of one random task predictor on its cross-entropy loss.
pub fn check_predictor_gradient(seed: u64, fault: Option<&FaultInjection>) -> GradCheckReport {
    let mut rng = derived_rng(seed, "check-tp", 0);
    let input = rng.random_range(3..7);
    let tasks = rng.random_range(2..5);
    let hidden = [rng.random_range(3..8), rng.random_range(2..6)];
    let mut tp = TaskPredictor::new(input, &hidden, tasks, &mut rng).expect("valid small config");
    let hidden_layers = tp.network().layers.len() - 1;
    let data = loop {
        randomize_biases(&mut tp, &mut rng);
        let data = random_batch(&mut rng, 4, input);
        if data.iter().all(|x| kink_distance(tp.network(), x, hidden_layers) > KINK_MARGIN) {
            break data;
        }
    };
    let labels: Vec<usize> = (0..data.len()).map(|_| rng.random_range(1..=tasks)).collect();
    let batch: Vec<(&[f64], usize)> = data.iter().map(Vec::as_slice).zip(labels).collect();
    grad_check(
        &tp,
        |m| {
            let (loss, mut grads) = m.loss_and_grad(&batch).expect("shapes match");
            if let Some(f) = fault {
                f.apply(m, &mut grads);
            }
            (loss, grads)
        },
        DEFAULT_STEP,
        GRADIENT_TOLERANCE,
    )
}

fn gradient_row<F>(name: &str, networks: u64, check: F) -> CheckRow
where
    F: Fn(u64) -> GradCheckReport,
{
    let mut worst: Option<(u64, GradCheckReport)> = None;
    for seed in 0..networks {
        let report = check(seed);
        if worst.as_ref().is_none_or(|(_, w)| !(report.max_relative_error <= w.max_relative_error)) {
            worst = Some((seed, report));
        }
    }
    let (seed, report) = worst.expect("at least one network");
    let failing = report.failing_blocks();
    let detail = if failing.is_empty() {
        format!("{networks} networks, worst block {}", report.worst_block().unwrap_or("-"))
    } else {
        format!("network {seed}: gradient mismatch in {}", failing.join(", "))
    };
    CheckRow {
        name: name.into(),
        passed: report.passed,
        max_relative_error: Some(report.max_relative_error),
        detail,
    }
}

/// Every grid point of every template is rendered, captioned, parsed and
/// regenerated without noise; the caption must come back unchanged.
pub fn check_caption_round_trip(registry: &TemplateRegistry) -> CheckRow {
    let outcome = (|| -> crate::Result<usize> {
        let captioner = ProceduralCaptioner::new(registry)?;
        let generator = ProceduralGenerator::new(registry.clone(), 0.0)?;
        let mut count = 0;
        for t in &registry.templates {
            for a in t.params[0].values() {
                for b in t.params[1].values() {
                    let expected = CaptionParams {
                        class: t.class,
                        params: vec![a, b],
                    }
                    .to_caption()?;
                    let caption = captioner.caption(&registry.render(t.pattern, [a, b]))?;
                    let again = captioner.caption(&generator.generate(&caption, count as u64)?)?;
                    if caption != expected || again != expected {
                        return Err(crate::CltsError::Contract(format!(
                            "{} came back as {} then {}",
                            expected.as_str(),
                            caption.as_str(),
                            again.as_str()
                        )));
                    }
                    count += 1;
                }
            }
        }
        Ok(count)
    })();
    match outcome {
        Ok(n) => CheckRow {
            name: "caption round trip".into(),
            passed: true,
            max_relative_error: None,
            detail: format!("{n} grid points"),
        },
        Err(e) => CheckRow {
            name: "caption round trip".into(),
            passed: false,
            max_relative_error: None,
            detail: e.to_string(),
        },
    }
}

/// The generator must be a pure function of caption and seed.
pub fn check_generator_determinism(registry: &TemplateRegistry) -> CheckRow {
    let outcome = (|| -> crate::Result<bool> {
        let generator = ProceduralGenerator::new(registry.clone(), 0.05)?;
        let t = &registry.templates[0];
        let caption = CaptionParams {
            class: t.class,
            params: vec![t.params[0].value(0), t.params[1].value(0)],
        }
        .to_caption()?;
        let same = (0..8).try_fold(true, |ok, seed| {
            Ok::<_, crate::CltsError>(ok && generator.generate(&caption, seed)? == generator.generate(&caption, seed)?)
        })?;
        let differs = generator.generate(&caption, 1)? != generator.generate(&caption, 2)?;
        Ok(same && differs)
    })();
    CheckRow {
        name: "generator determinism".into(),
        passed: matches!(outcome, Ok(true)),
        max_relative_error: None,
        detail: match outcome {
            Ok(true) => "same seed, same sample".into(),
            Ok(false) => "seeded generation is not reproducible".into(),
            Err(e) => e.to_string(),
        },
    }
}

/// Captions written as JSON lines must read back identically.
pub fn check_buffer_round_trip(registry: &TemplateRegistry) -> CheckRow {
    let outcome = (|| -> crate::Result<usize> {
        let captioner = ProceduralCaptioner::new(registry)?;
        let mut buffer = CaptionBuffer::new(2);
        for (task, pair) in registry.templates.chunks(2).enumerate() {
            let samples: Vec<Vec<f64>> = pair
                .iter()
                .map(|t| registry.render(t.pattern, [t.params[0].value(0), t.params[1].value(0)]))
                .collect();
            let refs: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
            buffer.append_task_captions(task + 1, &captioner, &refs)?;
        }
        let dir = std::env::temp_dir().join(format!("clts-check-{}", std::process::id()));
        std::fs::create_dir_all(&dir).map_err(|e| crate::CltsError::io(&dir, e))?;
        let path = dir.join("captions.jsonl");
        buffer.write_jsonl(&path)?;
        let back = CaptionBuffer::read_jsonl(&path, buffer.batch_size());
        let _ = std::fs::remove_dir_all(&dir);
        let back = back?;
        if back.records() != buffer.records() {
            return Err(crate::CltsError::Contract("caption buffer changed on disk".into()));
        }
        Ok(buffer.len())
    })();
    CheckRow {
        name: "caption buffer round trip".into(),
        passed: outcome.is_ok(),
        max_relative_error: None,
        detail: match outcome {
            Ok(n) => format!("{n} records"),
            Err(e) => e.to_string(),
        },
    }
}

/// Runs every check. `networks` random nets are drawn per gradient suite.
pub fn run_checks(networks: u64, fault: Option<&FaultInjection>) -> Vec<CheckRow> {
    let registry = TemplateRegistry::default();
    vec![
        gradient_row("vae gradient (relu)", networks, |s| check_vae_gradient(s, Activation::Relu, fault)),
        gradient_row("vae gradient (tanh)", networks, |s| check_vae_gradient(s, Activation::Tanh, fault)),
        gradient_row("predictor gradient", networks, |s| check_predictor_gradient(s, fault)),
        check_caption_round_trip(&registry),
        check_generator_determinism(&registry),
        check_buffer_round_trip(&registry),
    ]
}
