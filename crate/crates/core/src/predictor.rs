//! Task predictor: routes a sample to a specialist by predicting its task id.
//! Trained only on generator output paired with pseudo labels.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::ParamFile;
use crate::error::{CltsError, Result};
use crate::nn::{argmax, Activation, Adam, DenseLayer, Mlp, Parameterized, Tensor};
use crate::oracles::{CaptionRecord, Generator};
use crate::rng::{derive_seed, derived_rng, Rng};

/// Probabilities below this are clamped before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub generations_per_caption: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            hidden: vec![256, 128],
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            generations_per_caption: 4,
        }
    }
}

/// A generated sample labelled with the task id (≥ 1) of its caption.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoSample {
    pub features: Vec<f64>,
    pub task: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskPredictor {
    net: Mlp,
}

impl TaskPredictor {
    /// Relu hidden layers and a softmax head of width `tasks`.
    pub fn new(input_dim: usize, hidden: &[usize], tasks: usize, rng: &mut Rng) -> Result<Self> {
        if input_dim == 0 || tasks == 0 || hidden.contains(&0) {
            return Err(CltsError::Config("predictor widths must be positive".into()));
        }
        let mut widths = vec![input_dim];
        widths.extend(hidden);
        widths.push(tasks);
        Ok(TaskPredictor {
            net: Mlp::init(&widths, Activation::Relu, Activation::Softmax, rng),
        })
    }

    pub fn from_network(net: Mlp) -> Result<Self> {
        if net.layers.last().map(|l| l.activation) != Some(Activation::Softmax) {
            return Err(CltsError::Contract("predictor head must end in softmax".into()));
        }
        Ok(TaskPredictor { net })
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn tasks(&self) -> usize {
        self.net.out_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(x)
    }

    /// Most probable task id (1-based); ties go to the lowest id.
    pub fn predict_task(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.probabilities(x)?) + 1)
    }

    /// Widens the head to `tasks` outputs. Existing output rows and all
    /// earlier layers are kept; new rows are freshly initialized.
    pub fn expand_head(&self, tasks: usize, rng: &mut Rng) -> Result<Self> {
        let width = self.tasks();
        if tasks <= width {
            return Err(CltsError::Contract(format!(
                "predictor head cannot go from {width} to {tasks} outputs"
            )));
        }
        let old = self.net.layers.last().expect("non-empty network");
        let fresh = DenseLayer::init(old.in_dim(), tasks, Activation::Softmax, rng);
        let mut weights = old.weights.data().to_vec();
        weights.extend_from_slice(&fresh.weights.data()[width * old.in_dim()..]);
        let mut bias = old.bias.data().to_vec();
        bias.extend_from_slice(&fresh.bias.data()[width..]);
        let head = DenseLayer::new(
            Tensor::new(vec![tasks, old.in_dim()], weights)?,
            Tensor::vector(bias),
            Activation::Softmax,
        )?;
        let mut layers = self.net.layers.clone();
        *layers.last_mut().expect("non-empty network") = head;
        Ok(TaskPredictor { net: Mlp::new(layers)? })
    }

    /// Mean cross-entropy over `batch` (1-based task ids) and its gradient.
    pub fn loss_and_grad(&self, batch: &[(&[f64], usize)]) -> Result<(f64, Vec<Tensor>)> {
        let mut zero_based = Vec::with_capacity(batch.len());
        for &(x, task) in batch {
            self.check_label(task)?;
            zero_based.push((x, task - 1));
        }
        softmax_cross_entropy(&self.net, &zero_based)
    }

    fn check_label(&self, task: usize) -> Result<()> {
        if task == 0 || task > self.tasks() {
            return Err(CltsError::Contract(format!(
                "pseudo label {task} outside 1..={}",
                self.tasks()
            )));
        }
        Ok(())
    }

    pub fn to_param_file(&self) -> ParamFile {
        let mut f = ParamFile::new("task_predictor");
        f.meta.insert("input_dim".into(), self.input_dim());
        f.meta.insert("tasks".into(), self.tasks());
        f.push_mlp("net", &self.net);
        f
    }

    pub fn from_param_file(mut f: ParamFile) -> Result<Self> {
        f.expect_kind("task_predictor")?;
        let tp = TaskPredictor::from_network(f.take_mlp("net")?)?;
        if tp.input_dim() != f.meta("input_dim")? || tp.tasks() != f.meta("tasks")? {
            return Err(CltsError::Contract("predictor metadata disagrees with tensor shapes".into()));
        }
        f.finish()?;
        Ok(tp)
    }
}

impl Parameterized for TaskPredictor {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.parameters_mut()
    }
}

/// Mean cross-entropy of a softmax-headed network over `(x, class index)`
/// pairs. The softmax and the log are differentiated together, giving
/// `p − onehot` at the logits.
pub fn softmax_cross_entropy(net: &Mlp, batch: &[(&[f64], usize)]) -> Result<(f64, Vec<Tensor>)> {
    let mut grads = net.zero_grads();
    let mut total = 0.0;
    for &(x, index) in batch {
        let trace = net.forward_trace(x)?;
        if index >= trace.output.len() {
            return Err(CltsError::dimension("cross-entropy target", trace.output.len(), index + 1));
        }
        total += -trace.output[index].max(PROBABILITY_FLOOR).ln();
        let mut delta = trace.output.clone();
        delta[index] -= 1.0;
        net.backward_from_delta(&trace, delta, &mut grads);
    }
    let n = batch.len().max(1) as f64;
    grads.iter_mut().for_each(|g| g.scale(1.0 / n));
    Ok((total / n, grads))
}

/// `−ln p[task]` for a 1-based task id, with `p` clamped at
/// [`PROBABILITY_FLOOR`].
pub fn tp_loss(predicted: &[f64], task: usize) -> f64 {
    -predicted[task - 1].max(PROBABILITY_FLOOR).ln()
}

/// Draws `generations_per_caption` samples per record, each labelled with
/// the record's task id. Raw task data is never consulted.
pub fn build_tp_training_set(
    records: &[CaptionRecord],
    generator: &dyn Generator,
    generations_per_caption: usize,
    seed: u64,
) -> Result<Vec<PseudoSample>> {
    if records.is_empty() {
        return Err(CltsError::Coverage("caption buffer is empty".into()));
    }
    let mut out = Vec::with_capacity(records.len() * generations_per_caption);
    for (i, r) in records.iter().enumerate() {
        for g in 0..generations_per_caption {
            let s = derive_seed(seed, "tp-generate", (i * generations_per_caption + g) as u64);
            out.push(PseudoSample {
                features: generator.generate(&r.caption, s)?,
                task: r.task,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TpTrace {
    /// Mean loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Training samples whose true-label probability ends below the floor.
    pub clamped: usize,
}

/// Mini-batch Adam on the cross-entropy of pseudo labels.
pub fn train_tp(
    mut tp: TaskPredictor,
    data: &[PseudoSample],
    config: &PredictorConfig,
    seed: u64,
) -> Result<(TaskPredictor, TpTrace)> {
    if config.batch_size == 0 {
        return Err(CltsError::Config("predictor batch size must be positive".into()));
    }
    for task in 1..=tp.tasks() {
        if !data.iter().any(|s| s.task == task) {
            return Err(CltsError::Coverage(format!("no training sample carries pseudo label {task}")));
        }
    }
    if let Some(s) = data.iter().find(|s| s.task == 0 || s.task > tp.tasks()) {
        return Err(CltsError::Coverage(format!(
            "pseudo label {} has no predictor output",
            s.task
        )));
    }
    let mut opt = Adam::new(config.learning_rate, &tp)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TpTrace::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut derived_rng(seed, "tp-shuffle", epoch as u64));
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (data[i].features.as_slice(), data[i].task))
                .collect();
            let diverged = |e: CltsError| CltsError::Training {
                epoch,
                message: e.to_string(),
            };
            let (loss, grads) = tp.loss_and_grad(&batch).map_err(diverged)?;
            if !loss.is_finite() {
                return Err(CltsError::Training {
                    epoch,
                    message: "predictor loss is not finite".into(),
                });
            }
            opt.step(&mut tp, &grads).map_err(diverged)?;
            sum += loss * chunk.len() as f64;
        }
        trace.epoch_losses.push(sum / data.len() as f64);
    }
    for s in data {
        if tp.probabilities(&s.features)?[s.task - 1] < PROBABILITY_FLOOR {
            trace.clamped += 1;
        }
    }
    Ok((tp, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, DEFAULT_STEP};
    use crate::oracles::{Caption, ProceduralGenerator, TemplateRegistry};
    use crate::rng::rng_from;

    fn record(task: usize, caption: &str) -> CaptionRecord {
        CaptionRecord {
            task,
            caption: Caption::new(caption).unwrap(),
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(tp_loss(&[1.0, 0.0], 1), 0.0);
        assert!((tp_loss(&[0.5, 0.5], 2) - 2f64.ln()).abs() < 1e-15);
        assert!((tp_loss(&[0.1; 10], 7) - 10f64.ln()).abs() < 1e-12);
        assert!((tp_loss(&[1.0, 0.0], 2) - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn single_task_predictor() {
        let tp = TaskPredictor::new(4, &[5], 1, &mut rng_from(0)).unwrap();
        assert_eq!(tp.predict_task(&[0.3, 0.1, 0.9, 0.2]).unwrap(), 1);
        assert_eq!(tp.probabilities(&[0.0; 4]).unwrap(), vec![1.0]);
        let data = vec![
            PseudoSample {
                features: vec![0.5; 4],
                task: 1
            };
            8
        ];
        let (_, trace) = train_tp(tp, &data, &PredictorConfig::default(), 0).unwrap();
        assert!(trace.epoch_losses.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn expansion_keeps_old_rows() {
        let tp = TaskPredictor::new(6, &[5, 4], 2, &mut rng_from(1)).unwrap();
        let wide = tp.expand_head(3, &mut rng_from(2)).unwrap();
        assert_eq!(wide.tasks(), 3);
        let (old, new) = (tp.network().layers.last().unwrap(), wide.network().layers.last().unwrap());
        assert_eq!(&new.weights.data()[..8], old.weights.data());
        assert_eq!(&new.bias.data()[..2], old.bias.data());
        assert_eq!(tp.network().layers[..2], wide.network().layers[..2]);
        let p = wide.probabilities(&[0.2; 6]).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(matches!(wide.expand_head(2, &mut rng_from(0)), Err(CltsError::Contract(_))));
        assert!(wide.expand_head(3, &mut rng_from(0)).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let mut rng = rng_from(9);
        let tp = TaskPredictor::new(5, &[7, 6], 4, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..6).map(|i| (0..5).map(|j| ((i * 5 + j) as f64 * 0.37).sin()).collect()).collect();
        let batch: Vec<(&[f64], usize)> = xs.iter().enumerate().map(|(i, x)| (x.as_slice(), i % 4 + 1)).collect();
        let report = grad_check(&tp, |m| m.loss_and_grad(&batch).unwrap(), DEFAULT_STEP, 1e-4);
        assert!(report.passed, "{:?}", report.worst_block());
    }

    #[test]
    fn training_set_counts() {
        let generator = ProceduralGenerator::new(TemplateRegistry::default(), 0.05).unwrap();
        let recs: Vec<CaptionRecord> = (0..64).map(|_| record(1, "class=0;params=0.250,0.600")).collect();
        let set = build_tp_training_set(&recs, &generator, 4, 0).unwrap();
        assert_eq!(set.len(), 256);
        assert!(set.iter().all(|s| s.task == 1));

        let recs: Vec<CaptionRecord> = (1..=5).flat_map(|t| (0..3).map(move |_| record(t, "class=2;params=0.500,0.700"))).collect();
        let set = build_tp_training_set(&recs, &generator, 2, 0).unwrap();
        for t in 1..=5 {
            assert_eq!(set.iter().filter(|s| s.task == t).count(), 6);
        }
    }

    #[test]
    fn generation_failure_quotes_caption() {
        let generator = ProceduralGenerator::new(TemplateRegistry::default(), 0.05).unwrap();
        let err = build_tp_training_set(&[record(1, "class=77;params=0.1,0.1")], &generator, 1, 0).unwrap_err();
        assert!(err.to_string().contains("class=77"), "{err}");
    }

    #[test]
    fn coverage_is_enforced() {
        let tp = TaskPredictor::new(3, &[4], 2, &mut rng_from(0)).unwrap();
        let data = vec![PseudoSample {
            features: vec![0.0; 3],
            task: 1,
        }];
        assert!(matches!(
            train_tp(tp, &data, &PredictorConfig::default(), 0),
            Err(CltsError::Coverage(_))
        ));
    }

    #[test]
    fn param_file_roundtrip() {
        let tp = TaskPredictor::new(6, &[5], 3, &mut rng_from(4)).unwrap();
        let json = serde_json::to_string(&tp.to_param_file()).unwrap();
        let back = TaskPredictor::from_param_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, tp);
    }

    #[test]
    fn argmax_ignores_logit_shift() {
        let tp = TaskPredictor::new(3, &[4], 3, &mut rng_from(5)).unwrap();
        let mut shifted = tp.clone();
        shifted.net.layers.last_mut().unwrap().bias.data_mut().iter_mut().for_each(|b| *b += 3.5);
        for i in 0..20 {
            let x = [i as f64 * 0.1, 1.0 - i as f64 * 0.05, 0.3];
            assert_eq!(tp.predict_task(&x).unwrap(), shifted.predict_task(&x).unwrap());
        }
    }
}
