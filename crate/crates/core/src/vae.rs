//! Per-task variational autoencoder.
//!
//! Encoder trunk → parallel mean / log-variance heads → reparameterized
//! latent → decoder with a sigmoid output. The loss is per-sample binary
//! cross-entropy summed over features plus `β·KL(q(z|x) ‖ N(0, I))`, both
//! averaged over the batch.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::ParamFile;
use crate::error::{CltsError, Result};
use crate::nn::{softplus, Activation, Adam, DenseLayer, Mlp, Parameterized, Tensor};
use crate::rng::{derived_rng, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub hidden_activation: Activation,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            hidden: vec![128, 64],
            latent_dim: 8,
            hidden_activation: Activation::Relu,
            beta: 1.0,
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams {
    pub encoder: Mlp,
    pub mean_head: DenseLayer,
    pub logvar_head: DenseLayer,
    pub decoder: Mlp,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
    pub sample: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

impl VaeParams {
    pub fn init(input_dim: usize, config: &VaeConfig, rng: &mut Rng) -> Result<Self> {
        let d = config.latent_dim;
        if d == 0 || d > input_dim / 4 {
            return Err(CltsError::Config(format!(
                "latent dim {d} must be in 1..={} for input dim {input_dim}",
                input_dim / 4
            )));
        }
        if config.hidden.is_empty() || config.hidden.contains(&0) {
            return Err(CltsError::Config("VAE hidden widths must be positive".into()));
        }
        let act = config.hidden_activation;
        let mut enc_widths = vec![input_dim];
        enc_widths.extend(&config.hidden);
        let encoder = Mlp::init(&enc_widths, act, act, rng);
        let top = *config.hidden.last().expect("non-empty");
        let mean_head = DenseLayer::init(top, d, Activation::Identity, rng);
        let logvar_head = DenseLayer::init(top, d, Activation::Identity, rng);
        let mut dec_widths = vec![d];
        dec_widths.extend(config.hidden.iter().rev());
        dec_widths.push(input_dim);
        let decoder = Mlp::init(&dec_widths, act, Activation::Sigmoid, rng);
        Ok(VaeParams {
            encoder,
            mean_head,
            logvar_head,
            decoder,
            beta: config.beta,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.out_dim()
    }

    fn heads(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.encoder.forward(x)?;
        Ok((self.mean_head.forward(&h)?, self.logvar_head.forward(&h)?))
    }

    /// Encodes `x` using the supplied standard-normal draw for the
    /// reparameterized sample.
    pub fn encode(&self, x: &[f64], noise: &[f64]) -> Result<LatentCode> {
        if noise.len() != self.latent_dim() {
            return Err(CltsError::dimension("VAE noise draw", self.latent_dim(), noise.len()));
        }
        let (mean, log_var) = self.heads(x)?;
        let sample = reparameterize(&mean, &log_var, noise);
        Ok(LatentCode {
            mean,
            log_var,
            sample,
        })
    }

    pub fn encode_seeded(&self, x: &[f64], seed: u64) -> Result<LatentCode> {
        let mut rng = crate::rng::rng_from(seed);
        let noise = standard_normal(&mut rng, self.latent_dim());
        self.encode(x, &noise)
    }

    /// Deterministic embedding used for clustering and inference.
    pub fn encode_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.encoder.forward(x)?;
        self.mean_head.forward(&h)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(CltsError::dimension("VAE decoder input", self.latent_dim(), z.len()));
        }
        self.decoder.forward(z)
    }

    /// Mean squared error of the mean-path reconstruction.
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64> {
        let y = self.decode(&self.encode_mean(x)?)?;
        Ok(y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
    }

    pub fn loss(&self, batch: &[&[f64]], noise: &[Vec<f64>]) -> Result<VaeLoss> {
        Ok(self.loss_and_grad_inner(batch, noise, false)?.0)
    }

    /// Batch loss and its gradient, aligned with [`Parameterized::parameters`].
    pub fn loss_and_grad(&self, batch: &[&[f64]], noise: &[Vec<f64>]) -> Result<(VaeLoss, Vec<Tensor>)> {
        let (loss, grads) = self.loss_and_grad_inner(batch, noise, true)?;
        Ok((loss, grads.expect("gradients requested")))
    }

    fn loss_and_grad_inner(
        &self,
        batch: &[&[f64]],
        noise: &[Vec<f64>],
        with_grad: bool,
    ) -> Result<(VaeLoss, Option<Vec<Tensor>>)> {
        if batch.is_empty() {
            return Err(CltsError::Contract("VAE loss needs a non-empty batch".into()));
        }
        if noise.len() != batch.len() {
            return Err(CltsError::dimension("VAE noise draws", batch.len(), noise.len()));
        }
        let d = self.latent_dim();
        let n_enc = 2 * self.encoder.layers.len();
        let n_dec = 2 * self.decoder.layers.len();
        let mut grads = with_grad.then(|| self.zero_grads());
        let (mut rec_sum, mut kl_sum) = (0.0, 0.0);

        for (x, eps) in batch.iter().zip(noise) {
            if eps.len() != d {
                return Err(CltsError::dimension("VAE noise draw", d, eps.len()));
            }
            let enc = self.encoder.forward_trace(x)?;
            let h = &enc.output;
            let mu = self.mean_head.pre_activation(h);
            let lv = self.logvar_head.pre_activation(h);
            let z = reparameterize(&mu, &lv, eps);
            let dec = self.decoder.forward_trace(&z)?;
            let logits = dec.pre.last().expect("decoder has layers");

            rec_sum += logits
                .iter()
                .zip(*x)
                .map(|(&l, &t)| softplus(l) - t * l)
                .sum::<f64>();
            kl_sum += kl_term(&mu, &lv);

            let Some(grads) = grads.as_mut() else { continue };
            // d(BCE)/d(logit) = sigmoid(logit) - target
            let delta: Vec<f64> = dec.output.iter().zip(*x).map(|(y, t)| y - t).collect();
            let (g_enc, rest) = grads.split_at_mut(n_enc);
            let (g_heads, g_dec) = rest.split_at_mut(4);
            debug_assert_eq!(g_dec.len(), n_dec);
            let dz = self.decoder.backward_from_delta(&dec, delta, g_dec);

            let beta = self.beta;
            let mut d_mu = vec![0.0; d];
            let mut d_lv = vec![0.0; d];
            for k in 0..d {
                let sd = (0.5 * lv[k]).exp();
                d_mu[k] = dz[k] + beta * mu[k];
                d_lv[k] = dz[k] * eps[k] * 0.5 * sd + beta * 0.5 * (lv[k].exp() - 1.0);
            }
            let (gm, gl) = g_heads.split_at_mut(2);
            let (gmw, gmb) = gm.split_at_mut(1);
            let (glw, glb) = gl.split_at_mut(1);
            let dh_mu = self.mean_head.accumulate_from_delta(h, &d_mu, &mut gmw[0], &mut gmb[0]);
            let dh_lv = self.logvar_head.accumulate_from_delta(h, &d_lv, &mut glw[0], &mut glb[0]);
            let dh: Vec<f64> = dh_mu.iter().zip(&dh_lv).map(|(a, b)| a + b).collect();
            self.encoder.backward(&enc, &dh, g_enc);
        }

        let n = batch.len() as f64;
        let loss = VaeLoss {
            total: (rec_sum + self.beta * kl_sum) / n,
            reconstruction: rec_sum / n,
            kl: kl_sum / n,
        };
        if !(loss.total.is_finite() && loss.reconstruction.is_finite() && loss.kl.is_finite()) {
            return Err(CltsError::Numeric {
                block: "vae loss".into(),
            });
        }
        if let Some(g) = grads.as_mut() {
            g.iter_mut().for_each(|t| t.scale(1.0 / n));
        }
        Ok((loss, grads))
    }

    pub fn to_param_file(&self) -> ParamFile {
        let mut f = ParamFile::new("vae");
        f.meta.insert("input_dim".into(), self.input_dim());
        f.meta.insert("latent_dim".into(), self.latent_dim());
        f.scalars.insert("beta".into(), self.beta);
        f.push_mlp("encoder", &self.encoder);
        f.push_layer("mean_head", &self.mean_head);
        f.push_layer("logvar_head", &self.logvar_head);
        f.push_mlp("decoder", &self.decoder);
        f
    }

    pub fn from_param_file(mut f: ParamFile) -> Result<Self> {
        f.expect_kind("vae")?;
        let beta = f.scalar("beta")?;
        let params = VaeParams {
            encoder: f.take_mlp("encoder")?,
            mean_head: f.take_layer("mean_head")?,
            logvar_head: f.take_layer("logvar_head")?,
            decoder: f.take_mlp("decoder")?,
            beta,
        };
        if params.input_dim() != f.meta("input_dim")? || params.latent_dim() != f.meta("latent_dim")? {
            return Err(CltsError::Contract("VAE metadata disagrees with tensor shapes".into()));
        }
        f.finish()?;
        Ok(params)
    }
}

impl Parameterized for VaeParams {
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.encoder.named_parameters("encoder.");
        p.push(("mean_head.weights".into(), &self.mean_head.weights));
        p.push(("mean_head.bias".into(), &self.mean_head.bias));
        p.push(("logvar_head.weights".into(), &self.logvar_head.weights));
        p.push(("logvar_head.bias".into(), &self.logvar_head.bias));
        p.extend(self.decoder.named_parameters("decoder."));
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.parameters_mut();
        p.push(&mut self.mean_head.weights);
        p.push(&mut self.mean_head.bias);
        p.push(&mut self.logvar_head.weights);
        p.push(&mut self.logvar_head.bias);
        p.extend(self.decoder.parameters_mut());
        p
    }
}

pub fn reparameterize(mean: &[f64], log_var: &[f64], noise: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// `0.5·Σ(exp(logvar) + mean² − 1 − logvar)` for one sample.
pub fn kl_term(mean: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(log_var)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

pub fn standard_normal(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedVae {
    pub params: VaeParams,
    /// Mean per-sample loss of each epoch.
    pub loss_trace: Vec<VaeLoss>,
}

/// Mini-batch training. Each epoch shuffles the data and draws one noise
/// vector per sample from streams derived from `seed`.
pub fn train_vae(mut params: VaeParams, samples: &[&[f64]], config: &VaeConfig, seed: u64) -> Result<TrainedVae> {
    if config.batch_size == 0 {
        return Err(CltsError::Config("VAE batch size must be positive".into()));
    }
    if samples.is_empty() && config.epochs > 0 {
        return Err(CltsError::Contract("VAE training needs samples".into()));
    }
    let d = params.latent_dim();
    let mut opt = Adam::new(config.learning_rate, &params)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut noise_rng = derived_rng(seed, "vae-noise", epoch as u64);
        let noise: Vec<Vec<f64>> = (0..samples.len()).map(|_| standard_normal(&mut noise_rng, d)).collect();
        order.shuffle(&mut derived_rng(seed, "vae-shuffle", epoch as u64));

        let mut sums = VaeLoss {
            total: 0.0,
            reconstruction: 0.0,
            kl: 0.0,
        };
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| samples[i]).collect();
            let eps: Vec<Vec<f64>> = chunk.iter().map(|&i| noise[i].clone()).collect();
            let diverged = |e: CltsError| CltsError::Training {
                epoch,
                message: e.to_string(),
            };
            let (loss, grads) = params.loss_and_grad(&batch, &eps).map_err(diverged)?;
            opt.step(&mut params, &grads).map_err(diverged)?;
            let w = chunk.len() as f64;
            sums.total += loss.total * w;
            sums.reconstruction += loss.reconstruction * w;
            sums.kl += loss.kl * w;
        }
        let n = samples.len() as f64;
        trace.push(VaeLoss {
            total: sums.total / n,
            reconstruction: sums.reconstruction / n,
            kl: sums.kl / n,
        });
    }
    Ok(TrainedVae {
        params,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, DEFAULT_STEP};
    use crate::rng::rng_from;

    fn small_config(act: Activation) -> VaeConfig {
        VaeConfig {
            hidden: vec![6, 5],
            latent_dim: 3,
            hidden_activation: act,
            ..VaeConfig::default()
        }
    }

    fn zeroed(mut p: VaeParams) -> VaeParams {
        p.parameters_mut().into_iter().for_each(|t| t.fill(0.0));
        p
    }

    #[test]
    fn zero_encoder_returns_noise() {
        let p = zeroed(VaeParams::init(16, &small_config(Activation::Relu), &mut rng_from(0)).unwrap());
        let noise = [0.3, -1.2, 0.7];
        let code = p.encode(&[0.5; 16], &noise).unwrap();
        assert_eq!(code.mean, vec![0.0; 3]);
        assert_eq!(code.log_var, vec![0.0; 3]);
        assert_eq!(code.sample, noise.to_vec());
    }

    #[test]
    fn zero_decoder_outputs_sigmoid_bias() {
        let mut p = zeroed(VaeParams::init(16, &small_config(Activation::Relu), &mut rng_from(0)).unwrap());
        let last = p.decoder.layers.last_mut().unwrap();
        last.bias.data_mut().iter_mut().enumerate().for_each(|(i, b)| *b = i as f64 - 8.0);
        let out = p.decode(&[1.0, 2.0, 3.0]).unwrap();
        for (i, y) in out.iter().enumerate() {
            assert_eq!(*y, crate::nn::sigmoid(i as f64 - 8.0));
        }
    }

    #[test]
    fn encode_is_deterministic_and_shaped() {
        let p = VaeParams::init(64, &VaeConfig::default(), &mut rng_from(4)).unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i % 7) as f64 / 7.0).collect();
        let a = p.encode_seeded(&x, 9).unwrap();
        assert_eq!(a, p.encode_seeded(&x, 9).unwrap());
        assert_eq!(a.mean.len(), 8);
        assert_eq!(a.log_var.len(), 8);
        assert_eq!(a.sample.len(), 8);
        assert_eq!(p.decode(&a.sample).unwrap().len(), 64);
        assert!(p.encode_mean(&x[..10]).is_err());
        assert!(p.decode(&[0.0; 7]).is_err());
    }

    #[test]
    fn latent_dim_is_bounded_by_input() {
        let cfg = VaeConfig {
            latent_dim: 17,
            ..VaeConfig::default()
        };
        assert!(VaeParams::init(64, &cfg, &mut rng_from(0)).is_err());
    }

    #[test]
    fn kl_reference_values() {
        assert_eq!(kl_term(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(kl_term(&[1.0], &[0.0]), 0.5);
        assert!(kl_term(&[0.0], &[0.1]) > 0.0);
    }

    #[test]
    fn saturated_perfect_reconstruction_has_near_zero_bce() {
        let mut p = zeroed(VaeParams::init(8, &VaeConfig { hidden: vec![4], latent_dim: 2, ..VaeConfig::default() }, &mut rng_from(0)).unwrap());
        let target = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let last = p.decoder.layers.last_mut().unwrap();
        for (b, t) in last.bias.data_mut().iter_mut().zip(target) {
            *b = if t == 1.0 { 40.0 } else { -40.0 };
        }
        let loss = p.loss(&[&target], &[vec![0.0, 0.0]]).unwrap();
        assert!(loss.reconstruction < 1e-15, "{}", loss.reconstruction);
        assert_eq!(loss.kl, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (seed, act) in [(1, Activation::Tanh), (2, Activation::Tanh), (3, Activation::Relu)] {
            let mut rng = rng_from(seed);
            let p = VaeParams::init(12, &small_config(act), &mut rng).unwrap();
            let xs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..12).map(|_| rand::Rng::random::<f64>(&mut rng)).collect())
                .collect();
            let batch: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let noise: Vec<Vec<f64>> = (0..3).map(|_| standard_normal(&mut rng, 3)).collect();
            let report = grad_check(
                &p,
                |m| {
                    let (l, g) = m.loss_and_grad(&batch, &noise).unwrap();
                    (l.total, g)
                },
                DEFAULT_STEP,
                1e-4,
            );
            assert!(report.passed, "{act:?}: {:?}", report.worst_block());
        }
    }

    #[test]
    fn zero_epochs_leave_parameters_unchanged() {
        let p = VaeParams::init(16, &small_config(Activation::Relu), &mut rng_from(0)).unwrap();
        let x = vec![0.5; 16];
        let cfg = VaeConfig {
            epochs: 0,
            ..small_config(Activation::Relu)
        };
        let out = train_vae(p.clone(), &[&x], &cfg, 1).unwrap();
        assert_eq!(out.params, p);
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn param_file_roundtrip() {
        let p = VaeParams::init(16, &small_config(Activation::Relu), &mut rng_from(5)).unwrap();
        let json = serde_json::to_string(&p.to_param_file()).unwrap();
        let back = VaeParams::from_param_file(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
