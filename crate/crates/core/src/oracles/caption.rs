//! Captioner and generator interfaces, with procedural implementations that
//! stand in for an image-captioning model and a text-to-image model.

use std::fmt;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::templates::TemplateRegistry;
use crate::error::{CltsError, Result};
use crate::rng::rng_from;

pub const MAX_CAPTION_BYTES: usize = 256;

/// Non-empty UTF-8 text of at most 256 bytes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Caption(String);

impl Caption {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(CltsError::Captioning("caption must be non-empty".into()));
        }
        if text.len() > MAX_CAPTION_BYTES {
            return Err(CltsError::Captioning(format!(
                "caption is {} bytes, limit is {MAX_CAPTION_BYTES}",
                text.len()
            )));
        }
        Ok(Caption(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn byte_len(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<String> for Caption {
    type Error = CltsError;
    fn try_from(s: String) -> Result<Self> {
        Caption::new(s)
    }
}

impl From<Caption> for String {
    fn from(c: Caption) -> String {
        c.0
    }
}

impl fmt::Display for Caption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Parsed form of the canonical `class=<id>;params=<p1,...,pm>` caption.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionParams {
    pub class: u32,
    pub params: Vec<f64>,
}

impl CaptionParams {
    pub fn to_caption(&self) -> Result<Caption> {
        let params: Vec<String> = self.params.iter().map(|p| format!("{p:.3}")).collect();
        Caption::new(format!("class={};params={}", self.class, params.join(",")))
    }

    pub fn parse(caption: &Caption) -> Result<Self> {
        let bad = |message: &str| CltsError::Generation {
            caption: caption.as_str().to_owned(),
            message: message.to_owned(),
        };
        let (class_part, params_part) = caption
            .as_str()
            .split_once(';')
            .ok_or_else(|| bad("missing `;` separator"))?;
        let class = class_part
            .strip_prefix("class=")
            .ok_or_else(|| bad("missing `class=` field"))?
            .parse::<u32>()
            .map_err(|_| bad("class id is not a non-negative integer"))?;
        let params = params_part
            .strip_prefix("params=")
            .ok_or_else(|| bad("missing `params=` field"))?
            .split(',')
            .map(|p| p.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad("parameter is not a finite number"))?;
        Ok(CaptionParams { class, params })
    }
}

/// Maps sample features to a caption.
pub trait Captioner: Send + Sync {
    fn caption(&self, features: &[f64]) -> Result<Caption>;
}

/// Maps a caption plus noise seed to sample features in [0,1].
pub trait Generator: Send + Sync {
    fn generate(&self, caption: &Caption, seed: u64) -> Result<Vec<f64>>;
}

/// Default acceptance threshold (mean squared error) for attributing a
/// sample to its best-fitting template rendering.
pub const DEFAULT_MAX_FIT_MSE: f64 = 0.02;

/// Captions a sample by exhaustive analysis-by-synthesis over every class
/// template and parameter grid point.
#[derive(Clone, Debug)]
pub struct ProceduralCaptioner {
    candidates: Vec<Candidate>,
    feature_len: usize,
    pub max_fit_mse: f64,
}

#[derive(Clone, Debug)]
struct Candidate {
    params: CaptionParams,
    rendering: Vec<f64>,
}

impl ProceduralCaptioner {
    pub fn new(registry: &TemplateRegistry) -> Result<Self> {
        registry.validate()?;
        let mut candidates = Vec::new();
        for t in &registry.templates {
            for a in t.params[0].values() {
                for b in t.params[1].values() {
                    candidates.push(Candidate {
                        params: CaptionParams {
                            class: t.class,
                            params: vec![a, b],
                        },
                        rendering: registry.render(t.pattern, [a, b]),
                    });
                }
            }
        }
        Ok(ProceduralCaptioner {
            candidates,
            feature_len: registry.feature_len(),
            max_fit_mse: DEFAULT_MAX_FIT_MSE,
        })
    }

    /// Best-fitting grid point and its mean squared error.
    pub fn fit(&self, features: &[f64]) -> Result<(CaptionParams, f64)> {
        if features.len() != self.feature_len {
            return Err(CltsError::dimension(
                "captioner input",
                self.feature_len,
                features.len(),
            ));
        }
        let mut best: Option<(&Candidate, f64)> = None;
        for c in &self.candidates {
            let sse: f64 = c
                .rendering
                .iter()
                .zip(features)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if best.is_none_or(|(_, e)| sse < e) {
                best = Some((c, sse));
            }
        }
        let (c, sse) = best.expect("registry has at least two templates");
        Ok((c.params.clone(), sse / self.feature_len as f64))
    }
}

impl Captioner for ProceduralCaptioner {
    fn caption(&self, features: &[f64]) -> Result<Caption> {
        let (params, mse) = self.fit(features)?;
        if !(mse <= self.max_fit_mse) {
            return Err(CltsError::Captioning(format!(
                "sample not attributable to any template (best fit class {} at mse {mse:.4})",
                params.class
            )));
        }
        params.to_caption()
    }
}

/// Renders the captioned template and adds clipped Gaussian noise.
#[derive(Clone, Debug)]
pub struct ProceduralGenerator {
    registry: TemplateRegistry,
    pub noise_scale: f64,
}

impl ProceduralGenerator {
    pub fn new(registry: TemplateRegistry, noise_scale: f64) -> Result<Self> {
        registry.validate()?;
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(CltsError::Config(format!(
                "noise scale must be non-negative, got {noise_scale}"
            )));
        }
        Ok(ProceduralGenerator {
            registry,
            noise_scale,
        })
    }

    pub fn registry(&self) -> &TemplateRegistry {
        &self.registry
    }
}

impl Generator for ProceduralGenerator {
    fn generate(&self, caption: &Caption, seed: u64) -> Result<Vec<f64>> {
        procedural_generate(&self.registry, caption, seed, self.noise_scale)
    }
}

pub fn procedural_generate(
    registry: &TemplateRegistry,
    caption: &Caption,
    seed: u64,
    noise_scale: f64,
) -> Result<Vec<f64>> {
    let parsed = CaptionParams::parse(caption)?;
    let bad = |message: String| CltsError::Generation {
        caption: caption.as_str().to_owned(),
        message,
    };
    let template = registry
        .template(parsed.class)
        .ok_or_else(|| bad(format!("no template for class {}", parsed.class)))?;
    let [a, b] = parsed.params[..] else {
        return Err(bad(format!("expected 2 parameters, got {}", parsed.params.len())));
    };
    let clean = registry.render(template.pattern, [a, b]);
    Ok(add_clipped_noise(clean, seed, noise_scale))
}

pub(crate) fn add_clipped_noise(mut features: Vec<f64>, seed: u64, noise_scale: f64) -> Vec<f64> {
    if noise_scale > 0.0 {
        let normal = Normal::new(0.0, noise_scale).expect("finite positive scale");
        let mut rng = rng_from(seed);
        for v in &mut features {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    features
}
