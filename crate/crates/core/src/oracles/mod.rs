//! Captioner/generator oracles, the caption buffer and memory accounting.
//!
//! The procedural implementations here render parameterized geometric
//! templates. Anything implementing [`Captioner`] and [`Generator`] (for
//! example a client for a hosted captioning or diffusion model) can replace
//! them without touching the specialists, the task predictor or the pipeline.

mod buffer;
mod caption;
mod templates;

pub use buffer::{
    buffer_memory_bytes, exemplar_memory_bytes, records_memory_bytes, CaptionBuffer, CaptionRecord,
    TASK_ID_BYTES,
};
pub use caption::{
    procedural_generate, Caption, CaptionParams, Captioner, Generator, ProceduralCaptioner,
    ProceduralGenerator, DEFAULT_MAX_FIT_MSE, MAX_CAPTION_BYTES,
};
pub(crate) use caption::add_clipped_noise;
pub use templates::{ClassTemplate, ParamRange, Pattern, TemplateRegistry};

/// One-shot captioning; build a [`ProceduralCaptioner`] once when captioning many samples.
pub fn procedural_caption(features: &[f64], registry: &TemplateRegistry) -> crate::Result<Caption> {
    ProceduralCaptioner::new(registry)?.caption(features)
}
