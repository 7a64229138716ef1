//! Parameterized image templates behind the synthetic benchmark and the
//! procedural captioner/generator pair.

use serde::{Deserialize, Serialize};

use crate::error::{CltsError, Result};

/// Geometric pattern family. Each pattern takes two parameters `(p1, p2)`:
///
/// | pattern | p1 | p2 |
/// |---|---|---|
/// | horizontal / vertical bar | centre (0..1) | amplitude |
/// | blob | centre x | centre y |
/// | checker | amplitude | base level |
/// | diagonal / anti-diagonal | offset | amplitude |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Pattern {
    HorizontalBar,
    VerticalBar,
    Blob,
    Checker { phase: u8 },
    Diagonal,
    AntiDiagonal,
}

const BAR_SIGMA: f64 = 0.09;
const BLOB_SIGMA: f64 = 0.14;
const CHECKER_CELL: usize = 2;

/// Inclusive parameter grid stored in thousandths, so grid values print and
/// parse back to bit-identical `f64`s at three decimals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min_milli: i32,
    pub max_milli: i32,
    pub step_milli: i32,
}

impl ParamRange {
    pub const fn new(min_milli: i32, max_milli: i32, step_milli: i32) -> Self {
        ParamRange {
            min_milli,
            max_milli,
            step_milli,
        }
    }

    pub fn len(&self) -> usize {
        if self.step_milli <= 0 || self.max_milli < self.min_milli {
            return 0;
        }
        ((self.max_milli - self.min_milli) / self.step_milli) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, index: usize) -> f64 {
        milli_to_f64(self.min_milli + index as i32 * self.step_milli)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.value(i))
    }

    fn overlaps(&self, other: &ParamRange) -> bool {
        self.min_milli <= other.max_milli && other.min_milli <= self.max_milli
    }
}

pub(crate) fn milli_to_f64(milli: i32) -> f64 {
    f64::from(milli) / 1000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub class: u32,
    pub pattern: Pattern,
    pub params: [ParamRange; 2],
}

/// The set of class templates over one image geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateRegistry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub templates: Vec<ClassTemplate>,
}

impl Default for TemplateRegistry {
    /// Ten classes on an 8×8 grayscale grid. Pairs `{0,1}, {2,3}, ...` use
    /// visibly different patterns so each two-class task is separable.
    fn default() -> Self {
        use Pattern::*;
        let amp = ParamRange::new(700, 900, 50);
        let low = ParamRange::new(150, 350, 50);
        let high = ParamRange::new(650, 850, 50);
        let t = |class, pattern, p1, p2| ClassTemplate {
            class,
            pattern,
            params: [p1, p2],
        };
        TemplateRegistry {
            height: 8,
            width: 8,
            channels: 1,
            templates: vec![
                t(0, HorizontalBar, low, amp),
                t(1, VerticalBar, low, amp),
                t(2, HorizontalBar, high, amp),
                t(3, VerticalBar, high, amp),
                t(4, Blob, ParamRange::new(200, 400, 50), ParamRange::new(200, 400, 50)),
                t(5, Blob, ParamRange::new(600, 800, 50), ParamRange::new(600, 800, 50)),
                t(6, Checker { phase: 0 }, ParamRange::new(500, 700, 50), ParamRange::new(50, 250, 50)),
                t(7, Checker { phase: 1 }, ParamRange::new(500, 700, 50), ParamRange::new(50, 250, 50)),
                t(8, Diagonal, ParamRange::new(-100, 100, 50), amp),
                t(9, AntiDiagonal, ParamRange::new(-100, 100, 50), amp),
            ],
        }
    }
}

impl TemplateRegistry {
    pub fn feature_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn template(&self, class: u32) -> Option<&ClassTemplate> {
        self.templates.iter().find(|t| t.class == class)
    }

    pub fn classes(&self) -> Vec<u32> {
        self.templates.iter().map(|t| t.class).collect()
    }

    /// Rejects registries whose classes are not distinguishable by
    /// construction: duplicate class ids, empty grids, or two templates of
    /// the same pattern with overlapping parameter boxes.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(CltsError::Specification("image dimensions must be positive".into()));
        }
        if self.templates.len() < 2 {
            return Err(CltsError::Specification("at least two classes are required".into()));
        }
        for (i, a) in self.templates.iter().enumerate() {
            if a.params.iter().any(ParamRange::is_empty) {
                return Err(CltsError::Specification(format!(
                    "class {} has an empty parameter range",
                    a.class
                )));
            }
            for b in &self.templates[i + 1..] {
                if a.class == b.class {
                    return Err(CltsError::Specification(format!(
                        "class {} defined twice",
                        a.class
                    )));
                }
                if a.pattern == b.pattern
                    && a.params[0].overlaps(&b.params[0])
                    && a.params[1].overlaps(&b.params[1])
                {
                    return Err(CltsError::Specification(format!(
                        "classes {} and {} have overlapping parameter ranges for {:?}",
                        a.class, b.class, a.pattern
                    )));
                }
            }
        }
        Ok(())
    }

    /// Clean (noise-free) rendering; values in [0,1], channels interleaved.
    pub fn render(&self, pattern: Pattern, params: [f64; 2]) -> Vec<f64> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let [p1, p2] = params;
        let mut out = Vec::with_capacity(h * w * c);
        for row in 0..h {
            let v = (row as f64 + 0.5) / h as f64;
            for col in 0..w {
                let u = (col as f64 + 0.5) / w as f64;
                let value = match pattern {
                    Pattern::HorizontalBar => p2 * gauss(v - p1, BAR_SIGMA),
                    Pattern::VerticalBar => p2 * gauss(u - p1, BAR_SIGMA),
                    Pattern::Blob => gauss(((u - p1).powi(2) + (v - p2).powi(2)).sqrt(), BLOB_SIGMA),
                    Pattern::Checker { phase } => {
                        let parity = (row / CHECKER_CELL + col / CHECKER_CELL + phase as usize) % 2;
                        p2 + p1 * parity as f64
                    }
                    Pattern::Diagonal => p2 * gauss((u - v - p1) / std::f64::consts::SQRT_2, BAR_SIGMA),
                    Pattern::AntiDiagonal => {
                        p2 * gauss((u + v - 1.0 - p1) / std::f64::consts::SQRT_2, BAR_SIGMA)
                    }
                }
                .clamp(0.0, 1.0);
                out.extend(std::iter::repeat_n(value, c));
            }
        }
        out
    }
}

fn gauss(d: f64, sigma: f64) -> f64 {
    (-d * d / (2.0 * sigma * sigma)).exp()
}
