//! JSON parameter files: named tensors plus shape and activation metadata.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CltsError, Result};
use crate::nn::{Activation, DenseLayer, Mlp, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub kind: String,
    pub meta: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scalars: BTreeMap<String, f64>,
    pub activations: BTreeMap<String, Activation>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ParamFile {
    pub fn new(kind: &str) -> Self {
        ParamFile {
            kind: kind.to_owned(),
            meta: BTreeMap::new(),
            scalars: BTreeMap::new(),
            activations: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(CltsError::Contract(format!(
                "parameter file holds `{}`, expected `{kind}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .copied()
            .ok_or_else(|| CltsError::Contract(format!("parameter file lacks meta `{key}`")))
    }

    pub fn scalar(&self, key: &str) -> Result<f64> {
        self.scalars
            .get(key)
            .copied()
            .ok_or_else(|| CltsError::Contract(format!("parameter file lacks scalar `{key}`")))
    }

    pub fn push_layer(&mut self, name: &str, layer: &DenseLayer) {
        self.activations.insert(name.to_owned(), layer.activation);
        self.tensors.insert(format!("{name}.weights"), layer.weights.clone());
        self.tensors.insert(format!("{name}.bias"), layer.bias.clone());
    }

    pub fn take_layer(&mut self, name: &str) -> Result<DenseLayer> {
        let missing = |what: &str| CltsError::Contract(format!("parameter file lacks `{name}{what}`"));
        let activation = self.activations.remove(name).ok_or_else(|| missing(""))?;
        let weights = self
            .tensors
            .remove(&format!("{name}.weights"))
            .ok_or_else(|| missing(".weights"))?;
        let bias = self
            .tensors
            .remove(&format!("{name}.bias"))
            .ok_or_else(|| missing(".bias"))?;
        DenseLayer::new(weights, bias, activation)
    }

    pub fn push_mlp(&mut self, prefix: &str, net: &Mlp) {
        for (i, layer) in net.layers.iter().enumerate() {
            self.push_layer(&format!("{prefix}.{i}"), layer);
        }
    }

    pub fn take_mlp(&mut self, prefix: &str) -> Result<Mlp> {
        let mut layers = Vec::new();
        while self.activations.contains_key(&format!("{prefix}.{}", layers.len())) {
            layers.push(self.take_layer(&format!("{prefix}.{}", layers.len()))?);
        }
        Mlp::new(layers)
    }

    /// Errors if any tensor was not consumed by `take_*`.
    pub fn finish(self) -> Result<()> {
        if let Some(name) = self.tensors.keys().next() {
            return Err(CltsError::Contract(format!("unexpected tensor `{name}` in parameter file")));
        }
        Ok(())
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CltsError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CltsError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn mlp_roundtrip() {
        let net = Mlp::init(&[5, 4, 3], Activation::Relu, Activation::Softmax, &mut rng_from(0));
        let mut file = ParamFile::new("net");
        file.push_mlp("body", &net);
        let json = serde_json::to_string(&file).unwrap();
        let mut back: ParamFile = serde_json::from_str(&json).unwrap();
        back.expect_kind("net").unwrap();
        assert_eq!(back.take_mlp("body").unwrap(), net);
        back.finish().unwrap();
    }

    #[test]
    fn leftover_tensors_are_reported() {
        let net = Mlp::init(&[2, 2], Activation::Relu, Activation::Identity, &mut rng_from(0));
        let mut file = ParamFile::new("x");
        file.push_mlp("a", &net);
        file.push_mlp("b", &net);
        file.take_mlp("a").unwrap();
        assert!(file.finish().is_err());
    }
}
