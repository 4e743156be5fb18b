use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::check_header;
use super::MlpClassifier;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MODEL_FORMAT: &str = "ods-mlp";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// On-disk model. Floats are written in shortest round-trip decimal form, so
/// loading reproduces every parameter bit for bit.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    layer_sizes: Vec<usize>,
    layers: Vec<LayerFile>,
}

pub fn to_json(model: &MlpClassifier) -> String {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        layer_sizes: model.layer_sizes().to_vec(),
        layers: model
            .weights()
            .iter()
            .zip(model.biases())
            .map(|(w, b)| LayerFile {
                weight: w.data().to_vec(),
                bias: b.data().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("model serialises")
}

pub fn from_json(text: &str, path: &Path) -> Result<MlpClassifier> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::malformed(path, e))?;
    check_header(&value, MODEL_FORMAT, MODEL_VERSION, path)?;
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::malformed(path, e))?;
    let sizes = &file.layer_sizes;
    if sizes.len() < 2 || file.layers.len() != sizes.len() - 1 {
        return Err(Error::malformed(
            path,
            "layer count does not match layer_sizes",
        ));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (pair, layer) in sizes.windows(2).zip(file.layers) {
        weights.push(
            Tensor::matrix(pair[0], pair[1], layer.weight)
                .map_err(|e| Error::malformed(path, e))?,
        );
        biases.push(Tensor::new(vec![pair[1]], layer.bias).map_err(|e| Error::malformed(path, e))?);
    }
    MlpClassifier::from_parameters(sizes, weights, biases).map_err(|e| Error::malformed(path, e))
}

pub fn save(model: &MlpClassifier, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<MlpClassifier> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = MlpClassifier::new(&[6, 9, 4], 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save(&m, &p).unwrap();
        let back = load(&p).unwrap();
        let bits = |m: &MlpClassifier| -> Vec<u64> {
            m.params_flat().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&m), bits(&back));
        assert_eq!(back.layer_sizes(), m.layer_sizes());
    }

    #[test]
    fn truncated_file_is_malformed() {
        let m = MlpClassifier::new(&[3, 2], 1).unwrap();
        let text = to_json(&m);
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            from_json(cut, Path::new("cut.json")),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn future_version_rejected() {
        let m = MlpClassifier::new(&[3, 2], 1).unwrap();
        let text = to_json(&m).replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(
            from_json(&text, Path::new("v7.json")),
            Err(Error::Version { found: 7, .. })
        ));
    }
}
