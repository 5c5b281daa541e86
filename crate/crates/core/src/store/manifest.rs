use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Pooling, Split, StoreError, Task};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFileEntry {
    pub file: String,
    /// FNV-1a of the payload, 16 lowercase hex digits.
    #[serde(with = "hex_u64")]
    pub checksum: u64,
}

/// Binds the layer files and label file of one dataset split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task: Task,
    pub split: Split,
    pub sentence_count: usize,
    pub model_id: String,
    pub layer_count: usize,
    pub dim: usize,
    pub pooling: Pooling,
    /// Ordered by layer index; entry 0 is the embedding layer.
    pub layers: Vec<LayerFileEntry>,
    pub labels_file: String,
}

impl DatasetManifest {
    pub fn layer_file_name(layer: usize) -> String {
        format!("layer_{layer:03}.bin")
    }

    pub fn check(&self, path: &Path) -> Result<(), StoreError> {
        let fail = |message: String| StoreError::Manifest {
            path: path.to_path_buf(),
            message,
        };
        if self.layer_count < 2 {
            return Err(fail(format!(
                "layer_count {} < 2 (embedding layer plus at least one block)",
                self.layer_count
            )));
        }
        if self.layers.len() != self.layer_count {
            return Err(fail(format!(
                "{} layer files listed for layer_count {}",
                self.layers.len(),
                self.layer_count
            )));
        }
        if self.sentence_count == 0 || self.dim == 0 {
            return Err(fail("sentence_count and dim must be positive".into()));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| StoreError::Manifest {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        manifest.check(path)?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| StoreError::io(path, e))
    }
}

mod hex_u64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{value:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        u64::from_str_radix(&text, 16).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            task: Task::Sts,
            split: Split::Dev,
            sentence_count: 4,
            model_id: "toy".into(),
            layer_count: 2,
            dim: 3,
            pooling: Pooling::MeanTokens,
            layers: vec![
                LayerFileEntry {
                    file: "layer_000.bin".into(),
                    checksum: 0xa8c7f832281a39c5,
                },
                LayerFileEntry {
                    file: "layer_001.bin".into(),
                    checksum: 1,
                },
            ],
            labels_file: "labels.tsv".into(),
        }
    }

    #[test]
    fn json_shape() {
        let json = serde_json::to_value(manifest()).unwrap();
        assert_eq!(json["task"], "sts");
        assert_eq!(json["pooling"], "mean_tokens");
        assert_eq!(json["layers"][0]["checksum"], "a8c7f832281a39c5");
        assert_eq!(json["layers"][1]["checksum"], "0000000000000001");
        let back: DatasetManifest = serde_json::from_value(json).unwrap();
        assert_eq!(back, manifest());
    }

    #[test]
    fn rejects_single_layer() {
        let mut m = manifest();
        m.layer_count = 1;
        m.layers.pop();
        assert!(m.check(Path::new("m.json")).is_err());
    }

    #[test]
    fn rejects_unknown_field() {
        let mut json = serde_json::to_value(manifest()).unwrap();
        json["extra"] = 1.into();
        assert!(serde_json::from_value::<DatasetManifest>(json).is_err());
    }
}
