use std::fs;
use std::path::{Path, PathBuf};

use super::format::{decode_embedding_file, write_embedding_file};
use super::labels::{load_labels, LoadedLabels};
use super::manifest::{DatasetManifest, LayerFileEntry, MANIFEST_FILE};
use super::{EmbeddingSet, Pooling, Split, StoreError, Task};

/// One split directory: manifest, layer files, labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let manifest = DatasetManifest::read(&dir.join(MANIFEST_FILE))?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Writes `layers` (ordered by layer index, all row-aligned) and the
    /// raw label text, then the manifest binding them.
    pub fn write(
        dir: &Path,
        task: Task,
        split: Split,
        layers: &[EmbeddingSet],
        labels_tsv: &str,
    ) -> Result<Dataset, StoreError> {
        let first = layers
            .first()
            .ok_or_else(|| StoreError::Shape("no layers to write".into()))?;
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;

        let mut entries = Vec::with_capacity(layers.len());
        for (index, set) in layers.iter().enumerate() {
            if set.layer_index != index
                || set.n_sentences() != first.n_sentences()
                || set.dim() != first.dim()
                || set.model_id != first.model_id
            {
                return Err(StoreError::Shape(format!(
                    "layer {index} is not aligned with layer 0"
                )));
            }
            let file = DatasetManifest::layer_file_name(index);
            let checksum = write_embedding_file(set, &dir.join(&file))?;
            entries.push(LayerFileEntry { file, checksum });
        }

        let labels_file = "labels.tsv".to_string();
        let labels_path = dir.join(&labels_file);
        fs::write(&labels_path, labels_tsv).map_err(|e| StoreError::io(&labels_path, e))?;

        let manifest = DatasetManifest {
            task,
            split,
            sentence_count: first.n_sentences(),
            model_id: first.model_id.clone(),
            layer_count: layers.len(),
            dim: first.dim(),
            pooling: first.pooling,
            layers: entries,
            labels_file,
        };
        let manifest_path = dir.join(MANIFEST_FILE);
        manifest.check(&manifest_path)?;
        manifest.write(&manifest_path)?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn layer_path(&self, layer: usize) -> Option<PathBuf> {
        self.manifest
            .layers
            .get(layer)
            .map(|entry| self.dir.join(&entry.file))
    }

    /// Loads one layer, verifying checksum and agreement with the manifest.
    pub fn load_layer(&self, layer: usize) -> Result<EmbeddingSet, StoreError> {
        let m = &self.manifest;
        let entry = m.layers.get(layer).ok_or_else(|| {
            StoreError::Shape(format!("layer {layer} not in manifest ({} layers)", m.layer_count))
        })?;
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| StoreError::io(&path, e))?;
        let set = decode_embedding_file(&bytes, &m.model_id, m.pooling, Some(entry.checksum))?;
        if set.n_sentences() != m.sentence_count || set.dim() != m.dim || set.layer_index != layer {
            return Err(StoreError::Shape(format!(
                "{}: header says {} x {} at layer {}, manifest says {} x {} at layer {layer}",
                path.display(),
                set.n_sentences(),
                set.dim(),
                set.layer_index,
                m.sentence_count,
                m.dim
            )));
        }
        Ok(set)
    }

    pub fn labels(&self) -> Result<LoadedLabels, StoreError> {
        load_labels(
            &self.dir.join(&self.manifest.labels_file),
            self.manifest.task,
            self.manifest.sentence_count,
        )
    }

    /// Checks every file the manifest references.
    pub fn validate(&self) -> Vec<FileStatus> {
        let mut out = Vec::with_capacity(self.manifest.layers.len() + 1);
        for (layer, entry) in self.manifest.layers.iter().enumerate() {
            out.push(FileStatus {
                path: self.dir.join(&entry.file),
                error: self.load_layer(layer).err().map(|e| e.to_string()),
            });
        }
        out.push(FileStatus {
            path: self.dir.join(&self.manifest.labels_file),
            error: self.labels().err().map(|e| e.to_string()),
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileStatus {
    pub path: PathBuf,
    pub error: Option<String>,
}

impl FileStatus {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Validates every dataset below `root` (any directory containing a
/// manifest). Fails only when no manifest is found at all.
pub fn validate_tree(root: &Path) -> Result<Vec<FileStatus>, StoreError> {
    let mut manifests: Vec<PathBuf> = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.file_name() == MANIFEST_FILE)
        .map(|e| e.into_path())
        .collect();
    manifests.sort();
    if manifests.is_empty() {
        return Err(StoreError::Manifest {
            path: root.join(MANIFEST_FILE),
            message: "no manifest found".into(),
        });
    }

    let mut out = Vec::new();
    for path in manifests {
        let dir = path.parent().unwrap_or(root);
        match Dataset::open(dir) {
            Ok(dataset) => {
                out.push(FileStatus { path, error: None });
                out.extend(dataset.validate());
            }
            Err(e) => out.push(FileStatus {
                path,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(out)
}

/// Train, dev and test datasets of one (model, task).
#[derive(Debug, Clone)]
pub struct Store {
    pub root: PathBuf,
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

impl Store {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let open = |split: Split| Dataset::open(&root.join(split.dir_name()));
        let store = Store {
            root: root.to_path_buf(),
            train: open(Split::Train)?,
            dev: open(Split::Dev)?,
            test: open(Split::Test)?,
        };
        let reference = &store.train.manifest;
        for split in Split::ALL {
            let m = &store.split(split).manifest;
            let consistent = m.split == split
                && m.task == reference.task
                && m.model_id == reference.model_id
                && m.dim == reference.dim
                && m.layer_count == reference.layer_count
                && m.pooling == reference.pooling;
            if !consistent {
                return Err(StoreError::Manifest {
                    path: store.split(split).dir.join(MANIFEST_FILE),
                    message: "split disagrees with train manifest on split/task/model/dim/layers"
                        .into(),
                });
            }
        }
        Ok(store)
    }

    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    pub fn task(&self) -> Task {
        self.train.manifest.task
    }

    pub fn model_id(&self) -> &str {
        &self.train.manifest.model_id
    }

    pub fn dim(&self) -> usize {
        self.train.manifest.dim
    }

    pub fn layer_count(&self) -> usize {
        self.train.manifest.layer_count
    }

    pub fn pooling(&self) -> Pooling {
        self.train.manifest.pooling
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layers(n: usize, dim: usize, count: usize) -> Vec<EmbeddingSet> {
        (0..count)
            .map(|l| {
                let data = (0..n * dim).map(|i| (i + l) as f32 * 0.5).collect();
                EmbeddingSet::new("toy".into(), l, n, dim, Pooling::MeanTokens, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn write_then_open() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::write(
            dir.path(),
            Task::Sts,
            Split::Train,
            &layers(4, 3, 3),
            "0\t1\t5\n2\t3\t0\n",
        )
        .unwrap();
        let reopened = Dataset::open(dir.path()).unwrap();
        assert_eq!(reopened.manifest, ds.manifest);
        let set = reopened.load_layer(2).unwrap();
        assert_eq!(set, layers(4, 3, 3)[2]);
        assert_eq!(reopened.labels().unwrap().set.len(), 2);
        assert!(reopened.validate().iter().all(FileStatus::is_ok));
    }

    #[test]
    fn corrupted_layer_is_named() {
        let dir = tempfile::tempdir().unwrap();
        Dataset::write(dir.path(), Task::Sts, Split::Train, &layers(4, 3, 2), "0\t1\t5\n")
            .unwrap();
        let path = dir.path().join("layer_001.bin");
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        fs::write(&path, bytes).unwrap();

        let statuses = validate_tree(dir.path()).unwrap();
        let bad: Vec<_> = statuses.iter().filter(|s| !s.is_ok()).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].path, path);
        assert!(bad[0].error.as_ref().unwrap().contains("checksum"));
    }

    #[test]
    fn misaligned_layers_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut sets = layers(4, 3, 2);
        sets[1] = layers(5, 3, 2).remove(1);
        assert!(Dataset::write(dir.path(), Task::Sts, Split::Train, &sets, "").is_err());
    }

    #[test]
    fn empty_tree_has_no_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(validate_tree(dir.path()).is_err());
    }
}
