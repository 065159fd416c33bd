//! Versioned on-disk model bundles and run manifests.
//!
//! An artifact is one self-describing JSON document: the fitted preprocessor,
//! the model payload as explicit decimal arrays, the category vocabulary,
//! training metadata and a trailing SHA-256 content checksum. The checksum
//! covers everything except the creation timestamp, so identical training
//! runs produce identical checksums. Version mismatches are rejected, never
//! migrated.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forest::{ForestParams, RandomForestModel};
use crate::neural::{DenseLayer, EpochStats, MlpArchitecture, MlpModel, MlpParameters};
use crate::preprocess::FittedPreprocessor;
use crate::tree::{DecisionTreeModel, TreeNode, TreeParams};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dt,
    Rf,
    Mlp,
}

impl ModelKind {
    pub fn parse(token: &str) -> Option<Self> {
        match token.to_ascii_lowercase().as_str() {
            "dt" => Some(ModelKind::Dt),
            "rf" => Some(ModelKind::Rf),
            "mlp" => Some(ModelKind::Mlp),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            ModelKind::Dt => "dt",
            ModelKind::Rf => "rf",
            ModelKind::Mlp => "mlp",
        }
    }
}

/// Dense matrix in explicit row-major decimal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    fn from_array(a: &Array2<f64>) -> Self {
        MatrixData {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::ArtifactInvalid(format!("bad matrix shape: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerData {
    pub weights: MatrixData,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelPayload {
    Dt {
        params: TreeParams,
        root: TreeNode,
    },
    Rf {
        params: ForestParams,
        trees: Vec<TreeNode>,
        importances: Vec<f64>,
    },
    Mlp {
        arch: MlpArchitecture,
        layers: Vec<LayerData>,
        history: Vec<EpochStats>,
        best_epoch: usize,
    },
}

/// Everything `evaluate` needs to rebuild the exact training context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub seed: u64,
    pub test_frac: f64,
    pub min_category_count: usize,
    pub scale_on_all: bool,
    /// SHA-256 of the training CSV bytes.
    pub data_fingerprint: String,
    /// Resolved model parameters, echoed for the run record.
    pub params: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArtifactDocument {
    artifact: ModelArtifact,
    created_at_unix: u64,
    checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: u32,
    pub model_kind: ModelKind,
    pub preprocessor: FittedPreprocessor,
    pub payload: ModelPayload,
    pub category_vocab: Vec<String>,
    pub metadata: ArtifactMetadata,
}

impl ModelArtifact {
    pub fn from_tree(
        model: &DecisionTreeModel,
        preprocessor: FittedPreprocessor,
        category_vocab: Vec<String>,
        metadata: ArtifactMetadata,
    ) -> Self {
        ModelArtifact {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            model_kind: ModelKind::Dt,
            preprocessor,
            payload: ModelPayload::Dt {
                params: model.params,
                root: model.root.clone(),
            },
            category_vocab,
            metadata,
        }
    }

    pub fn from_forest(
        model: &RandomForestModel,
        preprocessor: FittedPreprocessor,
        category_vocab: Vec<String>,
        metadata: ArtifactMetadata,
    ) -> Self {
        ModelArtifact {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            model_kind: ModelKind::Rf,
            preprocessor,
            payload: ModelPayload::Rf {
                params: model.params,
                trees: model.trees.clone(),
                importances: model.importances.clone(),
            },
            category_vocab,
            metadata,
        }
    }

    pub fn from_mlp(
        model: &MlpModel,
        preprocessor: FittedPreprocessor,
        category_vocab: Vec<String>,
        metadata: ArtifactMetadata,
    ) -> Self {
        ModelArtifact {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            model_kind: ModelKind::Mlp,
            preprocessor,
            payload: ModelPayload::Mlp {
                arch: model.arch.clone(),
                layers: model
                    .params
                    .layers
                    .iter()
                    .map(|layer| LayerData {
                        weights: MatrixData::from_array(&layer.weights),
                        bias: layer.bias.to_vec(),
                    })
                    .collect(),
                history: model.history.clone(),
                best_epoch: model.best_epoch,
            },
            category_vocab,
            metadata,
        }
    }

    pub fn n_categories(&self) -> usize {
        self.category_vocab.len()
    }

    /// SHA-256 over the canonical serialization; stable across save/load.
    pub fn content_checksum(&self) -> String {
        let body = serde_json::to_string(self).expect("artifact serializes");
        let mut hasher = Sha256::new();
        hasher.update(body.as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Probability predictions on already-transformed rows.
    pub fn predict_proba(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let width = self.preprocessor.n_output_columns();
        if rows.ncols() != width {
            return Err(Error::WidthMismatch {
                expected: width,
                got: rows.ncols(),
            });
        }
        match &self.payload {
            ModelPayload::Dt { params, root } => {
                let model = DecisionTreeModel {
                    root: root.clone(),
                    params: *params,
                    n_categories: self.n_categories(),
                    column_names: self.preprocessor.column_names(),
                };
                let mut out = Array2::zeros((rows.nrows(), self.n_categories()));
                for (i, row) in rows.rows().into_iter().enumerate() {
                    let probs = model.predict_proba_row(&row.to_vec())?;
                    out.row_mut(i).assign(&Array1::from(probs));
                }
                Ok(out)
            }
            ModelPayload::Rf {
                params,
                trees,
                importances,
            } => {
                let model = RandomForestModel {
                    trees: trees.clone(),
                    params: *params,
                    importances: importances.clone(),
                    n_categories: self.n_categories(),
                    column_names: self.preprocessor.column_names(),
                };
                let mut out = Array2::zeros((rows.nrows(), self.n_categories()));
                for (i, row) in rows.rows().into_iter().enumerate() {
                    let probs = model.predict_proba_row(&row.to_vec())?;
                    out.row_mut(i).assign(&Array1::from(probs));
                }
                Ok(out)
            }
            ModelPayload::Mlp { layers, .. } => {
                let params = MlpParameters {
                    layers: layers
                        .iter()
                        .map(|l| {
                            Ok(DenseLayer {
                                weights: l.weights.to_array()?,
                                bias: Array1::from(l.bias.clone()),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                };
                crate::neural::forward(&params, rows)
            }
        }
    }

    /// Forest feature importances, when the payload is a forest.
    pub fn importances(&self) -> Option<&[f64]> {
        match &self.payload {
            ModelPayload::Rf { importances, .. } => Some(importances),
            _ => None,
        }
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Atomic file write: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Saves the artifact with its content checksum and a creation timestamp.
pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    let document = ArtifactDocument {
        checksum: artifact.content_checksum(),
        created_at_unix: unix_now(),
        artifact: artifact.clone(),
    };
    let json = serde_json::to_string_pretty(&document)
        .map_err(|e| Error::ArtifactInvalid(e.to_string()))?;
    write_atomic(path, json.as_bytes())
}

/// Loads and verifies an artifact: schema version must match exactly and the
/// recomputed content checksum must equal the stored one.
pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let document: ArtifactDocument = serde_json::from_slice(&bytes)
        .map_err(|e| Error::ArtifactInvalid(format!("{}: {e}", path.display())))?;
    if document.artifact.schema_version != ARTIFACT_SCHEMA_VERSION {
        return Err(Error::ArtifactVersion {
            found: document.artifact.schema_version,
            supported: ARTIFACT_SCHEMA_VERSION,
        });
    }
    if document.artifact.content_checksum() != document.checksum {
        return Err(Error::ArtifactChecksum);
    }
    Ok(document.artifact)
}

/// SHA-256 hex digest of a file's bytes.
pub fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(hasher.finalize()))
}

/// Record of one CLI invocation: enough to re-run it identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub resolved: serde_json::Value,
    pub seed: u64,
    pub input_fingerprint: Option<String>,
    pub outputs: Vec<String>,
    pub created_at_unix: u64,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let path = dir.join(format!("{}_manifest.json", self.command));
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::ArtifactInvalid(e.to_string()))?;
        write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::OutputColumn;

    fn sample_metadata() -> ArtifactMetadata {
        ArtifactMetadata {
            seed: 42,
            test_frac: 0.25,
            min_category_count: 3,
            scale_on_all: false,
            data_fingerprint: "abc".into(),
            params: serde_json::json!({"n_estimators": 10}),
        }
    }

    fn sample_preprocessor() -> FittedPreprocessor {
        FittedPreprocessor {
            columns: vec![
                OutputColumn::Numeric {
                    source: "G::a".into(),
                    min: 0.0,
                    max: 1.0,
                },
                OutputColumn::Numeric {
                    source: "G::b".into(),
                    min: -1.0,
                    max: 2.0,
                },
            ],
            include_fund_type: false,
        }
    }

    fn sample_artifact() -> ModelArtifact {
        ModelArtifact {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            model_kind: ModelKind::Dt,
            preprocessor: sample_preprocessor(),
            payload: ModelPayload::Dt {
                params: TreeParams::default(),
                root: TreeNode::Internal {
                    feature: 0,
                    threshold: 0.5,
                    left: Box::new(TreeNode::Leaf {
                        distribution: vec![1.0, 0.0],
                    }),
                    right: Box::new(TreeNode::Leaf {
                        distribution: vec![0.25, 0.75],
                    }),
                },
            },
            category_vocab: vec!["A".into(), "B".into()],
            metadata: sample_metadata(),
        }
    }

    #[test]
    fn save_load_round_trip_preserves_predictions() {
        let artifact = sample_artifact();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&artifact, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, artifact);

        let rows = Array2::from_shape_vec((3, 2), vec![0.1, 0.0, 0.9, 0.0, 0.5, 1.0]).unwrap();
        let a = artifact.predict_proba(rows.view()).unwrap();
        let b = loaded.predict_proba(rows.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checksum_ignores_timestamp_but_not_content() {
        let artifact = sample_artifact();
        let c1 = artifact.content_checksum();
        std::thread::sleep(std::time::Duration::from_millis(5));
        assert_eq!(artifact.content_checksum(), c1);

        let mut tampered = artifact;
        tampered.category_vocab[0] = "Z".into();
        assert_ne!(tampered.content_checksum(), c1);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let artifact = sample_artifact();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&artifact, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ArtifactInvalid(_))));
    }

    #[test]
    fn edited_payload_fails_checksum() {
        let artifact = sample_artifact();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&artifact, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let edited = text.replace("0.75", "0.85");
        assert_ne!(text, edited);
        fs::write(&path, edited).unwrap();
        assert!(matches!(load_model(&path), Err(Error::ArtifactChecksum)));
    }

    #[test]
    fn future_schema_version_is_rejected() {
        let mut artifact = sample_artifact();
        artifact.schema_version = ARTIFACT_SCHEMA_VERSION + 1;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&artifact, &path).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::ArtifactVersion { .. })
        ));
    }
}
