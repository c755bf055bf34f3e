//! Versioned JSON bundle holding everything needed to reuse a trained run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::dataset::LoadedDataset;
use crate::bench::mse;
use crate::codec::AutoencoderModel;
use crate::error::{Error, Result};
use crate::nam::NaimModel;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub manifest_sha256: String,
    pub autoencoder: AutoencoderModel,
    pub model: NaimModel,
    /// Full-model MSE on the manifest's test split.
    pub validation_mse: f64,
    /// Training-split mean of the true image effect, used to center
    /// reference curves.
    pub image_truth_mean: f64,
}

impl ModelBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::Path { path: path.to_path_buf(), source: e })
    }

    /// Refuses bundles written under another format version before touching
    /// the rest of the payload.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Path { path: path.to_path_buf(), source: e })?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(BUNDLE_FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Format(format!(
                    "{}: bundle format version {v}, this build reads version {BUNDLE_FORMAT_VERSION}",
                    path.display()
                )))
            }
            None => return Err(Error::Format(format!("{}: no bundle format version", path.display()))),
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Recomputes the test-split MSE.
    pub fn test_mse(&self, data: &LoadedDataset) -> Result<f64> {
        let codes = self.autoencoder.encode_batch(&data.test.images)?;
        let pred = self.model.predict_batch(&data.test.feature_rows(), &codes)?;
        mse(&pred, &data.test.y)
    }

    /// Checks that `data` is the dataset this bundle was trained on and that
    /// predictions still reproduce the stored validation MSE.
    pub fn verify(&self, data: &LoadedDataset) -> Result<()> {
        if data.manifest_sha256 != self.manifest_sha256 {
            return Err(Error::Format(format!(
                "manifest hash {} does not match the bundle's {}",
                data.manifest_sha256, self.manifest_sha256
            )));
        }
        let now = self.test_mse(data)?;
        if (now - self.validation_mse).abs() > 1e-9 {
            return Err(Error::Format(format!("validation MSE {now} differs from stored {}", self.validation_mse)));
        }
        Ok(())
    }
}
