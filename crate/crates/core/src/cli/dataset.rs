//! Datasets on disk: `images/<id>.png`, `manifest.csv` and `labels.csv`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::Image;
use crate::error::{Error, Result};
use crate::synth::{assemble_response, Domain, EffectSpec, SyntheticDataset};

pub const MANIFEST: &str = "manifest.csv";
pub const LABELS: &str = "labels.csv";
pub const IMAGE_DIR: &str = "images";

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: String,
    pub split: String,
    pub domain: Domain,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub phi: f64,
    pub y: f64,
    pub noise: f64,
    pub spec: String,
    pub seed: u64,
}

/// `path,label` row for attribute-direction fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub path: String,
    pub label: u8,
}

fn sample_id(i: usize) -> String {
    format!("{i:06}")
}

fn image_rel_path(id: &str) -> String {
    format!("{IMAGE_DIR}/{id}.png")
}

/// Writes both splits under `dir`, train first. The binary label is
/// `Φ > 0.5` (square right of center, or more red than not).
pub fn write_dataset(dir: &Path, train: &SyntheticDataset, test: &SyntheticDataset) -> Result<()> {
    let img_dir = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::Path { path: img_dir.clone(), source: e })?;
    let mut manifest = csv::Writer::from_path(dir.join(MANIFEST))?;
    let mut labels = csv::Writer::from_path(dir.join(LABELS))?;
    let mut index = 0;
    for (split, ds) in [("train", train), ("test", test)] {
        let tag = ds.spec.tag();
        for i in 0..ds.len() {
            let id = sample_id(index);
            index += 1;
            ds.images[i].save_png(&dir.join(image_rel_path(&id)))?;
            let [x1, x2, x3] = ds.features[i];
            manifest.serialize(ManifestRow {
                sample_id: id.clone(),
                split: split.into(),
                domain: ds.domain,
                x1,
                x2,
                x3,
                phi: ds.phi[i],
                y: ds.y[i],
                noise: ds.noise[i],
                spec: tag.clone(),
                seed: ds.seed,
            })?;
            labels.serialize(LabelRow { path: image_rel_path(&id), label: u8::from(ds.phi[i] > 0.5) })?;
        }
    }
    manifest.flush()?;
    labels.flush()?;
    Ok(())
}

/// A dataset read back from disk, split as recorded in the manifest.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dir: PathBuf,
    pub train: SyntheticDataset,
    pub test: SyntheticDataset,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Hex SHA-256 of the manifest bytes.
    pub manifest_sha256: String,
}

impl LoadedDataset {
    pub fn all_ids(&self) -> Vec<String> {
        self.train_ids.iter().chain(&self.test_ids).cloned().collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn empty_split(domain: Domain, spec: EffectSpec, seed: u64) -> SyntheticDataset {
    SyntheticDataset { domain, spec, seed, features: vec![], images: vec![], phi: vec![], noise: vec![], y: vec![] }
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest_path = dir.join(MANIFEST);
    let bytes = std::fs::read(&manifest_path).map_err(|e| Error::Path { path: manifest_path.clone(), source: e })?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let rows = reader.deserialize::<ManifestRow>().collect::<std::result::Result<Vec<_>, _>>()?;
    let first = rows.first().ok_or_else(|| Error::Empty(format!("{} has no rows", manifest_path.display())))?;
    let spec: EffectSpec = first.spec.parse()?;
    let (domain, seed, spec_tag) = (first.domain, first.seed, first.spec.clone());
    let mut train = empty_split(domain, spec, seed);
    let mut test = empty_split(domain, spec, seed);
    let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
    for row in rows {
        if row.domain != domain || row.spec != spec_tag || row.seed != seed {
            return Err(Error::Format(format!("sample {} disagrees with the manifest header row", row.sample_id)));
        }
        let (ds, ids) = match row.split.as_str() {
            "train" => (&mut train, &mut train_ids),
            "test" => (&mut test, &mut test_ids),
            other => return Err(Error::Format(format!("unknown split {other:?} for sample {}", row.sample_id))),
        };
        let image = Image::load_png(&dir.join(image_rel_path(&row.sample_id)))?;
        if image.channels() != domain.channels() {
            return Err(Error::Format(format!("sample {} has {} channels", row.sample_id, image.channels())));
        }
        ds.features.push([row.x1, row.x2, row.x3]);
        ds.images.push(image);
        ds.phi.push(row.phi);
        ds.noise.push(row.noise);
        ds.y.push(row.y);
        ids.push(row.sample_id);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("manifest needs both train and test rows".into()));
    }
    Ok(LoadedDataset { dir: dir.to_path_buf(), train, test, train_ids, test_ids, manifest_sha256: sha256_hex(&bytes) })
}

/// Re-derives every response from its recorded inputs; returns the largest
/// absolute discrepancy.
pub fn response_discrepancy(ds: &SyntheticDataset) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..ds.len() {
        let y = assemble_response(&ds.features[i], ds.phi[i], &ds.spec, ds.noise[i])?;
        worst = worst.max((y - ds.y[i]).abs());
    }
    Ok(worst)
}

/// Images and boolean labels listed in a `path,label` CSV; paths are relative
/// to the CSV's directory.
pub fn load_labels(path: &Path) -> Result<(Vec<Image>, Vec<bool>)> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Path { path: path.to_path_buf(), source: io },
        other => Error::Format(format!("{}: {other:?}", path.display())),
    })?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row?;
        if row.label > 1 {
            return Err(Error::Format(format!("label {} for {} is not 0/1", row.label, row.path)));
        }
        images.push(Image::load_png(&base.join(&row.path))?);
        labels.push(row.label == 1);
    }
    if images.is_empty() {
        return Err(Error::Empty(format!("{} lists no images", path.display())));
    }
    Ok((images, labels))
}
