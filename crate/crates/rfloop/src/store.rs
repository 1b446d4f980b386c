//! A model on disk: `<stem>.toml` manifest plus `<stem>.rflw` blob.

use std::path::{Path, PathBuf};

use rfloop_core::ModelSpec;

use crate::blob::{self, Weights};
use crate::manifest::{ModelManifest, Provenance};
use crate::wire::{read_file, write_file};
use crate::FormatError;

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("toml")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("rflw")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    pub manifest: ModelManifest,
    pub model: ModelSpec,
    pub weights: Weights,
}

/// Writes `manifest` and a blob bound to it.
pub fn save_with_manifest(
    manifest_path: &Path,
    blob_path: &Path,
    manifest: &ModelManifest,
    weights: &Weights,
) -> Result<(), FormatError> {
    let model = manifest.model()?;
    if let (Some(want), Some(have)) = (manifest.format()?, weights.format()) {
        if want != have {
            return Err(FormatError::Invalid(format!(
                "manifest declares {want}, weights are {have}"
            )));
        }
    }
    let bytes = blob::encode(&model, weights, &manifest.hash())?;
    manifest.save(manifest_path)?;
    write_file(blob_path, &bytes)
}

/// Saves `model` + `weights` under `stem` and returns the manifest written.
pub fn save_model(
    stem: &Path,
    model: &ModelSpec,
    weights: &Weights,
    provenance: Provenance,
) -> Result<ModelManifest, FormatError> {
    let mut manifest = ModelManifest::new(model, provenance);
    if let Some(fmt) = weights.format() {
        manifest = manifest.with_format(fmt);
    }
    save_with_manifest(&manifest_path(stem), &blob_path(stem), &manifest, weights)?;
    Ok(manifest)
}

/// Loads a blob against an already loaded manifest. Float and fixed blobs
/// of one architecture can share a manifest; a fixed blob must match the
/// manifest's declared format, if any.
pub fn load_blob(
    manifest: &ModelManifest,
    model: &ModelSpec,
    blob_path: &Path,
) -> Result<Weights, FormatError> {
    let bytes = read_file(blob_path)?;
    let weights = blob::decode(model, &bytes, &manifest.hash())?;
    if let (Some(want), Some(have)) = (manifest.format()?, weights.format()) {
        if want != have {
            return Err(FormatError::Invalid(format!(
                "{}: manifest declares {want}, blob holds {have}",
                blob_path.display()
            )));
        }
    }
    Ok(weights)
}

pub fn load_model(manifest_path: &Path, blob_path: &Path) -> Result<LoadedModel, FormatError> {
    let manifest = ModelManifest::load(manifest_path)?;
    let model = manifest.model()?;
    let weights = load_blob(&manifest, &model, blob_path)?;
    Ok(LoadedModel {
        manifest,
        model,
        weights,
    })
}

pub fn load_stem(stem: &Path) -> Result<LoadedModel, FormatError> {
    load_model(&manifest_path(stem), &blob_path(stem))
}
