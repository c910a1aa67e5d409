//! Pair directories: SVOL files plus a `manifest.json` naming them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::generate::{generate_pair, SyntheticSpec, VolumePair};
use super::io::{load_volume, save_volume, write_atomic, SvolFile};
use crate::error::{Error, Result};
use crate::registration::unregistered_metrics;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub pair_id: String,
    pub fixed: String,
    pub moving: String,
    pub fixed_labels: String,
    pub moving_labels: String,
    pub field: Option<String>,
    pub spec: SyntheticSpec,
    pub spacing_mm: [f64; 3],
    pub unregistered_dice: f64,
}

pub fn pair_id(index: usize) -> String {
    format!("pair_{index:03}")
}

pub fn save_pair(dir: &Path, id: &str, spec: &SyntheticSpec, pair: &VolumePair) -> Result<PairManifest> {
    std::fs::create_dir_all(dir)?;
    save_volume(&dir.join("fixed.svol"), &SvolFile::intensity(&pair.fixed))?;
    save_volume(&dir.join("moving.svol"), &SvolFile::intensity(&pair.moving))?;
    save_volume(&dir.join("fixed_labels.svol"), &SvolFile::labels(&pair.fixed_labels))?;
    save_volume(&dir.join("moving_labels.svol"), &SvolFile::labels(&pair.moving_labels))?;
    let field = match &pair.gt_field {
        Some(u) => {
            save_volume(&dir.join("field.svol"), &SvolFile::field(pair.fixed.dims, pair.fixed.spacing, u))?;
            Some("field.svol".to_string())
        }
        None => None,
    };
    let manifest = PairManifest {
        pair_id: id.to_string(),
        fixed: "fixed.svol".into(),
        moving: "moving.svol".into(),
        fixed_labels: "fixed_labels.svol".into(),
        moving_labels: "moving_labels.svol".into(),
        field,
        spec: spec.clone(),
        spacing_mm: pair.fixed.spacing,
        unregistered_dice: unregistered_metrics(&pair.moving_labels, &pair.fixed_labels)?.dice_mean,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&dir.join(MANIFEST), &json)?;
    Ok(manifest)
}

pub fn load_pair(dir: &Path) -> Result<(PairManifest, VolumePair)> {
    let manifest: PairManifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST))?)?;
    let pair = VolumePair {
        fixed: load_volume(&dir.join(&manifest.fixed))?.into_intensity()?,
        moving: load_volume(&dir.join(&manifest.moving))?.into_intensity()?,
        fixed_labels: load_volume(&dir.join(&manifest.fixed_labels))?.into_labels()?,
        moving_labels: load_volume(&dir.join(&manifest.moving_labels))?.into_labels()?,
        gt_field: match &manifest.field {
            Some(f) => Some(load_volume(&dir.join(f))?.into_field()?),
            None => None,
        },
    };
    let d = pair.fixed.dims;
    if [pair.moving.dims, pair.fixed_labels.dims, pair.moving_labels.dims].iter().any(|x| *x != d) {
        return Err(Error::Format(format!("pair {} has mismatched extents", manifest.pair_id)));
    }
    Ok((manifest, pair))
}

/// Generates `n_pairs` pairs under `root/pair_XXX`, seeds derived from `spec.seed`.
pub fn generate_dataset(root: &Path, spec: &SyntheticSpec, n_pairs: usize) -> Result<Vec<PairManifest>> {
    (0..n_pairs)
        .map(|i| {
            let s = spec.for_pair(i);
            let pair = generate_pair(&s)?;
            save_pair(&root.join(pair_id(i)), &pair_id(i), &s, &pair)
        })
        .collect()
}

/// Pair directories under `root`, sorted by name.
pub fn list_pairs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}
