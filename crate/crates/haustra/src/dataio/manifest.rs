//! Dataset manifests: a JSON index of sequences, frame image paths and
//! (for the synthetic domain) depth map paths.
//!
//! Paths inside a manifest are interpreted relative to the manifest file;
//! loading resolves them, so in-memory manifests always hold usable paths.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::types::{Domain, PairedSample, UnpairedSample};
use crate::{Error, Result};

use super::pngio::{read_depth_png, read_image_png, write_depth_png, write_image_png};
use super::undistort::{undistort_depth, undistort_image, Intrinsics};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SequenceEntry {
    pub sequence_id: String,
    pub frames: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<PathBuf>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub dataset_name: String,
    pub domain: Domain,
    pub depth_scale_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<PathBuf>,
    pub sequences: Vec<SequenceEntry>,
}

impl Manifest {
    /// Reads and validates a manifest, resolving relative paths against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Manifest(format!("read {}: {e}", path.display())))?;
        let mut manifest: Manifest = serde_json::from_str(&raw)
            .map_err(|e| Error::Manifest(format!("parse {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        if let Some(intr) = &manifest.intrinsics {
            manifest.intrinsics = Some(resolve(intr));
        }
        for seq in &mut manifest.sequences {
            seq.frames = seq.frames.iter().map(&resolve).collect();
            if let Some(depths) = &seq.depths {
                seq.depths = Some(depths.iter().map(&resolve).collect());
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset_name.is_empty() {
            return Err(Error::Manifest("dataset_name is empty".into()));
        }
        if !(self.depth_scale_mm.is_finite() && self.depth_scale_mm > 0.0) {
            return Err(Error::Manifest(format!(
                "depth_scale_mm must be positive, got {}",
                self.depth_scale_mm
            )));
        }
        if self.sequences.is_empty() {
            return Err(Error::Manifest("manifest has no sequences".into()));
        }
        let mut seen = BTreeSet::new();
        for seq in &self.sequences {
            if seq.sequence_id.is_empty() {
                return Err(Error::Manifest("sequence with empty id".into()));
            }
            if !seen.insert(&seq.sequence_id) {
                return Err(Error::Manifest(format!(
                    "duplicate sequence id {:?}",
                    seq.sequence_id
                )));
            }
            if seq.frames.is_empty() {
                return Err(Error::Manifest(format!(
                    "sequence {:?} has no frames",
                    seq.sequence_id
                )));
            }
            if let Some(depths) = &seq.depths {
                if depths.len() != seq.frames.len() {
                    return Err(Error::Manifest(format!(
                        "sequence {:?} has {} frames but {} depths",
                        seq.sequence_id,
                        seq.frames.len(),
                        depths.len()
                    )));
                }
            } else if self.domain == Domain::A {
                return Err(Error::Manifest(format!(
                    "domain A sequence {:?} is missing depths",
                    seq.sequence_id
                )));
            }
        }
        Ok(())
    }

    pub fn sequence_ids(&self) -> Vec<String> {
        self.sequences
            .iter()
            .map(|s| s.sequence_id.clone())
            .collect()
    }

    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    /// Restricts the manifest to the given sequence ids, preserving order.
    pub fn filter_sequences(&self, keep: &[String]) -> Result<Self> {
        let keep: BTreeSet<_> = keep.iter().collect();
        let sequences: Vec<_> = self
            .sequences
            .iter()
            .filter(|s| keep.contains(&s.sequence_id))
            .cloned()
            .collect();
        if sequences.is_empty() {
            return Err(Error::Manifest(
                "sequence filter removed every sequence".into(),
            ));
        }
        Ok(Self {
            sequences,
            ..self.clone()
        })
    }

    /// Loads the intrinsics file if the manifest names one.
    pub fn load_intrinsics(&self) -> Result<Option<Intrinsics>> {
        match &self.intrinsics {
            Some(p) => Ok(Some(Intrinsics::load(p)?)),
            None => Ok(None),
        }
    }
}

/// Loads every frame of a domain-A manifest as image/depth pairs.
/// Undistortion is applied to both halves when the manifest names an
/// intrinsics file.
pub fn load_paired(manifest: &Manifest) -> Result<Vec<PairedSample>> {
    manifest.validate()?;
    if manifest.domain != Domain::A {
        return Err(Error::Manifest(format!(
            "expected a domain A manifest, got domain {}",
            manifest.domain
        )));
    }
    let intr = manifest.load_intrinsics()?;
    let mut out = Vec::with_capacity(manifest.frame_count());
    for seq in &manifest.sequences {
        let depths = seq
            .depths
            .as_ref()
            .expect("validated: domain A sequences carry depths");
        for (idx, (frame, depth_path)) in seq.frames.iter().zip(depths).enumerate() {
            let mut image = read_image_png(frame)?;
            let mut depth = read_depth_png(depth_path, manifest.depth_scale_mm)?;
            if let Some(intr) = &intr {
                image = undistort_image(&image, intr)?;
                depth = undistort_depth(&depth, intr)?;
            }
            out.push(PairedSample::new(
                image,
                depth,
                seq.sequence_id.clone(),
                idx as u32,
            )?);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("paired dataset".into()));
    }
    Ok(out)
}

/// Loads every frame of a manifest as bare images, undistorting when
/// intrinsics are present. Works for either domain; depth entries are
/// ignored.
pub fn load_unpaired(manifest: &Manifest) -> Result<Vec<UnpairedSample>> {
    manifest.validate()?;
    let intr = manifest.load_intrinsics()?;
    let mut out = Vec::with_capacity(manifest.frame_count());
    for seq in &manifest.sequences {
        for (idx, frame) in seq.frames.iter().enumerate() {
            let mut image = read_image_png(frame)?;
            if let Some(intr) = &intr {
                image = undistort_image(&image, intr)?;
            }
            out.push(UnpairedSample::new(
                image,
                seq.sequence_id.clone(),
                idx as u32,
            ));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("unpaired dataset".into()));
    }
    Ok(out)
}

fn group_key(sequence_id: &str) -> String {
    sequence_id.to_string()
}

/// Writes paired samples as a dataset directory: `images/`, `depths/` and a
/// `manifest.json` with paths relative to the directory. Samples are grouped
/// by sequence id in first-appearance order.
pub fn write_paired_dataset(
    dir: &Path,
    dataset_name: &str,
    samples: &[PairedSample],
    depth_scale_mm: f64,
) -> Result<Manifest> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("paired samples".into()));
    }
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("depths"))?;

    let mut sequences: Vec<SequenceEntry> = Vec::new();
    for sample in samples {
        let key = group_key(&sample.sequence_id);
        let stem = format!("{}_{:04}", sample.sequence_id, sample.frame_index);
        let img_rel = PathBuf::from("images").join(format!("{stem}.png"));
        let depth_rel = PathBuf::from("depths").join(format!("{stem}.png"));
        write_image_png(&dir.join(&img_rel), &sample.image)?;
        write_depth_png(&dir.join(&depth_rel), &sample.depth, depth_scale_mm)?;
        match sequences.iter_mut().find(|s| s.sequence_id == key) {
            Some(seq) => {
                seq.frames.push(img_rel);
                seq.depths.as_mut().expect("paired sequences").push(depth_rel);
            }
            None => sequences.push(SequenceEntry {
                sequence_id: key,
                frames: vec![img_rel],
                depths: Some(vec![depth_rel]),
            }),
        }
    }
    let manifest = Manifest {
        dataset_name: dataset_name.to_string(),
        domain: Domain::A,
        depth_scale_mm,
        intrinsics: None,
        sequences,
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Writes unpaired samples as a dataset directory with a domain-B manifest.
pub fn write_unpaired_dataset(
    dir: &Path,
    dataset_name: &str,
    samples: &[UnpairedSample],
) -> Result<Manifest> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("unpaired samples".into()));
    }
    std::fs::create_dir_all(dir.join("images"))?;
    let mut sequences: Vec<SequenceEntry> = Vec::new();
    for sample in samples {
        let key = group_key(&sample.sequence_id);
        let stem = format!("{}_{:04}", sample.sequence_id, sample.frame_index);
        let img_rel = PathBuf::from("images").join(format!("{stem}.png"));
        write_image_png(&dir.join(&img_rel), &sample.image)?;
        match sequences.iter_mut().find(|s| s.sequence_id == key) {
            Some(seq) => seq.frames.push(img_rel),
            None => sequences.push(SequenceEntry {
                sequence_id: key,
                frames: vec![img_rel],
                depths: None,
            }),
        }
    }
    let manifest = Manifest {
        dataset_name: dataset_name.to_string(),
        domain: Domain::B,
        depth_scale_mm: 1.0,
        intrinsics: None,
        sequences,
    };
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}
