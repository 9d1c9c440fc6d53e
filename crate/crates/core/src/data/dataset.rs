//! Dataset directories: `<stem>.pgm` or `<stem>.ppm` next to `<stem>.labels.pgm`.
//!
//! Entries are ordered by stem; an entry's position is its image id in
//! sparse label files.

use std::fs;
use std::path::{Path, PathBuf};

use super::{load_image, load_labels, save_image, save_labels, LabeledImage};
use crate::error::{Error, Result};

pub const LABEL_SUFFIX: &str = ".labels.pgm";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub stem: String,
    pub image: LabeledImage,
}

fn image_path(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["pgm", "ppm"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// Loads every labeled image in `dir`, sorted by stem.
pub fn load_dataset_dir(dir: &Path, num_classes: Option<usize>) -> Result<Vec<DatasetEntry>> {
    let read = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in read {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(LABEL_SUFFIX) {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} holds no *{LABEL_SUFFIX} files",
            dir.display()
        )));
    }
    stems
        .into_iter()
        .map(|stem| {
            let img_path = image_path(dir, &stem).ok_or_else(|| {
                Error::InvalidConfig(format!("no image for labels {stem}{LABEL_SUFFIX}"))
            })?;
            let image = load_image(&img_path)?;
            let labels = load_labels(&dir.join(format!("{stem}{LABEL_SUFFIX}")), num_classes)?;
            Ok(DatasetEntry {
                image: LabeledImage::new(image, labels)?,
                stem,
            })
        })
        .collect()
}

/// Writes entries as `<stem>.pgm|ppm` plus `<stem>.labels.pgm`.
pub fn save_dataset_dir(dir: &Path, entries: &[DatasetEntry], num_classes: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for e in entries {
        let ext = if e.image.image.num_channels() == 3 { "ppm" } else { "pgm" };
        save_image(&e.image.image, &dir.join(format!("{}.{ext}", e.stem)))?;
        save_labels(
            &e.image.labels,
            num_classes,
            &dir.join(format!("{}{LABEL_SUFFIX}", e.stem)),
        )?;
    }
    Ok(())
}
