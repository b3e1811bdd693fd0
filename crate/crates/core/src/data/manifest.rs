//! Label manifests: one `<relative_path> <class_index>` pair per line.
//!
//! Blank lines and lines starting with `#` are ignored. A `-` in the label
//! column marks an unlabeled file.

use std::fmt::Write as _;
use std::path::{Component, Path, PathBuf};

use crate::data::{Image, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Option<usize>,
}

pub fn parse_label_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: n + 1, msg };
        let (path, label) = line
            .rsplit_once(char::is_whitespace)
            .ok_or_else(|| err(format!("expected `<path> <class>`, got {line:?}")))?;
        let path = path.trim_end();
        let label = match label {
            "-" => None,
            s => Some(s.parse::<usize>().map_err(|_| err(format!("bad class index {s:?}")))?),
        };
        let p = PathBuf::from(path);
        if p.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
            return Err(err(format!("path {path:?} must be relative and stay inside the dataset root")));
        }
        out.push(ManifestEntry { path: p, label });
    }
    Ok(out)
}

pub fn write_label_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        match e.label {
            Some(l) => writeln!(s, "{} {l}", e.path.display()),
            None => writeln!(s, "{} -", e.path.display()),
        }
        .expect("writing to a String");
    }
    s
}

/// Loads a dataset from `root` using the manifest at `manifest_path`.
///
/// Images are converted to RGB, must be square and share one size, and are
/// scaled to `[-1, 1]`. `num_classes` defaults to one past the largest label.
pub fn load_manifest_dataset(root: &Path, manifest_path: &Path, num_classes: Option<usize>) -> Result<LabeledDataset> {
    if !root.is_dir() {
        return Err(Error::MissingArtifact { path: root.to_path_buf(), reason: "dataset directory not found".into() });
    }
    let text = std::fs::read_to_string(manifest_path).map_err(crate::error::io_err(manifest_path))?;
    let entries = parse_label_manifest(&text)?;
    let mut images = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for e in &entries {
        let path = root.join(&e.path);
        let img = image::open(&path).map_err(|source| Error::Image { path: path.clone(), source })?.to_rgb8();
        let (w, h) = img.dimensions();
        if w != h {
            return Err(Error::Argument(format!("{} is {w}x{h}; images must be square", path.display())));
        }
        let pixels = img.as_raw().iter().map(|&v| v as f32 / 127.5 - 1.0).collect();
        images.push(Image::new(w as usize, 3, pixels)?);
        labels.push(e.label);
    }
    let k = num_classes.unwrap_or_else(|| labels.iter().flatten().max().map_or(1, |m| m + 1));
    let id = manifest_path.file_stem().map_or_else(|| "manifest".to_string(), |s| s.to_string_lossy().into_owned());
    LabeledDataset::new(id, images, labels, k)
}
