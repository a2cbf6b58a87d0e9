//! Pair folders as written by `distort`: `manifest.csv` plus
//! `<stem>.dist.png` / `<stem>.ref.png`, and optional `.ctxf` context files.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use retouch_core::distort::{read_manifest, ManifestEntry};
use retouch_core::features::{load_context_feature, ContextFeature};
use retouch_core::RgbImage;

use crate::imageio::load_image;

pub const MANIFEST_FILE: &str = "manifest.csv";

pub fn distorted_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.dist.png"))
}

pub fn reference_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.ref.png"))
}

pub fn read_pair_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let file = File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
    let entries = read_manifest(BufReader::new(file)).with_context(|| format!("invalid {}", path.display()))?;
    if entries.is_empty() {
        bail!("{} lists no pairs", path.display());
    }
    Ok(entries)
}

pub fn load_pair(dir: &Path, stem: &str) -> Result<(RgbImage, RgbImage)> {
    let distorted = load_image(&distorted_path(dir, stem))?;
    let reference = load_image(&reference_path(dir, stem))?;
    if !distorted.same_dims(&reference) {
        bail!("pair `{stem}`: distorted and reference sizes differ");
    }
    Ok((distorted, reference))
}

/// `<stem>.ctxf`, falling back to `<stem>.dist.ctxf`.
pub fn find_feature(features_dir: &Path, stem: &str) -> Option<PathBuf> {
    [format!("{stem}.ctxf"), format!("{stem}.dist.ctxf")]
        .into_iter()
        .map(|name| features_dir.join(name))
        .find(|p| p.is_file())
}

/// One feature per stem, all of one width. Missing files are reported
/// together, by stem.
pub fn load_features(features_dir: &Path, stems: &[&str]) -> Result<Vec<ContextFeature>> {
    let mut missing = Vec::new();
    let mut paths = Vec::new();
    for stem in stems {
        match find_feature(features_dir, stem) {
            Some(p) => paths.push(p),
            None => missing.push(*stem),
        }
    }
    if !missing.is_empty() {
        bail!(
            "missing context features in {} for stems: {}",
            features_dir.display(),
            missing.join(", ")
        );
    }
    let mut features = Vec::with_capacity(paths.len());
    for (path, stem) in paths.iter().zip(stems) {
        let f = load_context_feature(path).with_context(|| format!("context feature for `{stem}`"))?;
        if let Some(first) = features.first() {
            let first: &ContextFeature = first;
            if first.dim() != f.dim() {
                bail!(
                    "context feature for `{stem}` has {} dims but `{}` has {}",
                    f.dim(),
                    stems[0],
                    first.dim()
                );
            }
        }
        features.push(f);
    }
    Ok(features)
}
