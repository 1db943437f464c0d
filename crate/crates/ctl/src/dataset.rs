//! Corpus files on disk: manifest JSON, patch and frame PGMs, and bulk
//! texture extraction.

use std::fs;
use std::path::{Path, PathBuf};

use ctl_core::data::{split_by_patient, ClassLabel, DatasetManifest, SplitPlan};
use ctl_core::image::GrayImage;
use ctl_core::lbp::{extract_texture_map, LbpConfig, TextureMap};
use ctl_core::synth::{frame_path, Corpus};
use rayon::prelude::*;

use crate::error::{format_err, io_err, CtlError, Result};
use crate::pnm::{read_pgm, write_bytes, write_pgm};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    manifest.validate().map_err(|e| format_err(path, e.to_string()))?;
    Ok(manifest)
}

/// Write every patch, every frame and the manifest under `root`.
pub fn write_corpus(root: &Path, corpus: &Corpus) -> Result<()> {
    for (entry, patch) in corpus.manifest.entries.iter().zip(&corpus.patches) {
        write_pgm(&root.join(&entry.image_path), patch)?;
    }
    for v in &corpus.volumes {
        for (f, frame) in v.frames.iter().enumerate() {
            write_pgm(&root.join(frame_path(&v.volume_id, f)), frame)?;
        }
    }
    write_manifest(&root.join(MANIFEST_FILE), &corpus.manifest)
}

/// A manifest with its patch images loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub images: Vec<GrayImage>,
}

impl Dataset {
    /// Load `manifest.json` (or the given JSON file) and every patch it
    /// lists, relative to the manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let path = if manifest_path.is_dir() { manifest_path.join(MANIFEST_FILE) } else { manifest_path.to_path_buf() };
        let manifest = read_manifest(&path)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let images = manifest.entries.iter().map(|e| read_pgm(&root.join(&e.image_path))).collect::<Result<Vec<_>>>()?;
        Ok(Self { root, manifest, images })
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        Self { root: PathBuf::new(), manifest: corpus.manifest.clone(), images: corpus.patches.clone() }
    }

    pub fn labels(&self) -> Vec<ClassLabel> {
        self.manifest.entries.iter().map(|e| e.label).collect()
    }

    pub fn split(&self, ratio: f64, seed: u64) -> Result<SplitPlan> {
        Ok(split_by_patient(&self.manifest, ratio, seed)?)
    }

    /// Entry indices on the training and test sides of `plan`.
    pub fn partition(&self, plan: &SplitPlan) -> (Vec<usize>, Vec<usize>) {
        let e = &self.manifest.entries;
        let train = (0..e.len()).filter(|&i| plan.is_train(&e[i].patient_id)).collect();
        let test = (0..e.len()).filter(|&i| plan.is_test(&e[i].patient_id)).collect();
        (train, test)
    }

    /// Sample identifier shared by prediction and truth tables.
    pub fn sample_id(&self, index: usize) -> String {
        let e = &self.manifest.entries[index];
        format!("{}_f{:02}_w{}", e.volume_id, e.frame_index, e.patch_index)
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| CtlError::Invalid(e.to_string()))
}

/// Texture maps of `images` on `jobs` workers; output order follows input.
pub fn extract_maps(images: &[GrayImage], lbp: &LbpConfig, jobs: usize) -> Result<Vec<TextureMap>> {
    let maps = pool(jobs)?.install(|| images.par_iter().map(|img| extract_texture_map(img, lbp)).collect::<Vec<_>>());
    Ok(maps.into_iter().collect::<ctl_core::Result<Vec<_>>>()?)
}

/// Normalized maps as images, ready for the network.
pub fn extract_normalized(images: &[GrayImage], lbp: &LbpConfig, jobs: usize) -> Result<Vec<GrayImage>> {
    Ok(extract_maps(images, lbp, jobs)?.iter().map(TextureMap::normalized_image).collect())
}

/// Frames `frame_XX.pgm` of one volume directory, in name order.
pub fn read_frames(dir: &Path) -> Result<Vec<GrayImage>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(format_err(dir, "no .pgm frames found"));
    }
    paths.iter().map(|p| read_pgm(p)).collect()
}
