//! Deterministic procedural stand-in for a cervical OCT patch corpus.
//!
//! Each class has its own texture family:
//!
//! * MI: smooth horizontal layering
//! * EP: bright papillary bump contours
//! * CY: dark elliptical voids
//! * HSIL: vertical icicle streaks fading with depth
//! * CC: dense speckle with rapid intensity decay
//!
//! Per-patient parameters and per-frame structure placement come from
//! named PRNG streams, so equal configurations give byte-equal images.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{sliding_windows, ClassLabel, DatasetManifest, ManifestEntry};
use crate::error::{invalid, Result};
use crate::image::GrayImage;
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub patients_per_class: usize,
    pub frames_per_volume: usize,
    pub frame_width: usize,
    pub patch_size: usize,
    pub stride: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { seed: 0, patients_per_class: 15, frames_per_volume: 10, frame_width: 128, patch_size: 64, stride: 32 }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patients_per_class == 0 || self.frames_per_volume == 0 {
            return Err(invalid("corpus needs at least one patient per class and one frame per volume"));
        }
        if self.patch_size < 8 {
            return Err(invalid("patch size must be at least 8"));
        }
        if self.patch_size > self.frame_width {
            return Err(invalid(format!("patch size {} exceeds frame width {}", self.patch_size, self.frame_width)));
        }
        if self.stride == 0 {
            return Err(invalid("window stride must be >= 1"));
        }
        Ok(())
    }

    pub fn windows(&self) -> Result<Vec<usize>> {
        sliding_windows(self.frame_width, self.patch_size, self.stride)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthVolume {
    pub patient_id: String,
    pub volume_id: String,
    pub label: ClassLabel,
    pub frames: Vec<GrayImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub volumes: Vec<SynthVolume>,
    /// Patch images aligned with `manifest.entries`.
    pub patches: Vec<GrayImage>,
}

pub fn patch_path(volume_id: &str, frame: usize, patch: usize) -> String {
    format!("patches/{volume_id}_f{frame:02}_w{patch}.pgm")
}

pub fn frame_path(volume_id: &str, frame: usize) -> String {
    format!("frames/{volume_id}/frame_{frame:02}.pgm")
}

/// Patient-level appearance parameters.
#[derive(Clone, Copy, Debug)]
struct PatientStyle {
    noise: f64,
    gain: f64,
    depth: f64,
    scale: f64,
    phase: f64,
}

impl PatientStyle {
    fn draw(rng: &mut Stream) -> Self {
        Self {
            noise: rng.random_range(2.0..4.0),
            gain: rng.random_range(0.85..1.15),
            depth: rng.random_range(60.0..110.0),
            scale: rng.random_range(0.85..1.2),
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

fn gaussian(d2: f64, sigma: f64) -> f64 {
    libm::exp(-d2 / (2.0 * sigma * sigma))
}

/// Noise-free intensity field (0..255 scale) of one family.
fn render_field(label: ClassLabel, width: usize, height: usize, style: &PatientStyle, rng: &mut Stream) -> Vec<f64> {
    let (w, h) = (width as f64, height as f64);
    let mut field = alloc::vec![0.0f64; width * height];
    let idx = |r: usize, c: usize| r * width + c;
    match label {
        ClassLabel::MI => {
            let period = rng.random_range(9.0..13.0) * style.scale;
            let wobble = rng.random_range(0.5..2.0);
            let lambda = rng.random_range(40.0..90.0);
            let psi = rng.random_range(0.0..2.0 * PI);
            for r in 0..height {
                for c in 0..width {
                    let y = r as f64 + wobble * libm::sin(2.0 * PI * c as f64 / lambda + psi);
                    let layer = 0.55 + 0.45 * libm::sin(2.0 * PI * y / period + style.phase);
                    field[idx(r, c)] = 40.0 + 150.0 * layer * libm::exp(-(r as f64) / (2.0 * style.depth));
                }
            }
        }
        ClassLabel::EP => {
            let bumps = (w * h / 900.0) as usize + rng.random_range(0..3);
            let centers: Vec<(f64, f64, f64)> = (0..bumps)
                .map(|_| (rng.random_range(0.0..h), rng.random_range(0.0..w), rng.random_range(5.0..9.0) * style.scale))
                .collect();
            for r in 0..height {
                for c in 0..width {
                    let mut ring = 0.0f64;
                    for &(cy, cx, rad) in &centers {
                        let d = libm::sqrt(sq(r as f64 - cy) + sq(c as f64 - cx));
                        ring = ring.max(gaussian(sq(d - rad), 1.3));
                    }
                    field[idx(r, c)] = 55.0 + 150.0 * ring;
                }
            }
        }
        ClassLabel::CY => {
            let voids = (w * h / 1400.0) as usize + rng.random_range(1..3);
            let ellipses: Vec<(f64, f64, f64, f64)> = (0..voids)
                .map(|_| {
                    (
                        rng.random_range(0.0..h),
                        rng.random_range(0.0..w),
                        rng.random_range(7.0..13.0) * style.scale,
                        rng.random_range(4.0..7.0) * style.scale,
                    )
                })
                .collect();
            for r in 0..height {
                for c in 0..width {
                    let mut dark = 0.0f64;
                    for &(cy, cx, a, b) in &ellipses {
                        let q = sq((c as f64 - cx) / a) + sq((r as f64 - cy) / b);
                        dark = dark.max(libm::exp(-q * q));
                    }
                    let bg = 150.0 + 12.0 * libm::sin(2.0 * PI * r as f64 / 23.0 + style.phase);
                    field[idx(r, c)] = bg * (1.0 - 0.8 * dark);
                }
            }
        }
        ClassLabel::HSIL => {
            let streaks = (w / 7.0) as usize + rng.random_range(0..4);
            let cols: Vec<(f64, f64, f64, f64)> = (0..streaks)
                .map(|_| {
                    (
                        rng.random_range(0.0..w),
                        rng.random_range(0.9..1.6),
                        rng.random_range(0.35..0.9) * h,
                        rng.random_range(0.6..1.0),
                    )
                })
                .collect();
            for r in 0..height {
                for c in 0..width {
                    let mut s = 0.0f64;
                    for &(x0, sigma, length, amp) in &cols {
                        let fade = libm::exp(-(r as f64) / length);
                        s = s.max(amp * fade * gaussian(sq(c as f64 - x0), sigma));
                    }
                    field[idx(r, c)] = 45.0 + 170.0 * s + 20.0 * libm::exp(-(r as f64) / style.depth);
                }
            }
        }
        ClassLabel::CC => {
            let decay = rng.random_range(14.0..22.0) * style.scale;
            let raw: Vec<f64> = (0..width * height).map(|_| -libm::log(1.0 - rng.random::<f64>())).collect();
            for r in 0..height {
                for c in 0..width {
                    let mut acc = 0.0;
                    let mut n = 0.0;
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                            if rr >= 0 && cc >= 0 && (rr as usize) < height && (cc as usize) < width {
                                acc += raw[idx(rr as usize, cc as usize)];
                                n += 1.0;
                            }
                        }
                    }
                    let speckle = acc / n;
                    field[idx(r, c)] = 25.0 + 170.0 * speckle * libm::exp(-(r as f64) / decay);
                }
            }
        }
    }
    field
}

fn finish(field: &[f64], width: usize, height: usize, style: &PatientStyle, rng: &mut Stream) -> GrayImage {
    let px = field
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            let v = v * style.gain + style.noise * z;
            libm::round(v.clamp(0.0, 255.0)) as f32
        })
        .collect();
    GrayImage::new(width, height, px).expect("field size matches image")
}

/// One synthetic frame of `label` texture.
pub fn render_frame(label: ClassLabel, width: usize, height: usize, seed: u64, patient: u64, frame: u64) -> GrayImage {
    let style = PatientStyle::draw(&mut stream(seed, "patient-style", &[patient]));
    let mut rng = stream(seed, "frame", &[patient, frame]);
    let field = render_field(label, width, height, &style, &mut rng);
    finish(&field, width, height, &style, &mut rng)
}

/// A volume of `background` frames where the listed `(frame, window)` tiles
/// (non-overlapping windows of `patch_size` columns) carry `implant` texture.
pub fn render_implanted_volume(
    background: ClassLabel,
    implant: ClassLabel,
    frames: usize,
    windows: usize,
    patch_size: usize,
    tiles: &[(usize, usize)],
    seed: u64,
) -> Result<Vec<GrayImage>> {
    if frames == 0 || windows == 0 || patch_size < 8 {
        return Err(invalid("implanted volume needs frames, windows and a patch size of at least 8"));
    }
    if let Some(&(f, w)) = tiles.iter().find(|&&(f, w)| f >= frames || w >= windows) {
        return Err(invalid(format!("implant tile ({f}, {w}) outside a {frames}x{windows} volume")));
    }
    let width = windows * patch_size;
    let style = PatientStyle::draw(&mut stream(seed, "patient-style", &[u64::MAX]));
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut rng = stream(seed, "implant-frame", &[f as u64]);
        let mut field = render_field(background, width, patch_size, &style, &mut rng);
        for &(tf, tw) in tiles.iter().filter(|t| t.0 == f) {
            let tile = render_field(implant, patch_size, patch_size, &style, &mut rng);
            for r in 0..patch_size {
                for c in 0..patch_size {
                    field[r * width + tw * patch_size + c] = tile[r * patch_size + c];
                }
            }
            let _ = tf;
        }
        out.push(finish(&field, width, patch_size, &style, &mut rng));
    }
    Ok(out)
}

/// Build the full corpus: one volume per patient, `frames_per_volume`
/// frames per volume, sliding-window patches per frame.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let offsets = config.windows()?;
    let mut entries = Vec::new();
    let mut volumes = Vec::new();
    let mut patches = Vec::new();
    for (ci, &label) in ClassLabel::ALL.iter().enumerate() {
        for k in 0..config.patients_per_class {
            let patient = (ci * config.patients_per_class + k) as u64;
            let patient_id = format!("P{patient:03}");
            let volume_id = format!("V{patient:03}");
            let mut frames = Vec::with_capacity(config.frames_per_volume);
            for f in 0..config.frames_per_volume {
                let frame = render_frame(label, config.frame_width, config.patch_size, config.seed, patient, f as u64);
                for (wi, &off) in offsets.iter().enumerate() {
                    patches.push(frame.crop(0, off, config.patch_size, config.patch_size)?);
                    entries.push(ManifestEntry {
                        patient_id: patient_id.clone(),
                        volume_id: volume_id.clone(),
                        frame_index: f,
                        patch_index: wi,
                        image_path: patch_path(&volume_id, f, wi),
                        label,
                    });
                }
                frames.push(frame);
            }
            volumes.push(SynthVolume { patient_id: patient_id.clone(), volume_id, label, frames });
        }
    }
    let manifest = DatasetManifest { entries, generator_seed: config.seed, patch_size: config.patch_size };
    manifest.validate()?;
    Ok(Corpus { manifest, volumes, patches })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_and_determinism() {
        let cfg = CorpusConfig { seed: 11, patients_per_class: 2, frames_per_volume: 10, frame_width: 96, patch_size: 32, stride: 32 };
        let a = generate_corpus(&cfg).unwrap();
        assert_eq!(a.manifest.entries.len(), 5 * 2 * 10 * 3);
        assert_eq!(a.patches.len(), a.manifest.entries.len());
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&CorpusConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.patches, c.patches);
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        let bad = CorpusConfig { patch_size: 200, ..CorpusConfig::default() };
        assert!(generate_corpus(&bad).is_err());
        let bad = CorpusConfig { frames_per_volume: 0, ..CorpusConfig::default() };
        assert!(generate_corpus(&bad).is_err());
    }

    #[test]
    fn default_corpus_has_2250_patches() {
        let cfg = CorpusConfig::default();
        assert_eq!(cfg.windows().unwrap().len(), 3);
        assert_eq!(5 * cfg.patients_per_class * cfg.frames_per_volume * 3, 2250);
    }
}
