//! Dataset ingestion, image normalization, augmentation, and a synthetic
//! word-image generator.
//!
//! Manifests are TSV files (`image_path<TAB>transcript<TAB>split`), images
//! 8-bit grayscale PNG or PGM. Every image is normalized to a 224x224 array
//! in [0,1] before any model sees it, and every transcript is canonicalized
//! to the 36-symbol alphabet at ingestion so all later stages agree on one
//! character set.

mod augment;
mod font;
mod synth;

pub use augment::{augment, augment_image, AugmentationSpec};
pub use synth::{synthesize_corpus, FontStyle, SyntheticCorpusSpec};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::phoc::unigram_index;

/// Side length every image is normalized to.
pub const IMAGE_SIZE: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One word image with its transcript and label.
#[derive(Debug, Clone)]
pub struct WordSample {
    /// Normalized grayscale image, 224x224, values in [0,1].
    pub image: Array2<f32>,
    pub transcript: String,
    pub class_id: u32,
    pub split: Split,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_path: String,
    pub transcript: String,
    pub split: Split,
    /// Position of this entry's transcript among the manifest's distinct
    /// transcripts, in first-appearance order.
    pub class_id: u32,
}

/// Parsed dataset manifest. Entries keep file order; class ids are a
/// bijection with distinct transcripts.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub name: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn alphabet() -> &'static [char; 36] {
        &crate::phoc::UNIGRAMS
    }

    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn transcripts_for(&self, split: Split) -> Vec<String> {
        self.entries_for(split).map(|e| e.transcript.clone()).collect()
    }
}

/// Lowercase and drop every character outside `a-z0-9`.
pub fn canonicalize(s: &str) -> String {
    s.chars()
        .flat_map(|c| c.to_lowercase())
        .filter(|&c| unigram_index(c).is_some())
        .collect()
}

fn assign_class_ids(entries: &mut [ManifestEntry]) {
    let mut ids: BTreeMap<String, u32> = BTreeMap::new();
    let mut next = 0u32;
    for e in entries.iter_mut() {
        let id = *ids.entry(e.transcript.clone()).or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        e.class_id = id;
    }
}

/// Parse a manifest TSV. Transcripts are canonicalized; `#` lines and blank
/// lines are ignored; entries keep file order.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    parse_manifest(&text, name)
}

pub(crate) fn parse_manifest(text: &str, name: String) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    let mut seen_paths = std::collections::BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_number = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::ManifestParse {
                line: line_number,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let image_path = fields[0].to_string();
        if image_path.is_empty() {
            return Err(Error::ManifestParse {
                line: line_number,
                msg: "empty image path".into(),
            });
        }
        if !seen_paths.insert(image_path.clone()) {
            return Err(Error::ManifestParse {
                line: line_number,
                msg: format!("duplicate image path {image_path:?}"),
            });
        }
        let transcript = canonicalize(fields[1]);
        if transcript.is_empty() {
            return Err(Error::EmptyTranscript {
                source_id: format!("{image_path} (line {line_number})"),
            });
        }
        let split = Split::parse(fields[2]).ok_or_else(|| Error::ManifestParse {
            line: line_number,
            msg: format!("unknown split {:?}", fields[2]),
        })?;
        entries.push(ManifestEntry {
            image_path,
            transcript,
            split,
            class_id: 0,
        });
    }
    assign_class_ids(&mut entries);
    Ok(DatasetManifest { name, entries })
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in &manifest.entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.image_path, e.transcript, e.split.as_str()));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// How variable-aspect crops are brought to the square model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    /// Direct bilinear stretch to 224x224 (default).
    Stretch,
    /// Aspect-preserving fit, centered, padded with the image's brightest
    /// value.
    Pad,
}

/// Resize to 224x224 and min-max scale into [0,1].
///
/// Scaling happens after the resize so the output genuinely attains 0 and 1.
/// A constant image maps to all 0.5 rather than failing.
pub fn normalize_image(raw: &Array2<f32>) -> Result<Array2<f32>> {
    normalize_image_mode(raw, ResizeMode::Stretch)
}

pub fn normalize_image_mode(raw: &Array2<f32>, mode: ResizeMode) -> Result<Array2<f32>> {
    let (h, w) = raw.dim();
    if h == 0 || w == 0 {
        return Err(Error::Shape("cannot normalize an empty image".into()));
    }
    let min = raw.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = raw.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if max <= min {
        // Constant input: resampling would only amplify rounding noise.
        return Ok(Array2::from_elem((IMAGE_SIZE, IMAGE_SIZE), 0.5));
    }
    let resized = match mode {
        ResizeMode::Stretch => resize_bilinear(raw, IMAGE_SIZE, IMAGE_SIZE),
        ResizeMode::Pad => {
            let scale = (IMAGE_SIZE as f64 / h as f64).min(IMAGE_SIZE as f64 / w as f64);
            let nh = ((h as f64 * scale).round() as usize).clamp(1, IMAGE_SIZE);
            let nw = ((w as f64 * scale).round() as usize).clamp(1, IMAGE_SIZE);
            let inner = resize_bilinear(raw, nh, nw);
            let fill = inner.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut out = Array2::from_elem((IMAGE_SIZE, IMAGE_SIZE), fill);
            let oy = (IMAGE_SIZE - nh) / 2;
            let ox = (IMAGE_SIZE - nw) / 2;
            out.slice_mut(ndarray::s![oy..oy + nh, ox..ox + nw]).assign(&inner);
            out
        }
    };
    Ok(min_max_scale(resized))
}

fn min_max_scale(mut img: Array2<f32>) -> Array2<f32> {
    let min = img.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = img.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if max > min {
        let range = max - min;
        img.mapv_inplace(|v| (v - min) / range);
    } else {
        img.fill(0.5);
    }
    img
}

/// Bilinear resampling with half-pixel centers and edge clamping. Equal
/// input and output sizes reproduce the input exactly.
pub(crate) fn resize_bilinear(src: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = src.dim();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let ty = (fy - y0 as f64) as f32;
        let tx = (fx - x0 as f64) as f32;
        let top = src[[y0, x0]] * (1.0 - tx) + src[[y0, x1]] * tx;
        let bot = src[[y1, x0]] * (1.0 - tx) + src[[y1, x1]] * tx;
        top * (1.0 - ty) + bot * ty
    })
}

/// Load an 8-bit grayscale image (PNG or PGM) as floats in [0,1].
pub fn load_gray(path: &Path) -> Result<Array2<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32).0[0] as f32 / 255.0
    }))
}

/// Write floats in [0,1] as an 8-bit grayscale PNG.
pub fn save_gray(path: &Path, img: &Array2<f32>) -> Result<()> {
    let (h, w) = img.dim();
    let mut out = image::GrayImage::new(w as u32, h as u32);
    for ((y, x), &v) in img.indexed_iter() {
        out.put_pixel(x as u32, y as u32, image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]));
    }
    out.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Load the manifest's images for one split as normalized samples. Relative
/// image paths resolve against the manifest's directory.
pub fn load_samples(manifest: &DatasetManifest, root: &Path, split: Split) -> Result<Vec<WordSample>> {
    load_samples_mode(manifest, root, split, ResizeMode::Stretch)
}

pub fn load_samples_mode(
    manifest: &DatasetManifest,
    root: &Path,
    split: Split,
    mode: ResizeMode,
) -> Result<Vec<WordSample>> {
    let mut samples = Vec::new();
    for e in manifest.entries_for(split) {
        let p = PathBuf::from(&e.image_path);
        let full = if p.is_absolute() { p } else { root.join(p) };
        let raw = load_gray(&full)?;
        samples.push(WordSample {
            image: normalize_image_mode(&raw, mode)?,
            transcript: e.transcript.clone(),
            class_id: e.class_id,
            split: e.split,
            source_id: e.image_path.clone(),
        });
    }
    Ok(samples)
}
