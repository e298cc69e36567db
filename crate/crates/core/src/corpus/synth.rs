//! Synthetic word-image corpus generation.
//!
//! Renders random transcripts with the built-in bitmap glyphs in several
//! styles, with per-sample jitter in scale, slant, stroke weight, ink and
//! background intensity plus pixel noise, then writes PNGs and a manifest.
//! Everything is driven by one seed, so equal specs produce byte-equal
//! corpora.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::font::{glyph, GLYPH_COLS, GLYPH_ROWS};
use super::{
    normalize_image, save_gray, write_manifest, DatasetManifest, ManifestEntry, Split,
};
use crate::error::{Error, Result};
use crate::phoc::UNIGRAMS;

/// Rendering styles; at least two distinct ones are required.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FontStyle {
    Regular,
    Bold,
    Slant,
    Condensed,
}

impl FontStyle {
    pub fn parse(s: &str) -> Option<FontStyle> {
        match s {
            "regular" => Some(FontStyle::Regular),
            "bold" => Some(FontStyle::Bold),
            "slant" => Some(FontStyle::Slant),
            "condensed" => Some(FontStyle::Condensed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpusSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub font_set: Vec<FontStyle>,
    /// 0 disables all pixel noise and intensity jitter.
    pub noise_level: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            n_classes: 25,
            samples_per_class: 20,
            font_set: vec![
                FontStyle::Regular,
                FontStyle::Bold,
                FontStyle::Slant,
                FontStyle::Condensed,
            ],
            noise_level: 0.35,
            rng_seed: 42,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be >= 2".into()));
        }
        if self.samples_per_class < 2 {
            return Err(Error::Config("samples_per_class must be >= 2".into()));
        }
        let distinct: std::collections::BTreeSet<_> = self.font_set.iter().collect();
        if distinct.len() < 2 {
            return Err(Error::Config("font_set needs at least 2 distinct styles".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config("noise_level must be in [0,1]".into()));
        }
        Ok(())
    }
}

impl std::cmp::PartialOrd for FontStyle {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl std::cmp::Ord for FontStyle {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

/// Draw `n` distinct transcripts with lengths in `len_range`. Errors when
/// the space of distinct words is exhausted.
pub(crate) fn random_vocabulary(
    rng: &mut ChaCha8Rng,
    n: usize,
    len_range: std::ops::RangeInclusive<usize>,
) -> Result<Vec<String>> {
    let mut seen = std::collections::BTreeSet::new();
    let mut vocab = Vec::with_capacity(n);
    let max_attempts = 200 * n.max(1);
    let mut attempts = 0;
    while vocab.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Data(format!(
                "could not draw {n} distinct transcripts (got {})",
                vocab.len()
            )));
        }
        let len = rng.gen_range(len_range.clone());
        let w: String = (0..len).map(|_| UNIGRAMS[rng.gen_range(0..36)]).collect();
        if seen.insert(w.clone()) {
            vocab.push(w);
        }
    }
    Ok(vocab)
}

struct RenderParams {
    style: FontStyle,
    scale: usize,
    slant: f64,
    ink: f32,
    background: f32,
    noise_sigma: f64,
}

/// Rasterize one word onto a white canvas at its natural aspect ratio.
fn render_word(word: &str, p: &RenderParams, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let s = p.scale;
    let (advance, px_w) = match p.style {
        FontStyle::Condensed => (GLYPH_COLS * s, s.saturating_sub(s / 4).max(1)),
        _ => ((GLYPH_COLS + 1) * s, s),
    };
    let margin = 2 * s;
    let h = GLYPH_ROWS * s + 2 * margin;
    let w = word.chars().count() * advance + 2 * margin;
    let mut img = Array2::from_elem((h, w), p.background);

    // Condensed narrows every glyph cell; other styles use square cells.
    let cell_w = if p.style == FontStyle::Condensed { px_w } else { s };
    for (ci, c) in word.chars().enumerate() {
        let Some(g) = glyph(c) else { continue };
        let x_base = margin + ci * advance;
        for (gy, row) in g.iter().enumerate() {
            // Slant shifts upper rows right, proportional to height.
            let shift = (p.slant * ((GLYPH_ROWS - 1 - gy) * s) as f64) as usize;
            for (gx, cell) in row.chars().enumerate() {
                if cell != '#' {
                    continue;
                }
                for dy in 0..s {
                    for dx in 0..px_w {
                        let y = margin + gy * s + dy;
                        let x = x_base + gx * cell_w + dx + shift;
                        if y < h && x < w {
                            img[[y, x]] = p.ink;
                        }
                    }
                }
            }
        }
    }

    if p.style == FontStyle::Bold {
        img = super::augment::erode(&img, 3);
    }
    if p.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, p.noise_sigma).unwrap();
        img.mapv_inplace(|v| (v + normal.sample(rng) as f32).clamp(0.0, 1.0));
    }
    img
}

fn split_counts(samples: usize) -> (usize, usize, usize) {
    // 60/10/30 per class; the test share is kept at >= 2 instances so every
    // class can serve as a leave-one-out query, stealing from val then train.
    let mut train = (0.6 * samples as f64 + 0.5).floor() as usize;
    let mut val = (0.1 * samples as f64 + 0.5).floor() as usize;
    while train + val > samples {
        if val > 0 {
            val -= 1;
        } else {
            train -= 1;
        }
    }
    let mut test = samples - train - val;
    let want_test = 2.min(samples);
    while test < want_test {
        if val > 0 {
            val -= 1;
        } else if train > 0 {
            train -= 1;
        } else {
            break;
        }
        test += 1;
    }
    (train, val, test)
}

/// Render `n_classes x samples_per_class` word images under `out_dir`,
/// write `manifest.tsv`, and return the parsed manifest.
pub fn synthesize_corpus(spec: &SyntheticCorpusSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let vocab = random_vocabulary(&mut rng, spec.n_classes, 3..=8)?;
    let (n_train, n_val, _) = split_counts(spec.samples_per_class);

    let mut entries = Vec::new();
    for (class_idx, word) in vocab.iter().enumerate() {
        for sample_idx in 0..spec.samples_per_class {
            let style = spec.font_set[rng.gen_range(0..spec.font_set.len())];
            let params = RenderParams {
                style,
                scale: rng.gen_range(5..=8),
                slant: if style == FontStyle::Slant {
                    rng.gen_range(0.18..0.32)
                } else {
                    rng.gen_range(-0.05..0.05)
                },
                ink: (rng.gen_range(0.0..0.30) as f32) * spec.noise_level as f32,
                background: 1.0 - (rng.gen_range(0.0..0.25) as f32) * spec.noise_level as f32,
                noise_sigma: 0.20 * spec.noise_level * rng.gen_range(0.3..1.0),
            };
            let raw = render_word(word, &params, &mut rng);
            let normalized = normalize_image(&raw)?;

            let split = if sample_idx < n_train {
                Split::Train
            } else if sample_idx < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            let rel = format!("images/{class_idx:04}_{sample_idx:03}_{word}.png");
            save_gray(&out_dir.join(&rel), &normalized)?;
            entries.push(ManifestEntry {
                image_path: rel,
                transcript: word.clone(),
                split,
                class_id: class_idx as u32,
            });
        }
    }

    let manifest = DatasetManifest {
        name: "synthetic".to_string(),
        entries,
    };
    write_manifest(&manifest, &out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn tiny_spec(seed: u64) -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            n_classes: 4,
            samples_per_class: 5,
            font_set: vec![FontStyle::Regular, FontStyle::Slant],
            noise_level: 0.3,
            rng_seed: seed,
        }
    }

    #[test]
    fn counts_match_spec() {
        let dir = tempfile::tempdir().unwrap();
        let m = synthesize_corpus(&tiny_spec(1), dir.path()).unwrap();
        assert_eq!(m.entries.len(), 20);
        let files = std::fs::read_dir(dir.path().join("images")).unwrap().count();
        assert_eq!(files, 20);
    }

    #[test]
    fn fixed_seed_reproduces_bytes() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = synthesize_corpus(&tiny_spec(9), d1.path()).unwrap();
        let m2 = synthesize_corpus(&tiny_spec(9), d2.path()).unwrap();
        assert_eq!(
            std::fs::read(d1.path().join("manifest.tsv")).unwrap(),
            std::fs::read(d2.path().join("manifest.tsv")).unwrap()
        );
        for e in &m1.entries {
            let a = std::fs::read(d1.path().join(&e.image_path)).unwrap();
            let b = std::fs::read(d2.path().join(&e.image_path)).unwrap();
            assert_eq!(a, b, "{}", e.image_path);
        }
        assert_eq!(m1.entries.len(), m2.entries.len());
    }

    #[test]
    fn different_seeds_differ() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        synthesize_corpus(&tiny_spec(1), d1.path()).unwrap();
        synthesize_corpus(&tiny_spec(2), d2.path()).unwrap();
        assert_ne!(
            std::fs::read(d1.path().join("manifest.tsv")).unwrap(),
            std::fs::read(d2.path().join("manifest.tsv")).unwrap()
        );
    }

    #[test]
    fn every_test_class_has_at_least_two_instances() {
        let dir = tempfile::tempdir().unwrap();
        let m = synthesize_corpus(&SyntheticCorpusSpec::default(), dir.path()).unwrap();
        let mut per_class: BTreeMap<u32, usize> = BTreeMap::new();
        for e in m.entries_for(Split::Test) {
            *per_class.entry(e.class_id).or_insert(0) += 1;
        }
        assert_eq!(per_class.len(), 25);
        assert!(per_class.values().all(|&n| n >= 2));
    }

    #[test]
    fn split_counts_behave() {
        assert_eq!(split_counts(20), (12, 2, 6));
        assert_eq!(split_counts(10), (6, 1, 3));
        let (tr, va, te) = split_counts(5);
        assert_eq!(tr + va + te, 5);
        assert!(te >= 2);
        let (tr, va, te) = split_counts(2);
        assert_eq!((tr, va), (0, 0));
        assert_eq!(te, 2);
    }

    #[test]
    fn vocabulary_exhaustion_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Only 36 distinct length-1 words exist.
        assert!(random_vocabulary(&mut rng, 40, 1..=1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = random_vocabulary(&mut rng, 30, 1..=1).unwrap();
        assert_eq!(v.len(), 30);
    }

    #[test]
    fn rejects_invalid_specs() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = tiny_spec(1);
        s.n_classes = 1;
        assert!(synthesize_corpus(&s, dir.path()).is_err());
        let mut s = tiny_spec(1);
        s.font_set = vec![FontStyle::Regular];
        assert!(synthesize_corpus(&s, dir.path()).is_err());
        let mut s = tiny_spec(1);
        s.samples_per_class = 1;
        assert!(synthesize_corpus(&s, dir.path()).is_err());
    }

    #[test]
    fn rendered_images_are_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let m = synthesize_corpus(&tiny_spec(3), dir.path()).unwrap();
        let img = super::super::load_gray(&dir.path().join(&m.entries[0].image_path)).unwrap();
        assert_eq!(img.dim(), (224, 224));
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Words are dark-on-light: plenty of both ink and background.
        let dark = img.iter().filter(|&&v| v < 0.4).count();
        assert!(dark > 500, "only {dark} ink pixels");
    }
}
