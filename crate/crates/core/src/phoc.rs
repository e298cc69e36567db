//! Pyramidal histogram-of-characters attribute vectors.
//!
//! A transcript is embedded as a 604-bit vector: for each pyramid level the
//! word's unit interval is cut into equal regions, and a bit records whether
//! some occurrence of a character (or bigram) occupies that region. Unigrams
//! use levels 2–5 (2+3+4+5 = 14 regions × 36 symbols = 504 bits), bigrams
//! use level 2 over the 50 most frequent pairs (100 bits).

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// `a–z` followed by `0–9`.
pub const UNIGRAMS: [char; 36] = [
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's',
    't', 'u', 'v', 'w', 'x', 'y', 'z', '0', '1', '2', '3', '4', '5', '6', '7', '8', '9',
];

/// Pyramid levels used for the unigram blocks.
pub const UNIGRAM_LEVELS: [usize; 4] = [2, 3, 4, 5];

/// Number of bigram features and the level they are extracted at.
pub const BIGRAM_COUNT: usize = 50;
pub const BIGRAM_LEVEL: usize = 2;

/// Total vector size: 14 regions × 36 unigrams + 2 regions × 50 bigrams.
pub const UNIGRAM_BITS: usize = 504;
pub const PHOC_BITS: usize = 604;

/// Index of `c` in [`UNIGRAMS`], if it is part of the alphabet.
pub fn unigram_index(c: char) -> Option<usize> {
    match c {
        'a'..='z' => Some(c as usize - 'a' as usize),
        '0'..='9' => Some(26 + c as usize - '0' as usize),
        _ => None,
    }
}

/// The 36 unigrams plus an ordered bigram list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    bigrams: Vec<String>,
    bigram_index: BTreeMap<String, usize>,
}

impl Alphabet {
    /// Build from an ordered bigram list. The list order is significant: it
    /// fixes the bit layout of the bigram block.
    pub fn new(bigrams: Vec<String>) -> Result<Self> {
        if bigrams.len() != BIGRAM_COUNT {
            return Err(Error::Data(format!(
                "alphabet needs exactly {BIGRAM_COUNT} bigrams, got {}",
                bigrams.len()
            )));
        }
        let mut bigram_index = BTreeMap::new();
        for (i, bg) in bigrams.iter().enumerate() {
            let ok = bg.chars().count() == 2 && bg.chars().all(|c| unigram_index(c).is_some());
            if !ok {
                return Err(Error::Data(format!("invalid bigram {bg:?}")));
            }
            if bigram_index.insert(bg.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate bigram {bg:?}")));
            }
        }
        Ok(Self {
            bigrams,
            bigram_index,
        })
    }

    pub fn bigrams(&self) -> &[String] {
        &self.bigrams
    }

    pub fn bigram_position(&self, bg: &str) -> Option<usize> {
        self.bigram_index.get(bg).copied()
    }

    /// One bigram per line, order significant.
    pub fn to_file(&self, path: &Path) -> Result<()> {
        let mut text = self.bigrams.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bigrams = text
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        Self::new(bigrams)
    }
}

/// Binary attribute vector for one transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhocVector {
    bits: Vec<u8>,
}

impl PhocVector {
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Bits as floats, for use as a regression/classification target.
    pub fn to_f32(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| b as f32).collect()
    }
}

/// Sub-interval of the word's unit extent, `0 <= lo < hi <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyInterval {
    pub lo: f64,
    pub hi: f64,
}

/// Extent of the `i`-th character in a length-`n` word: `[i/n, (i+1)/n]`.
pub fn char_interval(i: usize, n: usize) -> Result<OccupancyInterval> {
    if i >= n {
        return Err(Error::Data(format!("character index {i} out of range for length {n}")));
    }
    Ok(OccupancyInterval {
        lo: i as f64 / n as f64,
        hi: (i + 1) as f64 / n as f64,
    })
}

/// The `level` equal-width regions `[r/L, (r+1)/L]`.
pub fn region_intervals(level: usize) -> Result<Vec<OccupancyInterval>> {
    if level == 0 {
        return Err(Error::Data("pyramid level must be >= 1".into()));
    }
    Ok((0..level)
        .map(|r| OccupancyInterval {
            lo: r as f64 / level as f64,
            hi: (r + 1) as f64 / level as f64,
        })
        .collect())
}

/// A character occupies a region when at least half of the character's own
/// interval overlaps it. The boundary (exactly half) counts.
pub fn occupies(c: OccupancyInterval, r: OccupancyInterval) -> bool {
    let overlap = (c.hi.min(r.hi) - c.lo.max(r.lo)).max(0.0);
    overlap / (c.hi - c.lo) >= 0.5
}

/// Build the 604-bit vector for a canonicalized transcript.
///
/// Layout: unigram blocks for levels 2,3,4,5 in that order, each block
/// region-major with the 36 unigrams innermost, then the level-2 bigram
/// block, region-major over the alphabet's 50 bigrams.
pub fn build_phoc(transcript: &str, alphabet: &Alphabet) -> Result<PhocVector> {
    let chars: Vec<char> = transcript.chars().collect();
    let n = chars.len();
    if n == 0 {
        return Err(Error::Data("cannot embed an empty transcript".into()));
    }
    let symbols: Vec<usize> = chars
        .iter()
        .map(|&c| {
            unigram_index(c)
                .ok_or_else(|| Error::Data(format!("character {c:?} outside the alphabet")))
        })
        .collect::<Result<_>>()?;

    let mut bits = vec![0u8; PHOC_BITS];

    let mut offset = 0;
    for &level in &UNIGRAM_LEVELS {
        let regions = region_intervals(level)?;
        for (i, &sym) in symbols.iter().enumerate() {
            let ci = char_interval(i, n)?;
            for (r, &reg) in regions.iter().enumerate() {
                if occupies(ci, reg) {
                    bits[offset + r * UNIGRAMS.len() + sym] = 1;
                }
            }
        }
        offset += level * UNIGRAMS.len();
    }
    debug_assert_eq!(offset, UNIGRAM_BITS);

    // Bigram occurrence at position i spans both characters: [i/n, (i+2)/n].
    let regions = region_intervals(BIGRAM_LEVEL)?;
    for i in 0..n.saturating_sub(1) {
        let bg: String = chars[i..i + 2].iter().collect();
        if let Some(pos) = alphabet.bigram_position(&bg) {
            let ci = OccupancyInterval {
                lo: i as f64 / n as f64,
                hi: (i + 2) as f64 / n as f64,
            };
            for (r, &reg) in regions.iter().enumerate() {
                if occupies(ci, reg) {
                    bits[UNIGRAM_BITS + r * BIGRAM_COUNT + pos] = 1;
                }
            }
        }
    }

    Ok(PhocVector { bits })
}

/// The `k` most frequent consecutive pairs across all transcripts, counted
/// with multiplicity. Ties break lexicographically; if fewer than `k`
/// distinct pairs occur, the list is padded with the lexicographically
/// smallest unused pairs so downstream bit layouts stay fixed-size.
pub fn top_bigrams(transcripts: &[String], k: usize) -> Result<Vec<String>> {
    if transcripts.is_empty() {
        return Err(Error::Data("cannot extract bigrams from an empty corpus".into()));
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for t in transcripts {
        let chars: Vec<char> = t.chars().collect();
        for w in chars.windows(2) {
            let bg: String = w.iter().collect();
            *counts.entry(bg).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    // BTreeMap iteration is already lexicographic, so a stable sort by count
    // keeps the lexicographic tie-break.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    let mut out: Vec<String> = ranked.into_iter().take(k).map(|(bg, _)| bg).collect();

    if out.len() < k {
        let have: std::collections::BTreeSet<&str> = out.iter().map(|s| s.as_str()).collect();
        let mut pad = Vec::new();
        'fill: for a in UNIGRAMS {
            for b in UNIGRAMS {
                let bg: String = [a, b].iter().collect();
                if !have.contains(bg.as_str()) {
                    pad.push(bg);
                    if out.len() + pad.len() == k {
                        break 'fill;
                    }
                }
            }
        }
        out.extend(pad);
    }
    if out.len() != k {
        return Err(Error::Data(format!(
            "cannot produce {k} bigrams from a {}-symbol alphabet",
            UNIGRAMS.len()
        )));
    }
    Ok(out)
}
