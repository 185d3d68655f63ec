//! Vocabulary loading and token classification.
//!
//! Every token surface is mapped back to raw bytes through the byte-level
//! alphabet, then classified:
//!
//! - `Special`: listed as a special/added token (checked first, never edited)
//! - `Broken`: bytes are not valid UTF-8, or decode to text containing
//!   U+FFFD (a fragment of some multi-byte character)
//! - `Target`: valid text with at least one codepoint in the target ranges
//! - `Safe`: everything else

pub mod alphabet;
mod vocabulary;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use vocabulary::{load_vocabulary, load_vocabulary_with_specials, Vocabulary};

use crate::error::{Error, Result};
use crate::unicode_ranges::UnicodeRangeSet;

const REPLACEMENT_CHAR: char = '\u{FFFD}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecodeStatus {
    ValidUtf8,
    InvalidUtf8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenClass {
    Target,
    Broken,
    Safe,
    Special,
}

impl TokenClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenClass::Target => "target",
            TokenClass::Broken => "broken",
            TokenClass::Safe => "safe",
            TokenClass::Special => "special",
        }
    }
}

impl std::fmt::Display for TokenClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub id: u32,
    pub surface: String,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub decode_status: DecodeStatus,
    pub class: TokenClass,
}

impl TokenRecord {
    /// Decoded text, when the bytes are valid UTF-8.
    pub fn text(&self) -> Option<&str> {
        std::str::from_utf8(&self.bytes).ok()
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub total: usize,
    pub target_count: usize,
    pub broken_count: usize,
    pub safe_count: usize,
    pub special_count: usize,
    pub target_fraction: f64,
    pub broken_fraction: f64,
}

impl ScanSummary {
    pub fn from_records(records: &[TokenRecord]) -> Self {
        let mut s = ScanSummary {
            total: records.len(),
            ..Default::default()
        };
        for r in records {
            match r.class {
                TokenClass::Target => s.target_count += 1,
                TokenClass::Broken => s.broken_count += 1,
                TokenClass::Safe => s.safe_count += 1,
                TokenClass::Special => s.special_count += 1,
            }
        }
        if s.total > 0 {
            s.target_fraction = s.target_count as f64 / s.total as f64;
            s.broken_fraction = s.broken_count as f64 / s.total as f64;
        }
        s
    }

    pub fn count(&self, class: TokenClass) -> usize {
        match class {
            TokenClass::Target => self.target_count,
            TokenClass::Broken => self.broken_count,
            TokenClass::Safe => self.safe_count,
            TokenClass::Special => self.special_count,
        }
    }
}

/// JSON scan report; `records` is only filled when a full dump is requested.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanReport {
    pub ranges: UnicodeRangeSet,
    pub summary: ScanSummary,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub records: Option<Vec<TokenRecord>>,
}

/// Maps a surface string back to bytes; `Err` carries the first codepoint
/// outside the alphabet.
pub fn decode_surface(surface: &str) -> Result<(Vec<u8>, DecodeStatus), char> {
    let bytes = alphabet::decode_chars(surface)?;
    let status = if std::str::from_utf8(&bytes).is_ok() {
        DecodeStatus::ValidUtf8
    } else {
        DecodeStatus::InvalidUtf8
    };
    Ok((bytes, status))
}

pub fn classify_token(
    id: u32,
    bytes: &[u8],
    status: DecodeStatus,
    ranges: &UnicodeRangeSet,
    specials: &BTreeSet<u32>,
) -> TokenClass {
    if specials.contains(&id) {
        return TokenClass::Special;
    }
    let text = match (status, std::str::from_utf8(bytes)) {
        (DecodeStatus::ValidUtf8, Ok(text)) => text,
        _ => return TokenClass::Broken,
    };
    if text.contains(REPLACEMENT_CHAR) {
        TokenClass::Broken
    } else if ranges.any_in(text) {
        TokenClass::Target
    } else {
        TokenClass::Safe
    }
}

fn scan_one(
    id: u32,
    surface: &str,
    ranges: &UnicodeRangeSet,
    specials: &BTreeSet<u32>,
) -> Result<TokenRecord> {
    let (bytes, decode_status) = match decode_surface(surface) {
        Ok(decoded) => decoded,
        // special tokens may use characters outside the alphabet; keep them verbatim
        Err(_) if specials.contains(&id) => (surface.as_bytes().to_vec(), DecodeStatus::ValidUtf8),
        Err(c) => {
            return Err(Error::SurfaceDecode {
                id,
                surface: surface.to_string(),
                codepoint: c as u32,
            })
        }
    };
    let class = classify_token(id, &bytes, decode_status, ranges, specials);
    Ok(TokenRecord {
        id,
        surface: surface.to_string(),
        bytes,
        decode_status,
        class,
    })
}

/// Classifies every vocabulary entry. Records come back in ascending id order.
pub fn scan(
    vocab: &Vocabulary,
    ranges: &UnicodeRangeSet,
) -> Result<(Vec<TokenRecord>, ScanSummary)> {
    let entries: Vec<(u32, &str)> = vocab.iter().collect();
    let specials = vocab.special_ids();
    let records = entries
        .par_iter()
        .map(|&(id, surface)| scan_one(id, surface, ranges, specials))
        .collect::<Result<Vec<_>>>()?;
    let summary = ScanSummary::from_records(&records);
    Ok((records, summary))
}
