//! Sets of inclusive Unicode codepoint ranges.
//!
//! A [`UnicodeRangeSet`] is the user's declaration of which codepoints belong
//! to the language being suppressed. Input ranges may overlap or touch; they
//! are merged on construction so membership is a binary search.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_CODEPOINT: u32 = 0x10FFFF;

/// One inclusive codepoint interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CodepointRange {
    pub lo: u32,
    pub hi: u32,
}

impl fmt::Display for CodepointRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "U+{:04X}", self.lo)
        } else {
            write!(f, "U+{:04X}-U+{:04X}", self.lo, self.hi)
        }
    }
}

/// Normalized (sorted, merged) set of codepoint ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct UnicodeRangeSet {
    ranges: Vec<CodepointRange>,
}

/// Counts of in-range and non-whitespace codepoints in a piece of text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharStats {
    pub target_count: usize,
    pub considered_count: usize,
}

impl std::ops::Add for CharStats {
    type Output = CharStats;

    fn add(self, rhs: CharStats) -> CharStats {
        CharStats {
            target_count: self.target_count + rhs.target_count,
            considered_count: self.considered_count + rhs.considered_count,
        }
    }
}

impl UnicodeRangeSet {
    /// The CJK Unified Ideographs block, U+4E00..=U+9FFF.
    pub fn cjk_unified() -> Self {
        Self::from_ranges([CodepointRange {
            lo: 0x4E00,
            hi: 0x9FFF,
        }])
    }

    /// Builds a set from arbitrary ranges. Ranges with `lo > hi` are dropped;
    /// use [`parse_range_spec`] for validated user input.
    pub fn from_ranges(input: impl IntoIterator<Item = CodepointRange>) -> Self {
        let mut ranges: Vec<CodepointRange> = input.into_iter().filter(|r| r.lo <= r.hi).collect();
        ranges.sort_unstable();
        let mut merged: Vec<CodepointRange> = Vec::with_capacity(ranges.len());
        for r in ranges {
            match merged.last_mut() {
                // touching ranges merge too: [a, b] + [b+1, c] = [a, c]
                Some(last) if r.lo <= last.hi.saturating_add(1) => last.hi = last.hi.max(r.hi),
                _ => merged.push(r),
            }
        }
        UnicodeRangeSet { ranges: merged }
    }

    pub fn ranges(&self) -> &[CodepointRange] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn contains(&self, cp: u32) -> bool {
        // index of the first range whose lo exceeds cp; the candidate is the one before it
        let idx = self.ranges.partition_point(|r| r.lo <= cp);
        idx > 0 && cp <= self.ranges[idx - 1].hi
    }

    pub fn contains_char(&self, c: char) -> bool {
        self.contains(c as u32)
    }

    /// True if any codepoint of `text` lies in the set.
    pub fn any_in(&self, text: &str) -> bool {
        text.chars().any(|c| self.contains_char(c))
    }

    /// Whitespace codepoints are excluded from both counts.
    pub fn target_char_stats(&self, text: &str) -> CharStats {
        text.chars()
            .filter(|c| !c.is_whitespace())
            .fold(CharStats::default(), |acc, c| CharStats {
                target_count: acc.target_count + usize::from(self.contains_char(c)),
                considered_count: acc.considered_count + 1,
            })
    }

    pub fn to_spec_strings(&self) -> Vec<String> {
        self.ranges.iter().map(ToString::to_string).collect()
    }
}

impl From<UnicodeRangeSet> for Vec<String> {
    fn from(set: UnicodeRangeSet) -> Self {
        set.to_spec_strings()
    }
}

impl TryFrom<Vec<String>> for UnicodeRangeSet {
    type Error = Error;

    fn try_from(value: Vec<String>) -> Result<Self> {
        parse_range_spec(&value)
    }
}

fn parse_codepoint(entry: &str, part: &str) -> Result<u32> {
    let syntax = |reason: &str| Error::RangeSyntax {
        entry: entry.to_string(),
        reason: reason.to_string(),
    };
    let hex = part
        .strip_prefix("U+")
        .or_else(|| part.strip_prefix("u+"))
        .ok_or_else(|| syntax("expected a codepoint of the form U+XXXX"))?;
    if !(4..=6).contains(&hex.len()) || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(syntax("codepoint must be 4 to 6 hexadecimal digits"));
    }
    let cp = u32::from_str_radix(hex, 16).map_err(|_| syntax("invalid hexadecimal"))?;
    if cp > MAX_CODEPOINT {
        return Err(syntax("codepoint exceeds U+10FFFF"));
    }
    Ok(cp)
}

fn parse_entry(entry: &str) -> Result<CodepointRange> {
    let trimmed = entry.trim();
    let (lo, hi) = match trimmed.split_once('-') {
        Some((a, b)) => (
            parse_codepoint(entry, a.trim())?,
            parse_codepoint(entry, b.trim())?,
        ),
        None => {
            let cp = parse_codepoint(entry, trimmed)?;
            (cp, cp)
        }
    };
    if lo > hi {
        return Err(Error::RangeOrder {
            entry: entry.to_string(),
            lo,
            hi,
        });
    }
    Ok(CodepointRange { lo, hi })
}

/// Parses `U+XXXX-U+YYYY` / `U+XXXX` entries into a normalized set.
pub fn parse_range_spec<S: AsRef<str>>(spec: &[S]) -> Result<UnicodeRangeSet> {
    let ranges = spec
        .iter()
        .map(|s| parse_entry(s.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(UnicodeRangeSet::from_ranges(ranges))
}
