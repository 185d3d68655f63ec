//! Per-token risk scores.
//!
//! Target tokens score 1 and Safe/Special tokens 0. A Broken token is scored
//! by the fraction of n-gram combinations with other fragments whose
//! concatenated bytes decode to at least one target codepoint. The fraction
//! is estimated by seeded sampling; [`exhaustive_broken_risk`] computes it
//! exactly for small pools.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::unicode_ranges::UnicodeRangeSet;
use crate::vocab_scanner::{TokenClass, TokenRecord};

pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;
pub const DEFAULT_SEED: u64 = 42;

const BINARY_MAGIC: &[u8; 8] = b"RISKTBL1";

/// Which tokens partners are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartnerPool {
    #[default]
    BrokenOnly,
    BrokenAndTarget,
}

/// Which slots of the n-gram the scored token occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positions {
    #[default]
    All,
    FirstOnly,
}

impl Positions {
    fn slots(self, n: usize) -> std::ops::Range<usize> {
        match self {
            Positions::All => 0..n,
            Positions::FirstOnly => 0..1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_values: Vec<usize>,
    pub samples_per_n: usize,
    pub seed: u64,
    #[serde(default)]
    pub partner_pool: PartnerPool,
    #[serde(default)]
    pub positions: Positions,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_values: vec![2, 3],
            samples_per_n: 100,
            seed: DEFAULT_SEED,
            partner_pool: PartnerPool::BrokenOnly,
            positions: Positions::All,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() {
            return Err(Error::SamplingConfig("n_values must not be empty".into()));
        }
        if let Some(n) = self.n_values.iter().find(|&&n| n < 2) {
            return Err(Error::SamplingConfig(format!(
                "n-gram size must be at least 2, got {n}"
            )));
        }
        if self.samples_per_n == 0 {
            return Err(Error::SamplingConfig(
                "samples_per_n must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Total combinations drawn per scored token.
    pub fn samples_per_token(&self) -> u64 {
        self.n_values
            .iter()
            .map(|&n| (self.samples_per_n * self.positions.slots(n).len()) as u64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Fixed,
    Sampled {
        n_values: Vec<usize>,
        sample_count: u64,
        seed: u64,
    },
    Exhaustive {
        n: usize,
    },
}

/// True if the concatenated bytes contain a target codepoint anywhere,
/// skipping bytes that do not decode.
pub fn combination_is_risky(parts: &[&[u8]], ranges: &UnicodeRangeSet) -> bool {
    let mut buf = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    parts.iter().for_each(|p| buf.extend_from_slice(p));
    bytes_are_risky(&buf, ranges)
}

fn bytes_are_risky(bytes: &[u8], ranges: &UnicodeRangeSet) -> bool {
    bytes
        .utf8_chunks()
        .any(|chunk| chunk.valid().chars().any(|c| ranges.contains_char(c)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream per (seed, token, n, position).
fn stream(seed: u64, token_id: u32, n: usize, position: usize) -> ChaCha8Rng {
    let mixed = [token_id as u64, n as u64, position as u64]
        .into_iter()
        .fold(splitmix64(seed), |h, v| splitmix64(h ^ splitmix64(v)));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Fraction of risky draws for one n, pooled over positions.
fn sampled_fraction(
    token_id: u32,
    token: &[u8],
    pool: &[&[u8]],
    n: usize,
    config: &SamplingConfig,
    ranges: &UnicodeRangeSet,
) -> f64 {
    let mut risky = 0u64;
    let mut total = 0u64;
    let mut buf = Vec::new();
    for position in config.positions.slots(n) {
        let mut rng = stream(config.seed, token_id, n, position);
        for _ in 0..config.samples_per_n {
            buf.clear();
            for slot in 0..n {
                if slot == position {
                    buf.extend_from_slice(token);
                } else {
                    buf.extend_from_slice(pool[rng.random_range(0..pool.len())]);
                }
            }
            risky += u64::from(bytes_are_risky(&buf, ranges));
            total += 1;
        }
    }
    risky as f64 / total as f64
}

fn sample_bytes(
    token_id: u32,
    token: &[u8],
    pool: &[&[u8]],
    config: &SamplingConfig,
    ranges: &UnicodeRangeSet,
) -> Result<f64> {
    config.validate()?;
    if pool.is_empty() {
        return Err(Error::SamplingConfig("partner pool is empty".into()));
    }
    let risk = config
        .n_values
        .iter()
        .map(|&n| sampled_fraction(token_id, token, pool, n, config, ranges))
        .fold(0.0, f64::max);
    Ok(risk.clamp(0.0, 1.0))
}

/// Estimates a Broken token's risk by sampling n-gram completions.
///
/// For each n and each configured position, `samples_per_n` combinations are
/// drawn with partners chosen uniformly (with replacement) from `pool`. The
/// per-n risk is the risky fraction pooled over positions; the result is the
/// maximum over n.
pub fn sample_broken_risk(
    token: &TokenRecord,
    pool: &[&TokenRecord],
    config: &SamplingConfig,
    ranges: &UnicodeRangeSet,
) -> Result<f64> {
    let pool: Vec<&[u8]> = pool.iter().map(|r| r.bytes.as_slice()).collect();
    sample_bytes(token.id, &token.bytes, &pool, config, ranges)
}

/// Exact risky fraction over every partner assignment and every allowed
/// position of the token.
pub fn exhaustive_broken_risk(
    token: &TokenRecord,
    pool: &[&TokenRecord],
    n: usize,
    positions: Positions,
    ranges: &UnicodeRangeSet,
    cap: u64,
) -> Result<f64> {
    let pool: Vec<&[u8]> = pool.iter().map(|r| r.bytes.as_slice()).collect();
    exhaustive_bytes(&token.bytes, &pool, n, positions, ranges, cap)
}

pub fn exhaustive_bytes(
    token: &[u8],
    pool: &[&[u8]],
    n: usize,
    positions: Positions,
    ranges: &UnicodeRangeSet,
    cap: u64,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::SamplingConfig(format!(
            "n-gram size must be at least 2, got {n}"
        )));
    }
    if pool.is_empty() {
        return Err(Error::SamplingConfig("partner pool is empty".into()));
    }
    let slots = positions.slots(n);
    let per_position = (pool.len() as u128)
        .checked_pow((n - 1) as u32)
        .unwrap_or(u128::MAX);
    let count = per_position.saturating_mul(slots.len() as u128);
    if count > cap as u128 {
        return Err(Error::EnumerationCap { count, cap });
    }

    let mut risky = 0u64;
    let mut buf = Vec::new();
    let mut choice = vec![0usize; n - 1];
    for position in slots {
        choice.iter_mut().for_each(|c| *c = 0);
        loop {
            buf.clear();
            let mut partners = choice.iter();
            for slot in 0..n {
                if slot == position {
                    buf.extend_from_slice(token);
                } else {
                    buf.extend_from_slice(pool[*partners.next().expect("n - 1 partners")]);
                }
            }
            risky += u64::from(bytes_are_risky(&buf, ranges));
            // odometer increment
            let mut digit = 0;
            while digit < choice.len() {
                choice[digit] += 1;
                if choice[digit] < pool.len() {
                    break;
                }
                choice[digit] = 0;
                digit += 1;
            }
            if digit == choice.len() {
                break;
            }
        }
    }
    Ok(risky as f64 / count as f64)
}

/// Dense id-indexed risk scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTable {
    scores: Vec<f64>,
    provenance: Vec<Provenance>,
    classes: Vec<Option<TokenClass>>,
    config: SamplingConfig,
    ranges: UnicodeRangeSet,
}

#[derive(Serialize, Deserialize)]
struct RiskEntry {
    score: f64,
    provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    class: Option<TokenClass>,
}

#[derive(Serialize, Deserialize)]
struct RiskTableDoc {
    config: SamplingConfig,
    ranges: UnicodeRangeSet,
    size: usize,
    entries: BTreeMap<u32, RiskEntry>,
}

impl RiskTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score(&self, id: u32) -> Option<f64> {
        self.scores.get(id as usize).copied()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn provenance(&self, id: u32) -> Option<&Provenance> {
        self.provenance.get(id as usize)
    }

    /// Class of the token the score came from; `None` for ids absent from the vocabulary.
    pub fn class(&self, id: u32) -> Option<TokenClass> {
        self.classes.get(id as usize).copied().flatten()
    }

    pub fn config(&self) -> &SamplingConfig {
        &self.config
    }

    pub fn ranges(&self) -> &UnicodeRangeSet {
        &self.ranges
    }

    pub fn class_counts(&self) -> BTreeMap<TokenClass, usize> {
        let mut counts = BTreeMap::new();
        for class in self.classes.iter().flatten() {
            *counts.entry(*class).or_insert(0) += 1;
        }
        counts
    }

    /// Compact form: magic, u64 length, then little-endian f64 scores in id order.
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.scores.len());
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(self.scores.len() as u64).to_le_bytes());
        for s in &self.scores {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    /// Reads the compact form back into a score vector.
    pub fn scores_from_binary(bytes: &[u8]) -> Result<Vec<f64>> {
        let bad = |msg: &str| Error::Validation(format!("risk table binary: {msg}"));
        if bytes.len() < 16 || &bytes[..8] != BINARY_MAGIC {
            return Err(bad("missing header"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() != len.saturating_mul(8) {
            return Err(bad("length does not match header"));
        }
        Ok(body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    /// Hex SHA-256 of the compact form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_binary()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries = (0..self.scores.len())
            .map(|i| {
                (
                    i as u32,
                    RiskEntry {
                        score: self.scores[i],
                        provenance: self.provenance[i].clone(),
                        class: self.classes[i],
                    },
                )
            })
            .collect();
        serde_json::to_value(RiskTableDoc {
            config: self.config.clone(),
            ranges: self.ranges.clone(),
            size: self.scores.len(),
            entries,
        })
        .expect("risk table serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let doc: RiskTableDoc = serde_json::from_value(value)
            .map_err(|e| Error::Validation(format!("risk table document: {e}")))?;
        let mut table = RiskTable {
            scores: vec![0.0; doc.size],
            provenance: vec![Provenance::Fixed; doc.size],
            classes: vec![None; doc.size],
            config: doc.config,
            ranges: doc.ranges,
        };
        for (id, entry) in doc.entries {
            let i = id as usize;
            if i >= doc.size {
                return Err(Error::Validation(format!(
                    "risk table entry {id} beyond declared size {}",
                    doc.size
                )));
            }
            if !(0.0..=1.0).contains(&entry.score) {
                return Err(Error::Validation(format!(
                    "risk score {} for id {id} outside [0, 1]",
                    entry.score
                )));
            }
            table.scores[i] = entry.score;
            table.provenance[i] = entry.provenance;
            table.classes[i] = entry.class;
        }
        Ok(table)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_json()).expect("risk table serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_json(value)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_binary()).map_err(|e| Error::io(path, e))
    }
}

/// Scores every record: Target 1, Safe/Special 0, Broken sampled.
pub fn build_risk_table(
    records: &[TokenRecord],
    config: &SamplingConfig,
    ranges: &UnicodeRangeSet,
) -> Result<RiskTable> {
    config.validate()?;
    let size = records.iter().map(|r| r.id as usize + 1).max().unwrap_or(0);
    let mut scores = vec![0.0; size];
    let mut provenance = vec![Provenance::Fixed; size];
    let mut classes = vec![None; size];

    let in_pool = |class: TokenClass| match config.partner_pool {
        PartnerPool::BrokenOnly => class == TokenClass::Broken,
        PartnerPool::BrokenAndTarget => matches!(class, TokenClass::Broken | TokenClass::Target),
    };
    let pool: Vec<&[u8]> = records
        .iter()
        .filter(|r| in_pool(r.class))
        .map(|r| r.bytes.as_slice())
        .collect();
    let broken: Vec<&TokenRecord> = records
        .iter()
        .filter(|r| r.class == TokenClass::Broken)
        .collect();

    let sampled = broken
        .par_iter()
        .map(|r| sample_bytes(r.id, &r.bytes, &pool, config, ranges).map(|s| (r.id, s)))
        .collect::<Result<Vec<_>>>()?;

    for r in records {
        let i = r.id as usize;
        classes[i] = Some(r.class);
        if r.class == TokenClass::Target {
            scores[i] = 1.0;
        }
    }
    let sample_count = config.samples_per_token();
    for (id, score) in sampled {
        scores[id as usize] = score;
        provenance[id as usize] = Provenance::Sampled {
            n_values: config.n_values.clone(),
            sample_count,
            seed: config.seed,
        };
    }
    Ok(RiskTable {
        scores,
        provenance,
        classes,
        config: config.clone(),
        ranges: ranges.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::vocab_scanner::{scan, DecodeStatus};
    use proptest::prelude::*;

    fn cjk() -> UnicodeRangeSet {
        UnicodeRangeSet::cjk_unified()
    }

    fn rec(id: u32, bytes: &[u8]) -> TokenRecord {
        let valid = std::str::from_utf8(bytes).is_ok();
        TokenRecord {
            id,
            surface: crate::vocab_scanner::alphabet::encode_bytes(bytes),
            bytes: bytes.to_vec(),
            decode_status: if valid {
                DecodeStatus::ValidUtf8
            } else {
                DecodeStatus::InvalidUtf8
            },
            class: TokenClass::Broken,
        }
    }

    #[test]
    fn risky_predicate_examples() {
        assert!(combination_is_risky(&[&[0xE4, 0xB8], &[0xAD]], &cjk()));
        assert!(!combination_is_risky(&[&[0xE4], &[0xE4]], &cjk()));
        assert!(!combination_is_risky(&[b"a", b"b"], &cjk()));
        // leftover bytes around a completed character still count
        assert!(combination_is_risky(
            &[&[0xFF, 0xE4, 0xB8], &[0xAD, 0xE6]],
            &cjk()
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = SamplingConfig::default();
        assert!(c.validate().is_ok());
        c.n_values = vec![];
        assert!(c.validate().is_err());
        c.n_values = vec![1];
        assert!(c.validate().is_err());
        c.n_values = vec![2];
        c.samples_per_n = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_pool_is_a_config_error() {
        let t = rec(0, &[0xE4]);
        let err = sample_broken_risk(&t, &[], &SamplingConfig::default(), &cjk()).unwrap_err();
        assert!(matches!(err, Error::SamplingConfig(_)));
    }

    #[test]
    fn hopeless_token_scores_zero() {
        let t = rec(0, &[0xFF]);
        let pool: Vec<TokenRecord> = (1..20).map(|i| rec(i, &[b'a' + i as u8])).collect();
        let pool: Vec<&TokenRecord> = pool.iter().collect();
        assert_eq!(
            sample_broken_risk(&t, &pool, &SamplingConfig::default(), &cjk()).unwrap(),
            0.0
        );
    }

    #[test]
    fn exhaustive_quarter() {
        // token E4 B8 with partners {AD, 61}: of the four (position, partner)
        // assignments only E4 B8 + AD completes a character
        let t = rec(0, &[0xE4, 0xB8]);
        let partners = [rec(1, &[0xAD]), rec(2, b"a")];
        let pool: Vec<&TokenRecord> = partners.iter().collect();
        let p = exhaustive_broken_risk(
            &t,
            &pool,
            2,
            Positions::All,
            &cjk(),
            DEFAULT_ENUMERATION_CAP,
        )
        .unwrap();
        assert_eq!(p, 0.25);
    }

    #[test]
    fn twelve_percent_first_position() {
        // 3 of 25 partners complete the token when it comes first: 3/25 = 0.12
        let t = rec(0, &[0xE4, 0xB8]);
        let mut partners: Vec<TokenRecord> = [0xAD, 0x80, 0x81]
            .iter()
            .enumerate()
            .map(|(i, &b)| rec(i as u32 + 1, &[b]))
            .collect();
        partners.extend((0..22).map(|i| rec(100 + i, &[b'a' + (i % 26) as u8])));
        let pool: Vec<&TokenRecord> = partners.iter().collect();
        let exact =
            exhaustive_broken_risk(&t, &pool, 2, Positions::FirstOnly, &cjk(), 1000).unwrap();
        assert_eq!(exact, 0.12);
        let config = SamplingConfig {
            n_values: vec![2],
            samples_per_n: 20_000,
            positions: Positions::FirstOnly,
            ..Default::default()
        };
        let sampled = sample_broken_risk(&t, &pool, &config, &cjk()).unwrap();
        let sigma = (0.12f64 * 0.88 / 20_000.0).sqrt();
        assert!((sampled - 0.12).abs() < 4.0 * sigma, "{sampled}");
    }

    #[test]
    fn empty_partners_reduce_to_token_alone() {
        let empty = rec(9, &[]);
        let pool = vec![&empty];
        for (bytes, expected) in [
            (&[0xE4, 0xB8, 0xAD, 0xE4][..], 1.0),
            (&[0xE4, 0xB8][..], 0.0),
        ] {
            let t = rec(0, bytes);
            for n in 2..=4 {
                let p = exhaustive_broken_risk(&t, &pool, n, Positions::All, &cjk(), 1000).unwrap();
                assert_eq!(p, expected);
                assert_eq!(p == 1.0, combination_is_risky(&[bytes], &cjk()));
            }
        }
    }

    #[test]
    fn cap_refuses_with_count() {
        let t = rec(0, &[0xE4]);
        let partners: Vec<TokenRecord> = (1..=20).map(|i| rec(i, &[0x80 + i as u8])).collect();
        let pool: Vec<&TokenRecord> = partners.iter().collect();
        match exhaustive_broken_risk(&t, &pool, 4, Positions::All, &cjk(), 1000) {
            Err(Error::EnumerationCap { count, cap }) => {
                assert_eq!(count, 4 * 20u128.pow(3));
                assert_eq!(cap, 1000);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn table_without_broken_is_indicator() {
        let v = crate::vocab_scanner::Vocabulary::from_entries(
            [("a", 0), ("ä¸Ń", 1), ("Ġthe", 2), ("<s>", 3)],
            [3],
        )
        .unwrap();
        let (records, _) = scan(&v, &cjk()).unwrap();
        let t = build_risk_table(&records, &SamplingConfig::default(), &cjk()).unwrap();
        assert_eq!(t.scores(), &[0.0, 1.0, 0.0, 0.0]);
        assert!((0..4).all(|i| t.provenance(i) == Some(&Provenance::Fixed)));
    }

    #[test]
    fn table_is_deterministic_across_runs_and_threads() {
        let v = fixtures::ten_token_vocab();
        let (records, _) = scan(&v, &cjk()).unwrap();
        let config = SamplingConfig {
            seed: 42,
            ..Default::default()
        };
        let baseline = build_risk_table(&records, &config, &cjk())
            .unwrap()
            .to_binary();
        for _ in 0..100 {
            assert_eq!(
                build_risk_table(&records, &config, &cjk())
                    .unwrap()
                    .to_binary(),
                baseline
            );
        }
        for threads in [1, 4, 16] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let t = pool.install(|| build_risk_table(&records, &config, &cjk()).unwrap());
            assert_eq!(t.to_binary(), baseline, "threads={threads}");
        }
    }

    #[test]
    fn class_pinning_on_synthetic_vocab() {
        let v = fixtures::synthetic_vocab_64();
        let (records, summary) = scan(&v, &cjk()).unwrap();
        let t = build_risk_table(&records, &SamplingConfig::default(), &cjk()).unwrap();
        assert_eq!(t.len(), 64);
        for r in &records {
            let s = t.score(r.id).unwrap();
            match r.class {
                TokenClass::Target => assert_eq!(s, 1.0),
                TokenClass::Safe | TokenClass::Special => assert_eq!(s, 0.0),
                TokenClass::Broken => {
                    assert!((0.0..=1.0).contains(&s));
                    assert!(matches!(
                        t.provenance(r.id),
                        Some(Provenance::Sampled { .. })
                    ));
                }
            }
        }
        assert_eq!(t.class_counts()[&TokenClass::Target], summary.target_count);
        // fragments of 中 must pick up some risk
        let e4b8 = records.iter().find(|r| r.bytes == [0xE4, 0xB8]).unwrap();
        assert!(t.score(e4b8.id).unwrap() > 0.0);
    }

    #[test]
    fn json_and_binary_round_trip() {
        let v = fixtures::ten_token_vocab();
        let (records, _) = scan(&v, &cjk()).unwrap();
        let t = build_risk_table(&records, &SamplingConfig::default(), &cjk()).unwrap();
        let back = RiskTable::from_json(t.to_json()).unwrap();
        assert_eq!(back, t);
        assert_eq!(
            RiskTable::scores_from_binary(&t.to_binary()).unwrap(),
            t.scores()
        );
        assert!(RiskTable::scores_from_binary(&t.to_binary()[..20]).is_err());
        assert_eq!(t.digest().len(), 64);
    }

    fn fragment() -> impl Strategy<Value = Vec<u8>> {
        // bytes drawn from pieces of real CJK encodings plus ASCII
        prop::collection::vec(
            prop::sample::select(vec![
                0xE4u8, 0xE5, 0xE6, 0xB8, 0xAD, 0x96, 0x87, 0xA5, 0xBD, b'a', b'z',
            ]),
            1..4,
        )
    }

    proptest! {
        #[test]
        fn ascii_partners_never_raise_exhaustive_risk(token in fragment(), pool in prop::collection::vec(fragment(), 1..6), extra in 1usize..4) {
            let ranges = cjk();
            prop_assume!(!combination_is_risky(&[&token], &ranges));
            let pool_refs: Vec<&[u8]> = pool.iter().map(|p| p.as_slice()).collect();
            let before = exhaustive_bytes(&token, &pool_refs, 2, Positions::All, &ranges, 1_000_000).unwrap();
            let ascii: Vec<Vec<u8>> = (0..extra).map(|i| vec![b'q' + i as u8]).collect();
            let mut grown = pool_refs.clone();
            grown.extend(ascii.iter().map(|a| a.as_slice()));
            let after = exhaustive_bytes(&token, &grown, 2, Positions::All, &ranges, 1_000_000).unwrap();
            prop_assert!(after <= before + 1e-15, "{} > {}", after, before);
        }

        #[test]
        fn sampled_scores_stay_in_unit_interval(token in fragment(), pool in prop::collection::vec(fragment(), 1..6), seed in any::<u64>()) {
            let pool_refs: Vec<&[u8]> = pool.iter().map(|p| p.as_slice()).collect();
            let config = SamplingConfig { seed, samples_per_n: 20, ..Default::default() };
            let s = sample_bytes(7, &token, &pool_refs, &config, &cjk()).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
