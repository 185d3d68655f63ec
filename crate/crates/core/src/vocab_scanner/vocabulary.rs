use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::alphabet;
use crate::error::{Error, Result};

/// A byte-level BPE vocabulary: token surfaces keyed by id, plus the ids of
/// special (added/control) tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entries: BTreeMap<u32, String>,
    special_ids: BTreeSet<u32>,
}

#[derive(Deserialize)]
struct AddedToken {
    id: u32,
    content: String,
    #[serde(default)]
    special: bool,
}

impl Vocabulary {
    /// Builds a vocabulary from (surface, id) pairs. Fails on duplicate ids.
    pub fn from_entries<S, I>(
        entries: I,
        special_ids: impl IntoIterator<Item = u32>,
    ) -> Result<Self>
    where
        S: Into<String>,
        I: IntoIterator<Item = (S, u32)>,
    {
        let mut map: BTreeMap<u32, String> = BTreeMap::new();
        for (surface, id) in entries {
            let surface = surface.into();
            if let Some(first) = map.get(&id) {
                // report the pair in a stable order
                let (first, second) = if *first <= surface {
                    (first.clone(), surface)
                } else {
                    (surface, first.clone())
                };
                return Err(Error::DuplicateTokenId { id, first, second });
            }
            map.insert(id, surface);
        }
        Ok(Vocabulary {
            entries: map,
            special_ids: special_ids.into_iter().collect(),
        })
    }

    /// Parses either a consolidated tokenizer document (`model.vocab` plus
    /// `added_tokens`) or a plain `{surface: id}` object.
    pub fn from_json(doc: &Value) -> Result<Self> {
        let obj = doc.as_object().ok_or_else(|| {
            Error::UnsupportedTokenizer("top-level JSON value is not an object".into())
        })?;

        let Some(model) = obj.get("model").filter(|m| m.get("vocab").is_some()) else {
            let vocab = parse_vocab_map(doc)?;
            let vocab = Self::from_entries(vocab, [])?;
            vocab.check_byte_level()?;
            return Ok(vocab);
        };

        if let Some(kind) = model.get("type").and_then(Value::as_str) {
            if kind != "BPE" {
                return Err(Error::UnsupportedTokenizer(format!(
                    "model type {kind:?}; only byte-level BPE vocabularies are supported"
                )));
            }
        }
        let vocab = parse_vocab_map(&model["vocab"])?;
        let added: Vec<AddedToken> = match obj.get("added_tokens") {
            None | Some(Value::Null) => Vec::new(),
            Some(v) => Vec::<AddedToken>::deserialize(v)
                .map_err(|e| Error::UnsupportedTokenizer(format!("malformed added_tokens: {e}")))?,
        };
        let specials: Vec<u32> = added.iter().filter(|t| t.special).map(|t| t.id).collect();
        let vocab = Self::from_entries(vocab, specials)?;
        for t in &added {
            if let Some(existing) = vocab.entries.get(&t.id) {
                if *existing != t.content {
                    return Err(Error::DuplicateTokenId {
                        id: t.id,
                        first: existing.clone(),
                        second: t.content.clone(),
                    });
                }
            }
        }
        vocab.check_byte_level()?;
        Ok(vocab)
    }

    fn check_byte_level(&self) -> Result<()> {
        for (&id, surface) in &self.entries {
            if self.special_ids.contains(&id) {
                continue;
            }
            if let Err(c) = alphabet::decode_chars(surface) {
                return Err(Error::UnsupportedTokenizer(format!(
                    "token {id} surface {surface:?} contains U+{:04X}, outside the byte-level BPE alphabet; \
                     only byte-level BPE vocabularies are supported",
                    c as u32
                )));
            }
        }
        Ok(())
    }

    /// Marks additional ids (or surfaces, resolved through the vocabulary) as special.
    pub fn add_specials_from_json(&mut self, doc: &Value) -> Result<()> {
        let mut surfaces = Vec::new();
        match doc {
            Value::Array(items) => {
                for item in items {
                    match item {
                        Value::Number(n) => {
                            let id = n.as_u64().and_then(|v| u32::try_from(v).ok()).ok_or_else(
                                || Error::Validation(format!("special token id {n} out of range")),
                            )?;
                            self.special_ids.insert(id);
                        }
                        Value::String(s) => surfaces.push(s.clone()),
                        other => {
                            return Err(Error::Validation(format!(
                                "unexpected special token entry {other}"
                            )));
                        }
                    }
                }
            }
            // special_tokens_map.json style: {"eos_token": "<|x|>"} or {"eos_token": {"content": ...}}
            Value::Object(map) => {
                for value in map.values() {
                    collect_contents(value, &mut surfaces);
                }
            }
            _ => {
                return Err(Error::Validation(
                    "special token list must be a JSON array or object".into(),
                ))
            }
        }
        if !surfaces.is_empty() {
            let by_surface: HashMap<&str, u32> = self
                .entries
                .iter()
                .map(|(&id, s)| (s.as_str(), id))
                .collect();
            for s in surfaces {
                let id = by_surface.get(s.as_str()).ok_or_else(|| {
                    Error::Validation(format!("special token {s:?} is not in the vocabulary"))
                })?;
                self.special_ids.insert(*id);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// (id, surface) pairs in ascending id order.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = (u32, &str)> {
        self.entries.iter().map(|(&id, s)| (id, s.as_str()))
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.entries.get(&id).map(String::as_str)
    }

    pub fn special_ids(&self) -> &BTreeSet<u32> {
        &self.special_ids
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special_ids.contains(&id)
    }

    /// One past the largest id (vocabulary entry or special).
    pub fn id_bound(&self) -> u32 {
        let max_entry = self.entries.keys().next_back().copied();
        let max_special = self.special_ids.iter().next_back().copied();
        max_entry.max(max_special).map_or(0, |m| m + 1)
    }
}

fn collect_contents(value: &Value, out: &mut Vec<String>) {
    match value {
        Value::String(s) => out.push(s.clone()),
        Value::Object(o) => {
            if let Some(Value::String(s)) = o.get("content") {
                out.push(s.clone());
            }
        }
        Value::Array(items) => items.iter().for_each(|v| collect_contents(v, out)),
        _ => {}
    }
}

fn parse_vocab_map(value: &Value) -> Result<Vec<(String, u32)>> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::UnsupportedTokenizer("vocabulary is not a JSON object".into()))?;
    obj.iter()
        .map(|(surface, id)| {
            let id = id
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| {
                    Error::Validation(format!("token {surface:?} has invalid id {id}"))
                })?;
            Ok((surface.clone(), id))
        })
        .collect()
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Loads a tokenizer vocabulary file.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    Vocabulary::from_json(&read_json(path.as_ref())?)
}

/// Like [`load_vocabulary`], with an optional sidecar listing special tokens.
pub fn load_vocabulary_with_specials(
    path: impl AsRef<Path>,
    specials: Option<&Path>,
) -> Result<Vocabulary> {
    let mut vocab = load_vocabulary(path)?;
    if let Some(sidecar) = specials {
        vocab.add_specials_from_json(&read_json(sidecar)?)?;
    }
    Ok(vocab)
}
