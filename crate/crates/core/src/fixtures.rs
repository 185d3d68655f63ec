//! Small synthetic vocabularies and checkpoints, shared by tests, benches
//! and the CLI's acceptance suite.

use std::fs;
use std::path::Path;

use serde_json::json;

use crate::error::{Error, Result};
use crate::tensor_store::{
    write_container, Container, Dtype, NamedTensor, ShardIndex, CONFIG_FILE, INDEX_FILE,
    SINGLE_FILE,
};
use crate::vocab_scanner::alphabet::encode_bytes;
use crate::vocab_scanner::Vocabulary;

pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const EMBED_NAME: &str = "model.embed_tokens.weight";
pub const HEAD_NAME: &str = "lm_head.weight";
pub const NORM_NAME: &str = "model.norm.weight";

/// Ten tokens: 3 CJK, 2 truncated fragments, 4 safe, 1 special (id 9).
pub fn ten_token_vocab() -> Vocabulary {
    let entries: Vec<(String, u32)> = vec![
        (encode_bytes("中".as_bytes()), 0),
        (encode_bytes("文".as_bytes()), 1),
        (encode_bytes("你好".as_bytes()), 2),
        (encode_bytes(&[0xE4, 0xB8]), 3),
        (encode_bytes(&[0xAD]), 4),
        ("a".to_string(), 5),
        ("the".to_string(), 6),
        (encode_bytes(b" hello"), 7),
        ("!".to_string(), 8),
        ("<|endoftext|>".to_string(), 9),
    ];
    Vocabulary::from_entries(entries, [9]).expect("fixture ids are unique")
}

/// Raw bytes of the 64-token synthetic vocabulary, in id order, plus the
/// ids that are special.
pub fn synthetic_token_bytes() -> (Vec<Vec<u8>>, Vec<u32>) {
    let mut tokens: Vec<Vec<u8>> = Vec::with_capacity(64);
    // 0..=31 safe ASCII
    tokens.extend((b'a'..=b'z').map(|c| vec![c]));
    for w in [" the", " and", "ing", "ed", " of", "er"] {
        tokens.push(w.as_bytes().to_vec());
    }
    // 32..=47 target
    for w in [
        "中", "文", "你", "好", "我", "是", "的", "人", "大", "小", "国", "语", "言", "中文",
        "你好", " 中国",
    ] {
        tokens.push(w.as_bytes().to_vec());
    }
    // 48..=59 broken: fragments of 中 (E4 B8 AD), 文 (E6 96 87), 好 (E5 A5 BD), a stray byte, U+FFFD
    let broken: [&[u8]; 12] = [
        &[0xE4, 0xB8],
        &[0xAD],
        &[0xE6, 0x96],
        &[0x87],
        &[0xE4],
        &[0xB8, 0xAD],
        &[0xE5],
        &[0xA5, 0xBD],
        &[0xE6],
        &[0x96, 0x87],
        &[0xFF],
        "\u{FFFD}".as_bytes(),
    ];
    tokens.extend(broken.iter().map(|b| b.to_vec()));
    // 60, 61 safe; 62, 63 special
    tokens.push(b" world".to_vec());
    tokens.push(b"\n".to_vec());
    tokens.push(b"<|endoftext|>".to_vec());
    tokens.push(b"<|im_start|>".to_vec());
    debug_assert_eq!(tokens.len(), 64);
    (tokens, vec![62, 63])
}

pub const SYNTHETIC_TARGET_IDS: std::ops::RangeInclusive<u32> = 32..=47;
pub const SYNTHETIC_BROKEN_IDS: std::ops::RangeInclusive<u32> = 48..=59;

pub fn synthetic_vocab_64() -> Vocabulary {
    let (tokens, specials) = synthetic_token_bytes();
    let entries = tokens
        .iter()
        .enumerate()
        .map(|(i, b)| (encode_bytes(b), i as u32));
    Vocabulary::from_entries(entries, specials).expect("fixture ids are unique")
}

/// Consolidated tokenizer document for the 64-token vocabulary.
pub fn synthetic_tokenizer_json() -> serde_json::Value {
    let (tokens, specials) = synthetic_token_bytes();
    let vocab: serde_json::Map<String, serde_json::Value> = tokens
        .iter()
        .enumerate()
        .map(|(i, b)| (encode_bytes(b), json!(i)))
        .collect();
    let added: Vec<serde_json::Value> = specials
        .iter()
        .map(
            |&id| json!({"id": id, "content": encode_bytes(&tokens[id as usize]), "special": true}),
        )
        .collect();
    json!({
        "version": "1.0",
        "added_tokens": added,
        "pre_tokenizer": {"type": "ByteLevel"},
        "model": {"type": "BPE", "vocab": vocab, "merges": []}
    })
}

#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub dtype: Dtype,
    pub vocab_rows: usize,
    pub hidden: usize,
    pub tied: bool,
    pub sharded: bool,
    pub seed: u64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            dtype: Dtype::F32,
            vocab_rows: 64,
            hidden: 8,
            tied: false,
            sharded: false,
            seed: 7,
        }
    }
}

/// Deterministic weights: multiples of 1/32 in [-4, 4], exact in every dtype.
pub fn fixture_weights(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..rows * cols)
        .map(|_| {
            // xorshift64
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            ((state % 257) as f64 - 128.0) / 32.0
        })
        .collect()
}

/// Writes config, tokenizer and weights for a tiny model into `dir`.
pub fn write_fixture_checkpoint(dir: &Path, opts: &FixtureOptions) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (rows, cols) = (opts.vocab_rows, opts.hidden);
    let tensor = |name: &str, shape: Vec<usize>, seed: u64| {
        let n = shape.iter().product();
        NamedTensor::from_f64(name, opts.dtype, shape, &fixture_weights(n, 1, seed))
            .expect("fixture sizes match")
    };
    let embed = tensor(EMBED_NAME, vec![rows, cols], opts.seed);
    let norm = tensor(NORM_NAME, vec![cols], opts.seed + 1);
    let head = (!opts.tied).then(|| tensor(HEAD_NAME, vec![rows, cols], opts.seed + 2));

    let config = json!({
        "architectures": ["FixtureForCausalLM"],
        "vocab_size": rows,
        "hidden_size": cols,
        "tie_word_embeddings": opts.tied,
        "torch_dtype": opts.dtype.to_string(),
    });
    let config_path = dir.join(CONFIG_FILE);
    fs::write(
        &config_path,
        serde_json::to_string_pretty(&config).expect("json"),
    )
    .map_err(|e| Error::io(&config_path, e))?;
    let tok_path = dir.join(TOKENIZER_FILE);
    fs::write(
        &tok_path,
        serde_json::to_string(&synthetic_tokenizer_json()).expect("json"),
    )
    .map_err(|e| Error::io(&tok_path, e))?;

    let metadata = Some([("format".to_string(), "pt".to_string())].into());
    if opts.sharded {
        let first = "model-00001-of-00002.safetensors";
        let second = "model-00002-of-00002.safetensors";
        let mut index = ShardIndex::default();
        index.weight_map.insert(EMBED_NAME.into(), first.into());
        index.weight_map.insert(NORM_NAME.into(), first.into());
        write_container(
            dir.join(first),
            &Container {
                tensors: vec![embed, norm],
                metadata: metadata.clone(),
            },
        )?;
        let mut tail = Vec::new();
        if let Some(h) = head {
            index.weight_map.insert(HEAD_NAME.into(), second.into());
            tail.push(h);
        }
        // keep a second shard even when tied so the layout stays two-file
        let extra = tensor("model.final_bias", vec![cols], opts.seed + 3);
        index.weight_map.insert(extra.name.clone(), second.into());
        tail.push(extra);
        write_container(
            dir.join(second),
            &Container {
                tensors: tail,
                metadata,
            },
        )?;
        index.save(dir.join(INDEX_FILE))?;
    } else {
        let mut tensors = vec![embed, norm];
        tensors.extend(head);
        write_container(dir.join(SINGLE_FILE), &Container { tensors, metadata })?;
    }
    Ok(())
}
