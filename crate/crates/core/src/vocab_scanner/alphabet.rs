//! The byte-level BPE alphabet: a bijection between the 256 byte values and
//! printable codepoints, so every byte has a visible surface form.
//!
//! Bytes in `0x21..=0x7E`, `0xA1..=0xAC` and `0xAE..=0xFF` map to themselves.
//! The other 68 bytes map, in ascending order, to `U+0100..=U+0143`.

const fn is_printable(b: u8) -> bool {
    matches!(b, 0x21..=0x7E | 0xA1..=0xAC | 0xAE..=0xFF)
}

const SHIFTED_COUNT: usize = 68;

const fn build_tables() -> ([char; 256], [u8; SHIFTED_COUNT]) {
    let mut forward = ['\0'; 256];
    let mut shifted = [0u8; SHIFTED_COUNT];
    let mut next = 0usize;
    let mut b = 0usize;
    while b < 256 {
        let byte = b as u8;
        if is_printable(byte) {
            forward[b] = byte as char;
        } else {
            // 0x100 + next is always a valid scalar value (< 0x144)
            forward[b] = match char::from_u32(0x100 + next as u32) {
                Some(c) => c,
                None => '\0',
            };
            shifted[next] = byte;
            next += 1;
        }
        b += 1;
    }
    (forward, shifted)
}

const TABLES: ([char; 256], [u8; SHIFTED_COUNT]) = build_tables();
const BYTE_TO_CHAR: [char; 256] = TABLES.0;
const SHIFTED_BYTES: [u8; SHIFTED_COUNT] = TABLES.1;

pub fn byte_to_char(b: u8) -> char {
    BYTE_TO_CHAR[b as usize]
}

pub fn char_to_byte(c: char) -> Option<u8> {
    let cp = c as u32;
    if cp < 0x100 {
        let b = cp as u8;
        is_printable(b).then_some(b)
    } else if (0x100..0x100 + SHIFTED_COUNT as u32).contains(&cp) {
        Some(SHIFTED_BYTES[(cp - 0x100) as usize])
    } else {
        None
    }
}

/// Maps raw bytes to their surface string.
pub fn encode_bytes(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| byte_to_char(b)).collect()
}

/// Inverts [`encode_bytes`]; on failure returns the first codepoint outside
/// the alphabet.
pub fn decode_chars(surface: &str) -> Result<Vec<u8>, char> {
    surface.chars().map(|c| char_to_byte(c).ok_or(c)).collect()
}
