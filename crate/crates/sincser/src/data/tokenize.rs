//! Deterministic hash-bucket tokenizer.
//!
//! Text is lowercased and split on non-alphanumeric characters; each word
//! is hashed with 64-bit FNV-1a (offset `0xcbf29ce484222325`, prime
//! `0x100000001b3`) and mapped to bucket `1 + hash % (VOCAB_SIZE - 1)`.
//! Token 0 is reserved for the empty transcript, so ids cover exactly
//! `0..VOCAB_SIZE`. No language-default hashing is involved, so the
//! mapping is identical across runs and platforms.

pub const VOCAB_SIZE: u32 = 4096;
/// The id an empty transcript maps to.
pub const EMPTY_TOKEN: u32 = 0;

/// 64-bit FNV-1a over the word's UTF-8 bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Bucket id for one word (already lowercased).
pub fn word_token(word: &str) -> u32 {
    1 + (fnv1a64(word.as_bytes()) % (VOCAB_SIZE as u64 - 1)) as u32
}

/// Tokenizes a transcript. Empty or all-separator text yields `[EMPTY_TOKEN]`.
pub fn tokenize(transcript: &str) -> Vec<u32> {
    let lowered = transcript.to_lowercase();
    let tokens: Vec<u32> = lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(word_token)
        .collect();
    if tokens.is_empty() {
        vec![EMPTY_TOKEN]
    } else {
        tokens
    }
}
