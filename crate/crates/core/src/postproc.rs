//! Classical post-processing of the raw keys: block-parity reconciliation
//! followed by Toeplitz-hash privacy amplification.
//!
//! Reconciliation is deliberately minimal. Both parties apply a shared random
//! permutation, cut the key into blocks, publish one parity per block and
//! drop every block whose parities differ. Blocks holding an even number of
//! errors survive; [`residual_error_rate`] gives the expected damage.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PostprocError {
    #[error("keys differ in length ({alice} vs {bob})")]
    LengthMismatch { alice: usize, bob: usize },
    #[error("block size must be at least 1")]
    ZeroBlockSize,
    #[error("output length {output} exceeds key length {key}")]
    OutputTooLong { output: usize, key: usize },
    #[error("hash seed has {got} bits, expected {expected}")]
    SeedLength { got: usize, expected: usize },
}

pub type Result<T> = std::result::Result<T, PostprocError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocConfig {
    pub block_size: usize,
    pub safety_margin: usize,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig { block_size: 8, safety_margin: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyOrigin {
    RawAlice,
    RawBob,
    Corrected,
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyMaterial {
    #[serde(with = "hex_bits")]
    pub bits: Vec<u8>,
    pub origin: KeyOrigin,
    /// Parities disclosed so far.
    pub leaked_bits: usize,
}

impl KeyMaterial {
    pub fn new(bits: Vec<u8>, origin: KeyOrigin) -> Self {
        KeyMaterial { bits, origin, leaked_bits: 0 }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Packs bits MSB-first and hex-encodes them; the last byte is zero-padded.
pub fn bits_to_hex(bits: &[u8]) -> String {
    let bytes: Vec<u8> = bits
        .chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i))))
        .collect();
    hex::encode(bytes)
}

pub fn hex_to_bits(s: &str, len: usize) -> std::result::Result<Vec<u8>, hex::FromHexError> {
    let bytes = hex::decode(s)?;
    Ok((0..len).map(|i| (bytes.get(i / 8).copied().unwrap_or(0) >> (7 - i % 8)) & 1).collect())
}

/// Serializes a bit string as `{"len": n, "hex": "..."}`.
mod hex_bits {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Packed {
        len: usize,
        hex: String,
    }

    pub fn serialize<S: Serializer>(bits: &[u8], s: S) -> Result<S::Ok, S::Error> {
        Packed { len: bits.len(), hex: super::bits_to_hex(bits) }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let p = Packed::deserialize(d)?;
        super::hex_to_bits(&p.hex, p.len).map_err(serde::de::Error::custom)
    }
}

/// Parities published for one block (index in permuted order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockParity {
    pub block: usize,
    pub alice: u8,
    pub bob: u8,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconciliation {
    pub alice: KeyMaterial,
    pub bob: KeyMaterial,
    pub blocks: Vec<BlockParity>,
}

impl Reconciliation {
    pub fn discarded_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| !b.kept).count()
    }
}

fn parity(bits: &[u8]) -> u8 {
    bits.iter().fold(0, |acc, b| acc ^ b)
}

/// Shared shuffle, then one parity per block; blocks whose parities differ
/// are dropped from both keys. The final block may be short.
pub fn parity_block_reconcile<R: Rng + ?Sized>(
    alice: &KeyMaterial,
    bob: &KeyMaterial,
    block_size: usize,
    rng: &mut R,
) -> Result<Reconciliation> {
    if alice.len() != bob.len() {
        return Err(PostprocError::LengthMismatch { alice: alice.len(), bob: bob.len() });
    }
    if block_size == 0 {
        return Err(PostprocError::ZeroBlockSize);
    }
    let mut order: Vec<usize> = (0..alice.len()).collect();
    order.shuffle(rng);
    let a: Vec<u8> = order.iter().map(|&i| alice.bits[i]).collect();
    let b: Vec<u8> = order.iter().map(|&i| bob.bits[i]).collect();

    let mut blocks = Vec::new();
    let mut a_out = Vec::with_capacity(a.len());
    let mut b_out = Vec::with_capacity(b.len());
    for (block, (ca, cb)) in a.chunks(block_size).zip(b.chunks(block_size)).enumerate() {
        let (pa, pb) = (parity(ca), parity(cb));
        let kept = pa == pb;
        if kept {
            a_out.extend_from_slice(ca);
            b_out.extend_from_slice(cb);
        }
        blocks.push(BlockParity { block, alice: pa, bob: pb, kept });
    }
    let leaked = blocks.len();
    Ok(Reconciliation {
        alice: KeyMaterial { bits: a_out, origin: KeyOrigin::Corrected, leaked_bits: alice.leaked_bits + leaked },
        bob: KeyMaterial { bits: b_out, origin: KeyOrigin::Corrected, leaked_bits: bob.leaked_bits + leaked },
        blocks,
    })
}

/// Multiplies the key by the binary Toeplitz matrix `T[i][j] = seed[i - j + n - 1]`
/// (`n` = key length), producing `output_length` bits.
pub fn privacy_amplify(key: &KeyMaterial, output_length: usize, hash_seed: &[u8]) -> Result<KeyMaterial> {
    let n = key.len();
    if output_length > n {
        return Err(PostprocError::OutputTooLong { output: output_length, key: n });
    }
    let expected = toeplitz_seed_len(n, output_length);
    if hash_seed.len() != expected {
        return Err(PostprocError::SeedLength { got: hash_seed.len(), expected });
    }
    let bits = (0..output_length)
        .map(|i| {
            (0..n).fold(0u8, |acc, j| acc ^ (hash_seed[i + n - 1 - j] & key.bits[j]))
        })
        .collect();
    Ok(KeyMaterial { bits, origin: KeyOrigin::Final, leaked_bits: key.leaked_bits })
}

pub fn toeplitz_seed_len(key_len: usize, output_length: usize) -> usize {
    (key_len + output_length).saturating_sub(1)
}

pub fn recommend_output_length(n: usize, leaked_bits: usize, safety_margin: usize) -> usize {
    n.saturating_sub(leaked_bits).saturating_sub(safety_margin)
}

/// Expected error rate among the bits that survive reconciliation, for
/// independent bit errors at rate `e`.
pub fn residual_error_rate(e: f64, block_size: usize) -> f64 {
    let k = block_size as i32;
    let mut retained_errors = 0.0;
    let mut retained_blocks = 0.0;
    let mut binom = 1.0;
    for j in 0..=k {
        if j > 0 {
            binom = binom * (k - j + 1) as f64 / j as f64;
        }
        if j % 2 == 0 {
            let p = binom * e.powi(j) * (1.0 - e).powi(k - j);
            retained_blocks += p;
            retained_errors += j as f64 * p;
        }
    }
    if retained_blocks == 0.0 {
        0.0
    } else {
        retained_errors / (k as f64 * retained_blocks)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocOutcome {
    pub alice: KeyMaterial,
    pub bob: KeyMaterial,
    pub blocks: Vec<BlockParity>,
    pub discarded_blocks: usize,
    pub pa_seed: Vec<u8>,
}

/// Reconcile, then hash both keys with one public seed down to the
/// recommended length.
pub fn postprocess<R: Rng + ?Sized>(
    alice: KeyMaterial,
    bob: KeyMaterial,
    config: &PostprocConfig,
    rng: &mut R,
) -> Result<PostprocOutcome> {
    let rec = parity_block_reconcile(&alice, &bob, config.block_size, rng)?;
    let discarded_blocks = rec.discarded_blocks();
    let out_len = recommend_output_length(rec.alice.len(), rec.alice.leaked_bits, config.safety_margin);
    let pa_seed: Vec<u8> = (0..toeplitz_seed_len(rec.alice.len(), out_len))
        .map(|_| rng.random::<bool>() as u8)
        .collect();
    let alice = privacy_amplify(&rec.alice, out_len, &pa_seed)?;
    let bob = privacy_amplify(&rec.bob, out_len, &pa_seed)?;
    Ok(PostprocOutcome { alice, bob, blocks: rec.blocks, discarded_blocks, pa_seed })
}
