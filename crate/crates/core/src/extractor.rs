//! Seeded Toeplitz hashing over GF(2).
//!
//! The matrix is `m x n` (m output bits from n input bits). Entry
//! `T[r][c] = seed[r - c + n - 1]`, so `seed[0..n]` is the first row reversed
//! and `seed[n..n+m-1]` continues down the first column. Row `r` is therefore
//! the reversed seed window starting at `m - 1 - r`, which lets every row be
//! stored as packed words and each output bit computed as the parity of an
//! AND with the input block.

use rayon::prelude::*;
use thiserror::Error;

use crate::bits::BitBuf;

pub const DEFAULT_INPUT_BITS: usize = 400;
pub const DEFAULT_EPSILON_LOG2: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum ExtractorError {
    #[error("output length {0} leaves no extractable entropy")]
    InsufficientEntropy(i64),
    #[error("min-entropy per byte must lie in (0, 8], got {0}")]
    BadMinEntropy(f64),
    #[error("input block length {0} must be a positive multiple of 8")]
    BadBlockLength(usize),
    #[error("dimensions must satisfy 1 <= m < n, got n = {n}, m = {m}")]
    BadDimensions { n: usize, m: usize },
    #[error("seed must be {expected} bits, got {actual}")]
    SeedLength { expected: usize, actual: usize },
    #[error("need at least {needed} raw bits, got {available}")]
    InsufficientInput { needed: usize, available: usize },
}

/// Output length `floor(n * h_min / 8 - 2 * epsilon_log2)` for a security
/// parameter `epsilon = 2^-epsilon_log2`, with `h_min` measured per byte.
pub fn derive_output_length(
    n: usize,
    h_min_per_byte: f64,
    epsilon_log2: f64,
) -> Result<usize, ExtractorError> {
    if !(h_min_per_byte > 0.0 && h_min_per_byte <= 8.0) {
        return Err(ExtractorError::BadMinEntropy(h_min_per_byte));
    }
    if n == 0 || !n.is_multiple_of(8) {
        return Err(ExtractorError::BadBlockLength(n));
    }
    let m = (n as f64 * h_min_per_byte / 8.0 - 2.0 * epsilon_log2).floor();
    if m <= 0.0 {
        return Err(ExtractorError::InsufficientEntropy(m as i64));
    }
    Ok(m as usize)
}

/// Splits the seed off the front of a raw stream.
pub fn seed_from_raw(raw: &BitBuf, n: usize, m: usize) -> Result<(BitBuf, BitBuf), ExtractorError> {
    let seed_len = n + m - 1;
    if raw.len() < seed_len {
        return Err(ExtractorError::InsufficientInput {
            needed: seed_len,
            available: raw.len(),
        });
    }
    Ok((raw.slice(0, seed_len), raw.slice(seed_len, raw.len())))
}

/// Packed output of one hashed block.
struct HashedBlock {
    words: Vec<u64>,
    len: usize,
}

impl HashedBlock {
    fn new(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    #[inline]
    fn set(&mut self, i: usize, bit: bool) {
        if bit {
            self.words[i / 64] |= 1 << (63 - i % 64);
        }
    }

    fn append_to(&self, out: &mut BitBuf) {
        let mut left = self.len;
        for &w in &self.words {
            let take = left.min(64);
            out.push_word(w, take);
            left -= take;
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToeplitzExtractor {
    n: usize,
    m: usize,
    seed: BitBuf,
    words_per_row: usize,
    /// `m` rows of `words_per_row` words; column `c` is bit `63 - c % 64` of word `c / 64`.
    rows: Vec<u64>,
}

impl ToeplitzExtractor {
    pub fn build(seed: &BitBuf, n: usize, m: usize) -> Result<Self, ExtractorError> {
        if m == 0 || m >= n {
            return Err(ExtractorError::BadDimensions { n, m });
        }
        let expected = n + m - 1;
        if seed.len() != expected {
            return Err(ExtractorError::SeedLength {
                expected,
                actual: seed.len(),
            });
        }
        let reversed: BitBuf = (0..expected).rev().map(|i| seed.get(i)).collect();
        let words_per_row = n.div_ceil(64);
        let mut rows = Vec::with_capacity(m * words_per_row);
        for r in 0..m {
            let base = m - 1 - r;
            for w in 0..words_per_row {
                let start = w * 64;
                let count = (n - start).min(64);
                rows.push(reversed.word_at(base + start, count));
            }
        }
        Ok(Self {
            n,
            m,
            seed: seed.clone(),
            words_per_row,
            rows,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> &BitBuf {
        &self.seed
    }

    /// Matrix entry under the normative indexing.
    pub fn entry(&self, r: usize, c: usize) -> bool {
        self.seed.get(r + self.n - 1 - c)
    }

    pub fn efficiency(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    fn hash_block(&self, input: &[u64]) -> HashedBlock {
        let mut out = HashedBlock::new(self.m);
        for r in 0..self.m {
            let row = &self.rows[r * self.words_per_row..(r + 1) * self.words_per_row];
            let parity = row
                .iter()
                .zip(input)
                .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones())
                & 1;
            out.set(r, parity == 1);
        }
        out
    }

    fn load_block(&self, raw: &BitBuf, start: usize, words: &mut [u64]) {
        for (w, slot) in words.iter_mut().enumerate() {
            let offset = w * 64;
            let count = (self.n - offset).min(64);
            *slot = raw.word_at(start + offset, count);
        }
    }

    /// Hashes every complete n-bit block of `raw` in order; a trailing
    /// remainder shorter than n is dropped.
    pub fn extract(&self, raw: &BitBuf) -> Result<BitBuf, ExtractorError> {
        if raw.len() < self.n {
            return Err(ExtractorError::InsufficientInput {
                needed: self.n,
                available: raw.len(),
            });
        }
        let blocks = raw.len() / self.n;
        let mut out = BitBuf::with_capacity(blocks * self.m);
        let mut words = vec![0u64; self.words_per_row];
        for b in 0..blocks {
            self.load_block(raw, b * self.n, &mut words);
            self.hash_block(&words).append_to(&mut out);
        }
        Ok(out)
    }

    /// Same result as [`extract`](Self::extract), computed on the rayon pool.
    pub fn extract_par(&self, raw: &BitBuf) -> Result<BitBuf, ExtractorError> {
        if raw.len() < self.n {
            return Err(ExtractorError::InsufficientInput {
                needed: self.n,
                available: raw.len(),
            });
        }
        const BLOCKS_PER_TASK: usize = 4096;
        let blocks = raw.len() / self.n;
        let tasks = blocks.div_ceil(BLOCKS_PER_TASK);
        let pieces: Vec<BitBuf> = (0..tasks)
            .into_par_iter()
            .map(|t| {
                let first = t * BLOCKS_PER_TASK;
                let last = (first + BLOCKS_PER_TASK).min(blocks);
                let mut out = BitBuf::with_capacity((last - first) * self.m);
                let mut words = vec![0u64; self.words_per_row];
                for b in first..last {
                    self.load_block(raw, b * self.n, &mut words);
                    self.hash_block(&words).append_to(&mut out);
                }
                out
            })
            .collect();
        let mut out = BitBuf::with_capacity(blocks * self.m);
        for p in &pieces {
            out.extend_from(p);
        }
        Ok(out)
    }

    /// Bit-at-a-time multiplication straight from [`entry`](Self::entry).
    /// Slow; kept as the baseline for [`benchmark`].
    pub fn extract_bitwise(&self, raw: &BitBuf) -> Result<BitBuf, ExtractorError> {
        if raw.len() < self.n {
            return Err(ExtractorError::InsufficientInput {
                needed: self.n,
                available: raw.len(),
            });
        }
        let mut out = BitBuf::with_capacity(raw.len() / self.n * self.m);
        for b in 0..raw.len() / self.n {
            let base = b * self.n;
            for r in 0..self.m {
                let mut bit = false;
                for c in 0..self.n {
                    bit ^= self.entry(r, c) & raw.get(base + c);
                }
                out.push(bit);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchReport {
    pub input_bits: usize,
    pub packed_bits_per_s: f64,
    pub bitwise_bits_per_s: f64,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.packed_bits_per_s / self.bitwise_bits_per_s
    }
}

/// Times the packed path against the bitwise baseline on `raw`.
pub fn benchmark(ext: &ToeplitzExtractor, raw: &BitBuf) -> Result<BenchReport, ExtractorError> {
    use std::time::Instant;
    let t = Instant::now();
    let slow = ext.extract_bitwise(raw)?;
    let bitwise = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let mut fast = ext.extract(raw)?;
    let mut rounds = 1;
    // Repeat the fast path until the timing is not dominated by clock resolution.
    while t.elapsed().as_secs_f64() < bitwise.min(0.05) {
        fast = ext.extract(raw)?;
        rounds += 1;
    }
    let packed = t.elapsed().as_secs_f64() / rounds as f64;
    assert_eq!(fast, slow, "packed and bitwise paths disagree");
    let bits = raw.len() as f64;
    Ok(BenchReport {
        input_bits: raw.len(),
        packed_bits_per_s: bits / packed,
        bitwise_bits_per_s: bits / bitwise,
    })
}
