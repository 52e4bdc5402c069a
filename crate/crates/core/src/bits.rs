//! Packed bit buffer with MSB-first byte order.
//!
//! Bit `i` lives in byte `i / 8` at position `7 - i % 8`, so the first bit of
//! a stream is the most significant bit of byte 0. Every file format in this
//! crate uses this order.

use std::fmt;

#[derive(Clone, Default, PartialEq, Eq)]
pub struct BitBuf {
    bytes: Vec<u8>,
    len: usize,
}

impl BitBuf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
        }
    }

    /// Wraps whole bytes; the bit length is `8 * bytes.len()`.
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let len = bytes.len() * 8;
        Self { bytes, len }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut buf = Self::with_capacity(bits.len());
        for &b in bits {
            buf.push(b);
        }
        buf
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Backing bytes. The unused low bits of a trailing partial byte are zero.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Only the fully populated bytes.
    pub fn whole_bytes(&self) -> &[u8] {
        &self.bytes[..self.len / 8]
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        (self.bytes[i >> 3] >> (7 - (i & 7))) & 1 == 1
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        if self.len & 7 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.len & 7);
        }
        self.len += 1;
    }

    /// Appends the `count` most significant bits of `word`.
    pub fn push_word(&mut self, word: u64, count: usize) {
        debug_assert!(count <= 64);
        for k in 0..count {
            self.push((word >> (63 - k)) & 1 == 1);
        }
    }

    pub fn extend_from(&mut self, other: &BitBuf) {
        if self.len & 7 == 0 {
            self.bytes.extend_from_slice(&other.bytes);
            self.len += other.len;
        } else {
            for i in 0..other.len {
                self.push(other.get(i));
            }
        }
    }

    /// Reads up to 64 bits starting at `start` into the high end of a word:
    /// bit `start` becomes bit 63. Bits past `start + count` are zero.
    pub fn word_at(&self, start: usize, count: usize) -> u64 {
        debug_assert!(count <= 64);
        debug_assert!(start + count <= self.len);
        if count == 0 {
            return 0;
        }
        let first = start >> 3;
        let shift = start & 7;
        // Gather 9 bytes so that any 64-bit window fits after the intra-byte shift.
        let mut acc: u128 = 0;
        for k in 0..9 {
            let b = self.bytes.get(first + k).copied().unwrap_or(0);
            acc = (acc << 8) | b as u128;
        }
        let aligned = (acc << shift) >> 8;
        let word = aligned as u64;
        if count == 64 {
            word
        } else {
            word & !(u64::MAX >> count)
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> BitBuf {
        assert!(start <= end && end <= self.len);
        let mut out = BitBuf::with_capacity(end - start);
        let mut pos = start;
        while pos < end {
            let take = (end - pos).min(64);
            out.push_word(self.word_at(pos, take), take);
            pos += take;
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> u64 {
        // Trailing padding bits are always zero.
        self.bytes.iter().map(|b| b.count_ones() as u64).sum()
    }

    pub fn xor(&self, other: &BitBuf) -> BitBuf {
        assert_eq!(self.len, other.len);
        BitBuf {
            bytes: self
                .bytes
                .iter()
                .zip(&other.bytes)
                .map(|(a, b)| a ^ b)
                .collect(),
            len: self.len,
        }
    }
}

impl fmt::Debug for BitBuf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitBuf[{}](", self.len)?;
        for b in self.iter().take(64) {
            f.write_str(if b { "1" } else { "0" })?;
        }
        if self.len > 64 {
            f.write_str("...")?;
        }
        f.write_str(")")
    }
}

impl FromIterator<bool> for BitBuf {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut buf = BitBuf::new();
        for b in iter {
            buf.push(b);
        }
        buf
    }
}
