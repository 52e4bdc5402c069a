//! Framed block transport.
//!
//! Frame layout, all integers little-endian:
//!
//! ```text
//! offset  size   field
//! 0       4      magic "SQRN"
//! 4       1      version = 0x01
//! 5       8      block_index (u64)
//! 13      1      state_tag (0 = Omega, 1 = Psi, 2 = Phi)
//! 14      4      payload_len (u32) = 32768
//! 18      32768  payload
//! 32786   4      crc32 (IEEE) over bytes 0..32786
//! ```
//!
//! Statistics are not on the wire; the decoder recomputes them from the payload.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::acquisition::{boxed_payload, RawBlock, StateTag, BLOCK_BYTES};

pub const MAGIC: [u8; 4] = *b"SQRN";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 4 + 1 + 8 + 1 + 4;
pub const FRAME_LEN: usize = HEADER_LEN + BLOCK_BYTES + 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    UnsupportedVersion(u8),
    #[error("payload length {0} does not match the v1 block size")]
    LengthMismatch(u32),
    #[error("unknown state tag {0}")]
    BadStateTag(u8),
    #[error("checksum mismatch: frame says {expected:08x}, computed {actual:08x}")]
    ChecksumFailure { expected: u32, actual: u32 },
    #[error("frame truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
}

pub fn encode_frame(block: &RawBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&block.index.to_le_bytes());
    out.push(block.state_tag.wire_code());
    out.extend_from_slice(&(BLOCK_BYTES as u32).to_le_bytes());
    out.extend_from_slice(&block.payload[..]);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decodes one frame from the start of `bytes`, returning the block and the
/// number of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(RawBlock, usize), FrameError> {
    let truncated = |needed: usize| FrameError::Truncated {
        needed,
        available: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(HEADER_LEN));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    let version = bytes[4];
    if version != VERSION {
        return Err(FrameError::UnsupportedVersion(version));
    }
    let index = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let tag_code = bytes[13];
    let payload_len = u32::from_le_bytes(bytes[14..18].try_into().unwrap());
    if payload_len as usize != BLOCK_BYTES {
        return Err(FrameError::LengthMismatch(payload_len));
    }
    if bytes.len() < FRAME_LEN {
        return Err(truncated(FRAME_LEN));
    }
    let body_end = HEADER_LEN + BLOCK_BYTES;
    let expected = u32::from_le_bytes(bytes[body_end..FRAME_LEN].try_into().unwrap());
    let actual = crc32fast::hash(&bytes[..body_end]);
    if expected != actual {
        return Err(FrameError::ChecksumFailure { expected, actual });
    }
    let state_tag = StateTag::from_wire_code(tag_code).ok_or(FrameError::BadStateTag(tag_code))?;
    let payload = boxed_payload(bytes[HEADER_LEN..body_end].to_vec());
    Ok((RawBlock::from_payload(index, state_tag, payload), FRAME_LEN))
}

fn find_magic(bytes: &[u8], from: usize) -> Option<usize> {
    bytes
        .get(from..)?
        .windows(4)
        .position(|w| w == MAGIC)
        .map(|p| p + from)
}

/// Decodes a whole buffer of concatenated frames. After a bad frame the
/// scanner resynchronizes on the next occurrence of the magic.
pub fn decode_stream(bytes: &[u8]) -> Vec<Result<RawBlock, FrameError>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        match decode_frame(&bytes[pos..]) {
            Ok((block, used)) => {
                out.push(Ok(block));
                pos += used;
            }
            Err(e) => {
                let stop = matches!(e, FrameError::Truncated { .. });
                out.push(Err(e));
                if stop {
                    break;
                }
                match find_magic(bytes, pos + 1) {
                    Some(next) => pos = next,
                    None => break,
                }
            }
        }
    }
    out
}

pub struct FrameWriter<W: Write> {
    inner: W,
    frames: u64,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, frames: 0 }
    }

    pub fn write_block(&mut self, block: &RawBlock) -> io::Result<()> {
        self.inner.write_all(&encode_frame(block))?;
        self.frames += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> u64 {
        self.frames
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Pull-based frame reader over any byte source, with resynchronization.
pub struct FrameReader<R: Read> {
    inner: R,
    buf: Vec<u8>,
    eof: bool,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: Vec::with_capacity(2 * FRAME_LEN),
            eof: false,
        }
    }

    fn fill(&mut self, want: usize) -> io::Result<()> {
        let mut chunk = [0u8; 16 * 1024];
        while !self.eof && self.buf.len() < want {
            let n = match self.inner.read(&mut chunk) {
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            };
            if n == 0 {
                self.eof = true;
            } else {
                self.buf.extend_from_slice(&chunk[..n]);
            }
        }
        Ok(())
    }

    /// Next block, `None` at a clean end of stream.
    pub fn next_block(&mut self) -> Option<Result<RawBlock, ReadError>> {
        if let Err(e) = self.fill(FRAME_LEN) {
            return Some(Err(e.into()));
        }
        if self.buf.is_empty() {
            return None;
        }
        match decode_frame(&self.buf) {
            Ok((block, used)) => {
                self.buf.drain(..used);
                Some(Ok(block))
            }
            Err(FrameError::Truncated { needed, available }) => {
                self.buf.clear();
                Some(Err(FrameError::Truncated { needed, available }.into()))
            }
            Err(e) => {
                if let Err(io) = self.resync() {
                    return Some(Err(io.into()));
                }
                Some(Err(e.into()))
            }
        }
    }

    /// Drops the offending byte and discards input up to the next magic.
    fn resync(&mut self) -> io::Result<()> {
        self.buf.drain(..1);
        loop {
            if let Some(p) = find_magic(&self.buf, 0) {
                self.buf.drain(..p);
                return Ok(());
            }
            // Keep a 3-byte tail in case the magic straddles two reads.
            let keep = self.buf.len().min(3);
            self.buf.drain(..self.buf.len() - keep);
            if self.eof {
                self.buf.clear();
                return Ok(());
            }
            let want = self.buf.len() + FRAME_LEN;
            self.fill(want)?;
        }
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<RawBlock, ReadError>;
    fn next(&mut self) -> Option<Self::Item> {
        self.next_block()
    }
}
