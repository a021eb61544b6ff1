//! Bit-level views of byte streams and the fixed-length classifier input.

use serde::{Deserialize, Serialize};

use crate::layer::Layer;

/// Expands bytes into bits, most significant bit first.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    let mut bits = Vec::with_capacity(bytes.len() * 8);
    for &b in bytes {
        for i in (0..8).rev() {
            bits.push((b >> i) & 1);
        }
    }
    bits
}

/// Packs bits (MSB first) into bytes; a trailing partial byte is zero-filled.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i))))
        .collect()
}

/// Where a window was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Origin {
    pub stream: usize,
    pub offset: usize,
    pub layer: Layer,
}

/// A fixed-length bit vector fed to an encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub bits: Vec<u8>,
    pub origin: Option<Origin>,
}

impl Window {
    /// Embeds raw header bytes: their bits followed by zeros up to `t` bits.
    /// Longer input is cut at `t` bits.
    pub fn from_header(header: &[u8], t: usize) -> Self {
        let mut bits = bytes_to_bits(header);
        bits.resize(t, 0);
        Self { bits, origin: None }
    }

    /// The `t` bits of `data` starting at byte `offset`, zero-padded past the end.
    pub fn from_stream(data: &[u8], offset: usize, t: usize) -> Self {
        let mut bits = vec![0u8; t];
        fill_window_bits(data, offset, &mut bits);
        Self { bits, origin: None }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        bits_to_bytes(&self.bits)
    }
}

/// Writes the bits of `data[offset..]` into `out`, zero beyond the end.
pub(crate) fn fill_window_bits(data: &[u8], offset: usize, out: &mut [u8]) {
    for (i, slot) in out.iter_mut().enumerate() {
        let byte = offset + i / 8;
        *slot = data.get(byte).map_or(0, |b| (b >> (7 - i % 8)) & 1);
    }
}
