//! Independent per-bit flip and loss channel.
//!
//! Each bit `i` takes one uniform draw `r_i` on (0,1): `r_i < gamma1` flips
//! it, `gamma1 <= r_i < gamma1 + gamma2` loses it (the receiver fills a
//! zero), otherwise it passes. Draw `i` is word `2i` of a ChaCha8 stream, so
//! any chunk can be processed independently and still match the sequential
//! result bit for bit.

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::AnnotatedStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Flip ratio.
    pub gamma1: f64,
    /// Loss ratio.
    pub gamma2: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(gamma1: f64, gamma2: f64, seed: u64) -> Result<Self> {
        let spec = Self { gamma1, gamma2, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// Splits a total degree by a flip:loss ratio.
    pub fn from_degree(degree: f64, flip: f64, loss: f64, seed: u64) -> Result<Self> {
        if !(flip >= 0.0 && loss >= 0.0 && flip + loss > 0.0) {
            return Err(Error::Config(format!("bad flip:loss ratio {flip}:{loss}")));
        }
        let g1 = degree * flip / (flip + loss);
        Self::new(g1, degree - g1, seed)
    }

    pub fn degree(&self) -> f64 {
        self.gamma1 + self.gamma2
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |g: f64| (0.0..=1.0).contains(&g);
        if !unit(self.gamma1) || !unit(self.gamma2) || self.gamma1 + self.gamma2 > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "gamma1 = {}, gamma2 = {}: each must lie in [0,1] with sum <= 1",
                self.gamma1, self.gamma2
            )));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.gamma1 == 0.0 && self.gamma2 == 0.0
    }

    #[inline]
    fn apply(&self, bit: u8, r: f64) -> u8 {
        if r < self.gamma1 {
            bit ^ 1
        } else if r < self.gamma1 + self.gamma2 {
            0
        } else {
            bit
        }
    }

    fn rng_at(&self, bit_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(2 * bit_index as u128);
        rng
    }
}

/// Corrupts a sequence of bits (values 0/1).
pub fn corrupt_bits(bits: &[u8], spec: &CorruptionSpec) -> Result<Vec<u8>> {
    spec.validate()?;
    if spec.is_identity() {
        return Ok(bits.to_vec());
    }
    let mut rng = spec.rng_at(0);
    Ok(bits
        .iter()
        .map(|&b| {
            let r: f64 = rng.sample(Open01);
            spec.apply(b & 1, r)
        })
        .collect())
}

const CHUNK_BYTES: usize = 1 << 16;

/// Corrupts packed bytes; equivalent to `corrupt_bits` over the MSB-first
/// bit expansion.
pub fn corrupt_bytes(bytes: &[u8], spec: &CorruptionSpec) -> Result<Vec<u8>> {
    spec.validate()?;
    let mut out = bytes.to_vec();
    if spec.is_identity() {
        return Ok(out);
    }
    out.par_chunks_mut(CHUNK_BYTES).enumerate().for_each(|(ci, chunk)| {
        let mut rng = spec.rng_at((ci * CHUNK_BYTES * 8) as u64);
        for byte in chunk.iter_mut() {
            let mut v = 0u8;
            for i in (0..8).rev() {
                let r: f64 = rng.sample(Open01);
                v |= spec.apply((*byte >> i) & 1, r) << i;
            }
            *byte = v;
        }
    });
    Ok(out)
}

/// Corrupts the stream bytes; annotations pass through unchanged.
pub fn corrupt_stream(stream: &AnnotatedStream, spec: &CorruptionSpec) -> Result<AnnotatedStream> {
    let mut meta = stream.meta.clone();
    meta.corruption = Some(*spec);
    Ok(AnnotatedStream {
        bytes: corrupt_bytes(&stream.bytes, spec)?,
        annotations: stream.annotations.clone(),
        meta,
    })
}
