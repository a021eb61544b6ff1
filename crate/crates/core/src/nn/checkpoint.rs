//! Binary model files.
//!
//! Layout, little-endian throughout: the magic `CLXT`, a `u32` format
//! version, the encoder configuration (`t`, `c`, `layers`, `k`, `d`, then
//! one dilation per layer, all `u32`), a `u32` tensor count, and each tensor
//! as a `u32` rank, `u32` dims and row-major `f32` values. Encoder tensors
//! come first; a trained classifier appends its four head tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{Backbone, Classifier, Encoder, EncoderConfig, Head};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLXT";
pub const VERSION: u32 = 1;

/// A stored encoder, optionally with its classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: Encoder<f32>,
    pub head: Option<Head<f32>>,
}

impl From<Encoder<f32>> for Checkpoint {
    fn from(encoder: Encoder<f32>) -> Self {
        Self { encoder, head: None }
    }
}

impl From<Classifier<f32>> for Checkpoint {
    fn from(c: Classifier<f32>) -> Self {
        Self { encoder: c.encoder, head: Some(c.head) }
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn put_tensor(w: &mut impl Write, dims: &[usize], values: &[f32]) -> Result<()> {
    debug_assert_eq!(dims.iter().product::<usize>(), values.len());
    put_u32(w, dims.len())?;
    for &d in dims {
        put_u32(w, d)?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_tensor(r: &mut impl Read, want: &[usize], name: &str) -> Result<Vec<f32>> {
    let rank = get_u32(r)?;
    let dims = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
    if dims != want {
        return Err(Error::Checkpoint(format!("{name}: shape {dims:?}, expected {want:?}")));
    }
    let n: usize = dims.iter().product();
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)
        .map_err(|e| Error::Checkpoint(format!("{name}: truncated values: {e}")))?;
    let v: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Checkpoint(format!("{name}: non-finite value")));
    }
    Ok(v)
}

fn encoder_tensors(cfg: &EncoderConfig) -> usize {
    4 + 2 * cfg.layers
}

impl Checkpoint {
    pub fn cfg(&self) -> &EncoderConfig {
        self.encoder.cfg()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let cfg = self.cfg();
        let (c, k, d) = (cfg.c, cfg.k, cfg.d);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [cfg.t, c, cfg.layers, k, d] {
            put_u32(w, v)?;
        }
        for &dil in &cfg.dilations {
            put_u32(w, dil)?;
        }
        put_u32(w, encoder_tensors(cfg) + if self.head.is_some() { 4 } else { 0 })?;
        let bb = &self.encoder.backbone;
        put_tensor(w, &[1, c], &bb.w_in)?;
        put_tensor(w, &[c], &bb.b_in)?;
        for (cw, cb) in bb.conv_w.iter().zip(&bb.conv_b) {
            put_tensor(w, &[k, c, c], cw)?;
            put_tensor(w, &[c], cb)?;
        }
        put_tensor(w, &[c, d], &self.encoder.w_out)?;
        put_tensor(w, &[d], &self.encoder.b_out)?;
        if let Some(h) = &self.head {
            put_tensor(w, &[c, h.hidden], &h.w1)?;
            put_tensor(w, &[h.hidden], &h.b1)?;
            put_tensor(w, &[h.hidden, 1], &h.w2)?;
            put_tensor(w, &[1], &h.b2)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 5];
        for v in dims.iter_mut() {
            *v = get_u32(r)?;
        }
        let [t, c, layers, k, d] = dims;
        if layers > 64 {
            return Err(Error::Checkpoint(format!("{layers} layers")));
        }
        let dilations = (0..layers).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let cfg = EncoderConfig { t, c, layers, k, dilations, d };
        cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = get_u32(r)?;
        let base = encoder_tensors(&cfg);
        if count != base && count != base + 4 {
            return Err(Error::Checkpoint(format!("{count} tensors, expected {base} or {}", base + 4)));
        }
        let w_in = get_tensor(r, &[1, c], "w_in")?;
        let b_in = get_tensor(r, &[c], "b_in")?;
        let mut conv_w = Vec::with_capacity(layers);
        let mut conv_b = Vec::with_capacity(layers);
        for l in 0..layers {
            conv_w.push(get_tensor(r, &[k, c, c], &format!("conv{l}.w"))?);
            conv_b.push(get_tensor(r, &[c], &format!("conv{l}.b"))?);
        }
        let w_out = get_tensor(r, &[c, d], "w_out")?;
        let b_out = get_tensor(r, &[d], "b_out")?;
        let encoder = Encoder { backbone: Backbone { cfg, w_in, b_in, conv_w, conv_b }, w_out, b_out };
        let head = if count == base + 4 {
            let rank = get_u32(r)?;
            if rank != 2 || get_u32(r)? != c {
                return Err(Error::Checkpoint("head.w1: bad shape".into()));
            }
            let hidden = get_u32(r)?;
            let mut raw = vec![0u8; c * hidden * 4];
            r.read_exact(&mut raw)
                .map_err(|e| Error::Checkpoint(format!("head.w1: truncated values: {e}")))?;
            let w1: Vec<f32> = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            if w1.iter().any(|x| !x.is_finite()) {
                return Err(Error::Checkpoint("head.w1: non-finite value".into()));
            }
            let b1 = get_tensor(r, &[hidden], "head.b1")?;
            let w2 = get_tensor(r, &[hidden, 1], "head.w2")?;
            let b2 = get_tensor(r, &[1], "head.b2")?;
            Some(Head { c, hidden, w1, b1, w2, b2 })
        } else {
            None
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { encoder, head })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::read_from(&mut BufReader::new(f))
    }

    pub fn into_classifier(self) -> Result<Classifier<f32>> {
        let head = self
            .head
            .ok_or_else(|| Error::Checkpoint("checkpoint holds an encoder without a classifier head".into()))?;
        Ok(Classifier { encoder: self.encoder, head })
    }
}
