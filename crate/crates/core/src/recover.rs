//! Classifier-driven recovery: slide each layer's classifier over the stream,
//! segment BB frames, locate GSE and IP headers inside them, extract PDUs by
//! adjacency and repair the IP protocol field.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bits::fill_window_bits;
use crate::codec::{parse_gse_header, GseParse, BB_HEADER_LEN, IP_HEADER_LEN};
use crate::error::{Error, Result};
use crate::layer::Layer;
use crate::nn::{Checkpoint, Classifier};

/// Windows classified per call into the network.
const SCAN_BATCH: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    /// Bytes between candidate offsets.
    pub stride: usize,
    /// Minimum header probability.
    pub threshold: f64,
    /// Per-layer overrides of `threshold`.
    pub layer_thresholds: BTreeMap<Layer, f64>,
    /// Non-maximum suppression radius per layer in bytes; `None` uses the
    /// layer's nominal header length.
    pub suppress_radius: Option<usize>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { stride: 1, threshold: 0.5, layer_thresholds: BTreeMap::new(), suppress_radius: None }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        for t in std::iter::once(&self.threshold).chain(self.layer_thresholds.values()) {
            if !(*t > 0.0 && *t < 1.0) {
                return Err(Error::Config(format!("threshold {t} outside (0,1)")));
            }
        }
        Ok(())
    }

    pub fn threshold(&self, layer: Layer) -> f64 {
        self.layer_thresholds.get(&layer).copied().unwrap_or(self.threshold)
    }

    pub fn radius(&self, layer: Layer) -> usize {
        self.suppress_radius.unwrap_or_else(|| layer.nominal_header_len())
    }
}

/// A repaired header field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRepair {
    pub field: String,
    pub from: u32,
    pub to: u32,
    pub distance: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderDetection {
    pub offset_bytes: usize,
    pub layer: Layer,
    pub score: f64,
    #[serde(default)]
    pub corrected: Vec<FieldRepair>,
}

/// The three per-layer classifiers and the protocol codes seen in training.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub bb: Classifier<f32>,
    pub gse: Classifier<f32>,
    pub ip: Classifier<f32>,
    pub protocols: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct ProtocolsFile {
    protocols: Vec<u8>,
}

impl ModelSet {
    pub fn get(&self, layer: Layer) -> &Classifier<f32> {
        match layer {
            Layer::Bb => &self.bb,
            Layer::Gse => &self.gse,
            Layer::Ip => &self.ip,
        }
    }

    /// Writes `bb.clxt`, `gse.clxt`, `ip.clxt` and `protocols.json`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for layer in Layer::ALL {
            let path = dir.join(format!("{layer}.clxt"));
            Checkpoint::from(self.get(layer).clone()).save(&path)?;
            written.push(path);
        }
        let path = dir.join("protocols.json");
        fs::write(&path, serde_json::to_string_pretty(&ProtocolsFile { protocols: self.protocols.clone() })? + "\n")?;
        written.push(path);
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let load = |layer: Layer| -> Result<Classifier<f32>> {
            let c = Checkpoint::load(dir.join(format!("{layer}.clxt")))?.into_classifier()?;
            if c.cfg().t != layer.window_bits() {
                return Err(Error::Checkpoint(format!(
                    "{layer} model has T = {}, expected {}",
                    c.cfg().t,
                    layer.window_bits()
                )));
            }
            Ok(c)
        };
        let protocols = match fs::read_to_string(dir.join("protocols.json")) {
            Ok(s) => serde_json::from_str::<ProtocolsFile>(&s)?.protocols,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self { bb: load(Layer::Bb)?, gse: load(Layer::Gse)?, ip: load(Layer::Ip)?, protocols })
    }
}

/// Keeps the highest-scoring detections such that no two kept ones are
/// closer than `radius` bytes. Ties go to the smaller offset. Output is
/// sorted by offset.
pub fn suppress(mut cands: Vec<HeaderDetection>, radius: usize) -> Vec<HeaderDetection> {
    cands.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.offset_bytes.cmp(&b.offset_bytes)));
    let mut kept: BTreeSet<usize> = BTreeSet::new();
    let mut out = Vec::new();
    for d in cands {
        let o = d.offset_bytes;
        let lo = o.saturating_sub(radius.saturating_sub(1));
        if radius == 0 || kept.range(lo..o + radius).next().is_none() {
            kept.insert(o);
            out.push(d);
        }
    }
    out.sort_by_key(|d| d.offset_bytes);
    out
}

/// Header probability at every stride-spaced offset of `region`.
pub fn score_offsets(
    model: &Classifier<f32>,
    layer: Layer,
    data: &[u8],
    region: Range<usize>,
    stride: usize,
) -> Result<Vec<(usize, f32)>> {
    let t = layer.window_bits();
    if model.cfg().t != t {
        return Err(Error::Config(format!("{layer} scan needs T = {t}, model has T = {}", model.cfg().t)));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    if region.start > region.end || region.end > data.len() {
        return Err(Error::OutOfRange { offset: region.end, len: data.len() });
    }
    let offsets: Vec<usize> = region.step_by(stride).collect();
    let mut out = Vec::with_capacity(offsets.len());
    let mut bits = Vec::new();
    for chunk in offsets.chunks(SCAN_BATCH) {
        bits.clear();
        bits.resize(chunk.len() * t, 0);
        for (&o, w) in chunk.iter().zip(bits.chunks_mut(t)) {
            fill_window_bits(data, o, w);
        }
        out.extend(chunk.iter().copied().zip(model.predict(&bits)?));
    }
    Ok(out)
}

/// Thresholds scored offsets and applies non-maximum suppression.
pub fn detections_from_scores(scores: &[(usize, f32)], layer: Layer, threshold: f64, radius: usize) -> Vec<HeaderDetection> {
    let cands = scores
        .iter()
        .filter(|(_, p)| *p as f64 >= threshold)
        .map(|&(o, p)| HeaderDetection { offset_bytes: o, layer, score: p as f64, corrected: Vec::new() })
        .collect();
    suppress(cands, radius)
}

/// Classifies every stride-spaced offset of `region` and returns the
/// surviving detections sorted by offset.
pub fn scan_layer(
    model: &Classifier<f32>,
    layer: Layer,
    data: &[u8],
    region: Range<usize>,
    cfg: &ScanConfig,
) -> Result<Vec<HeaderDetection>> {
    cfg.validate()?;
    let scores = score_offsets(model, layer, data, region, cfg.stride)?;
    Ok(detections_from_scores(&scores, layer, cfg.threshold(layer), cfg.radius(layer)))
}

/// BB data-field regions implied by BB detections: from 10 bytes past each
/// detection to the next detection, the last one running to the end.
pub fn segment_bb_frames(bb: &[HeaderDetection], data_len: usize) -> Vec<Range<usize>> {
    if bb.is_empty() {
        return vec![0..data_len];
    }
    bb.iter()
        .enumerate()
        .map(|(i, d)| {
            let end = bb.get(i + 1).map_or(data_len, |n| n.offset_bytes).min(data_len);
            (d.offset_bytes + BB_HEADER_LEN).min(end)..end
        })
        .collect()
}

/// Hamming distance between two bytes.
pub fn hamming(a: u8, b: u8) -> u32 {
    (a ^ b).count_ones()
}

/// The valid code nearest to `observed` in Hamming distance, smallest code
/// on ties, with that distance.
pub fn nearest_code(observed: u8, valid: &[u8]) -> Option<(u8, u32)> {
    valid.iter().map(|&v| (v, hamming(observed, v))).min_by_key(|&(v, d)| (d, v))
}

/// Repairs the protocol byte of an IPv4 header to the nearest valid code.
pub fn correct_protocol_field(header: &[u8], valid: &[u8]) -> Result<(u8, u32)> {
    let observed = *header
        .get(9)
        .ok_or_else(|| Error::InputSize(format!("IPv4 header of {} bytes has no protocol field", header.len())))?;
    nearest_code(observed, valid).ok_or_else(|| Error::Config("no valid protocol codes".into()))
}

/// A PDU cut out of the stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedPdu {
    /// Offset of the IP header.
    pub offset: usize,
    #[serde(with = "crate::hexbytes")]
    pub bytes: Vec<u8>,
    /// GSE packets the bytes were collected from.
    pub fragments: usize,
    /// Fewer bytes were found than the header's total length asks for.
    pub truncated: bool,
}

/// Header length of a GSE packet at `offset`, if it parses.
fn gse_header_len(data: &[u8], offset: usize) -> Option<usize> {
    match parse_gse_header(data.get(offset..)?) {
        Ok(GseParse::Header { consumed, .. }) => Some(consumed),
        _ => None,
    }
}

/// End of the fragment bytes of the GSE packet at `offset`, if it parses.
fn gse_payload_end(data: &[u8], offset: usize) -> Option<usize> {
    match parse_gse_header(data.get(offset..)?) {
        Ok(GseParse::Header { header, .. }) => Some(offset + 2 + header.gse_length as usize - header.trailer_len()),
        _ => None,
    }
}

/// Emits one PDU per IP detection. Bytes run from the IP header to the next
/// GSE or BB boundary, or to the packet end given by the enclosing GSE
/// length field when that comes first; following GSE packets that contain no IP detection
/// are appended as continuation fragments. The result is trimmed to the
/// header's total length when that field is plausible.
pub fn extract_pdus(
    bb: &[HeaderDetection],
    gse: &[HeaderDetection],
    ip: &[HeaderDetection],
    data: &[u8],
) -> Vec<ExtractedPdu> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Bb,
        Gse,
    }
    let mut marks: Vec<(usize, Mark)> = bb
        .iter()
        .map(|d| (d.offset_bytes, Mark::Bb))
        .chain(gse.iter().map(|d| (d.offset_bytes, Mark::Gse)))
        .collect();
    marks.sort_by_key(|&(o, m)| (o, m == Mark::Gse));
    let ip_offsets: Vec<usize> = ip.iter().map(|d| d.offset_bytes).collect();
    let next_mark = |after: usize| marks.partition_point(|&(o, _)| o <= after);
    let has_ip = |from: usize, to: usize| {
        let i = ip_offsets.partition_point(|&o| o < from);
        ip_offsets.get(i).is_some_and(|&o| o < to)
    };

    // A segment stops early at its packet's length-field end when that end
    // falls inside it, which drops frame padding.
    let clip = |owner: Option<usize>, from: usize, to: usize| match owner.and_then(|g| gse_payload_end(data, g)) {
        Some(e) if e > from && e < to => e,
        _ => to,
    };

    let mut out = Vec::with_capacity(ip.len());
    for (k, d) in ip.iter().enumerate() {
        let start = d.offset_bytes;
        let stop_ip = ip_offsets.get(k + 1).copied().unwrap_or(data.len());
        let mut mi = next_mark(start);
        let owner = mi.checked_sub(1).and_then(|i| (marks[i].1 == Mark::Gse).then_some(marks[i].0));
        let mut end = marks.get(mi).map_or(data.len(), |&(o, _)| o).min(stop_ip);
        let mut bytes = data[start..clip(owner, start, end)].to_vec();
        let mut fragments = 1;
        let want = (bytes.len() >= 4)
            .then(|| u16::from_be_bytes([bytes[2], bytes[3]]) as usize)
            .filter(|&l| l >= IP_HEADER_LEN);
        // Follow continuation packets while the PDU is still short.
        while want.is_some_and(|w| bytes.len() < w) && end == marks.get(mi).map_or(usize::MAX, |&(o, _)| o) {
            while marks.get(mi).is_some_and(|&(_, m)| m == Mark::Bb) {
                mi += 1;
            }
            let Some(&(g, _)) = marks.get(mi) else { break };
            let payload = g + gse_header_len(data, g).unwrap_or(3);
            let next = marks.get(mi + 1).map_or(data.len(), |&(o, _)| o);
            if payload > next || has_ip(g, next) {
                break;
            }
            let payload = payload.min(data.len());
            bytes.extend_from_slice(&data[payload..clip(Some(g), payload, next)]);
            fragments += 1;
            mi += 1;
            end = next;
        }
        let truncated = match want {
            Some(w) if bytes.len() >= w => {
                bytes.truncate(w);
                false
            }
            Some(_) => true,
            None => end == data.len(),
        };
        out.push(ExtractedPdu { offset: start, bytes, fragments, truncated });
    }
    out
}

/// Everything the pipeline found in one stream.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub bb: Vec<HeaderDetection>,
    pub gse: Vec<HeaderDetection>,
    pub ip: Vec<HeaderDetection>,
    /// BB data-field regions scanned for GSE and IP headers.
    pub frames: Vec<Range<usize>>,
    pub pdus: Vec<ExtractedPdu>,
    /// Offsets classified per layer.
    pub candidates: [usize; 3],
}

impl Recovery {
    pub fn detections(&self, layer: Layer) -> &[HeaderDetection] {
        match layer {
            Layer::Bb => &self.bb,
            Layer::Gse => &self.gse,
            Layer::Ip => &self.ip,
        }
    }

    pub fn candidates(&self, layer: Layer) -> usize {
        self.candidates[layer as usize]
    }

    pub fn all_detections(&self) -> Vec<&HeaderDetection> {
        let mut v: Vec<&HeaderDetection> = self.bb.iter().chain(&self.gse).chain(&self.ip).collect();
        v.sort_by_key(|d| (d.offset_bytes, d.layer));
        v
    }
}

fn scan_regions(
    model: &Classifier<f32>,
    layer: Layer,
    data: &[u8],
    regions: &[Range<usize>],
    cfg: &ScanConfig,
) -> Result<(Vec<HeaderDetection>, usize)> {
    let mut all = Vec::new();
    let mut n = 0;
    for r in regions {
        n += r.clone().step_by(cfg.stride).len();
        all.extend(scan_layer(model, layer, data, r.clone(), cfg)?);
    }
    Ok((all, n))
}

/// Runs the full pipeline on `data`.
pub fn recover(models: &ModelSet, data: &[u8], cfg: &ScanConfig) -> Result<Recovery> {
    let bb = scan_layer(&models.bb, Layer::Bb, data, 0..data.len(), cfg)?;
    let n_bb = (0..data.len()).step_by(cfg.stride).len();
    let frames = segment_bb_frames(&bb, data.len());
    let (gse, n_gse) = scan_regions(&models.gse, Layer::Gse, data, &frames, cfg)?;
    let (mut ip, n_ip) = scan_regions(&models.ip, Layer::Ip, data, &frames, cfg)?;
    if !models.protocols.is_empty() {
        for d in ip.iter_mut() {
            let Some(&observed) = data.get(d.offset_bytes + 9) else { continue };
            if let Some((code, dist)) = nearest_code(observed, &models.protocols) {
                if dist > 0 {
                    d.corrected.push(FieldRepair {
                        field: "protocol".into(),
                        from: observed as u32,
                        to: code as u32,
                        distance: dist,
                    });
                }
            }
        }
    }
    let mut pdus = extract_pdus(&bb, &gse, &ip, data);
    for (p, d) in pdus.iter_mut().zip(&ip) {
        if let (Some(fix), Some(b)) = (d.corrected.iter().find(|f| f.field == "protocol"), p.bytes.get_mut(9)) {
            *b = fix.to as u8;
        }
    }
    Ok(Recovery { bb, gse, ip, frames, pdus, candidates: [n_bb, n_gse, n_ip] })
}

pub fn write_detections<W: Write>(mut w: W, detections: &[&HeaderDetection]) -> Result<()> {
    for d in detections {
        writeln!(w, "{}", serde_json::to_string(d)?)?;
    }
    Ok(())
}

pub fn read_detections<R: BufRead>(r: R) -> Result<Vec<HeaderDetection>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// PDU file: each record is a big-endian `u32` length followed by the bytes.
pub fn write_pdus<W: Write>(mut w: W, pdus: &[ExtractedPdu]) -> Result<()> {
    for p in pdus {
        w.write_all(&(p.bytes.len() as u32).to_be_bytes())?;
        w.write_all(&p.bytes)?;
    }
    Ok(())
}

pub fn read_pdus(mut data: &[u8]) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    while !data.is_empty() {
        if data.len() < 4 {
            return Err(Error::InputSize("dangling length prefix".into()));
        }
        let n = u32::from_be_bytes(data[..4].try_into().unwrap()) as usize;
        let body = data.get(4..4 + n).ok_or_else(|| Error::InputSize(format!("record of {n} bytes is cut short")))?;
        out.push(body.to_vec());
        data = &data[4 + n..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(o: usize, s: f64) -> HeaderDetection {
        HeaderDetection { offset_bytes: o, layer: Layer::Bb, score: s, corrected: Vec::new() }
    }

    #[test]
    fn suppression_keeps_the_best_neighbour() {
        let kept = suppress(vec![det(100, 0.7), det(101, 0.9)], 10);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].offset_bytes, 101);
        let kept = suppress(vec![det(0, 0.6), det(10, 0.9), det(25, 0.8)], 10);
        assert_eq!(kept.iter().map(|d| d.offset_bytes).collect::<Vec<_>>(), vec![0, 10, 25]);
        let kept = suppress(vec![det(5, 0.8), det(3, 0.8)], 4);
        assert_eq!(kept.iter().map(|d| d.offset_bytes).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(segment_bb_frames(&[det(0, 1.0), det(1000, 1.0)], 2000), vec![10..1000, 1010..2000]);
        assert_eq!(segment_bb_frames(&[], 77), vec![0..77]);
        assert_eq!(segment_bb_frames(&[det(0, 1.0), det(4, 1.0)], 8), vec![4..4, 8..8]);
    }

    #[test]
    fn protocol_correction_examples() {
        let valid = [0x06, 0x11, 0x01];
        assert_eq!(nearest_code(0x06, &valid), Some((0x06, 0)));
        assert_eq!(nearest_code(0x07, &valid), Some((0x06, 1)));
        assert_eq!(nearest_code(0x00, &[0x01, 0x06]), Some((0x01, 1)));
        assert_eq!(nearest_code(0x00, &[]), None);
        let mut header = [0u8; 20];
        header[9] = 0x13;
        assert_eq!(correct_protocol_field(&header, &valid).unwrap(), (0x11, 1));
        assert!(correct_protocol_field(&header[..9], &valid).is_err());
    }

    #[test]
    fn correction_is_idempotent() {
        let valid = [0x01, 0x06, 0x11];
        for b in 0..=255u8 {
            let (c, _) = nearest_code(b, &valid).unwrap();
            assert_eq!(nearest_code(c, &valid), Some((c, 0)));
        }
    }

    #[test]
    fn pdu_records_round_trip() {
        let pdus = vec![
            ExtractedPdu { offset: 0, bytes: vec![1, 2, 3], fragments: 1, truncated: false },
            ExtractedPdu { offset: 9, bytes: vec![], fragments: 1, truncated: true },
        ];
        let mut buf = Vec::new();
        write_pdus(&mut buf, &pdus).unwrap();
        assert_eq!(read_pdus(&buf).unwrap(), vec![vec![1, 2, 3], vec![]]);
        assert!(read_pdus(&buf[..5]).is_err());
    }
}
