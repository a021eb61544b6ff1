//! Synthetic ground-truth streams: random IPv4 PDUs, fragmented into GSE
//! packets and packed into BB frames, with every header offset recorded.

use std::io::{BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{
    encode_bb_frame, encode_gse_packet, BbHeader, GseHeader, IpHeader, LabelType, Pdu, BB_HEADER_LEN, IP_HEADER_LEN,
    MAX_DFL, MAX_GSE_LENGTH, PROTO_ICMP, PROTO_TCP, PROTO_UDP,
};
use crate::corruption::CorruptionSpec;
use crate::crc::crc32;
use crate::error::{Error, Result};
use crate::layer::Layer;

/// MATYPE for a single generic continuous stream (TS/GS = 01), CCM, roll-off 0.20.
pub const GSE_MATYPE: u16 = 0x7200;
/// GSE protocol type for IPv4.
pub const ETHERTYPE_IPV4: u16 = 0x0800;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficSpec {
    pub n_pdus: usize,
    /// Inclusive PDU length bounds in bytes.
    pub pdu_len_range: [usize; 2],
    /// (protocol code, weight) pairs.
    pub protocol_mix: Vec<(u8, f64)>,
    /// Largest PDU fragment carried by one GSE packet, in bytes.
    pub max_fragment: usize,
    /// BB data field capacity in bits.
    pub frame_capacity: usize,
    pub seed: u64,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        Self {
            n_pdus: 1000,
            pdu_len_range: [40, 400],
            protocol_mix: vec![(PROTO_TCP, 0.6), (PROTO_UDP, 0.3), (PROTO_ICMP, 0.1)],
            max_fragment: 320,
            frame_capacity: 4000,
            seed: 0,
        }
    }
}

impl TrafficSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.pdu_len_range;
        if lo < IP_HEADER_LEN || hi < lo || hi > u16::MAX as usize {
            return Err(Error::Config(format!("pdu_len_range [{lo}, {hi}] must satisfy 20 <= min <= max <= 65535")));
        }
        if self.protocol_mix.is_empty() || self.protocol_mix.iter().any(|&(_, w)| !(w.is_finite() && w > 0.0)) {
            return Err(Error::Config("protocol_mix weights must be positive and finite".into()));
        }
        if self.max_fragment < IP_HEADER_LEN || self.max_fragment + 11 > MAX_GSE_LENGTH as usize {
            return Err(Error::Config(format!(
                "max_fragment {} must keep the IP header in the first fragment and fit the 12-bit length",
                self.max_fragment
            )));
        }
        if self.frame_capacity > MAX_DFL as usize || self.frame_capacity < 8 {
            return Err(Error::Config(format!("frame_capacity {} outside [8, {MAX_DFL}]", self.frame_capacity)));
        }
        Ok(())
    }

    fn capacity_bytes(&self) -> usize {
        self.frame_capacity / 8
    }
}

/// Ground-truth record of one header in a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Annotation {
    pub offset_bytes: usize,
    pub layer: Layer,
    pub length_bytes: usize,
    pub pdu_id: Option<u64>,
}

/// Provenance carried along with a stream.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamMeta {
    pub traffic: Option<TrafficSpec>,
    pub truncated_at: Option<usize>,
    pub corruption: Option<CorruptionSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedStream {
    pub bytes: Vec<u8>,
    pub annotations: Vec<Annotation>,
    pub meta: StreamMeta,
}

impl AnnotatedStream {
    pub fn layer_offsets(&self, layer: Layer) -> Vec<usize> {
        self.annotations.iter().filter(|a| a.layer == layer).map(|a| a.offset_bytes).collect()
    }
}

/// A GSE packet ready for serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GsePacket {
    pub header: GseHeader,
    pub fragment: Vec<u8>,
    pub crc_trailer: Option<u32>,
}

impl GsePacket {
    pub fn encode(&self) -> Result<Vec<u8>> {
        encode_gse_packet(&self.header, &self.fragment, self.crc_trailer)
    }

    pub fn wire_len(&self) -> usize {
        self.header.gse_length as usize + 2
    }
}

/// Random IPv4 PDUs with ids 0..n.
pub fn generate_pdus(spec: &TrafficSpec) -> Result<Vec<Pdu>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights: Vec<f64> = spec.protocol_mix.iter().map(|&(_, w)| w).collect();
    let proto_dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    // A handful of hosts, so addresses repeat the way real traffic does.
    let hosts: Vec<u32> = (0..8).map(|_| 0x0A00_0000 | (rng.gen::<u32>() & 0x00FF_FFFF)).collect();
    let [lo, hi] = spec.pdu_len_range;
    let mut pdus = Vec::with_capacity(spec.n_pdus);
    for id in 0..spec.n_pdus as u64 {
        let len = rng.gen_range(lo..=hi);
        let protocol = spec.protocol_mix[proto_dist.sample(&mut rng)].0;
        let src = hosts[rng.gen_range(0..hosts.len())];
        let dst = hosts[rng.gen_range(0..hosts.len())];
        let ttl = if rng.gen_bool(0.5) { 64 } else { 128 };
        let header = IpHeader::new(len as u16, rng.gen(), ttl, protocol, src, dst);
        let mut bytes = header.to_bytes();
        bytes.extend((IP_HEADER_LEN..len).map(|_| rng.gen::<u8>()));
        pdus.push(Pdu::new(id, bytes)?);
    }
    Ok(pdus)
}

/// Splits a PDU into GSE packets of at most `max_fragment` payload bytes.
/// Fragmented PDUs end with a CRC-32 trailer over the PDU bytes.
pub fn fragment_pdu(pdu: &Pdu, max_fragment: usize, frag_id: u8) -> Result<Vec<GsePacket>> {
    if max_fragment == 0 {
        return Err(Error::Config("max_fragment must be at least 1".into()));
    }
    let chunks: Vec<&[u8]> = pdu.bytes.chunks(max_fragment).collect();
    if chunks.len() == 1 {
        let header = GseHeader::complete(pdu.len(), ETHERTYPE_IPV4, LabelType::Broadcast, Vec::new());
        return Ok(vec![GsePacket {
            header,
            fragment: pdu.bytes.clone(),
            crc_trailer: None,
        }]);
    }
    let last = chunks.len() - 1;
    let crc = crc32(&pdu.bytes);
    let mut packets = Vec::with_capacity(chunks.len());
    for (i, chunk) in chunks.into_iter().enumerate() {
        let start = i == 0;
        let end = i == last;
        let mut header = GseHeader {
            start,
            end,
            label_type: LabelType::Broadcast,
            gse_length: 0,
            frag_id: Some(frag_id),
            total_length: start.then_some(pdu.len() as u16),
            protocol_type: start.then_some(ETHERTYPE_IPV4),
            label: Vec::new(),
        };
        let len = header.header_len() - 2 + chunk.len() + header.trailer_len();
        if len > MAX_GSE_LENGTH as usize {
            return Err(Error::Config(format!("fragment of {} bytes overflows the GSE length field", chunk.len())));
        }
        header.gse_length = len as u16;
        packets.push(GsePacket {
            header,
            fragment: chunk.to_vec(),
            crc_trailer: end.then_some(crc),
        });
    }
    Ok(packets)
}

struct FrameBuilder {
    capacity: usize,
    data: Vec<u8>,
    pending: Vec<Annotation>,
}

impl FrameBuilder {
    fn flush(&mut self, out: &mut Vec<u8>, annotations: &mut Vec<Annotation>) -> Result<()> {
        if self.data.is_empty() {
            return Ok(());
        }
        let frame_start = out.len();
        let header = BbHeader::new(GSE_MATYPE, 0, (self.data.len() * 8) as u16, 0, 0);
        out.extend_from_slice(&encode_bb_frame(&header, &self.data)?);
        out.resize(frame_start + BB_HEADER_LEN + self.capacity, 0);
        annotations.push(Annotation {
            offset_bytes: frame_start,
            layer: Layer::Bb,
            length_bytes: BB_HEADER_LEN,
            pdu_id: None,
        });
        for mut a in self.pending.drain(..) {
            a.offset_bytes += frame_start + BB_HEADER_LEN;
            annotations.push(a);
        }
        self.data.clear();
        Ok(())
    }
}

/// Generates PDUs, fragments them and packs the packets first-fit into
/// zero-padded BB frames. Packets never straddle frames.
pub fn build_stream(spec: &TrafficSpec) -> Result<AnnotatedStream> {
    let pdus = generate_pdus(spec)?;
    let capacity = spec.capacity_bytes();
    let mut frames = FrameBuilder {
        capacity,
        data: Vec::with_capacity(capacity),
        pending: Vec::new(),
    };
    let mut out = Vec::new();
    let mut annotations = Vec::new();
    for pdu in &pdus {
        for packet in fragment_pdu(pdu, spec.max_fragment, pdu.id as u8)? {
            let wire = packet.encode()?;
            if wire.len() > capacity {
                return Err(Error::Config(format!(
                    "GSE packet of {} bytes exceeds frame capacity of {capacity} bytes",
                    wire.len()
                )));
            }
            if frames.data.len() + wire.len() > capacity {
                frames.flush(&mut out, &mut annotations)?;
            }
            let at = frames.data.len();
            let hlen = packet.header.header_len();
            frames.pending.push(Annotation {
                offset_bytes: at,
                layer: Layer::Gse,
                length_bytes: hlen,
                pdu_id: Some(pdu.id),
            });
            if packet.header.start {
                frames.pending.push(Annotation {
                    offset_bytes: at + hlen,
                    layer: Layer::Ip,
                    length_bytes: IP_HEADER_LEN,
                    pdu_id: Some(pdu.id),
                });
            }
            frames.data.extend_from_slice(&wire);
        }
    }
    frames.flush(&mut out, &mut annotations)?;
    Ok(AnnotatedStream {
        bytes: out,
        annotations,
        meta: StreamMeta {
            traffic: Some(spec.clone()),
            ..StreamMeta::default()
        },
    })
}

/// Drops the first `start_offset` bytes, as when reception begins mid-stream.
pub fn truncate_stream(stream: &AnnotatedStream, start_offset: usize) -> Result<AnnotatedStream> {
    if start_offset >= stream.bytes.len() {
        return Err(Error::OutOfRange {
            offset: start_offset,
            len: stream.bytes.len(),
        });
    }
    let annotations = stream
        .annotations
        .iter()
        .filter(|a| a.offset_bytes >= start_offset)
        .map(|a| Annotation {
            offset_bytes: a.offset_bytes - start_offset,
            ..*a
        })
        .collect();
    let mut meta = stream.meta.clone();
    meta.truncated_at = Some(meta.truncated_at.unwrap_or(0) + start_offset);
    Ok(AnnotatedStream {
        bytes: stream.bytes[start_offset..].to_vec(),
        annotations,
        meta,
    })
}

/// Writes annotations as JSON lines.
pub fn write_annotations<W: Write>(mut w: W, annotations: &[Annotation]) -> Result<()> {
    for a in annotations {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_annotations<R: BufRead>(r: R) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
