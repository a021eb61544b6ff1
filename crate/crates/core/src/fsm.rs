//! Length-field driven decoder: find a BB header whose CRC-8 verifies, walk
//! its data field packet by packet using the GSE length field, reassemble
//! fragments by fragment id and accept PDUs whose CRC-32 verifies. Any
//! inconsistency abandons the frame and the search restarts one byte after
//! the frame's header.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::{parse_bb_header, parse_gse_header, parse_ip_header, GseParse, BB_HEADER_LEN, IP_HEADER_LEN, MAX_DFL};
use crate::crc::crc32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveredPdu {
    /// Stream offset of the PDU's IP header.
    pub offset: usize,
    #[serde(with = "crate::hexbytes")]
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub bb_found: usize,
    pub gse_found: usize,
    pub ip_found: usize,
    pub bb_offsets: Vec<usize>,
    pub gse_offsets: Vec<usize>,
    pub ip_offsets: Vec<usize>,
    pub pdus: Vec<RecoveredPdu>,
    pub crc_failures: usize,
    pub bytes_scanned: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_s: Option<f64>,
}

impl DecodeReport {
    fn finish(&mut self) {
        self.bb_found = self.bb_offsets.len();
        self.gse_found = self.gse_offsets.len();
        self.ip_found = self.ip_offsets.len();
    }
}

/// Field sanity beyond the CRC: generic continuous stream mode and a
/// non-empty data field no longer than the DVB-S2 maximum.
fn plausible_bb(window: &[u8]) -> bool {
    match parse_bb_header(window) {
        Ok((h, true)) => h.is_generic_continuous() && h.dfl > 0 && h.dfl <= MAX_DFL,
        _ => false,
    }
}

/// Smallest offset at or after `from` holding a plausible BB header.
pub fn resync_scan(data: &[u8], from: usize) -> Option<usize> {
    if data.len() < BB_HEADER_LEN {
        return None;
    }
    (from..=data.len() - BB_HEADER_LEN).find(|&o| plausible_bb(&data[o..o + BB_HEADER_LEN]))
}

struct Partial {
    bytes: Vec<u8>,
    total_length: usize,
    offset: usize,
}

/// A single-packet PDU has no CRC; accept it when its IPv4 header is
/// structurally consistent with the carried length.
fn structurally_valid(pdu: &[u8]) -> bool {
    if pdu.len() < IP_HEADER_LEN {
        return false;
    }
    let Ok((ip, _)) = parse_ip_header(pdu) else {
        return false;
    };
    ip.version == 4 && ip.ihl >= 5 && ip.total_length as usize == pdu.len()
}

/// Walks one data field, recording what it finds as it goes. Returns false
/// when the frame is inconsistent: a malformed header, a packet overrunning
/// the data field, a chain that does not end exactly at the field end, or
/// padding with non-zero content.
fn walk_frame(
    data: &[u8],
    start: usize,
    end: usize,
    partials: &mut HashMap<u8, Partial>,
    report: &mut DecodeReport,
) -> bool {
    let mut p = start;
    while p + 2 <= end {
        let (header, consumed) = match parse_gse_header(&data[p..end]) {
            Ok(GseParse::Header { header, consumed }) => (header, consumed),
            Ok(GseParse::Padding) => return p > start && data[p..end].iter().all(|&b| b == 0),
            _ => return false,
        };
        let packet_end = p + 2 + header.gse_length as usize;
        if packet_end > end {
            return false;
        }
        report.gse_offsets.push(p);
        let body = &data[p + consumed..packet_end];
        match (header.start, header.end) {
            (true, true) => {
                if structurally_valid(body) {
                    report.ip_offsets.push(p + consumed);
                    report.pdus.push(RecoveredPdu {
                        offset: p + consumed,
                        bytes: body.to_vec(),
                    });
                }
            }
            (true, false) => {
                let frag_id = header.frag_id.unwrap_or_default();
                partials.insert(
                    frag_id,
                    Partial {
                        bytes: body.to_vec(),
                        total_length: header.total_length.unwrap_or_default() as usize,
                        offset: p + consumed,
                    },
                );
            }
            (false, false) => {
                if let Some(part) = partials.get_mut(&header.frag_id.unwrap_or_default()) {
                    part.bytes.extend_from_slice(body);
                }
            }
            (false, true) => {
                if let Some(mut part) = partials.remove(&header.frag_id.unwrap_or_default()) {
                    let (frag, trailer) = body.split_at(body.len() - 4);
                    part.bytes.extend_from_slice(frag);
                    if part.bytes.len() == part.total_length && crc32(&part.bytes).to_be_bytes() == trailer {
                        report.ip_offsets.push(part.offset);
                        report.pdus.push(RecoveredPdu {
                            offset: part.offset,
                            bytes: part.bytes,
                        });
                    } else {
                        report.crc_failures += 1;
                    }
                }
            }
        }
        p = packet_end;
    }
    p == end
}

/// Wall clock, where the target has one.
fn clock() -> Option<Instant> {
    if cfg!(all(target_arch = "wasm32", target_os = "unknown")) {
        None
    } else {
        Some(Instant::now())
    }
}

/// Decodes a byte stream layer by layer. Always returns a report.
pub fn fsm_decode(data: &[u8]) -> DecodeReport {
    let started = clock();
    let mut report = DecodeReport::default();
    let mut partials: HashMap<u8, Partial> = HashMap::new();
    let mut pos = 0;
    while let Some(bb) = resync_scan(data, pos) {
        let (header, _) = parse_bb_header(&data[bb..bb + BB_HEADER_LEN]).expect("10-byte slice");
        let start = bb + BB_HEADER_LEN;
        let end = start + header.data_field_bytes();
        if end > data.len() {
            pos = bb + 1;
            continue;
        }
        report.bb_offsets.push(bb);
        if walk_frame(data, start, end, &mut partials, &mut report) {
            pos = end;
        } else {
            pos = bb + 1;
        }
    }
    report.bytes_scanned = data.len();
    report.finish();
    report.elapsed_s = started.map(|t| t.elapsed().as_secs_f64());
    report
}
