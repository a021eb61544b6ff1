//! Wire formats for the three protocol layers carried by a GSE satellite
//! stream. All multi-byte fields are big-endian.

mod bb;
mod gse;
mod ip;

pub use bb::{encode_bb_frame, parse_bb_header, BbHeader, BB_HEADER_LEN, MAX_DFL};
pub use gse::{encode_gse_packet, parse_gse_header, GseHeader, GseParse, LabelType, MAX_GSE_LENGTH};
pub use ip::{ipv4_checksum, parse_ip_header, IpHeader, IP_HEADER_LEN, PROTO_ICMP, PROTO_TCP, PROTO_UDP};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A complete IP packet with its ground-truth identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pdu {
    pub id: u64,
    pub bytes: Vec<u8>,
}

impl Pdu {
    pub fn new(id: u64, bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() < IP_HEADER_LEN || bytes.len() > u16::MAX as usize {
            return Err(Error::Consistency(format!(
                "PDU length {} outside [20, 65535]",
                bytes.len()
            )));
        }
        Ok(Self { id, bytes })
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}
