use crate::crc::{crc8, verify_crc8_bb};
use crate::error::{Error, Result};

pub const BB_HEADER_LEN: usize = 10;
/// Largest data field length in bits.
pub const MAX_DFL: u16 = 58112;

/// DVB-S2 baseband header: MATYPE, UPL, DFL, SYNC, SYNCD and CRC-8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BbHeader {
    pub matype: u16,
    /// User packet length in bits.
    pub upl: u16,
    /// Data field length in bits.
    pub dfl: u16,
    pub sync: u8,
    pub syncd: u16,
    pub crc8: u8,
}

impl BbHeader {
    /// Builds a header and seals it with the matching CRC-8.
    pub fn new(matype: u16, upl: u16, dfl: u16, sync: u8, syncd: u16) -> Self {
        let mut h = Self {
            matype,
            upl,
            dfl,
            sync,
            syncd,
            crc8: 0,
        };
        h.crc8 = crc8(&h.to_bytes()[..9]);
        h
    }

    pub fn to_bytes(&self) -> [u8; BB_HEADER_LEN] {
        let mut b = [0u8; BB_HEADER_LEN];
        b[0..2].copy_from_slice(&self.matype.to_be_bytes());
        b[2..4].copy_from_slice(&self.upl.to_be_bytes());
        b[4..6].copy_from_slice(&self.dfl.to_be_bytes());
        b[6] = self.sync;
        b[7..9].copy_from_slice(&self.syncd.to_be_bytes());
        b[9] = self.crc8;
        b
    }

    /// Number of data field bytes that follow the header.
    pub fn data_field_bytes(&self) -> usize {
        (self.dfl as usize).div_ceil(8)
    }

    /// TS/GS bits of MATYPE-1 equal `01` (generic continuous stream, the GSE mode).
    pub fn is_generic_continuous(&self) -> bool {
        (self.matype >> 14) == 0b01
    }
}

/// Serializes a header followed by its data field.
pub fn encode_bb_frame(header: &BbHeader, payload: &[u8]) -> Result<Vec<u8>> {
    if header.dfl > MAX_DFL {
        return Err(Error::Consistency(format!(
            "dfl {} exceeds {MAX_DFL}",
            header.dfl
        )));
    }
    if payload.len() != header.data_field_bytes() {
        return Err(Error::Consistency(format!(
            "dfl {} bits needs {} payload bytes, got {}",
            header.dfl,
            header.data_field_bytes(),
            payload.len()
        )));
    }
    let bytes = header.to_bytes();
    if crc8(&bytes[..9]) != header.crc8 {
        return Err(Error::Consistency("header crc8 does not match its fields".into()));
    }
    let mut out = Vec::with_capacity(BB_HEADER_LEN + payload.len());
    out.extend_from_slice(&bytes);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Parses a 10-byte BB header. Any byte content parses; the flag reports
/// whether the CRC-8 verifies.
pub fn parse_bb_header(data: &[u8]) -> Result<(BbHeader, bool)> {
    if data.len() != BB_HEADER_LEN {
        return Err(Error::InputSize(format!(
            "BB header needs {BB_HEADER_LEN} bytes, got {}",
            data.len()
        )));
    }
    let be16 = |i: usize| u16::from_be_bytes([data[i], data[i + 1]]);
    let header = BbHeader {
        matype: be16(0),
        upl: be16(2),
        dfl: be16(4),
        sync: data[6],
        syncd: be16(7),
        crc8: data[9],
    };
    Ok((header, verify_crc8_bb(data)))
}
