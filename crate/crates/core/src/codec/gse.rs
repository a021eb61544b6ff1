use crate::error::{Error, Result};

/// The 12-bit GSE length field maximum.
pub const MAX_GSE_LENGTH: u16 = 0x0FFF;

/// GSE label type. `Reuse` carries no label bytes on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelType {
    SixByte = 0,
    ThreeByte = 1,
    Broadcast = 2,
    Reuse = 3,
}

impl LabelType {
    pub fn from_bits(bits: u8) -> Self {
        match bits & 0b11 {
            0 => Self::SixByte,
            1 => Self::ThreeByte,
            2 => Self::Broadcast,
            _ => Self::Reuse,
        }
    }

    pub fn label_len(self) -> usize {
        match self {
            Self::SixByte => 6,
            Self::ThreeByte => 3,
            Self::Broadcast | Self::Reuse => 0,
        }
    }
}

/// A GSE packet header. Optional fields are present according to the
/// start/end flags; see [`GseHeader::layout_len`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GseHeader {
    pub start: bool,
    pub end: bool,
    pub label_type: LabelType,
    /// Bytes following the length field: rest of header, payload and trailer.
    pub gse_length: u16,
    pub frag_id: Option<u8>,
    pub total_length: Option<u16>,
    pub protocol_type: Option<u16>,
    pub label: Vec<u8>,
}

/// Outcome of parsing the bytes at a candidate GSE position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GseParse {
    Header { header: GseHeader, consumed: usize },
    /// First four bits zero (S=0, E=0, LT=00): the rest of the data field is padding.
    Padding,
    Malformed(&'static str),
}

impl GseHeader {
    /// Header length in bytes for a flag combination.
    pub fn layout_len(start: bool, end: bool, label_type: LabelType) -> usize {
        let mut len = 2;
        if !(start && end) {
            len += 1;
        }
        if start && !end {
            len += 2;
        }
        if start {
            len += 2 + label_type.label_len();
        }
        len
    }

    pub fn header_len(&self) -> usize {
        Self::layout_len(self.start, self.end, self.label_type)
    }

    /// Header for a PDU carried whole in one packet.
    pub fn complete(pdu_len: usize, protocol_type: u16, label_type: LabelType, label: Vec<u8>) -> Self {
        let mut h = Self {
            start: true,
            end: true,
            label_type,
            gse_length: 0,
            frag_id: None,
            total_length: None,
            protocol_type: Some(protocol_type),
            label,
        };
        h.gse_length = (h.header_len() - 2 + pdu_len) as u16;
        h
    }

    /// Trailer bytes (CRC-32) carried by this packet.
    pub fn trailer_len(&self) -> usize {
        if self.end && !self.start {
            4
        } else {
            0
        }
    }

    /// Payload bytes implied by the length field.
    pub fn fragment_len(&self) -> Option<usize> {
        (self.gse_length as usize + 2).checked_sub(self.header_len() + self.trailer_len())
    }

    fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Consistency(m.to_string()));
        if !self.start && !self.end && self.label_type == LabelType::SixByte {
            return fail("S=0, E=0, LT=00 is reserved for padding");
        }
        if self.frag_id.is_some() != !(self.start && self.end) {
            return fail("frag_id present iff the PDU is fragmented");
        }
        if self.total_length.is_some() != (self.start && !self.end) {
            return fail("total_length present iff S=1 and E=0");
        }
        if self.protocol_type.is_some() != self.start {
            return fail("protocol_type present iff S=1");
        }
        let want_label = if self.start { self.label_type.label_len() } else { 0 };
        if self.label.len() != want_label {
            return fail("label length does not match label type");
        }
        if self.gse_length > MAX_GSE_LENGTH {
            return fail("gse_length exceeds 12 bits");
        }
        Ok(())
    }

    fn write(&self, out: &mut Vec<u8>) {
        let b0 = (self.start as u8) << 7
            | (self.end as u8) << 6
            | (self.label_type as u8) << 4
            | ((self.gse_length >> 8) as u8 & 0x0F);
        out.push(b0);
        out.push(self.gse_length as u8);
        if let Some(f) = self.frag_id {
            out.push(f);
        }
        if let Some(t) = self.total_length {
            out.extend_from_slice(&t.to_be_bytes());
        }
        if let Some(p) = self.protocol_type {
            out.extend_from_slice(&p.to_be_bytes());
        }
        out.extend_from_slice(&self.label);
    }
}

/// Serializes a GSE packet. `crc_trailer` must be present exactly on the
/// final packet of a fragmented PDU.
pub fn encode_gse_packet(header: &GseHeader, fragment: &[u8], crc_trailer: Option<u32>) -> Result<Vec<u8>> {
    header.check()?;
    if crc_trailer.is_some() != (header.trailer_len() == 4) {
        return Err(Error::Consistency(
            "CRC trailer belongs on the last packet of a fragmented PDU only".into(),
        ));
    }
    let expected = header.header_len() - 2 + fragment.len() + header.trailer_len();
    if header.gse_length as usize != expected {
        return Err(Error::Consistency(format!(
            "gse_length {} but header, fragment and trailer need {expected}",
            header.gse_length
        )));
    }
    let mut out = Vec::with_capacity(expected + 2);
    header.write(&mut out);
    out.extend_from_slice(fragment);
    if let Some(crc) = crc_trailer {
        out.extend_from_slice(&crc.to_be_bytes());
    }
    Ok(out)
}

/// Parses the GSE header at the start of `data`. Never fails on content:
/// padding and impossible layouts come back as variants.
pub fn parse_gse_header(data: &[u8]) -> Result<GseParse> {
    if data.len() < 2 {
        return Err(Error::InputSize(format!("GSE header needs 2 bytes, got {}", data.len())));
    }
    let start = data[0] & 0x80 != 0;
    let end = data[0] & 0x40 != 0;
    let label_type = LabelType::from_bits(data[0] >> 4);
    if !start && !end && label_type == LabelType::SixByte {
        return Ok(GseParse::Padding);
    }
    let gse_length = u16::from_be_bytes([data[0] & 0x0F, data[1]]);
    let consumed = GseHeader::layout_len(start, end, label_type);
    if data.len() < consumed {
        return Ok(GseParse::Malformed("truncated variable header"));
    }
    let trailer = if end && !start { 4 } else { 0 };
    if (gse_length as usize + 2) < consumed + trailer {
        return Ok(GseParse::Malformed("length shorter than header"));
    }
    let mut at = 2;
    let mut take = |n: usize| {
        let s = &data[at..at + n];
        at += n;
        s
    };
    let frag_id = (!(start && end)).then(|| take(1)[0]);
    let total_length = (start && !end).then(|| {
        let s = take(2);
        u16::from_be_bytes([s[0], s[1]])
    });
    let protocol_type = start.then(|| {
        let s = take(2);
        u16::from_be_bytes([s[0], s[1]])
    });
    let label = if start {
        take(label_type.label_len()).to_vec()
    } else {
        Vec::new()
    };
    Ok(GseParse::Header {
        header: GseHeader {
            start,
            end,
            label_type,
            gse_length,
            frag_id,
            total_length,
            protocol_type,
            label,
        },
        consumed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL_LT: [LabelType; 4] = [
        LabelType::SixByte,
        LabelType::ThreeByte,
        LabelType::Broadcast,
        LabelType::Reuse,
    ];

    fn header_for(start: bool, end: bool, lt: LabelType, payload: usize) -> GseHeader {
        let mut h = GseHeader {
            start,
            end,
            label_type: lt,
            gse_length: 0,
            frag_id: (!(start && end)).then_some(0x5A),
            total_length: (start && !end).then_some(1234),
            protocol_type: start.then_some(0x0800),
            label: if start { vec![0xC3; lt.label_len()] } else { vec![] },
        };
        h.gse_length = (h.header_len() - 2 + payload + h.trailer_len()) as u16;
        h
    }

    #[test]
    fn complete_packet_round_trip() {
        let frag = [7u8; 10];
        let h = GseHeader::complete(10, 0x0800, LabelType::Broadcast, vec![]);
        let p = encode_gse_packet(&h, &frag, None).unwrap();
        assert_eq!(p.len(), 4 + 10);
        match parse_gse_header(&p).unwrap() {
            GseParse::Header { header, consumed } => {
                assert_eq!(header, h);
                assert_eq!(consumed, 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn end_packet_carries_trailer() {
        let h = header_for(false, true, LabelType::Reuse, 5);
        let p = encode_gse_packet(&h, &[1, 2, 3, 4, 5], Some(0xDEADBEEF)).unwrap();
        assert_eq!(&p[p.len() - 4..], &[0xDE, 0xAD, 0xBE, 0xEF]);
        assert!(encode_gse_packet(&h, &[1, 2, 3, 4, 5], None).is_err());
    }

    #[test]
    fn zero_bytes_are_padding() {
        assert_eq!(parse_gse_header(&[0, 0]).unwrap(), GseParse::Padding);
        assert!(parse_gse_header(&[0]).is_err());
    }

    #[test]
    fn inconsistent_headers_rejected() {
        let mut h = header_for(true, true, LabelType::Broadcast, 3);
        h.frag_id = Some(1);
        assert!(encode_gse_packet(&h, &[0; 3], None).is_err());
        let mut h = header_for(true, false, LabelType::Broadcast, 3);
        h.gse_length += 1;
        assert!(encode_gse_packet(&h, &[0; 3], None).is_err());
        let h = header_for(false, false, LabelType::SixByte, 3);
        assert!(encode_gse_packet(&h, &[0; 3], None).is_err());
    }

    #[test]
    fn short_length_is_malformed() {
        // S=1,E=0 needs 7 header bytes but the length field claims 1 byte.
        let b = [0b1010_0000, 0x01, 0, 0, 0, 0, 0, 0];
        assert!(matches!(parse_gse_header(&b).unwrap(), GseParse::Malformed(_)));
        // Truncated before the optional fields end.
        let b = [0b1010_0000, 0x20, 1];
        assert!(matches!(parse_gse_header(&b).unwrap(), GseParse::Malformed(_)));
    }

    /// Independent layout table: (frag_id, total_length, protocol_type) presence per (S,E).
    fn layout_oracle(s: bool, e: bool, lt: LabelType) -> usize {
        let table = [
            // (s, e, frag, total, proto)
            (false, false, 1, 0, 0),
            (false, true, 1, 0, 0),
            (true, false, 1, 2, 2),
            (true, true, 0, 0, 2),
        ];
        let row = table.iter().find(|r| r.0 == s && r.1 == e).unwrap();
        let label = if s { [6, 3, 0, 0][lt as usize] } else { 0 };
        2 + row.2 + row.3 + row.4 + label
    }

    #[test]
    fn layout_table_enumeration() {
        for s in [false, true] {
            for e in [false, true] {
                for lt in ALL_LT {
                    assert_eq!(GseHeader::layout_len(s, e, lt), layout_oracle(s, e, lt));
                    if !s && !e && lt == LabelType::SixByte {
                        continue;
                    }
                    let h = header_for(s, e, lt, 9);
                    let crc = h.trailer_len().eq(&4).then_some(0x01020304);
                    let p = encode_gse_packet(&h, &[0xEE; 9], crc).unwrap();
                    match parse_gse_header(&p).unwrap() {
                        GseParse::Header { header, consumed } => {
                            assert_eq!(consumed, layout_oracle(s, e, lt), "{s} {e} {lt:?}");
                            assert_eq!(header, h);
                        }
                        other => panic!("{other:?}"),
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(s in any::<bool>(), e in any::<bool>(), lt in 0u8..4, payload in proptest::collection::vec(any::<u8>(), 0..300)) {
            let lt = LabelType::from_bits(lt);
            prop_assume!(s || e || lt != LabelType::SixByte);
            let h = header_for(s, e, lt, payload.len());
            let crc = (h.trailer_len() == 4).then_some(0xAABBCCDD);
            let p = encode_gse_packet(&h, &payload, crc).unwrap();
            match parse_gse_header(&p).unwrap() {
                GseParse::Header { header, consumed } => {
                    prop_assert_eq!(&header, &h);
                    prop_assert_eq!(header.fragment_len(), Some(payload.len()));
                    prop_assert_eq!(&p[consumed..consumed + payload.len()], &payload[..]);
                }
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn parse_total(b in proptest::collection::vec(any::<u8>(), 2..16)) {
            prop_assert!(parse_gse_header(&b).is_ok());
        }
    }
}
