use crate::error::{Error, Result};

pub const IP_HEADER_LEN: usize = 20;
pub const PROTO_ICMP: u8 = 0x01;
pub const PROTO_TCP: u8 = 0x06;
pub const PROTO_UDP: u8 = 0x11;

/// IPv4 header. Fields not used by the toolkit are kept as opaque values.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IpHeader {
    pub version: u8,
    /// Header length in 32-bit words.
    pub ihl: u8,
    pub tos: u8,
    pub total_length: u16,
    pub identification: u16,
    pub flags_fragment: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub header_checksum: u16,
    pub src: u32,
    pub dst: u32,
    pub options: Vec<u8>,
}

impl IpHeader {
    /// A 20-byte header with a valid checksum.
    pub fn new(total_length: u16, identification: u16, ttl: u8, protocol: u8, src: u32, dst: u32) -> Self {
        let mut h = Self {
            version: 4,
            ihl: 5,
            tos: 0,
            total_length,
            identification,
            flags_fragment: 0x4000,
            ttl,
            protocol,
            header_checksum: 0,
            src,
            dst,
            options: Vec::new(),
        };
        h.header_checksum = ipv4_checksum(&h.to_bytes());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(IP_HEADER_LEN + self.options.len());
        b.push(self.version << 4 | (self.ihl & 0x0F));
        b.push(self.tos);
        b.extend_from_slice(&self.total_length.to_be_bytes());
        b.extend_from_slice(&self.identification.to_be_bytes());
        b.extend_from_slice(&self.flags_fragment.to_be_bytes());
        b.push(self.ttl);
        b.push(self.protocol);
        b.extend_from_slice(&self.header_checksum.to_be_bytes());
        b.extend_from_slice(&self.src.to_be_bytes());
        b.extend_from_slice(&self.dst.to_be_bytes());
        b.extend_from_slice(&self.options);
        b
    }

    pub fn header_len(&self) -> usize {
        self.ihl as usize * 4
    }
}

/// Ones-complement checksum of a header whose checksum field is ignored.
pub fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    for (i, pair) in header.chunks(2).enumerate() {
        if i == 5 {
            continue;
        }
        let word = u16::from_be_bytes([pair[0], *pair.get(1).unwrap_or(&0)]);
        sum += word as u32;
    }
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}

/// Parses an IPv4 header from the start of `data`; the flag reports whether
/// version, IHL and checksum are all consistent.
pub fn parse_ip_header(data: &[u8]) -> Result<(IpHeader, bool)> {
    if data.len() < IP_HEADER_LEN {
        return Err(Error::InputSize(format!(
            "IP header needs {IP_HEADER_LEN} bytes, got {}",
            data.len()
        )));
    }
    let be16 = |i: usize| u16::from_be_bytes([data[i], data[i + 1]]);
    let be32 = |i: usize| u32::from_be_bytes([data[i], data[i + 1], data[i + 2], data[i + 3]]);
    let ihl = data[0] & 0x0F;
    let hlen = ihl as usize * 4;
    let fits = ihl >= 5 && hlen <= data.len();
    let options = if fits { data[IP_HEADER_LEN..hlen].to_vec() } else { Vec::new() };
    let header = IpHeader {
        version: data[0] >> 4,
        ihl,
        tos: data[1],
        total_length: be16(2),
        identification: be16(4),
        flags_fragment: be16(6),
        ttl: data[8],
        protocol: data[9],
        header_checksum: be16(10),
        src: be32(12),
        dst: be32(16),
        options,
    };
    let ok = fits && header.version == 4 && ipv4_checksum(&data[..hlen]) == header.header_checksum;
    Ok((header, ok))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tcp_protocol_code() {
        let h = IpHeader::new(60, 1, 64, PROTO_TCP, 0x0A000001, 0x0A000002);
        let (p, ok) = parse_ip_header(&h.to_bytes()).unwrap();
        assert!(ok);
        assert_eq!(p.protocol, 0x06);
        assert_eq!(p, h);
    }

    #[test]
    fn known_checksum() {
        // Classic worked example: 4500 0073 0000 4000 4011 ---- c0a8 0001 c0a8 00c7 -> b861
        let b = [
            0x45, 0x00, 0x00, 0x73, 0x00, 0x00, 0x40, 0x00, 0x40, 0x11, 0x00, 0x00, 0xc0, 0xa8, 0x00, 0x01, 0xc0,
            0xa8, 0x00, 0xc7,
        ];
        assert_eq!(ipv4_checksum(&b), 0xB861);
    }

    #[test]
    fn single_bit_flip_breaks_checksum() {
        let h = IpHeader::new(100, 77, 64, PROTO_UDP, 1, 2).to_bytes();
        for bit in 0..160 {
            let mut b = h.clone();
            b[bit / 8] ^= 0x80 >> (bit % 8);
            let (_, ok) = parse_ip_header(&b).unwrap();
            assert!(!ok, "bit {bit}");
        }
    }

    #[test]
    fn short_input() {
        assert!(parse_ip_header(&[0x45; 19]).is_err());
    }

    proptest! {
        #[test]
        fn parse_total(b in proptest::collection::vec(any::<u8>(), 20..64)) {
            prop_assert!(parse_ip_header(&b).is_ok());
        }

        #[test]
        fn round_trip(len in 20u16.., id in any::<u16>(), ttl in any::<u8>(), proto in any::<u8>(), s in any::<u32>(), d in any::<u32>()) {
            let h = IpHeader::new(len, id, ttl, proto, s, d);
            let (p, ok) = parse_ip_header(&h.to_bytes()).unwrap();
            prop_assert!(ok);
            prop_assert_eq!(p, h);
        }
    }
}
