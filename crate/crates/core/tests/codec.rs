use clx_core::codec::*;
use clx_core::crc::{crc32, crc8, verify_crc32_trailer};
use proptest::prelude::*;

fn bitwise_crc32(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

fn label_type() -> impl Strategy<Value = LabelType> {
    prop_oneof![
        Just(LabelType::SixByte),
        Just(LabelType::ThreeByte),
        Just(LabelType::Broadcast),
        Just(LabelType::Reuse),
    ]
}

fn gse_case() -> impl Strategy<Value = (GseHeader, Vec<u8>, Option<u32>)> {
    (any::<bool>(), any::<bool>(), label_type(), any::<u8>(), any::<u16>(), any::<u16>(), any::<u32>())
        .prop_filter("padding pattern", |(s, e, lt, ..)| *s || *e || *lt != LabelType::SixByte)
        .prop_flat_map(|(s, e, lt, fid, tl, pt, crc)| {
            let label = proptest::collection::vec(any::<u8>(), lt.label_len());
            (Just((s, e, lt, fid, tl, pt, crc)), label, proptest::collection::vec(any::<u8>(), 0..200))
        })
        .prop_map(|((s, e, lt, fid, tl, pt, crc), label, fragment)| {
            let mut h = GseHeader {
                start: s,
                end: e,
                label_type: lt,
                gse_length: 0,
                frag_id: (!(s && e)).then_some(fid),
                total_length: (s && !e).then_some(tl),
                protocol_type: s.then_some(pt),
                label: if s { label } else { Vec::new() },
            };
            let trailer = (e && !s).then_some(crc);
            h.gse_length = (h.header_len() - 2 + fragment.len() + h.trailer_len()) as u16;
            (h, fragment, trailer)
        })
}

proptest! {
    #[test]
    fn bb_frame_round_trip(matype: u16, upl: u16, sync: u8, syncd: u16, payload in proptest::collection::vec(any::<u8>(), 0..300)) {
        let h = BbHeader::new(matype, upl, (payload.len() * 8) as u16, sync, syncd);
        let frame = encode_bb_frame(&h, &payload).unwrap();
        let (parsed, ok) = parse_bb_header(&frame[..BB_HEADER_LEN]).unwrap();
        prop_assert!(ok);
        prop_assert_eq!(parsed, h);
        prop_assert_eq!(&frame[BB_HEADER_LEN..], &payload[..]);
    }

    #[test]
    fn gse_packet_round_trip((h, fragment, trailer) in gse_case()) {
        let bytes = encode_gse_packet(&h, &fragment, trailer).unwrap();
        match parse_gse_header(&bytes).unwrap() {
            GseParse::Header { header, consumed } => {
                prop_assert_eq!(consumed, h.header_len());
                prop_assert_eq!(header.fragment_len(), Some(fragment.len()));
                prop_assert_eq!(&header, &h);
                prop_assert_eq!(&bytes[consumed..consumed + fragment.len()], &fragment[..]);
            }
            other => prop_assert!(false, "unexpected parse {:?}", other),
        }
    }

    #[test]
    fn ip_header_round_trip(tl in 20u16.., id: u16, ttl: u8, proto: u8, src: u32, dst: u32) {
        let h = IpHeader::new(tl, id, ttl, proto, src, dst);
        let (parsed, ok) = parse_ip_header(&h.to_bytes()).unwrap();
        prop_assert!(ok);
        prop_assert_eq!(parsed, h);
    }

    #[test]
    fn parsers_are_total(data in proptest::collection::vec(any::<u8>(), 20..64)) {
        prop_assert!(parse_bb_header(&data[..BB_HEADER_LEN]).is_ok());
        prop_assert!(parse_gse_header(&data).is_ok());
        prop_assert!(parse_ip_header(&data).is_ok());
    }

    #[test]
    fn crc32_matches_bit_serial(data in proptest::collection::vec(any::<u8>(), 0..128)) {
        prop_assert_eq!(crc32(&data), bitwise_crc32(&data));
    }

    #[test]
    fn crc32_trailer_detects_single_flips(data in proptest::collection::vec(any::<u8>(), 1..64), bit in 0usize..512) {
        let mut framed = data.clone();
        framed.extend_from_slice(&crc32(&data).to_be_bytes());
        prop_assert!(verify_crc32_trailer(&framed));
        let bit = bit % (framed.len() * 8);
        framed[bit / 8] ^= 0x80 >> (bit % 8);
        prop_assert!(!verify_crc32_trailer(&framed));
    }
}

#[test]
fn crc_check_values() {
    assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    assert_eq!(crc8(b"123456789"), 0xBC);
}

#[test]
fn gse_layouts_match_table() {
    let label = |lt: LabelType| match lt {
        LabelType::SixByte => 6,
        LabelType::ThreeByte => 3,
        _ => 0,
    };
    for s in [false, true] {
        for e in [false, true] {
            for lt in [LabelType::SixByte, LabelType::ThreeByte, LabelType::Broadcast, LabelType::Reuse] {
                let mut want = 2;
                if !(s && e) {
                    want += 1;
                }
                if s && !e {
                    want += 2;
                }
                if s {
                    want += 2 + label(lt);
                }
                assert_eq!(GseHeader::layout_len(s, e, lt), want, "s={s} e={e} lt={lt:?}");
            }
        }
    }
}

#[test]
fn ip_protocol_field_position() {
    let h = IpHeader::new(60, 1, 64, PROTO_TCP, 0x0A00_0001, 0x0A00_0002);
    let bytes = h.to_bytes();
    assert_eq!(bytes[9], 0x06);
    assert_eq!(ipv4_checksum(&bytes), u16::from_be_bytes([bytes[10], bytes[11]]));
}
