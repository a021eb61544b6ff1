//! CRC primitives used by the BB header (CRC-8, polynomial 0xD5) and the GSE
//! PDU trailer (reflected CRC-32, polynomial 0x04C11DB7).

use crate::error::{Error, Result};

const CRC8_POLY: u8 = 0xD5;
const CRC32_POLY_REFLECTED: u32 = 0xEDB8_8320;

const CRC8_TABLE: [u8; 256] = build_crc8_table();
const CRC32_TABLE: [u32; 256] = build_crc32_table();

const fn build_crc8_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x80 != 0 {
                (crc << 1) ^ CRC8_POLY
            } else {
                crc << 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

const fn build_crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ CRC32_POLY_REFLECTED
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

/// CRC-8 over arbitrary bytes (zero init, no reflection, no final XOR).
pub fn crc8(data: &[u8]) -> u8 {
    data.iter()
        .fold(0u8, |crc, &b| CRC8_TABLE[(crc ^ b) as usize])
}

/// CRC-8 over the first nine bytes of a BB header.
pub fn crc8_bb(data: &[u8]) -> Result<u8> {
    if data.len() != 9 {
        return Err(Error::InputSize(format!(
            "BB header CRC needs 9 bytes, got {}",
            data.len()
        )));
    }
    Ok(crc8(data))
}

/// Checks a 10-byte BB header whose last byte is the CRC-8 of the first nine.
pub fn verify_crc8_bb(header: &[u8]) -> bool {
    header.len() == 10 && crc8(&header[..9]) == header[9]
}

/// Standard reflected CRC-32 (init and final XOR 0xFFFFFFFF).
pub fn crc32_pdu(data: &[u8]) -> Result<u32> {
    if data.is_empty() {
        return Err(Error::InputSize("CRC-32 of empty input".into()));
    }
    Ok(crc32(data))
}

pub fn crc32(data: &[u8]) -> u32 {
    !data.iter().fold(0xFFFF_FFFFu32, |crc, &b| {
        (crc >> 8) ^ CRC32_TABLE[((crc ^ b as u32) & 0xFF) as usize]
    })
}

/// Checks `data` followed by its big-endian CRC-32 trailer.
pub fn verify_crc32_trailer(data_with_trailer: &[u8]) -> bool {
    if data_with_trailer.len() < 5 {
        return false;
    }
    let (data, trailer) = data_with_trailer.split_at(data_with_trailer.len() - 4);
    crc32(data).to_be_bytes() == trailer
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Bit-serial references, independent of the table-driven path.
    fn crc8_bitwise(data: &[u8]) -> u8 {
        let mut crc = 0u8;
        for &byte in data {
            for i in (0..8).rev() {
                let bit = (byte >> i) & 1;
                let top = crc >> 7;
                crc <<= 1;
                if top ^ bit == 1 {
                    crc ^= 0xD5;
                }
            }
        }
        crc
    }

    fn crc32_bitwise(data: &[u8]) -> u32 {
        let mut crc = 0xFFFF_FFFFu32;
        for &byte in data {
            for i in 0..8 {
                let bit = ((byte >> i) & 1) as u32;
                let low = crc & 1;
                crc >>= 1;
                if low ^ bit == 1 {
                    crc ^= 0xEDB8_8320;
                }
            }
        }
        !crc
    }

    #[test]
    fn crc8_known_values() {
        assert_eq!(crc8_bb(&[0u8; 9]).unwrap(), 0x00);
        let d: Vec<u8> = (1..=9).collect();
        assert_eq!(crc8_bitwise(&d), 0x1A);
        assert_eq!(crc8_bb(&d).unwrap(), 0x1A);
    }

    #[test]
    fn crc8_wrong_length() {
        assert!(matches!(crc8_bb(&[0u8; 8]), Err(Error::InputSize(_))));
        assert!(crc8_bb(&[0u8; 10]).is_err());
    }

    #[test]
    fn crc32_known_values() {
        assert_eq!(crc32_bitwise(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32_pdu(b"123456789").unwrap(), 0xCBF4_3926);
        assert_eq!(crc32_bitwise(&[0x00]), 0xD202_EF8D);
        assert_eq!(crc32_pdu(&[0x00]).unwrap(), 0xD202_EF8D);
        assert!(crc32_pdu(&[]).is_err());
    }

    #[test]
    fn crc32_matches_bitwise_on_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let len = rng.gen_range(1..300);
            let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            assert_eq!(crc32(&data), crc32_bitwise(&data));
        }
    }

    proptest! {
        #[test]
        fn crc8_round_trip(d in proptest::array::uniform9(any::<u8>())) {
            let mut h = d.to_vec();
            h.push(crc8_bb(&d).unwrap());
            prop_assert!(verify_crc8_bb(&h));
            prop_assert_eq!(crc8(&d), crc8_bitwise(&d));
        }

        #[test]
        fn crc32_trailer_round_trip(d in proptest::collection::vec(any::<u8>(), 1..200)) {
            let mut v = d.clone();
            v.extend_from_slice(&crc32_pdu(&d).unwrap().to_be_bytes());
            prop_assert!(verify_crc32_trailer(&v));
        }
    }
}
