//! Bit strings and their packed byte form.
//!
//! All packed encodings in this crate are MSB-first within each byte, with
//! the final byte zero-padded.

use bitvec::prelude::*;

/// Owned bit string, most significant bit first when packed.
pub type Bits = BitVec<u8, Msb0>;

/// Borrowed bit string.
pub type BitStr = BitSlice<u8, Msb0>;

/// Packs bits MSB-first, zero-padding the last byte.
pub fn pack(bits: &BitStr) -> Vec<u8> {
    let mut owned = bits.to_bitvec();
    owned.set_uninitialized(false);
    owned.into_vec()
}

/// Unpacks the first `len` bits of `bytes`.
///
/// Returns `None` when `bytes` is too short.
pub fn unpack(bytes: &[u8], len: usize) -> Option<Bits> {
    if bytes.len() * 8 < len {
        return None;
    }
    let mut bits = Bits::from_slice(bytes);
    bits.truncate(len);
    Some(bits)
}

/// Number of bytes needed to pack `len` bits.
pub fn packed_len(len: usize) -> usize {
    len.div_ceil(8)
}

/// Builds a bit string from a slice of `0`/`1` values; any nonzero byte is a one.
pub fn from_digits(digits: &[u8]) -> Bits {
    digits.iter().map(|&d| d != 0).collect()
}

/// Parses a string of `'0'`/`'1'` characters, ignoring whitespace.
pub fn parse(text: &str) -> Option<Bits> {
    text.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pack_is_msb_first() {
        let bits = parse("1000 0001 1").unwrap();
        assert_eq!(pack(&bits), vec![0x81, 0x80]);
    }

    #[test]
    fn unpack_rejects_short_input() {
        assert!(unpack(&[0xff], 9).is_none());
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(digits in proptest::collection::vec(0u8..2, 0..200)) {
            let bits = from_digits(&digits);
            let packed = pack(&bits);
            prop_assert_eq!(packed.len(), packed_len(bits.len()));
            prop_assert_eq!(unpack(&packed, bits.len()).unwrap(), bits);
        }
    }
}
