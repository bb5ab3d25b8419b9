//! Legacy-format descriptor, shared by the receive and transmit rings.
//!
//! ```text
//!  bytes 0..8   buffer address (little-endian)
//!  bytes 8..16  metadata word (little-endian)
//!               [15:0]  length in bytes
//!               24      EOP, end of packet
//!               27      RS, report status (request head write-back)
//!               32      DD, descriptor done
//! ```

use crate::mem_env::PhysAddr;
use crate::nic::DeviceError;

pub const DESCRIPTOR_SIZE: usize = 16;

pub const LENGTH_MASK: u64 = 0xffff;
pub const EOP: u64 = 1 << 24;
pub const RS: u64 = 1 << 27;
pub const DD: u64 = 1 << 32;

/// Byte offset of the metadata word inside a descriptor.
pub const METADATA_OFFSET: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Metadata {
    pub length: u16,
    pub eop: bool,
    pub rs: bool,
    pub dd: bool,
}

impl Metadata {
    pub const fn to_word(self) -> u64 {
        (self.length as u64)
            | if self.eop { EOP } else { 0 }
            | if self.rs { RS } else { 0 }
            | if self.dd { DD } else { 0 }
    }

    /// Decodes the fields this model knows about; other bits are ignored.
    pub const fn from_word(word: u64) -> Metadata {
        Metadata {
            length: (word & LENGTH_MASK) as u16,
            eop: word & EOP != 0,
            rs: word & RS != 0,
            dd: word & DD != 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Descriptor {
    pub buffer_addr: PhysAddr,
    pub metadata: Metadata,
}

impl Descriptor {
    pub fn encode(&self) -> [u8; DESCRIPTOR_SIZE] {
        let mut out = [0u8; DESCRIPTOR_SIZE];
        out[..8].copy_from_slice(&self.buffer_addr.0.to_le_bytes());
        out[8..].copy_from_slice(&self.metadata.to_word().to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Descriptor, DeviceError> {
        let bytes: &[u8; DESCRIPTOR_SIZE] = bytes
            .try_into()
            .map_err(|_| DeviceError::InvalidArgument("a descriptor is exactly 16 bytes"))?;
        let mut addr = [0u8; 8];
        let mut meta = [0u8; 8];
        addr.copy_from_slice(&bytes[..8]);
        meta.copy_from_slice(&bytes[8..]);
        Ok(Descriptor {
            buffer_addr: PhysAddr(u64::from_le_bytes(addr)),
            metadata: Metadata::from_word(u64::from_le_bytes(meta)),
        })
    }
}

/// Builds metadata from a caller-supplied length, rejecting values that do
/// not fit the 16-bit length field.
pub fn metadata_with_length(length: usize, eop: bool, rs: bool) -> Result<Metadata, DeviceError> {
    let length = u16::try_from(length)
        .map_err(|_| DeviceError::InvalidArgument("descriptor length exceeds 65535"))?;
    Ok(Metadata {
        length,
        eop,
        rs,
        dd: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero() {
        assert_eq!(Descriptor::default().encode(), [0u8; 16]);
    }

    #[test]
    fn hand_assembled_layout() {
        let d = Descriptor {
            buffer_addr: PhysAddr(0x1000),
            metadata: Metadata {
                length: 64,
                dd: true,
                ..Metadata::default()
            },
        };
        assert_eq!(
            d.encode(),
            [
                0x00, 0x10, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, //
                0x40, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00,
            ]
        );
    }

    #[test]
    fn flag_bits() {
        let word = Metadata {
            length: 0,
            eop: true,
            rs: true,
            dd: false,
        }
        .to_word();
        assert_eq!(word, 0x0900_0000);
    }

    #[test]
    fn decode_wrong_size() {
        assert!(Descriptor::decode(&[0u8; 15]).is_err());
        assert!(Descriptor::decode(&[0u8; 17]).is_err());
    }

    #[test]
    fn oversized_length() {
        assert!(metadata_with_length(65536, true, false).is_err());
        assert_eq!(
            metadata_with_length(65535, false, false).unwrap().length,
            65535
        );
    }

    proptest! {
        #[test]
        fn roundtrip(addr in any::<u64>(), length in any::<u16>(), eop: bool, rs: bool, dd: bool) {
            let d = Descriptor {
                buffer_addr: PhysAddr(addr),
                metadata: Metadata { length, eop, rs, dd },
            };
            prop_assert_eq!(Descriptor::decode(&d.encode()).unwrap(), d);
        }
    }
}
