//! Minimal reader for classic little-endian, microsecond pcap captures.
//!
//! See <https://wiki.wireshark.org/Development/LibpcapFileFormat>. Big-endian
//! and nanosecond captures are rejected. Records longer than the largest
//! frame are truncated to it; empty records are skipped.

use crate::bench::BenchError;
use crate::nic::{Frame, MAX_FRAME_SIZE};

pub const PCAP_MAGIC: u32 = 0xA1B2_C3D4;
pub const GLOBAL_HEADER_LEN: usize = 24;
pub const RECORD_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcapHeader {
    pub version_major: u16,
    pub version_minor: u16,
    pub snaplen: u32,
    pub linktype: u32,
}

impl PcapHeader {
    pub fn to_bytes(&self) -> [u8; GLOBAL_HEADER_LEN] {
        let mut out = [0u8; GLOBAL_HEADER_LEN];
        out[0..4].copy_from_slice(&PCAP_MAGIC.to_le_bytes());
        out[4..6].copy_from_slice(&self.version_major.to_le_bytes());
        out[6..8].copy_from_slice(&self.version_minor.to_le_bytes());
        // thiszone and sigfigs stay 0
        out[16..20].copy_from_slice(&self.snaplen.to_le_bytes());
        out[20..24].copy_from_slice(&self.linktype.to_le_bytes());
        out
    }
}

impl Default for PcapHeader {
    fn default() -> Self {
        PcapHeader {
            version_major: 2,
            version_minor: 4,
            snaplen: 65535,
            linktype: 1,
        }
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn parse_header(bytes: &[u8]) -> Result<PcapHeader, BenchError> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(BenchError::format(None, "truncated global header"));
    }
    match u32_at(bytes, 0) {
        PCAP_MAGIC => {}
        0xD4C3_B2A1 => {
            return Err(BenchError::format(
                None,
                "big-endian captures are not supported",
            ))
        }
        0xA1B2_3C4D => {
            return Err(BenchError::format(
                None,
                "nanosecond captures are not supported",
            ))
        }
        _ => return Err(BenchError::format(None, "bad magic number")),
    }
    let header = PcapHeader {
        version_major: u16_at(bytes, 4),
        version_minor: u16_at(bytes, 6),
        snaplen: u32_at(bytes, 16),
        linktype: u32_at(bytes, 20),
    };
    if header.version_major != 2 {
        return Err(BenchError::format(None, "unsupported pcap version"));
    }
    Ok(header)
}

/// Frames of a capture in file order; each frame's id is its record index.
pub fn parse_pcap(bytes: &[u8]) -> Result<Vec<Frame>, BenchError> {
    let header = parse_header(bytes)?;
    let mut frames = Vec::new();
    let mut rest = &bytes[GLOBAL_HEADER_LEN..];
    let mut index = 0;
    while !rest.is_empty() {
        if rest.len() < RECORD_HEADER_LEN {
            return Err(BenchError::format(Some(index), "truncated record header"));
        }
        let incl_len = u32_at(rest, 8) as usize;
        let orig_len = u32_at(rest, 12) as usize;
        if incl_len > orig_len {
            return Err(BenchError::format(
                Some(index),
                "captured length exceeds original length",
            ));
        }
        if incl_len > header.snaplen as usize {
            return Err(BenchError::format(
                Some(index),
                "captured length exceeds snapshot length",
            ));
        }
        let body = &rest[RECORD_HEADER_LEN..];
        if body.len() < incl_len {
            return Err(BenchError::format(Some(index), "truncated record data"));
        }
        if incl_len > 0 {
            let kept = incl_len.min(MAX_FRAME_SIZE);
            frames.push(Frame::new(index as u64, body[..kept].to_vec()));
        }
        rest = &body[incl_len..];
        index += 1;
    }
    Ok(frames)
}

/// Serializes frames as a capture, with timestamps derived from each frame's
/// inject time (one step per microsecond).
pub fn write_pcap(header: &PcapHeader, frames: &[Frame]) -> Vec<u8> {
    let mut out = header.to_bytes().to_vec();
    for f in frames {
        let len = f.payload.len() as u32;
        out.extend_from_slice(&((f.inject_time / 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&((f.inject_time % 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&f.payload);
    }
    out
}
