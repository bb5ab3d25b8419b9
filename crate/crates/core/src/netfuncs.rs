//! Built-in network functions.

use std::fmt;
use std::str::FromStr;

use crate::packet::{OutputLengths, PacketMut, Processor};

pub const DEFAULT_POLICER_MIN_LEN: usize = 100;

const MAC_LEN: usize = 6;

/// A stateless in-order processor, selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetFunction {
    /// Sends every packet unchanged on every output.
    Identity,
    /// Swaps destination and source MAC addresses. Packets shorter than an
    /// Ethernet address pair are forwarded unchanged.
    MacSwap,
    /// Forwards packets of at least `min_len` bytes, drops the rest.
    Policer { min_len: usize },
}

pub fn identity() -> NetFunction {
    NetFunction::Identity
}

pub fn macswap() -> NetFunction {
    NetFunction::MacSwap
}

pub fn policer(min_len: usize) -> NetFunction {
    NetFunction::Policer { min_len }
}

impl Processor for NetFunction {
    fn process(&mut self, packet: &mut PacketMut<'_>, outputs: usize) -> OutputLengths {
        let len = packet.len();
        match *self {
            NetFunction::Identity => OutputLengths::uniform(outputs, len),
            NetFunction::MacSwap => {
                if len >= 2 * MAC_LEN {
                    let (dst, rest) = packet.data_mut().split_at_mut(MAC_LEN);
                    dst.swap_with_slice(&mut rest[..MAC_LEN]);
                }
                OutputLengths::uniform(outputs, len)
            }
            NetFunction::Policer { min_len } if len >= min_len => {
                OutputLengths::uniform(outputs, len)
            }
            NetFunction::Policer { .. } => OutputLengths::none(outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error(
    "unknown network function {0:?} (expected identity, macswap, policer or policer:<min-len>)"
)]
pub struct UnknownNetFunction(String);

impl FromStr for NetFunction {
    type Err = UnknownNetFunction;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(identity()),
            "macswap" => Ok(macswap()),
            "policer" => Ok(policer(DEFAULT_POLICER_MIN_LEN)),
            _ => s
                .strip_prefix("policer:")
                .and_then(|n| n.parse().ok())
                .map(policer)
                .ok_or_else(|| UnknownNetFunction(s.to_owned())),
        }
    }
}

impl fmt::Display for NetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetFunction::Identity => f.write_str("identity"),
            NetFunction::MacSwap => f.write_str("macswap"),
            NetFunction::Policer { min_len } => write!(f, "policer:{min_len}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run(nf: NetFunction, bytes: &[u8], outputs: usize) -> (Vec<u8>, OutputLengths) {
        let mut buf = vec![0u8; 2048];
        buf[..bytes.len()].copy_from_slice(bytes);
        let mut nf = nf;
        let lengths = nf.process(&mut PacketMut::new(&mut buf, bytes.len()), outputs);
        buf.truncate(bytes.len());
        (buf, lengths)
    }

    #[test]
    fn identity_forwards_everything() {
        let pkt: Vec<u8> = (0..64).collect();
        let (out, l) = run(identity(), &pkt, 1);
        assert_eq!(out, pkt);
        assert_eq!(l.as_slice(), &[64]);
        let (out, l) = run(identity(), &[0; 128], 2);
        assert_eq!(out, vec![0; 128]);
        assert_eq!(l.as_slice(), &[128, 128]);
    }

    #[test]
    fn macswap_swaps_addresses() {
        let pkt = [
            0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0xAA, 0xBB, 0xCC, 0xDD, 0xEE, 0xFF, 0x08, 0x00,
        ];
        let (out, l) = run(macswap(), &pkt, 1);
        assert_eq!(
            out,
            [0xAA, 0xBB, 0xCC, 0xDD, 0xEE, 0xFF, 0x00, 0x11, 0x22, 0x33, 0x44, 0x55, 0x08, 0x00]
        );
        assert_eq!(l.as_slice(), &[14]);
    }

    #[test]
    fn macswap_short_packet_unchanged() {
        let pkt = [1, 2, 3, 4, 5, 6, 7, 8];
        let (out, l) = run(macswap(), &pkt, 1);
        assert_eq!(out, pkt);
        assert_eq!(l.as_slice(), &[8]);
    }

    #[test]
    fn policer_threshold_is_inclusive() {
        assert_eq!(run(policer(100), &[0; 64], 1).1.as_slice(), &[0]);
        assert_eq!(run(policer(100), &[0; 100], 1).1.as_slice(), &[100]);
        assert_eq!(run(policer(100), &[0; 64], 3).1.as_slice(), &[0, 0, 0]);
        for len in [1, 12, 2048] {
            assert_eq!(
                run(policer(0), &vec![7; len], 2),
                run(identity(), &vec![7; len], 2)
            );
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("identity".parse::<NetFunction>().unwrap(), identity());
        assert_eq!("macswap".parse::<NetFunction>().unwrap(), macswap());
        assert_eq!("policer".parse::<NetFunction>().unwrap(), policer(100));
        assert_eq!("policer:64".parse::<NetFunction>().unwrap(), policer(64));
        assert!("router".parse::<NetFunction>().is_err());
        assert!("policer:x".parse::<NetFunction>().is_err());
        for nf in [identity(), macswap(), policer(7)] {
            assert_eq!(nf.to_string().parse::<NetFunction>().unwrap(), nf);
        }
    }

    proptest! {
        #[test]
        fn macswap_is_an_involution(pkt in proptest::collection::vec(any::<u8>(), 12..256)) {
            let (once, _) = run(macswap(), &pkt, 1);
            let (twice, _) = run(macswap(), &once, 1);
            prop_assert_eq!(twice, pkt);
        }

        #[test]
        fn identity_preserves_bytes(pkt in proptest::collection::vec(any::<u8>(), 1..2048)) {
            let (out, l) = run(identity(), &pkt, 1);
            prop_assert_eq!(l.as_slice(), &[pkt.len()]);
            prop_assert_eq!(out, pkt);
        }
    }
}
