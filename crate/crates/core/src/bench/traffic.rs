//! Synthetic traffic.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::BenchError;
use crate::nic::{Frame, MAX_FRAME_SIZE};

/// Smallest generated frame: room for the sequence number and a MAC pair.
pub const MIN_PACKET_SIZE: usize = 12;

/// `count` frames of `size` random bytes. Bytes 0..8 carry the sequence
/// number (little-endian), which is also the frame id.
pub fn gen_traffic(count: usize, size: usize, seed: u64) -> Result<Vec<Frame>, BenchError> {
    if !(MIN_PACKET_SIZE..=MAX_FRAME_SIZE).contains(&size) {
        return Err(BenchError::InvalidArgument(format!(
            "packet size {size} outside {MIN_PACKET_SIZE}..={MAX_FRAME_SIZE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count as u64)
        .map(|seq| {
            let mut payload = vec![0u8; size];
            rng.fill_bytes(&mut payload[8..]);
            payload[..8].copy_from_slice(&seq.to_le_bytes());
            Frame::new(seq, payload)
        })
        .collect())
}

/// Sequence number carried by a generated frame.
pub fn sequence_of(payload: &[u8]) -> Option<u64> {
    payload
        .get(..8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
}
