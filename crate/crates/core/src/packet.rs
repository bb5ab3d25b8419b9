//! The contract between a forwarding pipeline and the network function it
//! runs.

use std::fmt;

/// Capacity of every packet buffer.
pub const BUFFER_SIZE: usize = 2048;

/// Most outputs (transmit queues) a pipeline may drive.
pub const MAX_OUTPUTS: usize = 8;

/// A received packet lent to a processor for in-place modification.
///
/// `data()` covers the received length. The whole buffer is reachable through
/// [`PacketMut::buffer_mut`] so a processor can grow a packet; bytes past the
/// received length hold whatever an earlier packet left there.
pub struct PacketMut<'a> {
    buf: &'a mut [u8],
    len: usize,
}

impl<'a> PacketMut<'a> {
    pub fn new(buf: &'a mut [u8], len: usize) -> PacketMut<'a> {
        assert!(
            len <= buf.len(),
            "packet length {len} exceeds buffer of {}",
            buf.len()
        );
        PacketMut { buf, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn data(&self) -> &[u8] {
        &self.buf[..self.len]
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.buf[..self.len]
    }

    pub fn buffer_mut(&mut self) -> &mut [u8] {
        self.buf
    }
}

impl fmt::Debug for PacketMut<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PacketMut").field("len", &self.len).finish()
    }
}

/// Per-output transmit lengths. A length of 0 means "do not send on this
/// output".
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct OutputLengths {
    lengths: [usize; MAX_OUTPUTS],
    count: usize,
}

impl OutputLengths {
    /// `count` outputs, none of which sends.
    pub fn none(count: usize) -> OutputLengths {
        assert!(count <= MAX_OUTPUTS, "at most {MAX_OUTPUTS} outputs");
        OutputLengths {
            lengths: [0; MAX_OUTPUTS],
            count,
        }
    }

    /// `count` outputs all sending `length` bytes.
    pub fn uniform(count: usize, length: usize) -> OutputLengths {
        let mut out = OutputLengths::none(count);
        out.lengths[..count].fill(length);
        out
    }

    pub fn from_slice(lengths: &[usize]) -> OutputLengths {
        let mut out = OutputLengths::none(lengths.len());
        out.lengths[..lengths.len()].copy_from_slice(lengths);
        out
    }

    pub fn set(&mut self, output: usize, length: usize) {
        assert!(output < self.count, "output {output} out of range");
        self.lengths[output] = length;
    }

    pub fn get(&self, output: usize) -> usize {
        self.as_slice()[output]
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.lengths[..self.count]
    }

    pub fn max(&self) -> usize {
        self.as_slice().iter().copied().max().unwrap_or(0)
    }
}

impl fmt::Debug for OutputLengths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

/// An in-order network function.
///
/// Called once per packet with the packet and the number of outputs; returns
/// how many bytes of the (possibly modified) buffer to send on each output.
/// A processor must terminate and cannot keep the packet: the borrow ends
/// when `process` returns.
pub trait Processor {
    fn process(&mut self, packet: &mut PacketMut<'_>, outputs: usize) -> OutputLengths;
}

impl<F> Processor for F
where
    F: FnMut(&mut PacketMut<'_>, usize) -> OutputLengths,
{
    fn process(&mut self, packet: &mut PacketMut<'_>, outputs: usize) -> OutputLengths {
        self(packet, outputs)
    }
}
