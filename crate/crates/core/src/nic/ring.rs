use std::ops::Range;

/// Indices owned by the device on a ring of `length` descriptors: the
/// modular interval `[head, tail)`.
pub fn ownership(head: u32, tail: u32, length: u32) -> OwnedSlots {
    debug_assert!(head < length && tail < length);
    let count = ((tail as u64 + length as u64 - head as u64) % length as u64) as u32;
    OwnedSlots {
        head,
        length,
        range: 0..count,
    }
}

/// Iterator over the device-owned slots of a ring, in ring order starting at
/// the head.
#[derive(Debug, Clone)]
pub struct OwnedSlots {
    head: u32,
    length: u32,
    range: Range<u32>,
}

impl OwnedSlots {
    pub fn contains(&self, index: u32) -> bool {
        let length = self.length as u64;
        (index as u64) < length
            && (index as u64 + length - self.head as u64) % length < self.range.end as u64
    }
}

impl Iterator for OwnedSlots {
    type Item = u32;

    fn next(&mut self) -> Option<u32> {
        self.range
            .next()
            .map(|i| ((self.head as u64 + i as u64) % self.length as u64) as u32)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.range.size_hint()
    }
}

impl ExactSizeIterator for OwnedSlots {}

/// Head and tail of one ring, both as the wrapped register values and as
/// monotone unwrapped counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RingState {
    pub base: u64,
    pub length: u32,
    head: u64,
    tail: u64,
}

impl RingState {
    pub fn new(base: u64, length: u32, head: u32, tail: u32) -> RingState {
        debug_assert!(length.is_power_of_two() && length >= 2);
        let owned = (tail + length - head) % length;
        RingState {
            base,
            length,
            head: head as u64,
            tail: head as u64 + owned as u64,
        }
    }

    pub fn head(&self) -> u32 {
        (self.head % self.length as u64) as u32
    }

    pub fn tail(&self) -> u32 {
        (self.tail % self.length as u64) as u32
    }

    pub fn head_unwrapped(&self) -> u64 {
        self.head
    }

    pub fn tail_unwrapped(&self) -> u64 {
        self.tail
    }

    pub fn owned(&self) -> u32 {
        (self.tail - self.head) as u32
    }

    /// Moves the tail forward to `value`. Returns `false`, leaving the ring
    /// unchanged, if that would hand fewer descriptors to the device than it
    /// already owns.
    pub fn advance_tail(&mut self, value: u32) -> bool {
        let owned = (value + self.length - self.head()) % self.length;
        if owned < self.owned() {
            return false;
        }
        self.tail = self.head + owned as u64;
        true
    }

    pub fn advance_head(&mut self) {
        debug_assert!(self.head < self.tail);
        self.head += 1;
    }

    pub fn descriptor_addr(&self, index: u32) -> u64 {
        self.base + index as u64 * super::descriptor::DESCRIPTOR_SIZE as u64
    }
}
