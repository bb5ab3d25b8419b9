//! A lockstep model of an 82599-style NIC.
//!
//! The device owns a register file, one receive queue and a configurable
//! number of transmit queues. It does nothing on its own: every call to
//! [`Device::step`] advances the simulated clock by one unit and performs a
//! bounded number of descriptor completions, alternating between the receive
//! queue and each transmit queue.
//!
//! # Registers
//!
//! | register  | queue    | reset | software access                                  |
//! |-----------|----------|-------|--------------------------------------------------|
//! | `RDBAL/H` | 0        | 0     | write before enable                              |
//! | `RDLEN`   | 0        | 0     | ring size in bytes (16 per descriptor)           |
//! | `RDH`     | 0        | 0     | write before enable, device-owned afterwards     |
//! | `RDT`     | 0        | 0     | always writable, must stay `< descriptors`       |
//! | `RXEN`    | 0        | 0     | write 1 to enable                                |
//! | `TDBAL/H` | `0..N`   | 0     | as receive                                       |
//! | `TDLEN`   | `0..N`   | 0     | as receive                                       |
//! | `TDH`     | `0..N`   | 0     | as receive                                       |
//! | `TDT`     | `0..N`   | 0     | as receive                                       |
//! | `TDWBAL/H`| `0..N`   | 0     | head write-back address, bit 0 of `TDWBAL` enables |
//! | `TXEN`    | `0..N`   | 0     | write 1 to enable                                |
//!
//! Tails may only move forward: a tail write that would shrink the set of
//! device-owned descriptors is rejected.

pub mod descriptor;
pub mod ring;

use std::collections::{HashMap, VecDeque};
use std::hash::{BuildHasherDefault, Hasher};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use thiserror::Error;

use crate::mem_env::{MemError, Memory, PhysAddr};
use descriptor::{Metadata, DD, DESCRIPTOR_SIZE, EOP, METADATA_OFFSET};
pub use ring::{ownership, OwnedSlots, RingState};

/// Largest frame the link carries, and the receive buffer size the device
/// assumes for every receive descriptor.
pub const MAX_FRAME_SIZE: usize = 2048;

pub const MAX_RING_SIZE: u32 = 65536;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    #[error("invalid register {0:?} for queue {1}")]
    InvalidRegister(Register, usize),
    #[error("register {0:?} is not writable by software in the current state")]
    RegisterWriteFault(Register),
    #[error("tail write to {value} would take back descriptors owned by the device")]
    TailRetreat { value: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("device is not enabled")]
    NotReady,
    #[error("DMA fault: {0}")]
    DmaFault(#[from] MemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Register {
    Rdbal,
    Rdbah,
    Rdlen,
    Rdh,
    Rdt,
    Rxen,
    Tdbal,
    Tdbah,
    Tdlen,
    Tdh,
    Tdt,
    Tdwbal,
    Tdwbah,
    Txen,
}

impl Register {
    pub fn is_receive(self) -> bool {
        matches!(
            self,
            Register::Rdbal
                | Register::Rdbah
                | Register::Rdlen
                | Register::Rdh
                | Register::Rdt
                | Register::Rxen
        )
    }
}

/// What happens to an arriving frame when the receive ring has no
/// device-owned descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxBuffering {
    /// The frame is dropped as soon as the receive queue gets its turn.
    Unbuffered,
    /// Frames wait in an on-device FIFO. At the end of every step, frames
    /// beyond this many are dropped, newest first.
    Frames(usize),
}

impl RxBuffering {
    pub const fn unbounded() -> RxBuffering {
        RxBuffering::Frames(usize::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceConfig {
    pub tx_queues: usize,
    pub rx_buffering: RxBuffering,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            tx_queues: 1,
            rx_buffering: RxBuffering::Unbuffered,
        }
    }
}

/// A frame on the simulated wire.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Frame {
    /// Caller-chosen identifier, carried from ingress to egress.
    pub id: u64,
    pub payload: Vec<u8>,
    pub inject_time: u64,
    pub drain_time: Option<u64>,
}

impl Frame {
    pub fn new(id: u64, payload: Vec<u8>) -> Frame {
        Frame {
            id,
            payload,
            inject_time: 0,
            drain_time: None,
        }
    }

    pub fn latency(&self) -> Option<u64> {
        self.drain_time.map(|d| d - self.inject_time)
    }
}

/// Identifier given to frames transmitted from a buffer the receive side
/// never filled.
pub const UNKNOWN_FRAME: u64 = u64::MAX;

#[derive(Debug, Default)]
pub struct Link {
    rx_pending: VecDeque<Frame>,
    tx_emitted: Vec<Vec<Frame>>,
    rx_dropped: u64,
    rx_delivered: u64,
    dropped_ids: Vec<u64>,
}

impl Link {
    pub fn rx_pending(&self) -> usize {
        self.rx_pending.len()
    }

    /// Frames dropped because no receive descriptor (or FIFO space) was
    /// available.
    pub fn rx_dropped(&self) -> u64 {
        self.rx_dropped
    }

    /// Frames written into receive buffers.
    pub fn rx_delivered(&self) -> u64 {
        self.rx_delivered
    }

    /// Identifiers of dropped frames, in drop order.
    pub fn dropped_ids(&self) -> &[u64] {
        &self.dropped_ids
    }

    fn drop_frame(&mut self, frame: Frame) {
        self.rx_dropped += 1;
        self.dropped_ids.push(frame.id);
    }
}

#[derive(Debug, Clone, Default)]
struct QueueRegs {
    bal: u32,
    bah: u32,
    len: u32,
    head: u32,
    tail: u32,
    wbal: u32,
    wbah: u32,
    ring: Option<RingState>,
}

impl QueueRegs {
    fn descriptors(&self) -> Option<u32> {
        let n = self.len / DESCRIPTOR_SIZE as u32;
        (self.len.is_multiple_of(DESCRIPTOR_SIZE as u32)
            && (2..=MAX_RING_SIZE).contains(&n)
            && n.is_power_of_two())
        .then_some(n)
    }

    fn base(&self) -> u64 {
        (self.bah as u64) << 32 | self.bal as u64
    }

    fn writeback(&self) -> Option<PhysAddr> {
        (self.wbal & 1 == 1).then_some(PhysAddr(
            (self.wbah as u64) << 32 | (self.wbal & !0x3) as u64,
        ))
    }

    fn read(&self, reg: Register) -> u32 {
        use Register::*;
        match reg {
            Rdbal | Tdbal => self.bal,
            Rdbah | Tdbah => self.bah,
            Rdlen | Tdlen => self.len,
            Rdh | Tdh => self.ring.map_or(self.head, |r| r.head()),
            Rdt | Tdt => self.ring.map_or(self.tail, |r| r.tail()),
            Tdwbal => self.wbal,
            Tdwbah => self.wbah,
            Rxen | Txen => self.ring.is_some() as u32,
        }
    }

    fn write(&mut self, reg: Register, value: u32, memory: &Memory) -> Result<(), DeviceError> {
        use Register::*;
        let enabled = self.ring.is_some();
        match reg {
            Rdbal | Rdbah | Rdlen | Tdbal | Tdbah | Tdlen | Tdwbal | Tdwbah if enabled => {
                Err(DeviceError::RegisterWriteFault(reg))
            }
            Rdbal | Tdbal => {
                self.bal = value;
                Ok(())
            }
            Rdbah | Tdbah => {
                self.bah = value;
                Ok(())
            }
            Rdlen | Tdlen => {
                self.len = value;
                Ok(())
            }
            Tdwbal => {
                self.wbal = value;
                Ok(())
            }
            Tdwbah => {
                self.wbah = value;
                Ok(())
            }
            Rdh | Tdh => {
                if enabled {
                    return Err(DeviceError::RegisterWriteFault(reg));
                }
                let n = self
                    .descriptors()
                    .ok_or(DeviceError::InvalidArgument("ring length not configured"))?;
                if value >= n {
                    return Err(DeviceError::InvalidArgument("head beyond ring length"));
                }
                self.head = value;
                Ok(())
            }
            Rdt | Tdt => {
                let n = self
                    .descriptors()
                    .ok_or(DeviceError::InvalidArgument("ring length not configured"))?;
                if value >= n {
                    return Err(DeviceError::InvalidArgument("tail beyond ring length"));
                }
                match &mut self.ring {
                    Some(ring) => {
                        if !ring.advance_tail(value) {
                            return Err(DeviceError::TailRetreat { value });
                        }
                    }
                    None => self.tail = value,
                }
                Ok(())
            }
            Rxen | Txen => match (value, enabled) {
                (0, false) | (1, true) => Ok(()),
                (0, true) => Err(DeviceError::RegisterWriteFault(reg)),
                (1, false) => self.enable(memory),
                _ => Err(DeviceError::InvalidArgument(
                    "enable register accepts 0 or 1",
                )),
            },
        }
    }

    fn enable(&mut self, memory: &Memory) -> Result<(), DeviceError> {
        let n = self.descriptors().ok_or(DeviceError::InvalidArgument(
            "ring length must be a power of two >= 2 descriptors",
        ))?;
        let base = self.base();
        if !base.is_multiple_of(DESCRIPTOR_SIZE as u64) {
            return Err(DeviceError::InvalidArgument(
                "ring base must be 16-byte aligned",
            ));
        }
        if !memory.contains(PhysAddr(base), n as u64 * DESCRIPTOR_SIZE as u64) {
            return Err(DeviceError::InvalidArgument("ring lies outside DMA memory"));
        }
        if let Some(wb) = self.writeback() {
            if wb.0 % 8 != 0 || !memory.contains(wb, 8) {
                return Err(DeviceError::InvalidArgument(
                    "head write-back address unusable",
                ));
            }
        }
        self.ring = Some(RingState::new(base, n, self.head, self.tail));
        Ok(())
    }
}

/// Unwrapped head/tail counters of one ring, for monotonicity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RingCounters {
    pub head: u64,
    pub tail: u64,
}

#[derive(Debug)]
pub struct Device {
    memory: Arc<Memory>,
    config: DeviceConfig,
    rx: QueueRegs,
    tx: Vec<QueueRegs>,
    link: Link,
    now: u64,
    cursor: usize,
    // Buffer address -> (frame id, inject time) of the last frame received into it.
    stamps: HashMap<u64, (u64, u64), BuildHasherDefault<AddrHasher>>,
}

impl Device {
    pub fn new(memory: Arc<Memory>, config: DeviceConfig) -> Result<Device, DeviceError> {
        if config.tx_queues == 0 {
            return Err(DeviceError::InvalidArgument(
                "at least one transmit queue is required",
            ));
        }
        let link = Link {
            tx_emitted: vec![Vec::new(); config.tx_queues],
            ..Link::default()
        };
        Ok(Device {
            memory,
            config,
            rx: QueueRegs::default(),
            tx: vec![QueueRegs::default(); config.tx_queues],
            link,
            now: 0,
            cursor: 0,
            stamps: HashMap::default(),
        })
    }

    pub fn config(&self) -> DeviceConfig {
        self.config
    }

    pub fn tx_queues(&self) -> usize {
        self.tx.len()
    }

    /// Simulated time: the number of completed steps.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    fn queue(&self, reg: Register, queue: usize) -> Result<&QueueRegs, DeviceError> {
        if reg.is_receive() {
            (queue == 0).then_some(&self.rx)
        } else {
            self.tx.get(queue)
        }
        .ok_or(DeviceError::InvalidRegister(reg, queue))
    }

    pub fn reg_read(&self, reg: Register, queue: usize) -> Result<u32, DeviceError> {
        Ok(self.queue(reg, queue)?.read(reg))
    }

    pub fn reg_write(
        &mut self,
        reg: Register,
        queue: usize,
        value: u32,
    ) -> Result<(), DeviceError> {
        self.queue(reg, queue)?;
        let regs = if reg.is_receive() {
            &mut self.rx
        } else {
            &mut self.tx[queue]
        };
        regs.write(reg, value, &self.memory)
    }

    pub fn is_ready(&self) -> bool {
        self.rx.ring.is_some() && self.tx.iter().all(|q| q.ring.is_some())
    }

    pub fn rx_ring(&self) -> Option<RingState> {
        self.rx.ring
    }

    pub fn tx_ring(&self, queue: usize) -> Option<RingState> {
        self.tx.get(queue).and_then(|q| q.ring)
    }

    pub fn rx_counters(&self) -> RingCounters {
        self.rx.ring.map_or_else(RingCounters::default, counters)
    }

    pub fn tx_counters(&self, queue: usize) -> RingCounters {
        self.tx_ring(queue)
            .map_or_else(RingCounters::default, counters)
    }

    /// Queues a frame on the ingress side of the link.
    pub fn inject_rx(&mut self, mut frame: Frame) -> Result<(), DeviceError> {
        if frame.payload.is_empty() || frame.payload.len() > MAX_FRAME_SIZE {
            return Err(DeviceError::InvalidArgument(
                "frame payload must be 1..=2048 bytes",
            ));
        }
        frame.inject_time = self.now;
        frame.drain_time = None;
        self.link.rx_pending.push_back(frame);
        Ok(())
    }

    /// Takes every frame emitted on `queue` so far.
    pub fn drain_tx(&mut self, queue: usize) -> Result<Vec<Frame>, DeviceError> {
        self.link
            .tx_emitted
            .get_mut(queue)
            .map(std::mem::take)
            .ok_or(DeviceError::InvalidArgument("unknown transmit queue"))
    }

    /// Whether a step could do anything: frames waiting at ingress or
    /// descriptors owned by a transmit queue.
    pub fn has_work(&self) -> bool {
        !self.link.rx_pending.is_empty() || self.tx_pending()
    }

    /// Whether any transmit queue still owns descriptors.
    pub fn tx_pending(&self) -> bool {
        self.tx
            .iter()
            .any(|q| q.ring.is_some_and(|r| r.owned() > 0))
    }

    /// Advances time by one step, completing at most `max_work` descriptors.
    /// Returns the number of completions, counting receive-side drops.
    pub fn step(&mut self, max_work: usize) -> Result<usize, DeviceError> {
        if !self.is_ready() {
            return Err(DeviceError::NotReady);
        }
        let sources = 1 + self.tx.len();
        let mut work = 0;
        'outer: while work < max_work {
            for k in 0..sources {
                let source = (self.cursor + k) % sources;
                let done = if source == 0 {
                    self.complete_rx()?
                } else {
                    self.complete_tx(source - 1)?
                };
                if done {
                    self.cursor = (source + 1) % sources;
                    work += 1;
                    continue 'outer;
                }
            }
            break;
        }
        if let RxBuffering::Frames(capacity) = self.config.rx_buffering {
            while self.link.rx_pending.len() > capacity {
                let frame = self.link.rx_pending.pop_back().expect("non-empty");
                self.link.drop_frame(frame);
            }
        }
        self.now += 1;
        Ok(work)
    }

    fn complete_rx(&mut self) -> Result<bool, DeviceError> {
        if self.link.rx_pending.is_empty() {
            return Ok(false);
        }
        let ring = self.rx.ring.as_mut().expect("checked by step");
        if ring.owned() == 0 {
            return match self.config.rx_buffering {
                RxBuffering::Unbuffered => {
                    let frame = self.link.rx_pending.pop_front().expect("non-empty");
                    self.link.drop_frame(frame);
                    Ok(true)
                }
                RxBuffering::Frames(_) => Ok(false),
            };
        }
        let desc = PhysAddr(ring.descriptor_addr(ring.head()));
        let buffer = self.memory.load_u64(desc, Ordering::Acquire)?;
        let frame = self.link.rx_pending.pop_front().expect("non-empty");
        self.memory.write_bytes(PhysAddr(buffer), &frame.payload)?;
        let meta = frame.payload.len() as u64 | EOP | DD;
        // Release: the payload must be visible before DD is.
        self.memory
            .store_u64(desc.add(METADATA_OFFSET), meta, Ordering::Release)?;
        ring.advance_head();
        self.stamps.insert(buffer, (frame.id, frame.inject_time));
        self.link.rx_delivered += 1;
        Ok(true)
    }

    fn complete_tx(&mut self, queue: usize) -> Result<bool, DeviceError> {
        let regs = &mut self.tx[queue];
        let writeback = regs.writeback();
        let ring = regs.ring.as_mut().expect("checked by step");
        if ring.owned() == 0 {
            return Ok(false);
        }
        let desc = PhysAddr(ring.descriptor_addr(ring.head()));
        let meta_addr = desc.add(METADATA_OFFSET);
        let word = self.memory.load_u64(meta_addr, Ordering::Acquire)?;
        let meta = Metadata::from_word(word);
        if meta.length > 0 {
            let length = meta.length as usize;
            if length > MAX_FRAME_SIZE {
                return Err(DeviceError::InvalidArgument(
                    "transmit descriptor longer than a frame",
                ));
            }
            let buffer = self.memory.load_u64(desc, Ordering::Relaxed)?;
            let payload = self.memory.read_vec(PhysAddr(buffer), length)?;
            let (id, inject_time) = self
                .stamps
                .get(&buffer)
                .copied()
                .unwrap_or((UNKNOWN_FRAME, self.now));
            self.link.tx_emitted[queue].push(Frame {
                id,
                payload,
                inject_time,
                drain_time: Some(self.now),
            });
        }
        self.memory
            .store_u64(meta_addr, word | DD, Ordering::Release)?;
        ring.advance_head();
        if meta.rs {
            if let Some(addr) = writeback {
                self.memory
                    .store_u64(addr, ring.head() as u64, Ordering::Release)?;
            }
        }
        Ok(true)
    }
}

// Keys are buffer addresses; a multiplicative hash spreads them well enough.
#[derive(Default)]
struct AddrHasher(u64);

impl Hasher for AddrHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(b as u64);
        }
    }

    fn write_u64(&mut self, n: u64) {
        self.0 = (self.0 ^ n)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .rotate_left(29);
    }
}

fn counters(ring: RingState) -> RingCounters {
    RingCounters {
        head: ring.head_unwrapped(),
        tail: ring.tail_unwrapped(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem_env::{DmaRegion, EnvConfig, MemEnv};
    use descriptor::{Descriptor, RS};

    const RING: u32 = 8;

    struct Rig {
        _env: MemEnv,
        dev: Device,
        rx_ring: DmaRegion,
        tx_ring: DmaRegion,
        buffers: DmaRegion,
        wb: DmaRegion,
    }

    fn rig(buffering: RxBuffering) -> Rig {
        let mut env = MemEnv::new(EnvConfig::default().with_arena_size(1 << 20)).unwrap();
        let rx_ring = env.allocate_dma(RING as u64 * 16).unwrap();
        let tx_ring = env.allocate_dma(RING as u64 * 16).unwrap();
        let buffers = env
            .allocate_dma(RING as u64 * MAX_FRAME_SIZE as u64)
            .unwrap();
        let wb = env.allocate_dma(8).unwrap();
        let mut dev = Device::new(
            Arc::clone(env.memory()),
            DeviceConfig {
                tx_queues: 1,
                rx_buffering: buffering,
            },
        )
        .unwrap();
        for i in 0..RING as u64 {
            let addr = buffers.phys(i * MAX_FRAME_SIZE as u64).0;
            rx_ring.store_u64(i * 16, addr, Ordering::Relaxed);
            tx_ring.store_u64(i * 16, addr, Ordering::Relaxed);
        }
        let rx = rx_ring.phys_base().0;
        let tx = tx_ring.phys_base().0;
        dev.reg_write(Register::Rdbal, 0, rx as u32).unwrap();
        dev.reg_write(Register::Rdbah, 0, (rx >> 32) as u32)
            .unwrap();
        dev.reg_write(Register::Rdlen, 0, RING * 16).unwrap();
        dev.reg_write(Register::Tdbal, 0, tx as u32).unwrap();
        dev.reg_write(Register::Tdbah, 0, (tx >> 32) as u32)
            .unwrap();
        dev.reg_write(Register::Tdlen, 0, RING * 16).unwrap();
        let w = wb.phys_base().0;
        dev.reg_write(Register::Tdwbal, 0, w as u32 | 1).unwrap();
        dev.reg_write(Register::Tdwbah, 0, (w >> 32) as u32)
            .unwrap();
        dev.reg_write(Register::Rxen, 0, 1).unwrap();
        dev.reg_write(Register::Txen, 0, 1).unwrap();
        Rig {
            _env: env,
            dev,
            rx_ring,
            tx_ring,
            buffers,
            wb,
        }
    }

    fn descriptor(region: &DmaRegion, index: u64) -> Descriptor {
        let mut bytes = [0u8; 16];
        region.read(index * 16, &mut bytes);
        Descriptor::decode(&bytes).unwrap()
    }

    #[test]
    fn register_echo_and_reset() {
        let mut r = rig(RxBuffering::Unbuffered);
        assert_eq!(r.dev.reg_read(Register::Tdh, 0).unwrap(), 0);
        r.dev.reg_write(Register::Rdt, 0, 5).unwrap();
        assert_eq!(r.dev.reg_read(Register::Rdt, 0).unwrap(), 5);
        assert_eq!(r.dev.reg_read(Register::Rxen, 0).unwrap(), 1);
    }

    #[test]
    fn invalid_register_queue() {
        let r = rig(RxBuffering::Unbuffered);
        assert_eq!(
            r.dev.reg_read(Register::Tdt, 7),
            Err(DeviceError::InvalidRegister(Register::Tdt, 7))
        );
        assert!(matches!(
            r.dev.reg_read(Register::Rdt, 1),
            Err(DeviceError::InvalidRegister(..))
        ));
    }

    #[test]
    fn head_is_device_owned_after_enable() {
        let mut r = rig(RxBuffering::Unbuffered);
        assert_eq!(
            r.dev.reg_write(Register::Rdh, 0, 3),
            Err(DeviceError::RegisterWriteFault(Register::Rdh))
        );
        assert_eq!(
            r.dev.reg_write(Register::Rdlen, 0, 64),
            Err(DeviceError::RegisterWriteFault(Register::Rdlen))
        );
    }

    #[test]
    fn tail_writes() {
        let mut r = rig(RxBuffering::Unbuffered);
        r.dev.reg_write(Register::Tdt, 0, 0).unwrap();
        assert_eq!(r.dev.tx_ring(0).unwrap().owned(), 0);
        r.dev.reg_write(Register::Rdt, 0, 5).unwrap();
        let rx = r.dev.rx_ring().unwrap();
        assert!(ownership(rx.head(), rx.tail(), RING).contains(4));
        assert!(matches!(
            r.dev.reg_write(Register::Rdt, 0, 8),
            Err(DeviceError::InvalidArgument(_))
        ));
        assert_eq!(
            r.dev.reg_write(Register::Rdt, 0, 2),
            Err(DeviceError::TailRetreat { value: 2 })
        );
    }

    #[test]
    fn head_can_be_programmed_before_enable() {
        let mut env = MemEnv::new(EnvConfig::default().with_arena_size(1 << 16)).unwrap();
        let ring = env.allocate_dma(128).unwrap();
        let mut dev = Device::new(Arc::clone(env.memory()), DeviceConfig::default()).unwrap();
        assert!(matches!(
            dev.reg_write(Register::Rdh, 0, 1),
            Err(DeviceError::InvalidArgument(_))
        ));
        dev.reg_write(Register::Rdbal, 0, ring.phys_base().0 as u32)
            .unwrap();
        dev.reg_write(Register::Rdbah, 0, (ring.phys_base().0 >> 32) as u32)
            .unwrap();
        dev.reg_write(Register::Rdlen, 0, 128).unwrap();
        dev.reg_write(Register::Rdh, 0, 1).unwrap();
        dev.reg_write(Register::Rdt, 0, 5).unwrap();
        dev.reg_write(Register::Rxen, 0, 1).unwrap();
        assert_eq!(dev.rx_ring().unwrap().owned(), 4);
        assert_eq!(dev.step(1), Err(DeviceError::NotReady));
    }

    #[test]
    fn enable_validates_ring() {
        let env = MemEnv::new(EnvConfig::default().with_arena_size(1 << 16)).unwrap();
        let mut dev = Device::new(Arc::clone(env.memory()), DeviceConfig::default()).unwrap();
        dev.reg_write(Register::Rdlen, 0, 3 * 16).unwrap();
        assert!(matches!(
            dev.reg_write(Register::Rxen, 0, 1),
            Err(DeviceError::InvalidArgument(_))
        ));
        dev.reg_write(Register::Rdlen, 0, 4 * 16).unwrap();
        // Base 0 lies outside the arena.
        assert!(matches!(
            dev.reg_write(Register::Rxen, 0, 1),
            Err(DeviceError::InvalidArgument(_))
        ));
    }

    #[test]
    fn receive_completion() {
        let mut r = rig(RxBuffering::Unbuffered);
        r.dev.reg_write(Register::Rdt, 0, 5).unwrap();
        let payload: Vec<u8> = (0..64).collect();
        r.dev.inject_rx(Frame::new(9, payload.clone())).unwrap();
        assert_eq!(r.dev.link().rx_pending(), 1);
        assert!(r.dev.step(4).unwrap() >= 1);
        let d = descriptor(&r.rx_ring, 0);
        assert!(d.metadata.dd);
        assert_eq!(d.metadata.length, 64);
        assert_eq!(r.dev.reg_read(Register::Rdh, 0).unwrap(), 1);
        let mut got = vec![0u8; 64];
        r.buffers.read(0, &mut got);
        assert_eq!(got, payload);
        assert_eq!(r.dev.link().rx_delivered(), 1);
    }

    #[test]
    fn receive_without_descriptor_drops() {
        let mut r = rig(RxBuffering::Unbuffered);
        r.dev.inject_rx(Frame::new(3, vec![1; 64])).unwrap();
        assert_eq!(r.dev.step(1).unwrap(), 1);
        assert_eq!(r.dev.link().rx_dropped(), 1);
        assert_eq!(r.dev.link().dropped_ids(), &[3]);
        assert!(!descriptor(&r.rx_ring, 0).metadata.dd);
    }

    #[test]
    fn buffered_receive_waits_then_overflows() {
        let mut r = rig(RxBuffering::Frames(2));
        for id in 0..3 {
            r.dev.inject_rx(Frame::new(id, vec![1; 64])).unwrap();
        }
        assert_eq!(r.dev.step(8).unwrap(), 0);
        assert_eq!(r.dev.link().dropped_ids(), &[2]);
        assert_eq!(r.dev.link().rx_pending(), 2);
        r.dev.reg_write(Register::Rdt, 0, 1).unwrap();
        assert_eq!(r.dev.step(8).unwrap(), 1);
        assert_eq!(r.dev.link().rx_pending(), 1);
    }

    #[test]
    fn inject_bounds() {
        let mut r = rig(RxBuffering::Unbuffered);
        assert!(r.dev.inject_rx(Frame::new(0, vec![0; 2048])).is_ok());
        assert!(matches!(
            r.dev.inject_rx(Frame::new(0, vec![0; 2049])),
            Err(DeviceError::InvalidArgument(_))
        ));
        assert!(r.dev.inject_rx(Frame::new(0, Vec::new())).is_err());
    }

    fn submit_tx(r: &mut Rig, index: u64, payload: &[u8], length: u16, rs: bool) {
        r.buffers.write(index * MAX_FRAME_SIZE as u64, payload);
        let meta = Metadata {
            length,
            eop: true,
            rs,
            dd: false,
        };
        r.tx_ring
            .store_u64(index * 16 + 8, meta.to_word(), Ordering::Release);
    }

    #[test]
    fn transmit_and_zero_length_skip() {
        let mut r = rig(RxBuffering::Unbuffered);
        submit_tx(&mut r, 0, &[7; 64], 64, false);
        submit_tx(&mut r, 1, &[8; 64], 0, true);
        r.dev.reg_write(Register::Tdt, 0, 2).unwrap();
        assert_eq!(r.dev.step(8).unwrap(), 2);
        let out = r.dev.drain_tx(0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].payload, vec![7; 64]);
        assert_eq!(out[0].drain_time, Some(0));
        assert!(descriptor(&r.tx_ring, 1).metadata.dd);
        assert_eq!(r.dev.reg_read(Register::Tdh, 0).unwrap(), 2);
        assert_eq!(r.wb.load_u64(0, Ordering::Acquire), 2);
        assert!(r.dev.drain_tx(0).unwrap().is_empty());
        assert!(r.dev.drain_tx(1).is_err());
    }

    #[test]
    fn writeback_only_on_rs() {
        let mut r = rig(RxBuffering::Unbuffered);
        submit_tx(&mut r, 0, &[1; 16], 16, false);
        r.dev.reg_write(Register::Tdt, 0, 1).unwrap();
        r.dev.step(1).unwrap();
        assert_eq!(r.wb.load_u64(0, Ordering::Acquire), 0);
        assert_eq!(RS, 1 << 27);
    }

    #[test]
    fn round_robin_interleaves() {
        let mut r = rig(RxBuffering::Unbuffered);
        r.dev.reg_write(Register::Rdt, 0, 4).unwrap();
        for i in 0..2 {
            r.dev.inject_rx(Frame::new(i, vec![1; 32])).unwrap();
        }
        submit_tx(&mut r, 0, &[2; 32], 32, false);
        submit_tx(&mut r, 1, &[3; 32], 32, false);
        r.dev.reg_write(Register::Tdt, 0, 2).unwrap();
        // Budget 2: one receive then one transmit.
        assert_eq!(r.dev.step(2).unwrap(), 2);
        assert_eq!(r.dev.link().rx_delivered(), 1);
        assert_eq!(r.dev.drain_tx(0).unwrap().len(), 1);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut r = rig(RxBuffering::Unbuffered);
            r.dev.reg_write(Register::Rdt, 0, 3).unwrap();
            for i in 0..6 {
                r.dev.inject_rx(Frame::new(i, vec![i as u8; 40])).unwrap();
            }
            for _ in 0..6 {
                r.dev.step(1).unwrap();
            }
            let mut ring = [0u8; RING as usize * 16];
            r.rx_ring.read(0, &mut ring);
            (
                ring.to_vec(),
                r.dev.link().dropped_ids().to_vec(),
                r.dev.rx_counters(),
            )
        };
        assert_eq!(run(), run());
    }
}
