//! The forwarding agent.
//!
//! One receive ring and one transmit ring per output share a single set of
//! packet buffers: slot `i` of every ring points at buffer `i`. A buffer moves
//! through the stages in a fixed order (received by the device, processed by
//! the agent, transmitted on every output, handed back to the receive side),
//! so one index space describes all of them:
//!
//! ```text
//!   earliest TX head <= published tail <= processed <= RDH <= RDT < earliest TX head + ring_size
//! ```
//!
//! All counters above are unwrapped; ring slots are `counter % ring_size`.
//! Packets are handled strictly one at a time: [`Agent::receive`] and
//! [`Agent::transmit`] must alternate. Skipping an output is done by giving
//! its descriptor a length of 0, which the device recycles without sending.
//!
//! Transmit tails are published every `FLUSH_PERIOD` packets (and whenever
//! the agent finds nothing to receive); the receive tail is moved forward
//! every `RECYCLE_PERIOD` packets (and when idle), up to one slot before the
//! slowest output's head.

use std::sync::atomic::Ordering;

use thiserror::Error;

use crate::mem_env::{DmaRegion, MemEnv, MemError, PhysAddr};
use crate::nic::descriptor::{Metadata, DD, DESCRIPTOR_SIZE, LENGTH_MASK, METADATA_OFFSET, RS};
use crate::nic::{Device, DeviceError, Register, MAX_RING_SIZE};
use crate::packet::{OutputLengths, PacketMut, Processor, BUFFER_SIZE, MAX_OUTPUTS};

pub const DEFAULT_FLUSH_PERIOD: usize = 8;
pub const DEFAULT_RECYCLE_PERIOD: usize = 64;

/// [`Agent::run`] gives up after this many consecutive iterations in which
/// neither the device nor the agent made progress.
pub const IDLE_ITERATION_BUDGET: usize = 16;

// Head write-back cells sit on separate cache lines.
const HEAD_SHADOW_STRIDE: u64 = 64;

const DESC: u64 = DESCRIPTOR_SIZE as u64;
const BUF: u64 = BUFFER_SIZE as u64;

/// Bytes of DMA memory an agent allocates with pages of `page_size` bytes.
pub fn dma_footprint(ring_size: usize, outputs: usize, page_size: u64) -> u64 {
    let page = page_size.max(1);
    let pages = |bytes: u64| bytes.div_ceil(page) * page;
    let n = ring_size as u64;
    let outputs = outputs as u64;
    pages(n * DESC) * (1 + outputs) + pages(n * BUF) + pages(outputs * HEAD_SHADOW_STRIDE)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("protocol violation: {0}")]
    ProtocolViolation(&'static str),
    #[error(transparent)]
    Memory(#[from] MemError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// See the [module documentation](self).
pub struct Agent<
    const FLUSH_PERIOD: usize = DEFAULT_FLUSH_PERIOD,
    const RECYCLE_PERIOD: usize = DEFAULT_RECYCLE_PERIOD,
> {
    ring_size: u64,
    outputs: usize,
    rx_ring: DmaRegion,
    tx_rings: Vec<DmaRegion>,
    buffers: DmaRegion,
    head_shadows: DmaRegion,
    processed: u64,
    published: u64,
    rx_tail: u64,
    outstanding: bool,
    scratch: Box<[u8]>,
}

impl<const FLUSH_PERIOD: usize, const RECYCLE_PERIOD: usize> Agent<FLUSH_PERIOD, RECYCLE_PERIOD> {
    const PERIODS_OK: () = assert!(
        FLUSH_PERIOD.is_power_of_two()
            && RECYCLE_PERIOD.is_power_of_two()
            && RECYCLE_PERIOD.is_multiple_of(FLUSH_PERIOD),
        "periods must be powers of two, RECYCLE_PERIOD a multiple of FLUSH_PERIOD"
    );

    /// Allocates rings and buffers from `env`, programs `device` and enables
    /// its queues. The device must have exactly `outputs` transmit queues.
    pub fn new(
        env: &mut MemEnv,
        device: &mut Device,
        ring_size: usize,
        outputs: usize,
    ) -> Result<Self, AgentError> {
        #[allow(clippy::let_unit_value)]
        let () = Self::PERIODS_OK;
        if !ring_size.is_power_of_two() || ring_size < 2 || ring_size > MAX_RING_SIZE as usize {
            return Err(AgentError::InvalidArgument(
                "ring size must be a power of two in [2, 65536]",
            ));
        }
        if outputs == 0 || outputs > MAX_OUTPUTS {
            return Err(AgentError::InvalidArgument(
                "between 1 and 8 outputs are supported",
            ));
        }
        if device.tx_queues() != outputs {
            return Err(AgentError::InvalidArgument(
                "device must have one transmit queue per output",
            ));
        }
        let n = ring_size as u64;

        let rx_ring = env.allocate_dma(n * DESC)?;
        let tx_rings = (0..outputs)
            .map(|_| env.allocate_dma(n * DESC))
            .collect::<Result<Vec<_>, _>>()?;
        let buffers = env.allocate_dma(n * BUF)?;
        let head_shadows = env.allocate_dma(outputs as u64 * HEAD_SHADOW_STRIDE)?;

        let buffers_phys = env.virt_to_phys(buffers.virt_base())?;
        for i in 0..n {
            let addr = buffers_phys.0 + i * BUF;
            rx_ring.store_u64(i * DESC, addr, Ordering::Relaxed);
            for ring in &tx_rings {
                ring.store_u64(i * DESC, addr, Ordering::Relaxed);
            }
        }

        let len = (n * DESC) as u32;
        let rx_phys = env.virt_to_phys(rx_ring.virt_base())?.0;
        device.reg_write(Register::Rdbal, 0, rx_phys as u32)?;
        device.reg_write(Register::Rdbah, 0, (rx_phys >> 32) as u32)?;
        device.reg_write(Register::Rdlen, 0, len)?;
        for (q, ring) in tx_rings.iter().enumerate() {
            let tx_phys = env.virt_to_phys(ring.virt_base())?.0;
            let wb = env.virt_to_phys(head_shadows.virt_base())?.0 + q as u64 * HEAD_SHADOW_STRIDE;
            device.reg_write(Register::Tdbal, q, tx_phys as u32)?;
            device.reg_write(Register::Tdbah, q, (tx_phys >> 32) as u32)?;
            device.reg_write(Register::Tdlen, q, len)?;
            device.reg_write(Register::Tdwbal, q, wb as u32 | 1)?;
            device.reg_write(Register::Tdwbah, q, (wb >> 32) as u32)?;
        }
        device.reg_write(Register::Rxen, 0, 1)?;
        for q in 0..outputs {
            device.reg_write(Register::Txen, q, 1)?;
        }
        // Everything but one slot goes to the device: a full [head, tail)
        // interval would look empty.
        device.reg_write(Register::Rdt, 0, (n - 1) as u32)?;

        Ok(Agent {
            ring_size: n,
            outputs,
            rx_ring,
            tx_rings,
            buffers,
            head_shadows,
            processed: 0,
            published: 0,
            rx_tail: n - 1,
            outstanding: false,
            scratch: vec![0u8; BUFFER_SIZE].into_boxed_slice(),
        })
    }

    pub fn ring_size(&self) -> usize {
        self.ring_size as usize
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Packets transmitted so far (unwrapped processed delimiter).
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Unwrapped value of the transmit tail last written to every queue.
    pub fn published(&self) -> u64 {
        self.published
    }

    /// Unwrapped value of the receive tail last written.
    pub fn rx_tail(&self) -> u64 {
        self.rx_tail
    }

    /// Physical buffer address of every receive descriptor, in slot order.
    pub fn buffer_addrs(&self) -> Vec<PhysAddr> {
        Self::ring_addrs(&self.rx_ring, self.ring_size)
    }

    /// Physical buffer address of every descriptor of one transmit ring.
    pub fn tx_buffer_addrs(&self, output: usize) -> Vec<PhysAddr> {
        Self::ring_addrs(&self.tx_rings[output], self.ring_size)
    }

    fn ring_addrs(ring: &DmaRegion, n: u64) -> Vec<PhysAddr> {
        (0..n)
            .map(|i| PhysAddr(ring.load_u64(i * DESC, Ordering::Relaxed)))
            .collect()
    }

    pub fn buffers(&self) -> &DmaRegion {
        &self.buffers
    }

    fn slot(&self, counter: u64) -> u64 {
        counter & (self.ring_size - 1)
    }

    /// Looks at the next receive descriptor. Returns the packet if the device
    /// has completed it; the packet stays outstanding until
    /// [`Agent::transmit`].
    pub fn receive(&mut self) -> Result<Option<PacketMut<'_>>, AgentError> {
        if self.outstanding {
            return Err(AgentError::ProtocolViolation(
                "receive called twice without transmit",
            ));
        }
        // Slots past the receive tail still hold the previous lap's metadata.
        if self.processed >= self.rx_tail {
            return Ok(None);
        }
        let slot = self.slot(self.processed);
        // Acquire pairs with the device's release store of DD.
        let meta = self
            .rx_ring
            .load_u64(slot * DESC + METADATA_OFFSET, Ordering::Acquire);
        if meta & DD == 0 {
            return Ok(None);
        }
        let len = ((meta & LENGTH_MASK) as usize).min(BUFFER_SIZE);
        self.buffers.read(slot * BUF, &mut self.scratch[..len]);
        self.outstanding = true;
        Ok(Some(PacketMut::new(&mut self.scratch, len)))
    }

    /// Hands the outstanding packet to every output, with per-output lengths.
    pub fn transmit(
        &mut self,
        device: &mut Device,
        lengths: &OutputLengths,
    ) -> Result<(), AgentError> {
        if !self.outstanding {
            return Err(AgentError::ProtocolViolation(
                "transmit without a received packet",
            ));
        }
        if lengths.len() != self.outputs {
            return Err(AgentError::InvalidArgument(
                "one length per output is required",
            ));
        }
        if lengths.max() > BUFFER_SIZE {
            return Err(AgentError::InvalidArgument(
                "transmit length exceeds buffer size",
            ));
        }
        self.outstanding = false;

        let slot = self.slot(self.processed);
        let written = lengths.max();
        if written > 0 {
            self.buffers.write(slot * BUF, &self.scratch[..written]);
        }
        let rs = (self.processed + 1).is_multiple_of(FLUSH_PERIOD as u64);
        for (ring, &length) in self.tx_rings.iter().zip(lengths.as_slice()) {
            let meta = Metadata {
                length: length as u16,
                eop: true,
                rs,
                dd: false,
            };
            ring.store_u64(
                slot * DESC + METADATA_OFFSET,
                meta.to_word(),
                Ordering::Release,
            );
        }
        self.processed += 1;

        if self.processed.is_multiple_of(FLUSH_PERIOD as u64) {
            self.flush(device)?;
        }
        if self.processed.is_multiple_of(RECYCLE_PERIOD as u64) {
            self.recycle(device)?;
        }
        Ok(())
    }

    /// Publishes every processed packet by writing the same tail to all
    /// transmit queues.
    pub fn flush(&mut self, device: &mut Device) -> Result<(), AgentError> {
        if self.published == self.processed {
            return Ok(());
        }
        if !self.processed.is_multiple_of(FLUSH_PERIOD as u64) {
            // Partial batch: make sure its last descriptor reports its head,
            // otherwise recycling could not see it complete.
            let offset = self.slot(self.processed - 1) * DESC + METADATA_OFFSET;
            for ring in &self.tx_rings {
                let meta = ring.load_u64(offset, Ordering::Relaxed);
                ring.store_u64(offset, meta | RS, Ordering::Release);
            }
        }
        let tail = self.slot(self.processed) as u32;
        for q in 0..self.outputs {
            device.reg_write(Register::Tdt, q, tail)?;
        }
        self.published = self.processed;
        Ok(())
    }

    /// Unwrapped head of the slowest output, from the head write-back cells.
    pub fn earliest_tx_head(&self) -> u64 {
        let processed_slot = self.slot(self.processed);
        let behind = (0..self.outputs as u64)
            .map(|q| {
                let head = self
                    .head_shadows
                    .load_u64(q * HEAD_SHADOW_STRIDE, Ordering::Acquire);
                (processed_slot + self.ring_size - (head & (self.ring_size - 1)))
                    & (self.ring_size - 1)
            })
            .max()
            .unwrap_or(0);
        self.processed - behind
    }

    /// Returns every buffer all outputs are done with to the receive ring.
    pub fn recycle(&mut self, device: &mut Device) -> Result<(), AgentError> {
        let earliest = self.earliest_tx_head();
        let new_tail = earliest + self.ring_size - 1;
        if new_tail <= self.rx_tail {
            return Ok(());
        }
        for counter in self.rx_tail..new_tail {
            let offset = self.slot(counter) * DESC + METADATA_OFFSET;
            self.rx_ring.store_u64(offset, 0, Ordering::Relaxed);
        }
        device.reg_write(Register::Rdt, 0, self.slot(new_tail) as u32)?;
        self.rx_tail = new_tail;
        Ok(())
    }

    /// One agent iteration: process a packet if one is ready, otherwise flush
    /// and recycle. Returns whether a packet was processed.
    pub fn poll<P: Processor + ?Sized>(
        &mut self,
        device: &mut Device,
        processor: &mut P,
    ) -> Result<bool, AgentError> {
        let outputs = self.outputs;
        let lengths = match self.receive()? {
            Some(mut packet) => processor.process(&mut packet, outputs),
            None => {
                self.flush(device)?;
                self.recycle(device)?;
                return Ok(false);
            }
        };
        self.transmit(device, &lengths)?;
        Ok(true)
    }

    /// Runs the device and the agent in lockstep: each iteration steps the
    /// device with `device_budget` completions and then polls once. Stops
    /// after `max_packets` packets or [`IDLE_ITERATION_BUDGET`] quiet
    /// iterations, then drains everything already submitted.
    pub fn run<P: Processor + ?Sized>(
        &mut self,
        device: &mut Device,
        processor: &mut P,
        max_packets: u64,
        device_budget: usize,
    ) -> Result<u64, AgentError> {
        let mut count = 0;
        let mut quiet = 0;
        while count < max_packets {
            let work = device.step(device_budget)?;
            if self.poll(device, processor)? {
                count += 1;
                quiet = 0;
            } else if work == 0 {
                quiet += 1;
                if quiet >= IDLE_ITERATION_BUDGET {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        self.flush(device)?;
        while device.tx_pending() {
            device.step(device_budget.max(1))?;
        }
        self.recycle(device)?;
        Ok(count)
    }
}
