//! Single-ring packet forwarding over a steppable NIC model.
//!
//! The crate is organized bottom-up:
//!
//! - [`mem_env`]: simulated DMA memory with virtual/physical translation.
//! - [`nic`]: a lockstep 82599-style device with descriptor rings.
//! - [`agent`]: the forwarding agent, one receive ring mirrored by one
//!   transmit ring per output, processing packets strictly in order.
//! - [`reference`]: a pool-based pipeline with the same observable behavior,
//!   used as a differential oracle.
//! - [`netfuncs`]: built-in packet processors.
//! - [`bench`]: load generation, pcap ingestion and throughput/latency runs.

pub mod agent;
pub mod bench;
pub mod mem_env;
pub mod netfuncs;
pub mod nic;
pub mod packet;
pub mod reference;

pub use agent::{dma_footprint, Agent, AgentError};
pub use mem_env::{DmaRegion, EnvConfig, MemEnv, MemError, PhysAddr, VirtAddr};
pub use netfuncs::NetFunction;
pub use nic::{Device, DeviceConfig, DeviceError, Frame, Register, RxBuffering};
pub use packet::{OutputLengths, PacketMut, Processor, BUFFER_SIZE, MAX_OUTPUTS};
pub use reference::{BufferPool, RefPipeline};
