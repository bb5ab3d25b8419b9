#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tinyring::{
    dma_footprint, Agent, Device, DeviceConfig, EnvConfig, Frame, MemEnv, Processor, RefPipeline,
    RxBuffering,
};

/// Frames with uniformly random lengths in `min_len..=max_len`; bytes 0..8
/// carry the sequence number when they fit.
pub fn random_trace(seed: u64, count: usize, min_len: usize, max_len: usize) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count as u64)
        .map(|seq| {
            let len = rng.gen_range(min_len..=max_len);
            let mut payload = vec![0u8; len];
            rng.fill_bytes(&mut payload);
            let n = len.min(8);
            payload[..n].copy_from_slice(&seq.to_le_bytes()[..n]);
            Frame::new(seq, payload)
        })
        .collect()
}

pub fn sized_env(ring_size: usize, outputs: usize) -> MemEnv {
    let page = tinyring::mem_env::DEFAULT_PAGE_SIZE;
    MemEnv::new(EnvConfig::default().with_arena_size(dma_footprint(ring_size, outputs, page)))
        .unwrap()
}

pub struct Rig<const F: usize, const R: usize> {
    pub env: MemEnv,
    pub device: Device,
    pub agent: Agent<F, R>,
}

impl<const F: usize, const R: usize> Rig<F, R> {
    pub fn new(ring_size: usize, outputs: usize, buffering: RxBuffering) -> Self {
        let mut env = sized_env(ring_size, outputs);
        let mut device = Device::new(
            Arc::clone(env.memory()),
            DeviceConfig {
                tx_queues: outputs,
                rx_buffering: buffering,
            },
        )
        .unwrap();
        let agent = Agent::new(&mut env, &mut device, ring_size, outputs).unwrap();
        Rig { env, device, agent }
    }

    pub fn drain(&mut self) -> Vec<Vec<Frame>> {
        (0..self.agent.outputs())
            .map(|q| self.device.drain_tx(q).unwrap())
            .collect()
    }
}

/// Forwards `frames` through a fresh agent, all injected up front.
pub fn forward<const F: usize, const R: usize, P: Processor>(
    frames: &[Frame],
    ring_size: usize,
    outputs: usize,
    mut processor: P,
) -> Vec<Vec<Frame>> {
    let mut rig = Rig::<F, R>::new(ring_size, outputs, RxBuffering::unbounded());
    for f in frames {
        rig.device.inject_rx(f.clone()).unwrap();
    }
    rig.agent
        .run(&mut rig.device, &mut processor, u64::MAX, 1)
        .unwrap();
    assert_eq!(rig.device.link().rx_dropped(), 0);
    rig.drain()
}

pub fn reference<P: Processor>(frames: &[Frame], outputs: usize, processor: P) -> Vec<Vec<Frame>> {
    RefPipeline::new(1, outputs, processor)
        .unwrap()
        .process_trace(frames)
}

/// Per-output payloads, the observable part of an emission.
pub fn payloads(out: &[Vec<Frame>]) -> Vec<Vec<&[u8]>> {
    out.iter()
        .map(|q| q.iter().map(|f| f.payload.as_slice()).collect())
        .collect()
}
