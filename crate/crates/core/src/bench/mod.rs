//! Throughput and latency measurements.
//!
//! Loads are in packets per 1000 simulated steps. Frame `i` of a trace is
//! injected at step `floor(i * 1000 / load)`. The device completes at most
//! [`DEFAULT_SERVICE_BUDGET`] descriptors per step, shared round-robin between
//! the receive queue and every transmit queue, so forwarding one packet costs
//! `1 + outputs` completions and the service rate is
//! `1000 * budget / (1 + outputs)`.
//!
//! Frames that arrive while the receive ring is full wait in a small on-NIC
//! FIFO and are dropped when it overflows. The first 10% of every trace is
//! warm-up and excluded from all statistics.

pub mod pcap;
pub mod report;
pub mod traffic;

use std::collections::HashMap;

use thiserror::Error;

use crate::agent::{dma_footprint, Agent, AgentError};
use crate::mem_env::{EnvConfig, MemEnv, MemError, DEFAULT_PAGE_SIZE};
use crate::netfuncs::NetFunction;
use crate::nic::{Device, DeviceConfig, DeviceError, Frame, RxBuffering, MAX_FRAME_SIZE};
use crate::packet::MAX_OUTPUTS;

pub use pcap::parse_pcap;
pub use report::{percentile, write_csv, CSV_HEADER};
pub use traffic::gen_traffic;

pub const STEPS_PER_LOAD_UNIT: u64 = 1000;
pub const DEFAULT_SERVICE_BUDGET: usize = 1;
pub const DEFAULT_RX_FIFO_FRAMES: usize = 64;
pub const DEFAULT_TRACE_LENGTH: usize = 10_000;
pub const DEFAULT_PACKET_SIZE: usize = 64;
pub const DEFAULT_LOSS_BOUND: f64 = 0.001;
pub const SEARCH_UPPER_BOUND: u32 = 2000;
pub const SEARCH_GRANULARITY: u32 = 5;
/// Warm-up share of every trace, in percent.
pub const WARMUP_PERCENT: usize = 10;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("format error: {reason}{}", .record.map(|r| format!(" (record {r})")).unwrap_or_default())]
    Format {
        record: Option<usize>,
        reason: &'static str,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Memory(#[from] MemError),
}

impl BenchError {
    pub fn format(record: Option<usize>, reason: &'static str) -> BenchError {
        BenchError::Format { record, reason }
    }

    /// Process exit code: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Io(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadPoint {
    pub offered_load: u32,
    pub packet_size: usize,
    pub trace_length: usize,
}

impl LoadPoint {
    pub fn new(
        offered_load: u32,
        packet_size: usize,
        trace_length: usize,
    ) -> Result<LoadPoint, BenchError> {
        if offered_load == 0 {
            return Err(BenchError::InvalidArgument(
                "offered load must be positive".into(),
            ));
        }
        if !(1..=MAX_FRAME_SIZE).contains(&packet_size) {
            return Err(BenchError::InvalidArgument(format!(
                "packet size {packet_size} outside 1..=2048"
            )));
        }
        Ok(LoadPoint {
            offered_load,
            packet_size,
            trace_length,
        })
    }

    /// Step at which frame `index` is injected.
    pub fn injection_step(&self, index: usize) -> u64 {
        index as u64 * STEPS_PER_LOAD_UNIT / self.offered_load as u64
    }

    pub fn warmup_frames(&self) -> usize {
        self.trace_length * WARMUP_PERCENT / 100
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadPointResult {
    pub offered_load: u32,
    /// Frames in the measured window.
    pub injected: u64,
    pub delivered: u64,
    pub lost: u64,
    pub loss_fraction: f64,
    pub latency_p50: u64,
    pub latency_p99: u64,
}

/// Raw observations from one trace.
#[derive(Debug, Clone, Default)]
pub struct TraceOutcome {
    pub injected: u64,
    /// Emissions per output, in drain order.
    pub emitted: Vec<Vec<Frame>>,
    pub dropped_ids: Vec<u64>,
    pub steps: u64,
}

/// Statistics over frames whose id is at least `warmup`. A frame's latency is
/// the earliest drain over all outputs minus its injection time; frames that
/// no output sent contribute no sample.
pub fn summarize(offered_load: u32, outcome: &TraceOutcome, warmup: u64) -> LoadPointResult {
    let injected = outcome.injected.saturating_sub(warmup);
    let lost = outcome
        .dropped_ids
        .iter()
        .filter(|&&id| id >= warmup)
        .count() as u64;
    let mut first: HashMap<u64, u64> = HashMap::new();
    for frame in outcome.emitted.iter().flatten() {
        if frame.id < warmup || frame.id >= outcome.injected {
            continue;
        }
        if let Some(latency) = frame.latency() {
            first
                .entry(frame.id)
                .and_modify(|l| *l = (*l).min(latency))
                .or_insert(latency);
        }
    }
    let mut latencies: Vec<u64> = first.into_values().collect();
    latencies.sort_unstable();
    let delivered = injected - lost;
    LoadPointResult {
        offered_load,
        injected,
        delivered,
        lost,
        loss_fraction: if injected == 0 {
            0.0
        } else {
            lost as f64 / injected as f64
        },
        latency_p50: percentile(&latencies, 50.0),
        latency_p99: percentile(&latencies, 99.0),
    }
}

/// One benchmark configuration. Every load point builds a fresh memory
/// environment, device and agent.
#[derive(Debug, Clone)]
pub struct Bench {
    pub nf: NetFunction,
    pub ring_size: usize,
    pub outputs: usize,
    pub packet_size: usize,
    pub trace_length: usize,
    pub seed: u64,
    pub page_size: u64,
    pub service_budget: usize,
    pub rx_fifo_frames: usize,
    pub search_upper: u32,
    pub granularity: u32,
    traffic: Option<Vec<Frame>>,
}

impl Bench {
    pub fn new(nf: NetFunction, ring_size: usize, outputs: usize) -> Bench {
        Bench {
            nf,
            ring_size,
            outputs,
            packet_size: DEFAULT_PACKET_SIZE,
            trace_length: DEFAULT_TRACE_LENGTH,
            seed: 0,
            page_size: DEFAULT_PAGE_SIZE,
            service_budget: DEFAULT_SERVICE_BUDGET,
            rx_fifo_frames: DEFAULT_RX_FIFO_FRAMES,
            search_upper: SEARCH_UPPER_BOUND,
            granularity: SEARCH_GRANULARITY,
            traffic: None,
        }
    }

    pub fn with_packet_size(mut self, packet_size: usize) -> Bench {
        self.packet_size = packet_size;
        self
    }

    pub fn with_trace_length(mut self, trace_length: usize) -> Bench {
        self.trace_length = trace_length;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Bench {
        self.seed = seed;
        self
    }

    pub fn with_page_size(mut self, page_size: u64) -> Bench {
        self.page_size = page_size;
        self
    }

    /// Replays `frames` (cycled as needed) instead of generated traffic.
    pub fn with_traffic(mut self, frames: Vec<Frame>) -> Result<Bench, BenchError> {
        if frames.is_empty() {
            return Err(BenchError::InvalidArgument(
                "traffic must contain at least one frame".into(),
            ));
        }
        self.traffic = Some(frames);
        Ok(self)
    }

    /// Packets per 1000 steps the device can forward at full load.
    pub fn service_rate(&self) -> u32 {
        (STEPS_PER_LOAD_UNIT as usize * self.service_budget / (1 + self.outputs)) as u32
    }

    pub fn load_point(&self, offered_load: u32) -> Result<LoadPoint, BenchError> {
        LoadPoint::new(offered_load, self.packet_size, self.trace_length)
    }

    fn trace(&self, lp: &LoadPoint) -> Result<Vec<Frame>, BenchError> {
        match &self.traffic {
            Some(frames) => Ok(frames
                .iter()
                .cycle()
                .take(lp.trace_length)
                .enumerate()
                .map(|(i, f)| Frame::new(i as u64, f.payload.clone()))
                .collect()),
            None => {
                let mut frames = gen_traffic(
                    lp.trace_length,
                    lp.packet_size.max(traffic::MIN_PACKET_SIZE),
                    self.seed,
                )?;
                for f in &mut frames {
                    f.payload.truncate(lp.packet_size);
                }
                Ok(frames)
            }
        }
    }

    fn env_config(&self) -> EnvConfig {
        let page = self.page_size;
        let arena = dma_footprint(self.ring_size, self.outputs.clamp(1, MAX_OUTPUTS), page);
        EnvConfig::default()
            .with_page_size(page)
            .with_arena_size(arena)
    }

    /// Runs the trace for `lp` and returns what the wire saw.
    pub fn run_trace(&self, lp: &LoadPoint) -> Result<TraceOutcome, BenchError> {
        let frames = self.trace(lp)?;
        let mut env = MemEnv::new(self.env_config())?;
        let mut device = Device::new(
            env.memory().clone(),
            DeviceConfig {
                tx_queues: self.outputs,
                rx_buffering: RxBuffering::Frames(self.rx_fifo_frames),
            },
        )?;
        let mut agent: Agent = Agent::new(&mut env, &mut device, self.ring_size, self.outputs)?;
        let mut nf = self.nf;
        let mut emitted = vec![Vec::new(); self.outputs];
        let injected = frames.len() as u64;
        let mut pending = frames.into_iter().enumerate().peekable();

        loop {
            while let Some((i, _)) = pending.peek() {
                if lp.injection_step(*i) > device.now() {
                    break;
                }
                let (_, frame) = pending.next().expect("peeked");
                device.inject_rx(frame)?;
            }
            device.step(self.service_budget)?;
            let busy = agent.poll(&mut device, &mut nf)?;
            for (q, out) in emitted.iter_mut().enumerate() {
                out.append(&mut device.drain_tx(q)?);
            }
            if !busy && pending.peek().is_none() && !device.has_work() {
                break;
            }
        }
        Ok(TraceOutcome {
            injected,
            emitted,
            dropped_ids: device.link().dropped_ids().to_vec(),
            steps: device.now(),
        })
    }

    pub fn run_load_point(&self, lp: &LoadPoint) -> Result<LoadPointResult, BenchError> {
        let outcome = self.run_trace(lp)?;
        Ok(summarize(
            lp.offered_load,
            &outcome,
            lp.warmup_frames() as u64,
        ))
    }

    /// Largest load, to within the search granularity, whose loss fraction
    /// stays below `loss_bound`. Never less than 1.
    pub fn find_max_throughput(&self, loss_bound: f64) -> Result<LoadPoint, BenchError> {
        let passes = |load: u32| -> Result<bool, BenchError> {
            Ok(self.run_load_point(&self.load_point(load)?)?.loss_fraction < loss_bound)
        };
        let upper = self.search_upper.max(1);
        if passes(upper)? {
            return self.load_point(upper);
        }
        let (mut lo, mut hi) = (0u32, upper);
        while hi - lo > self.granularity.max(1) {
            let mid = lo + (hi - lo) / 2;
            if passes(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.load_point(lo.max(1))
    }

    /// Load points `step, 2*step, ...` up to the maximum throughput, which is
    /// always the last point.
    pub fn run_sweep(&self, step: u32) -> Result<Vec<LoadPointResult>, BenchError> {
        if step == 0 {
            return Err(BenchError::InvalidArgument(
                "sweep step must be positive".into(),
            ));
        }
        let max = self.find_max_throughput(DEFAULT_LOSS_BOUND)?.offered_load;
        let mut loads: Vec<u32> = (1..).map(|k| k * step).take_while(|&l| l <= max).collect();
        if loads.last() != Some(&max) {
            loads.push(max);
        }
        loads
            .into_iter()
            .map(|l| self.run_load_point(&self.load_point(l)?))
            .collect()
    }
}

pub fn run_load_point(
    lp: &LoadPoint,
    nf: NetFunction,
    ring_size: usize,
    num_outputs: usize,
) -> Result<LoadPointResult, BenchError> {
    Bench::new(nf, ring_size, num_outputs)
        .with_packet_size(lp.packet_size)
        .with_trace_length(lp.trace_length)
        .run_load_point(lp)
}

pub fn find_max_throughput(
    nf: NetFunction,
    ring_size: usize,
    num_outputs: usize,
    loss_bound: f64,
) -> Result<LoadPoint, BenchError> {
    Bench::new(nf, ring_size, num_outputs).find_max_throughput(loss_bound)
}

pub fn run_sweep(
    nf: NetFunction,
    ring_size: usize,
    num_outputs: usize,
    step: u32,
) -> Result<Vec<LoadPointResult>, BenchError> {
    Bench::new(nf, ring_size, num_outputs).run_sweep(step)
}
