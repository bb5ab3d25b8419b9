//! A pool-based forwarding pipeline.
//!
//! This is the conventional driver shape: a pool of free buffers, a receive
//! queue and one transmit queue per output, all plain FIFOs. It shares no code
//! with the descriptor machinery and exists to check the agent against.

use std::collections::VecDeque;

use thiserror::Error;

use crate::nic::Frame;
use crate::packet::{PacketMut, Processor, BUFFER_SIZE, MAX_OUTPUTS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RefError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

/// Fixed-size buffers, all allocated up front.
#[derive(Debug)]
pub struct BufferPool {
    buffers: Vec<Box<[u8]>>,
    free: Vec<usize>,
}

impl BufferPool {
    pub fn new(capacity: usize) -> Result<BufferPool, RefError> {
        if capacity == 0 {
            return Err(RefError::InvalidArgument(
                "pool capacity must be at least 1",
            ));
        }
        Ok(BufferPool {
            buffers: (0..capacity)
                .map(|_| vec![0u8; BUFFER_SIZE].into_boxed_slice())
                .collect(),
            free: (0..capacity).rev().collect(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.buffers.len()
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn alloc(&mut self) -> Option<usize> {
        self.free.pop()
    }

    pub fn release(&mut self, index: usize) {
        debug_assert!(!self.free.contains(&index), "double free of buffer {index}");
        self.free.push(index);
    }

    pub fn buffer_mut(&mut self, index: usize) -> &mut [u8] {
        &mut self.buffers[index]
    }
}

pub struct RefPipeline<P> {
    pool: BufferPool,
    rx: VecDeque<Frame>,
    tx: Vec<Vec<Frame>>,
    processor: P,
}

impl<P: Processor> RefPipeline<P> {
    pub fn new(pool_capacity: usize, outputs: usize, processor: P) -> Result<Self, RefError> {
        if outputs == 0 || outputs > MAX_OUTPUTS {
            return Err(RefError::InvalidArgument(
                "between 1 and 8 outputs are supported",
            ));
        }
        Ok(RefPipeline {
            pool: BufferPool::new(pool_capacity)?,
            rx: VecDeque::new(),
            tx: vec![Vec::new(); outputs],
            processor,
        })
    }

    pub fn pool(&self) -> &BufferPool {
        &self.pool
    }

    pub fn outputs(&self) -> usize {
        self.tx.len()
    }

    /// Runs `frames` through the pipeline and returns what each output sent,
    /// clearing the outputs.
    pub fn process_trace(&mut self, frames: &[Frame]) -> Vec<Vec<Frame>> {
        self.rx.extend(frames.iter().cloned());
        let outputs = self.tx.len();
        while let Some(frame) = self.rx.pop_front() {
            let index = self.pool.alloc().expect("one buffer in flight at a time");
            let buf = self.pool.buffer_mut(index);
            let len = frame.payload.len().min(BUFFER_SIZE);
            buf[..len].copy_from_slice(&frame.payload[..len]);
            let lengths = self
                .processor
                .process(&mut PacketMut::new(buf, len), outputs);
            for (queue, &out_len) in self.tx.iter_mut().zip(lengths.as_slice()) {
                if out_len > 0 {
                    queue.push(Frame {
                        id: frame.id,
                        payload: buf[..out_len.min(BUFFER_SIZE)].to_vec(),
                        inject_time: frame.inject_time,
                        drain_time: None,
                    });
                }
            }
            self.pool.release(index);
        }
        self.tx.iter_mut().map(std::mem::take).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netfuncs::{identity, macswap, policer};
    use crate::packet::OutputLengths;

    fn frames(n: u8) -> Vec<Frame> {
        (0..n)
            .map(|i| Frame::new(i as u64, vec![i; 20 + i as usize]))
            .collect()
    }

    #[test]
    fn init() {
        let p = RefPipeline::new(16, 1, identity()).unwrap();
        assert_eq!(p.pool().free_count(), 16);
        assert!(matches!(
            RefPipeline::new(0, 1, identity()),
            Err(RefError::InvalidArgument(_))
        ));
        let mut p = RefPipeline::new(16, 3, identity()).unwrap();
        assert_eq!(p.outputs(), 3);
        assert!(p.process_trace(&[]).iter().all(Vec::is_empty));
    }

    #[test]
    fn identity_is_fifo() {
        let input = frames(3);
        let mut p = RefPipeline::new(16, 1, identity()).unwrap();
        let out = p.process_trace(&input);
        assert_eq!(out, vec![input]);
        assert_eq!(p.pool().free_count(), 16);
    }

    #[test]
    fn drop_everything() {
        let mut p = RefPipeline::new(4, 1, |_: &mut PacketMut<'_>, n: usize| {
            OutputLengths::none(n)
        })
        .unwrap();
        assert_eq!(p.process_trace(&frames(5)), vec![Vec::<Frame>::new()]);
    }

    #[test]
    fn per_output_choice() {
        let mut p = RefPipeline::new(1, 2, policer(25)).unwrap();
        let out = p.process_trace(&frames(10));
        assert_eq!(out[0].len(), 5);
        assert_eq!(out[0], out[1]);
        assert_eq!(p.pool().free_count(), 1);
    }

    #[test]
    fn truncation_and_extension() {
        let mut p = RefPipeline::new(1, 2, |pkt: &mut PacketMut<'_>, _n: usize| {
            let len = pkt.len();
            pkt.buffer_mut()[len] = 0xee;
            OutputLengths::from_slice(&[pkt.len() - 1, pkt.len() + 1])
        })
        .unwrap();
        let out = p.process_trace(&[Frame::new(0, vec![1, 2, 3])]);
        assert_eq!(out[0][0].payload, vec![1, 2]);
        assert_eq!(out[1][0].payload, vec![1, 2, 3, 0xee]);
    }

    #[test]
    fn macswap_changes_bytes() {
        let mut p = RefPipeline::new(2, 1, macswap()).unwrap();
        let f = Frame::new(0, (0..14).collect());
        let out = p.process_trace(&[f]);
        assert_eq!(
            &out[0][0].payload[..12],
            &[6, 7, 8, 9, 10, 11, 0, 1, 2, 3, 4, 5]
        );
    }
}
