//! Simulated DMA-capable memory.
//!
//! A [`MemEnv`] owns one flat physical arena backed by 64-bit atomic words.
//! Regions are carved out of it with a bump allocator and mapped into a
//! separate virtual address space through a page map, so translation in both
//! directions behaves like a (very small) `/proc/self/pagemap` plus
//! `/dev/mem` pair.
//!
//! The same [`Memory`] is shared with the device model through an `Arc`, which
//! is how "DMA" happens: the device reads and writes physical addresses while
//! software uses the [`DmaRegion`] handles it was given at allocation time.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

pub const DEFAULT_PAGE_SIZE: u64 = 4096;
pub const DEFAULT_ARENA_SIZE: u64 = 16 << 20;

const WORD: u64 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("out of DMA memory: requested {requested} bytes, {available} available")]
    OutOfMemory { requested: u64, available: u64 },
    #[error("translation fault at {0:#x}")]
    TranslationFault(u64),
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PhysAddr(pub u64);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VirtAddr(pub u64);

impl fmt::Debug for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhysAddr({:#x})", self.0)
    }
}

impl fmt::Debug for VirtAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VirtAddr({:#x})", self.0)
    }
}

impl PhysAddr {
    pub const fn add(self, offset: u64) -> PhysAddr {
        PhysAddr(self.0 + offset)
    }
}

impl VirtAddr {
    pub const fn add(self, offset: u64) -> VirtAddr {
        VirtAddr(self.0 + offset)
    }
}

/// The physical arena. All accesses are bounds-checked and go through atomic
/// words, so the device and software sides may live on different threads.
///
/// Bulk byte copies use relaxed ordering. Publication of descriptor state uses
/// [`Memory::store_u64`] with `Release` on the writer side and
/// [`Memory::load_u64`] with `Acquire` on the reader side: everything written
/// before the release store is visible once the reader observes the value.
pub struct Memory {
    base: u64,
    words: Box<[AtomicU64]>,
}

impl fmt::Debug for Memory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Memory")
            .field("base", &format_args!("{:#x}", self.base))
            .field("size", &self.size())
            .finish()
    }
}

impl Memory {
    fn new(base: u64, size: u64) -> Memory {
        let words = (0..size / WORD).map(|_| AtomicU64::new(0)).collect();
        Memory { base, words }
    }

    pub fn base(&self) -> PhysAddr {
        PhysAddr(self.base)
    }

    pub fn size(&self) -> u64 {
        self.words.len() as u64 * WORD
    }

    pub fn contains(&self, addr: PhysAddr, len: u64) -> bool {
        addr.0 >= self.base && len <= self.size() && addr.0 - self.base <= self.size() - len
    }

    fn check(&self, addr: PhysAddr, len: u64) -> Result<u64, MemError> {
        if self.contains(addr, len) {
            Ok(addr.0 - self.base)
        } else {
            Err(MemError::TranslationFault(addr.0))
        }
    }

    /// Loads an aligned 64-bit little-endian word.
    pub fn load_u64(&self, addr: PhysAddr, order: Ordering) -> Result<u64, MemError> {
        let off = self.check(addr, WORD)?;
        if off % WORD != 0 {
            return Err(MemError::InvalidArgument("unaligned 64-bit access"));
        }
        Ok(self.words[(off / WORD) as usize].load(order))
    }

    /// Stores an aligned 64-bit little-endian word.
    pub fn store_u64(&self, addr: PhysAddr, value: u64, order: Ordering) -> Result<(), MemError> {
        let off = self.check(addr, WORD)?;
        if off % WORD != 0 {
            return Err(MemError::InvalidArgument("unaligned 64-bit access"));
        }
        self.words[(off / WORD) as usize].store(value, order);
        Ok(())
    }

    pub fn read_bytes(&self, addr: PhysAddr, out: &mut [u8]) -> Result<(), MemError> {
        let off = self.check(addr, out.len() as u64)?;
        let mut word = (off / WORD) as usize;
        let shift = (off % WORD) as usize;
        let mut rest = out;
        if shift != 0 && !rest.is_empty() {
            let bytes = self.words[word].load(Ordering::Relaxed).to_le_bytes();
            let take = (WORD as usize - shift).min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            head.copy_from_slice(&bytes[shift..shift + take]);
            rest = tail;
            word += 1;
        }
        let mut chunks = rest.chunks_exact_mut(WORD as usize);
        for (chunk, w) in (&mut chunks).zip(&self.words[word..]) {
            chunk.copy_from_slice(&w.load(Ordering::Relaxed).to_le_bytes());
            word += 1;
        }
        let tail = chunks.into_remainder();
        if !tail.is_empty() {
            let bytes = self.words[word].load(Ordering::Relaxed).to_le_bytes();
            tail.copy_from_slice(&bytes[..tail.len()]);
        }
        Ok(())
    }

    /// Copies `len` bytes at `addr` into a new vector.
    pub fn read_vec(&self, addr: PhysAddr, len: usize) -> Result<Vec<u8>, MemError> {
        let off = self.check(addr, len as u64)?;
        let first = (off / WORD) as usize;
        let skip = (off % WORD) as usize;
        let words = (skip + len).div_ceil(WORD as usize);
        let mut out = Vec::with_capacity(words * WORD as usize);
        for w in &self.words[first..first + words] {
            out.extend_from_slice(&w.load(Ordering::Relaxed).to_le_bytes());
        }
        out.drain(..skip);
        out.truncate(len);
        Ok(out)
    }

    pub fn write_bytes(&self, addr: PhysAddr, data: &[u8]) -> Result<(), MemError> {
        let off = self.check(addr, data.len() as u64)?;
        let mut word = (off / WORD) as usize;
        let shift = (off % WORD) as usize;
        let mut rest = data;
        if shift != 0 && !rest.is_empty() {
            let take = (WORD as usize - shift).min(rest.len());
            self.write_partial(word, shift, &rest[..take]);
            rest = &rest[take..];
            word += 1;
        }
        let mut chunks = rest.chunks_exact(WORD as usize);
        for (chunk, w) in (&mut chunks).zip(&self.words[word..]) {
            w.store(
                u64::from_le_bytes(chunk.try_into().expect("8-byte chunk")),
                Ordering::Relaxed,
            );
            word += 1;
        }
        let tail = chunks.remainder();
        if !tail.is_empty() {
            self.write_partial(word, 0, tail);
        }
        Ok(())
    }

    // Only the touched bytes change, even if another writer owns the rest of
    // the word.
    fn write_partial(&self, word: usize, shift: usize, data: &[u8]) {
        let mut bytes = [0u8; 8];
        bytes[shift..shift + data.len()].copy_from_slice(data);
        let mask = ((1u64 << (8 * data.len())) - 1) << (8 * shift);
        self.words[word].fetch_and(!mask, Ordering::Relaxed);
        self.words[word].fetch_or(u64::from_le_bytes(bytes), Ordering::Relaxed);
    }
}

/// A contiguous, zero-initialized, page-aligned block of simulated memory.
#[derive(Clone)]
pub struct DmaRegion {
    virt_base: VirtAddr,
    phys_base: PhysAddr,
    size: u64,
    memory: Arc<Memory>,
}

impl fmt::Debug for DmaRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DmaRegion")
            .field("virt_base", &self.virt_base)
            .field("phys_base", &self.phys_base)
            .field("size", &self.size)
            .finish()
    }
}

impl DmaRegion {
    pub fn virt_base(&self) -> VirtAddr {
        self.virt_base
    }

    pub fn phys_base(&self) -> PhysAddr {
        self.phys_base
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    /// Physical address of the byte at `offset`. Panics past the end.
    pub fn phys(&self, offset: u64) -> PhysAddr {
        assert!(offset <= self.size, "offset {offset:#x} outside region");
        self.phys_base.add(offset)
    }

    fn at(&self, offset: u64, len: u64) -> PhysAddr {
        assert!(
            len <= self.size && offset <= self.size - len,
            "access [{offset:#x}, +{len}) outside region of {} bytes",
            self.size
        );
        self.phys_base.add(offset)
    }

    pub fn load_u64(&self, offset: u64, order: Ordering) -> u64 {
        self.memory
            .load_u64(self.at(offset, WORD), order)
            .expect("region lies inside the arena")
    }

    pub fn store_u64(&self, offset: u64, value: u64, order: Ordering) {
        self.memory
            .store_u64(self.at(offset, WORD), value, order)
            .expect("region lies inside the arena")
    }

    pub fn read(&self, offset: u64, out: &mut [u8]) {
        self.memory
            .read_bytes(self.at(offset, out.len() as u64), out)
            .expect("region lies inside the arena")
    }

    pub fn write(&self, offset: u64, data: &[u8]) {
        self.memory
            .write_bytes(self.at(offset, data.len() as u64), data)
            .expect("region lies inside the arena")
    }
}

/// Construction parameters for a [`MemEnv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvConfig {
    pub page_size: u64,
    pub arena_size: u64,
    /// First physical address of the arena.
    pub phys_origin: u64,
    /// First virtual address handed out.
    pub virt_origin: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            page_size: DEFAULT_PAGE_SIZE,
            arena_size: DEFAULT_ARENA_SIZE,
            phys_origin: 0x1_0000_0000,
            virt_origin: 0x7f00_0000_0000,
        }
    }
}

impl EnvConfig {
    pub fn with_page_size(mut self, page_size: u64) -> Self {
        self.page_size = page_size;
        self
    }

    pub fn with_arena_size(mut self, arena_size: u64) -> Self {
        self.arena_size = arena_size;
        self
    }
}

/// Virtual-page to physical-page associations.
#[derive(Debug, Clone, Default)]
pub struct PageMap {
    page_size: u64,
    forward: BTreeMap<u64, u64>,
    reverse: BTreeMap<u64, u64>,
}

impl PageMap {
    fn new(page_size: u64) -> PageMap {
        PageMap {
            page_size,
            ..PageMap::default()
        }
    }

    pub fn page_size(&self) -> u64 {
        self.page_size
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    fn insert(&mut self, vpn: u64, ppn: u64) {
        let prev_v = self.forward.insert(vpn, ppn);
        let prev_p = self.reverse.insert(ppn, vpn);
        debug_assert!(
            prev_v.is_none() && prev_p.is_none(),
            "page map must stay injective"
        );
    }

    fn lookup_virt(&self, vpn: u64) -> Option<u64> {
        self.forward.get(&vpn).copied()
    }

    fn lookup_phys(&self, ppn: u64) -> Option<u64> {
        self.reverse.get(&ppn).copied()
    }
}

/// The simulated memory environment: arena, bump allocator, and page map.
#[derive(Debug)]
pub struct MemEnv {
    config: EnvConfig,
    memory: Arc<Memory>,
    next_phys: u64,
    next_virt: u64,
    page_map: PageMap,
    regions: Vec<(VirtAddr, PhysAddr, u64)>,
}

impl MemEnv {
    pub fn new(config: EnvConfig) -> Result<MemEnv, MemError> {
        let EnvConfig {
            page_size,
            arena_size,
            phys_origin,
            virt_origin,
        } = config;
        if page_size < WORD || !page_size.is_power_of_two() {
            return Err(MemError::InvalidArgument(
                "page size must be a power of two >= 8",
            ));
        }
        if arena_size == 0 || arena_size % page_size != 0 {
            return Err(MemError::InvalidArgument(
                "arena size must be a non-zero multiple of the page size",
            ));
        }
        if phys_origin % page_size != 0 || virt_origin % page_size != 0 {
            return Err(MemError::InvalidArgument(
                "address origins must be page aligned",
            ));
        }
        if phys_origin.checked_add(arena_size).is_none() {
            return Err(MemError::InvalidArgument(
                "arena overflows the physical address space",
            ));
        }
        Ok(MemEnv {
            config,
            memory: Arc::new(Memory::new(phys_origin, arena_size)),
            next_phys: phys_origin,
            next_virt: virt_origin,
            page_map: PageMap::new(page_size),
            regions: Vec::new(),
        })
    }

    pub fn with_defaults() -> MemEnv {
        MemEnv::new(EnvConfig::default()).expect("default configuration is valid")
    }

    pub fn config(&self) -> EnvConfig {
        self.config
    }

    pub fn page_size(&self) -> u64 {
        self.config.page_size
    }

    pub fn memory(&self) -> &Arc<Memory> {
        &self.memory
    }

    pub fn page_map(&self) -> &PageMap {
        &self.page_map
    }

    /// Bytes still available in the arena.
    pub fn available(&self) -> u64 {
        self.config.phys_origin + self.config.arena_size - self.next_phys
    }

    /// Live regions as `(virt_base, phys_base, size)`, in allocation order.
    pub fn regions(&self) -> &[(VirtAddr, PhysAddr, u64)] {
        &self.regions
    }

    /// Allocates a zeroed, physically contiguous region rounded up to whole
    /// pages. Consecutive regions are separated by one unmapped virtual guard
    /// page, so virtual and physical layouts are not simply offset copies of
    /// each other.
    pub fn allocate_dma(&mut self, size: u64) -> Result<DmaRegion, MemError> {
        if size == 0 {
            return Err(MemError::InvalidArgument(
                "allocation size must be non-zero",
            ));
        }
        let page = self.config.page_size;
        let pages = size.div_ceil(page);
        let span = pages.checked_mul(page).ok_or(MemError::OutOfMemory {
            requested: size,
            available: self.available(),
        })?;
        if span > self.available() {
            return Err(MemError::OutOfMemory {
                requested: size,
                available: self.available(),
            });
        }
        let phys_base = PhysAddr(self.next_phys);
        let virt_base = VirtAddr(self.next_virt);
        for i in 0..pages {
            self.page_map
                .insert(virt_base.0 / page + i, phys_base.0 / page + i);
        }
        self.next_phys += span;
        self.next_virt += span + page;
        self.regions.push((virt_base, phys_base, size));
        Ok(DmaRegion {
            virt_base,
            phys_base,
            size,
            memory: Arc::clone(&self.memory),
        })
    }

    fn region_of_virt(&self, addr: VirtAddr) -> Option<&(VirtAddr, PhysAddr, u64)> {
        self.regions
            .iter()
            .find(|(v, _, size)| addr.0 >= v.0 && addr.0 - v.0 < *size)
    }

    fn region_of_phys(&self, addr: PhysAddr) -> Option<&(VirtAddr, PhysAddr, u64)> {
        self.regions
            .iter()
            .find(|(_, p, size)| addr.0 >= p.0 && addr.0 - p.0 < *size)
    }

    pub fn virt_to_phys(&self, addr: VirtAddr) -> Result<PhysAddr, MemError> {
        if self.region_of_virt(addr).is_none() {
            return Err(MemError::TranslationFault(addr.0));
        }
        let page = self.config.page_size;
        let ppn = self
            .page_map
            .lookup_virt(addr.0 / page)
            .ok_or(MemError::TranslationFault(addr.0))?;
        Ok(PhysAddr(ppn * page + addr.0 % page))
    }

    pub fn phys_to_virt(&self, addr: PhysAddr) -> Result<VirtAddr, MemError> {
        if self.region_of_phys(addr).is_none() {
            return Err(MemError::TranslationFault(addr.0));
        }
        let page = self.config.page_size;
        let vpn = self
            .page_map
            .lookup_phys(addr.0 / page)
            .ok_or(MemError::TranslationFault(addr.0))?;
        Ok(VirtAddr(vpn * page + addr.0 % page))
    }
}
