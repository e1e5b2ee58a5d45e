//! Emulated NVRAM: a file-backed byte image with explicit line flushes.
//!
//! In [`CacheMode::Simulated`] every write lands in a volatile shadow of whole
//! cache lines and reaches the persistent image only when its line is flushed.
//! A [`CrashPlan`] is consulted after every line flush, which makes each
//! flush boundary a deterministic crash point. [`CacheMode::Direct`] writes
//! straight into the mapping and is meant for runs that are crashed from the
//! outside by killing the process.
//!
//! Everything stored inside the image refers to other parts of the image by
//! offset; the mapping address is only valid for the current process.

mod alloc;
mod crash;
pub mod layout;

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use memmap2::MmapMut;

pub use crash::{CrashMode, CrashPlan, TornOrder};

use crate::error::{Error, Result};
use crash::PlanState;
use layout::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Writes go straight to the mapping; flush is an `msync`.
    Direct,
    /// Writes are buffered per cache line until flushed.
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpenMode {
    Create,
    Attach,
}

#[derive(Debug, Clone, Copy)]
pub struct RegionOptions {
    pub cache_line_size: usize,
    pub cache_mode: CacheMode,
}

impl Default for RegionOptions {
    fn default() -> Self {
        RegionOptions { cache_line_size: DEFAULT_LINE_SIZE, cache_mode: CacheMode::Simulated }
    }
}

impl RegionOptions {
    pub fn simulated() -> Self {
        Self::default()
    }

    pub fn direct() -> Self {
        RegionOptions { cache_mode: CacheMode::Direct, ..Self::default() }
    }
}

/// Persistence events, recorded while tracing is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Write {
        offset: u64,
        len: u64,
    },
    Flush {
        offset: u64,
        len: u64,
    },
    /// Atomic 8-byte update that was flushed as part of the same step.
    AtomicFlush {
        offset: u64,
    },
    Crash,
}

/// Called after every completed line flush with the run's flush count.
pub type FlushHook = Arc<dyn Fn(u64) + Send + Sync>;

struct Volatile {
    shadow: HashMap<u64, Box<[u8]>>,
    plan: PlanState,
}

pub struct Region {
    map: MmapMut,
    file_backed: bool,
    base: *mut u8,
    size: u64,
    line: u64,
    mode: CacheMode,
    state: Mutex<Volatile>,
    flush_counter: AtomicU64,
    crashed: AtomicBool,
    alloc_lock: Mutex<()>,
    tracing: AtomicBool,
    trace: Mutex<Vec<TraceEvent>>,
    hook: RwLock<Option<FlushHook>>,
}

// SAFETY: `base` points into `map`, which lives as long as the region and is
// never remapped. Simulated-mode image accesses are serialized by `state`.
// Direct-mode callers only race on the same bytes through the atomic word
// accessors; everything else is partitioned between owners.
unsafe impl Send for Region {}
unsafe impl Sync for Region {}

impl std::fmt::Debug for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Region")
            .field("size", &self.size)
            .field("line", &self.line)
            .field("mode", &self.mode)
            .field("file_backed", &self.file_backed)
            .finish()
    }
}

fn validate_geometry(size: u64, line: usize) -> Result<()> {
    if !line.is_power_of_two() || !(MIN_LINE_SIZE..=MAX_LINE_SIZE).contains(&line) {
        return Err(Error::Config(format!(
            "cache line size {line} must be a power of two in [{MIN_LINE_SIZE}, {MAX_LINE_SIZE}]"
        )));
    }
    if !size.is_multiple_of(line as u64) {
        return Err(Error::Config(format!("region size {size} is not a multiple of the line size {line}")));
    }
    if size < heap_start(line) + 2 * line as u64 {
        return Err(Error::Config(format!("region size {size} is too small")));
    }
    Ok(())
}

impl Region {
    pub fn open(path: impl AsRef<Path>, size: u64, mode: OpenMode, opts: RegionOptions) -> Result<Region> {
        match mode {
            OpenMode::Create => Region::create(path, size, opts),
            OpenMode::Attach => Region::attach(path, opts.cache_mode),
        }
    }

    /// Creates a new image file, preallocated to `size` bytes, and formats it.
    pub fn create(path: impl AsRef<Path>, size: u64, opts: RegionOptions) -> Result<Region> {
        validate_geometry(size, opts.cache_line_size)?;
        let file = OpenOptions::new().read(true).write(true).create_new(true).open(path)?;
        file.set_len(size)?;
        // SAFETY: the file was just created by us and is not truncated while mapped.
        let map = unsafe { MmapMut::map_mut(&file)? };
        let region = Region::from_map(map, true, size, opts.cache_line_size, opts.cache_mode);
        region.format()?;
        Ok(region)
    }

    /// Maps an existing image. No volatile state is rebuilt: the shadow is empty.
    pub fn attach(path: impl AsRef<Path>, cache_mode: CacheMode) -> Result<Region> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        let len = file.metadata()?.len();
        if len < HEADER_LEN {
            return Err(Error::CorruptImage(format!("file of {len} bytes is shorter than the header")));
        }
        // SAFETY: the image file is owned by this program; see `create`.
        let map = unsafe { MmapMut::map_mut(&file)? };
        let (size, line) = validate_header(&map, len)?;
        Ok(Region::from_map(map, true, size, line, cache_mode))
    }

    /// A formatted region backed by anonymous memory. Survives simulated
    /// crashes (which only drop the shadow) but not the process.
    pub fn anonymous(size: u64, opts: RegionOptions) -> Result<Region> {
        validate_geometry(size, opts.cache_line_size)?;
        let map = MmapMut::map_anon(size as usize)?;
        let region = Region::from_map(map, false, size, opts.cache_line_size, opts.cache_mode);
        region.format()?;
        Ok(region)
    }

    /// Anonymous region holding a copy of a persistent image.
    pub fn from_image(image: &[u8], cache_mode: CacheMode) -> Result<Region> {
        let (size, line) = validate_header(image, image.len() as u64)?;
        let mut map = MmapMut::map_anon(image.len())?;
        map.copy_from_slice(image);
        Ok(Region::from_map(map, false, size, line, cache_mode))
    }

    fn from_map(mut map: MmapMut, file_backed: bool, size: u64, line: usize, mode: CacheMode) -> Region {
        let base = map.as_mut_ptr();
        Region {
            map,
            file_backed,
            base,
            size,
            line: line as u64,
            mode,
            state: Mutex::new(Volatile { shadow: HashMap::new(), plan: PlanState::new(CrashPlan::NONE) }),
            flush_counter: AtomicU64::new(0),
            crashed: AtomicBool::new(false),
            alloc_lock: Mutex::new(()),
            tracing: AtomicBool::new(false),
            trace: Mutex::new(Vec::new()),
            hook: RwLock::new(None),
        }
    }

    fn format(&self) -> Result<()> {
        let start = heap_start(self.line as usize);
        self.write_bytes(0, &vec![0u8; start as usize])?;
        self.write_bytes(MAGIC_OFFSET, &MAGIC)?;
        self.write_bytes(VERSION_OFFSET, &VERSION.to_le_bytes())?;
        self.write_bytes(LINE_SIZE_OFFSET, &(self.line as u16).to_le_bytes())?;
        self.write_bytes(REGION_SIZE_OFFSET, &self.size.to_le_bytes())?;
        self.write_bytes(ROOT_DIR_PTR_OFFSET, &ROOT_DIR_OFFSET.to_le_bytes())?;
        self.write_bytes(HEAP_HEAD_OFFSET, &start.to_le_bytes())?;
        self.flush_quiet(0, start)
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn line_size(&self) -> u64 {
        self.line
    }

    pub fn cache_mode(&self) -> CacheMode {
        self.mode
    }

    /// Process-local address of the mapping. Never store this in the image.
    pub fn map_base(&self) -> usize {
        self.base as usize
    }

    fn check_range(&self, offset: u64, len: u64) -> Result<()> {
        match offset.checked_add(len) {
            Some(end) if end <= self.size => Ok(()),
            _ => Err(Error::Bounds { offset, len, size: self.size }),
        }
    }

    fn check_alive(&self) -> Result<()> {
        if self.crashed.load(Ordering::Acquire) {
            Err(Error::Crashed)
        } else {
            Ok(())
        }
    }

    fn record(&self, event: TraceEvent) {
        if self.tracing.load(Ordering::Relaxed) {
            self.trace.lock().unwrap().push(event);
        }
    }

    fn lock_state(&self) -> MutexGuard<'_, Volatile> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn image_line(&self, line: u64) -> &[u8] {
        // SAFETY: line index is within the region (callers checked the range).
        unsafe { std::slice::from_raw_parts(self.base.add((line * self.line) as usize), self.line as usize) }
    }

    /// Splits `[offset, offset+len)` into `(line, start_in_line, chunk_len)`.
    fn chunks(&self, offset: u64, len: u64) -> impl Iterator<Item = (u64, usize, usize)> + '_ {
        let end = offset + len;
        let mut pos = offset;
        std::iter::from_fn(move || {
            if pos >= end {
                return None;
            }
            let line = pos / self.line;
            let start = (pos % self.line) as usize;
            let n = ((self.line - start as u64).min(end - pos)) as usize;
            pos += n as u64;
            Some((line, start, n))
        })
    }

    pub fn read_bytes(&self, offset: u64, buf: &mut [u8]) -> Result<()> {
        self.check_range(offset, buf.len() as u64)?;
        self.check_alive()?;
        match self.mode {
            CacheMode::Direct => {
                // SAFETY: range checked above.
                unsafe {
                    std::ptr::copy_nonoverlapping(self.base.add(offset as usize), buf.as_mut_ptr(), buf.len());
                }
            }
            CacheMode::Simulated => {
                let st = self.lock_state();
                let mut at = 0usize;
                for (line, start, n) in self.chunks(offset, buf.len() as u64) {
                    let src = match st.shadow.get(&line) {
                        Some(cached) => &cached[start..start + n],
                        None => &self.image_line(line)[start..start + n],
                    };
                    buf[at..at + n].copy_from_slice(src);
                    at += n;
                }
            }
        }
        Ok(())
    }

    pub fn read_vec(&self, offset: u64, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.read_bytes(offset, &mut buf)?;
        Ok(buf)
    }

    pub fn read_u8(&self, offset: u64) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_bytes(offset, &mut b)?;
        Ok(b[0])
    }

    pub fn read_u32(&self, offset: u64) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_bytes(offset, &mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_u64(&self, offset: u64) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_bytes(offset, &mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn write_bytes(&self, offset: u64, data: &[u8]) -> Result<()> {
        self.check_range(offset, data.len() as u64)?;
        self.check_alive()?;
        self.record(TraceEvent::Write { offset, len: data.len() as u64 });
        match self.mode {
            CacheMode::Direct => {
                // SAFETY: range checked above.
                unsafe {
                    std::ptr::copy_nonoverlapping(data.as_ptr(), self.base.add(offset as usize), data.len());
                }
            }
            CacheMode::Simulated => {
                let mut st = self.lock_state();
                if self.crashed.load(Ordering::Acquire) {
                    return Err(Error::Crashed);
                }
                let mut at = 0usize;
                for (line, start, n) in self.chunks(offset, data.len() as u64) {
                    let cached =
                        st.shadow.entry(line).or_insert_with(|| self.image_line(line).to_vec().into_boxed_slice());
                    cached[start..start + n].copy_from_slice(&data[at..at + n]);
                    at += n;
                }
            }
        }
        Ok(())
    }

    pub fn write_u8(&self, offset: u64, v: u8) -> Result<()> {
        self.write_bytes(offset, &[v])
    }

    pub fn write_u32(&self, offset: u64, v: u32) -> Result<()> {
        self.write_bytes(offset, &v.to_le_bytes())
    }

    /// Writes a little-endian u64. Aligned direct-mode stores are single atomic
    /// stores, so a killed process never leaves a torn word.
    pub fn write_u64(&self, offset: u64, v: u64) -> Result<()> {
        if self.mode == CacheMode::Direct && offset.is_multiple_of(8) {
            self.check_range(offset, 8)?;
            self.check_alive()?;
            self.record(TraceEvent::Write { offset, len: 8 });
            self.atomic_at(offset).store(v.to_le(), Ordering::SeqCst);
            return Ok(());
        }
        self.write_bytes(offset, &v.to_le_bytes())
    }

    fn atomic_at(&self, offset: u64) -> &AtomicU64 {
        debug_assert_eq!(offset % 8, 0);
        // SAFETY: offset is 8-aligned and in range; the mapping is page aligned.
        unsafe { &*(self.base.add(offset as usize) as *const AtomicU64) }
    }

    fn check_word(&self, offset: u64) -> Result<()> {
        self.check_range(offset, 8)?;
        if !offset.is_multiple_of(8) {
            return Err(Error::Config(format!("atomic word at unaligned offset {offset}")));
        }
        Ok(())
    }

    /// Single-access read of an aligned 8-byte word.
    pub fn load_u64(&self, offset: u64) -> Result<u64> {
        self.check_word(offset)?;
        self.check_alive()?;
        match self.mode {
            CacheMode::Direct => Ok(u64::from_le(self.atomic_at(offset).load(Ordering::SeqCst))),
            CacheMode::Simulated => self.read_u64(offset),
        }
    }

    /// Compare-and-swap of an aligned word, immediately flushed. In simulated
    /// mode the update and its line flush form one step, so no other thread can
    /// observe the new value before it is persistent. Returns `Ok(Err(actual))`
    /// when the comparison fails; nothing is written or flushed then.
    pub fn cas_flush_u64(&self, offset: u64, current: u64, new: u64) -> Result<std::result::Result<(), u64>> {
        self.check_word(offset)?;
        self.check_alive()?;
        let line = offset / self.line;
        let count = match self.mode {
            CacheMode::Direct => {
                if let Err(actual) = self.atomic_at(offset).compare_exchange(
                    current.to_le(),
                    new.to_le(),
                    Ordering::SeqCst,
                    Ordering::SeqCst,
                ) {
                    return Ok(Err(u64::from_le(actual)));
                }
                self.record(TraceEvent::AtomicFlush { offset });
                let mut st = self.lock_state();
                self.complete_line_flush(&mut st, line, line + 1..line + 1)?
            }
            CacheMode::Simulated => {
                let mut st = self.lock_state();
                if self.crashed.load(Ordering::Acquire) {
                    return Err(Error::Crashed);
                }
                let start = (offset % self.line) as usize;
                let cached = st.shadow.entry(line).or_insert_with(|| self.image_line(line).to_vec().into_boxed_slice());
                let actual = u64::from_le_bytes(cached[start..start + 8].try_into().unwrap());
                if actual != current {
                    return Ok(Err(actual));
                }
                cached[start..start + 8].copy_from_slice(&new.to_le_bytes());
                self.record(TraceEvent::AtomicFlush { offset });
                self.complete_line_flush(&mut st, line, line + 1..line + 1)?
            }
        };
        self.notify(count);
        Ok(Ok(()))
    }

    /// Atomic store of an aligned word followed by the flush of its line, as one step.
    pub fn store_flush_u64(&self, offset: u64, v: u64) -> Result<()> {
        self.check_word(offset)?;
        self.check_alive()?;
        let line = offset / self.line;
        let count = {
            let mut st = self.lock_state();
            if self.crashed.load(Ordering::Acquire) {
                return Err(Error::Crashed);
            }
            match self.mode {
                CacheMode::Direct => self.atomic_at(offset).store(v.to_le(), Ordering::SeqCst),
                CacheMode::Simulated => {
                    let start = (offset % self.line) as usize;
                    let cached =
                        st.shadow.entry(line).or_insert_with(|| self.image_line(line).to_vec().into_boxed_slice());
                    cached[start..start + 8].copy_from_slice(&v.to_le_bytes());
                }
            }
            self.record(TraceEvent::AtomicFlush { offset });
            self.complete_line_flush(&mut st, line, line + 1..line + 1)?
        };
        self.notify(count);
        Ok(())
    }

    /// Flushes every line overlapping `[offset, offset+len)`, in ascending order.
    pub fn flush(&self, offset: u64, len: u64) -> Result<()> {
        self.flush_lines(offset, len, true)
    }

    /// Flush that does not call the flush hook. Used while internal locks are held.
    pub(crate) fn flush_quiet(&self, offset: u64, len: u64) -> Result<()> {
        self.flush_lines(offset, len, false)
    }

    fn flush_lines(&self, offset: u64, len: u64, notify: bool) -> Result<()> {
        self.check_range(offset, len)?;
        if len == 0 {
            return Ok(());
        }
        self.record(TraceEvent::Flush { offset, len });
        let first = offset / self.line;
        let last = (offset + len - 1) / self.line;
        for line in first..=last {
            let count = {
                let mut st = self.lock_state();
                if self.crashed.load(Ordering::Acquire) {
                    return Err(Error::Crashed);
                }
                self.complete_line_flush(&mut st, line, line + 1..last + 1)?
            };
            if notify {
                self.notify(count);
            }
        }
        Ok(())
    }

    /// Persists one line, bumps the flush counter and consults the crash plan.
    /// `rest` are the lines of the same flush that have not been persisted yet.
    fn complete_line_flush(&self, st: &mut Volatile, line: u64, rest: std::ops::Range<u64>) -> Result<u64> {
        self.persist_line(st, line);
        let count = self.flush_counter.fetch_add(1, Ordering::AcqRel) + 1;
        if st.plan.should_crash(count) {
            for later in rest {
                if st.plan.torn_line_survives() {
                    self.persist_line(st, later);
                }
            }
            self.crashed.store(true, Ordering::Release);
            self.record(TraceEvent::Crash);
            return Err(Error::Crashed);
        }
        Ok(count)
    }

    fn persist_line(&self, st: &mut Volatile, line: u64) {
        match self.mode {
            CacheMode::Simulated => {
                if let Some(cached) = st.shadow.remove(&line) {
                    // SAFETY: line is in range; image writes are serialized by `state`.
                    unsafe {
                        std::ptr::copy_nonoverlapping(
                            cached.as_ptr(),
                            self.base.add((line * self.line) as usize),
                            self.line as usize,
                        );
                    }
                }
            }
            CacheMode::Direct => {
                if self.file_backed {
                    // Durability against power loss is the OS's business; a
                    // failed msync does not change what a killed process leaves.
                    let _ = self.map.flush_async_range((line * self.line) as usize, self.line as usize);
                }
            }
        }
    }

    fn notify(&self, count: u64) {
        let hook = self.hook.read().unwrap_or_else(|e| e.into_inner()).clone();
        if let Some(hook) = hook {
            hook(count);
        }
    }

    /// Installs (or removes) the callback run after every line flush.
    pub fn set_flush_hook(&self, hook: Option<FlushHook>) {
        *self.hook.write().unwrap_or_else(|e| e.into_inner()) = hook;
    }

    /// Arms a crash plan and restarts the flush count for the current run.
    pub fn arm(&self, plan: CrashPlan) {
        let mut st = self.lock_state();
        st.plan = PlanState::new(plan);
        self.flush_counter.store(0, Ordering::Release);
    }

    pub fn crash_plan(&self) -> CrashPlan {
        self.lock_state().plan.plan()
    }

    /// Completed line flushes since the last `arm` or `crash`.
    pub fn flush_count(&self) -> u64 {
        self.flush_counter.load(Ordering::Acquire)
    }

    pub fn is_crashed(&self) -> bool {
        self.crashed.load(Ordering::Acquire)
    }

    /// Marks the system as crashed right now, as if the crash plan had fired.
    pub fn inject_crash(&self) {
        self.crashed.store(true, Ordering::Release);
        self.record(TraceEvent::Crash);
    }

    /// Restarts after a crash: the volatile cache is discarded, leaving the
    /// persistent image as the only survivor. A random crash plan stays armed;
    /// a fired `AtFlush` plan does not refire.
    pub fn crash(&self) {
        let mut st = self.lock_state();
        st.shadow.clear();
        self.crashed.store(false, Ordering::Release);
        self.flush_counter.store(0, Ordering::Release);
    }

    /// Number of lines with unflushed data (simulated mode).
    pub fn dirty_lines(&self) -> usize {
        self.lock_state().shadow.len()
    }

    /// Copy of the persistent image, excluding anything still in the shadow.
    pub fn image_snapshot(&self) -> Vec<u8> {
        let _st = self.lock_state();
        // SAFETY: whole mapping; simulated-mode image writers hold `state`.
        unsafe { std::slice::from_raw_parts(self.base, self.size as usize).to_vec() }
    }

    pub fn set_tracing(&self, on: bool) {
        self.tracing.store(on, Ordering::Relaxed);
    }

    pub fn take_trace(&self) -> Vec<TraceEvent> {
        std::mem::take(&mut *self.trace.lock().unwrap())
    }

    /// Synchronously writes the whole mapping back to its file.
    pub fn sync(&self) -> Result<()> {
        if self.file_backed {
            self.map.flush()?;
        }
        Ok(())
    }

    // Root directory.

    pub fn n_stacks(&self) -> Result<usize> {
        Ok(self.read_u32(N_STACKS_OFFSET)? as usize)
    }

    pub fn stack_root(&self, index: usize) -> Result<u64> {
        if index >= self.n_stacks()? {
            return Err(Error::UninitializedStack(index));
        }
        let root = self.read_u64(STACK_ROOTS_OFFSET + 8 * index as u64)?;
        if root == 0 || root >= self.size {
            return Err(Error::CorruptImage(format!("stack root {index} has offset {root}")));
        }
        Ok(root)
    }

    /// Appends a stack descriptor to the directory. The slot is flushed before
    /// the count, so a crash in between leaves the stack unregistered.
    pub fn register_stack_root(&self, descriptor: u64) -> Result<usize> {
        let _guard = self.alloc_lock.lock().unwrap_or_else(|e| e.into_inner());
        let n = self.n_stacks()?;
        if n >= MAX_STACKS {
            return Err(Error::TooManyStacks(MAX_STACKS));
        }
        let slot = STACK_ROOTS_OFFSET + 8 * n as u64;
        self.write_u64(slot, descriptor)?;
        self.flush_quiet(slot, 8)?;
        self.write_u32(N_STACKS_OFFSET, n as u32 + 1)?;
        self.flush_quiet(N_STACKS_OFFSET, 4)?;
        Ok(n)
    }

    pub fn heap_head(&self) -> Result<u64> {
        self.read_u64(HEAP_HEAD_OFFSET)
    }

    pub fn rcas_root(&self) -> Result<u64> {
        self.read_u64(RCAS_ROOT_OFFSET)
    }

    pub fn set_rcas_root(&self, offset: u64) -> Result<()> {
        self.write_u64(RCAS_ROOT_OFFSET, offset)?;
        self.flush_quiet(RCAS_ROOT_OFFSET, 8)
    }

    pub fn task_table_root(&self) -> Result<u64> {
        self.read_u64(TASK_TABLE_ROOT_OFFSET)
    }

    pub fn set_task_table_root(&self, offset: u64) -> Result<()> {
        self.write_u64(TASK_TABLE_ROOT_OFFSET, offset)?;
        self.flush_quiet(TASK_TABLE_ROOT_OFFSET, 8)
    }
}

fn validate_header(image: &[u8], len: u64) -> Result<(u64, usize)> {
    if image.len() < HEADER_LEN as usize {
        return Err(Error::CorruptImage("image shorter than the header".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes(image[o..o + 2].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(image[o..o + 8].try_into().unwrap());
    if image[0..4] != MAGIC {
        return Err(Error::CorruptImage(format!("bad magic {:02x?}", &image[0..4])));
    }
    let version = u16_at(VERSION_OFFSET as usize);
    if version != VERSION {
        return Err(Error::CorruptImage(format!("unsupported version {version}")));
    }
    let line = u16_at(LINE_SIZE_OFFSET as usize) as usize;
    let size = u64_at(REGION_SIZE_OFFSET as usize);
    if size != len {
        return Err(Error::CorruptImage(format!("header says {size} bytes, file has {len}")));
    }
    validate_geometry(size, line).map_err(|e| Error::CorruptImage(e.to_string()))?;
    if u64_at(ROOT_DIR_PTR_OFFSET as usize) != ROOT_DIR_OFFSET {
        return Err(Error::CorruptImage("root directory is not at offset 64".into()));
    }
    let heap_head = u64_at(HEAP_HEAD_OFFSET as usize);
    if heap_head < heap_start(line) || heap_head > size {
        return Err(Error::CorruptImage(format!("heap head {heap_head} out of range")));
    }
    Ok((size, line))
}
