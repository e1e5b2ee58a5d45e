//! Minimal persistent allocator: power-of-two size classes with per-class
//! free lists rooted in the directory, falling back to bumping `heap_head`.
//!
//! Each block is preceded by one header line holding its size and a tag. A
//! crash between an allocation and the caller recording the offset leaks the
//! block; the image stays parseable.

use super::layout::{heap_start, FREE_HEADS_OFFSET, HEAP_HEAD_OFFSET, SIZE_CLASSES};
use super::Region;
use crate::error::{Error, Result};

const BLOCK_TAG: u64 = 0x4b43_4f4c_4247_564e; // "NVGBLOCK"

impl Region {
    fn class_of(&self, len: u64) -> Result<(usize, u64)> {
        let size = len.max(self.line).checked_next_power_of_two().ok_or(Error::OutOfMemory { requested: len })?;
        let class = (size / self.line).trailing_zeros() as usize;
        if class >= SIZE_CLASSES {
            return Err(Error::OutOfMemory { requested: len });
        }
        Ok((class, size))
    }

    /// Allocates a line-aligned block of at least `len` bytes.
    pub fn allocate(&self, len: u64) -> Result<u64> {
        if len == 0 {
            return Err(Error::Config("cannot allocate zero bytes".into()));
        }
        let (class, size) = self.class_of(len)?;
        let _guard = self.alloc_lock.lock().unwrap_or_else(|e| e.into_inner());
        let head_slot = FREE_HEADS_OFFSET + 8 * class as u64;
        let head = self.read_u64(head_slot)?;
        if head != 0 {
            let next = self.read_u64(head)?;
            self.write_u64(head_slot, next)?;
            self.flush_quiet(head_slot, 8)?;
            return Ok(head);
        }
        let header = self.heap_head()?;
        let block = header + self.line;
        let end = block + size;
        if end > self.size {
            return Err(Error::OutOfMemory { requested: len });
        }
        self.write_u64(header, size)?;
        self.write_u64(header + 8, BLOCK_TAG)?;
        self.flush_quiet(header, 16)?;
        self.write_u64(HEAP_HEAD_OFFSET, end)?;
        self.flush_quiet(HEAP_HEAD_OFFSET, 8)?;
        Ok(block)
    }

    /// Size of an allocated block, from its header line.
    pub fn block_size(&self, block: u64) -> Result<u64> {
        if !block.is_multiple_of(self.line) || block < heap_start(self.line as usize) + self.line || block >= self.size
        {
            return Err(Error::BadFree(block));
        }
        let header = block - self.line;
        if self.read_u64(header + 8)? != BLOCK_TAG {
            return Err(Error::BadFree(block));
        }
        let size = self.read_u64(header)?;
        if !size.is_power_of_two() || size < self.line || block + size > self.size {
            return Err(Error::BadFree(block));
        }
        Ok(size)
    }

    /// Pushes a block onto the free list of its size class.
    pub fn free(&self, block: u64) -> Result<()> {
        let _guard = self.alloc_lock.lock().unwrap_or_else(|e| e.into_inner());
        let size = self.block_size(block)?;
        let (class, _) = self.class_of(size)?;
        let head_slot = FREE_HEADS_OFFSET + 8 * class as u64;
        let head = self.read_u64(head_slot)?;
        self.write_u64(block, head)?;
        self.flush_quiet(block, 8)?;
        self.write_u64(head_slot, block)?;
        self.flush_quiet(head_slot, 8)
    }
}

#[cfg(test)]
mod tests {
    use crate::error::Error;
    use crate::region::{CrashPlan, Region, RegionOptions};

    fn region() -> Region {
        Region::anonymous(1 << 20, RegionOptions::simulated()).unwrap()
    }

    #[test]
    fn allocations_are_aligned_and_disjoint() {
        let r = region();
        let a = r.allocate(64).unwrap();
        let b = r.allocate(64).unwrap();
        assert_eq!(a % 64, 0);
        assert_eq!(b % 64, 0);
        assert!(a + 64 <= b || b + 64 <= a);
        assert_eq!(r.block_size(a).unwrap(), 64);
        assert_eq!(r.block_size(r.allocate(65).unwrap()).unwrap(), 128);
    }

    #[test]
    fn freed_block_is_reused() {
        let r = region();
        let a = r.allocate(200).unwrap();
        r.free(a).unwrap();
        assert_eq!(r.allocate(256).unwrap(), a);
        assert_ne!(r.allocate(256).unwrap(), a);
    }

    #[test]
    fn zero_and_oversized_requests_fail() {
        let r = region();
        assert!(matches!(r.allocate(0), Err(Error::Config(_))));
        assert!(matches!(r.allocate(1 << 20), Err(Error::OutOfMemory { .. })));
    }

    #[test]
    fn free_rejects_foreign_offsets() {
        let r = region();
        let a = r.allocate(64).unwrap();
        assert!(matches!(r.free(a + 64), Err(Error::BadFree(_))));
        assert!(matches!(r.free(3), Err(Error::BadFree(_))));
    }

    #[test]
    fn crash_around_allocate_leaves_parseable_image() {
        // Enumerate every crash point of an allocation; afterwards the image
        // must reattach and the allocator must keep handing out fresh blocks.
        let total = {
            let r = region();
            r.arm(CrashPlan::NONE);
            r.allocate(64).unwrap();
            r.flush_count()
        };
        assert_eq!(total, 2);
        for k in 1..=total {
            let r = region();
            let first = r.allocate(64).unwrap();
            r.arm(CrashPlan::at_flush(k));
            let res = r.allocate(64);
            assert!(matches!(res, Err(Error::Crashed)));
            r.crash();
            let again = Region::from_image(&r.image_snapshot(), r.cache_mode()).unwrap();
            let next = again.allocate(64).unwrap();
            assert!(next > first);
            if k == 2 {
                // heap_head advanced before the caller saw the offset: leaked.
                assert_eq!(next, first + 2 * 128);
            }
        }
    }
}
