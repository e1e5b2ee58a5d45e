use std::sync::Arc;

use crate::error::{Error, Result};
use crate::pstack::*;
use crate::region::Region;

/// Shrink when `capacity > SHRINK_FACTOR * size`.
pub const SHRINK_FACTOR: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayStackRoot {
    pub descriptor: u64,
    pub block_offset: u64,
    pub capacity: u64,
    /// Bytes occupied by frames, dummy included.
    pub size: u64,
}

/// Stack in one contiguous block that is reallocated when it overflows and
/// shrunk when it becomes sparse. The descriptor's location word names the
/// authoritative block; swinging it is the commit point of a resize.
#[derive(Debug)]
pub struct ArrayStack {
    region: Arc<Region>,
    index: usize,
    descriptor: u64,
    block: u64,
    capacity: u64,
    locs: Vec<FrameLoc>,
}

impl ArrayStack {
    pub fn init(region: &Arc<Region>, initial_capacity: u64) -> Result<ArrayStack> {
        let block = region.allocate(initial_capacity.max(FRAME_OVERHEAD as u64))?;
        let capacity = region.block_size(block)?;
        region.write_bytes(block, &Frame::dummy().encode())?;
        region.flush(block, FRAME_OVERHEAD as u64)?;
        let (descriptor, index) = publish_descriptor(region, TAG_ARRAY, block, 0)?;
        Ok(ArrayStack {
            region: region.clone(),
            index,
            descriptor,
            block,
            capacity,
            locs: vec![FrameLoc { offset: block, args_len: 0 }],
        })
    }

    pub fn open(region: &Arc<Region>, index: usize) -> Result<ArrayStack> {
        let descriptor = region.stack_root(index)?;
        let desc = read_descriptor(region, descriptor)?;
        if desc.tag != TAG_ARRAY {
            return Err(Error::CorruptStack(format!("stack {index} is not an array stack (tag {})", desc.tag)));
        }
        let block = desc.location;
        let capacity = region
            .block_size(block)
            .map_err(|_| Error::CorruptStack(format!("stack {index} names {block}, which is not a heap block")))?;
        let locs = scan_contiguous(region, block, capacity)?.into_iter().map(|(loc, _)| loc).collect();
        Ok(ArrayStack { region: region.clone(), index, descriptor, block, capacity, locs })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn size(&self) -> u64 {
        self.locs.last().unwrap().end() - self.block
    }

    pub fn root(&self) -> ArrayStackRoot {
        ArrayStackRoot {
            descriptor: self.descriptor,
            block_offset: self.block,
            capacity: self.capacity,
            size: self.size(),
        }
    }

    /// Moves the stack into a fresh block of at least `wanted` bytes: allocate,
    /// copy, flush the copy, swing and flush the root, then free the old block.
    fn resize(&mut self, wanted: u64) -> Result<()> {
        let size = self.size();
        let block = self.region.allocate(wanted)?;
        let capacity = self.region.block_size(block)?;
        let bytes = self.region.read_vec(self.block, size as usize)?;
        self.region.write_bytes(block, &bytes)?;
        self.region.flush(block, size)?;
        let slot = self.descriptor + DESC_LOCATION;
        self.region.write_u64(slot, block)?;
        self.region.flush(slot, 8)?;
        let old = std::mem::replace(&mut self.block, block);
        self.capacity = capacity;
        for loc in &mut self.locs {
            loc.offset = loc.offset - old + block;
        }
        self.region.free(old)
    }
}

impl PersistentStack for ArrayStack {
    fn region(&self) -> &Arc<Region> {
        &self.region
    }

    fn locs(&self) -> &[FrameLoc] {
        &self.locs
    }

    fn push(&mut self, function_id: u64, args: &[u8]) -> Result<()> {
        check_args(function_id, args)?;
        let encoded = encode_frame(function_id, args)?;
        let needed = self.size() + encoded.len() as u64;
        if needed > self.capacity {
            self.resize(needed.next_power_of_two())?;
        }
        let top = *self.locs.last().unwrap();
        commit_push(&self.region, top.end(), &encoded, top.marker_at())?;
        self.locs.push(FrameLoc { offset: top.end(), args_len: args.len() as u32 });
        Ok(())
    }

    fn pop(&mut self) -> Result<()> {
        if self.locs.len() < 2 {
            return Err(Error::Underflow);
        }
        let below = self.locs[self.locs.len() - 2];
        set_marker(&self.region, below.marker_at(), STACK_END)?;
        self.locs.pop();
        let size = self.size();
        if self.capacity > SHRINK_FACTOR * size {
            let target = (2 * size).next_power_of_two().max(self.region.line_size());
            if target < self.capacity {
                self.resize(target)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::{CrashPlan, RegionOptions};

    fn region() -> Arc<Region> {
        Arc::new(Region::anonymous(1 << 20, RegionOptions::simulated()).unwrap())
    }

    fn ids(s: &ArrayStack) -> Vec<u64> {
        s.frames().unwrap().iter().map(|f| f.function_id).collect()
    }

    #[test]
    fn grows_to_next_power_of_two() {
        let r = region();
        let mut s = ArrayStack::init(&r, 256).unwrap();
        assert_eq!(s.root().capacity, 256);
        s.push(1, &[3; 10]).unwrap();
        let before = s.frames().unwrap();
        // A 300-byte frame: 23 bytes of overhead plus 277 bytes of arguments.
        s.push(2, &[7; 277]).unwrap();
        assert_eq!(s.root().capacity, 512);
        let after = ArrayStack::open(&r, 0).unwrap();
        let contents = |fs: &[Frame]| fs.iter().map(|f| (f.function_id, f.args.clone())).collect::<Vec<_>>();
        assert_eq!(contents(&after.frames().unwrap()[..2]), contents(&before));
        assert_eq!(ids(&after), vec![0, 1, 2]);
    }

    #[test]
    fn shrinks_when_sparse() {
        let r = region();
        let mut s = ArrayStack::init(&r, 256).unwrap();
        s.push(1, &[0; 14]).unwrap(); // 37 bytes, size 60
        s.push(2, &[0; 100]).unwrap(); // size 183, still fits 256
        assert_eq!(s.root().capacity, 256);
        s.pop().unwrap();
        assert_eq!(s.root().size, 60);
        // 256 > 4 * 60, so the stack moved into a 128-byte block.
        assert_eq!(s.root().capacity, 128);
        assert_eq!(ids(&ArrayStack::open(&r, 0).unwrap()), vec![0, 1]);
    }

    #[test]
    fn resize_crash_points_never_lose_frames() {
        let setup = |r: &Arc<Region>| {
            let mut s = ArrayStack::init(r, 64).unwrap();
            s.push(1, &[1; 20]).unwrap();
            s
        };
        let total = {
            let r = region();
            let mut s = setup(&r);
            r.arm(CrashPlan::NONE);
            s.push(2, &[2; 40]).unwrap();
            r.flush_count()
        };
        assert!(total > 6, "growth path exercised");
        for k in 1..=total {
            let r = region();
            let mut s = setup(&r);
            r.arm(CrashPlan::at_flush(k));
            let res = s.push(2, &[2; 40]);
            r.crash();
            let got = ids(&ArrayStack::open(&r, 0).unwrap());
            if k < total {
                assert!(res.is_err());
                assert_eq!(got, vec![0, 1], "k={k}");
            } else {
                assert_eq!(got, vec![0, 1, 2], "k={k}");
            }
        }
    }
}
