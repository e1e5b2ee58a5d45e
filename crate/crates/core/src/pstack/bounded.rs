use std::sync::Arc;

use super::frame::{encode_frame, Frame, FrameLoc, FRAME_OVERHEAD, STACK_END};
use super::stack::*;
use crate::error::{Error, Result};
use crate::region::Region;

/// Where a bounded stack lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackRoot {
    /// Position in the root directory.
    pub index: usize,
    /// Offset of the stack descriptor.
    pub descriptor: u64,
    /// Offset of the first (dummy) frame.
    pub base: u64,
    pub capacity: u64,
}

/// Fixed-capacity persistent stack.
#[derive(Debug)]
pub struct BoundedStack {
    region: Arc<Region>,
    root: StackRoot,
    locs: Vec<FrameLoc>,
}

impl BoundedStack {
    /// Writes the dummy frame, flushes it, and registers the stack.
    pub fn init(region: &Arc<Region>, capacity: u64) -> Result<BoundedStack> {
        if capacity < FRAME_OVERHEAD as u64 {
            return Err(Error::Config(format!("stack capacity {capacity} cannot hold the dummy frame")));
        }
        let base = region.allocate(capacity)?;
        region.write_bytes(base, &Frame::dummy().encode())?;
        region.flush(base, FRAME_OVERHEAD as u64)?;
        let (descriptor, index) = publish_descriptor(region, TAG_BOUNDED, base, capacity)?;
        Ok(BoundedStack {
            region: region.clone(),
            root: StackRoot { index, descriptor, base, capacity },
            locs: vec![FrameLoc { offset: base, args_len: 0 }],
        })
    }

    pub fn open(region: &Arc<Region>, index: usize) -> Result<BoundedStack> {
        let root = read_root(region, index)?;
        let locs = scan_contiguous(region, root.base, root.capacity)?.into_iter().map(|(loc, _)| loc).collect();
        Ok(BoundedStack { region: region.clone(), root, locs })
    }

    pub fn root(&self) -> StackRoot {
        self.root
    }

    fn free_space(&self) -> u64 {
        self.root.base + self.root.capacity - self.locs.last().unwrap().end()
    }
}

pub(crate) fn read_root(region: &Region, index: usize) -> Result<StackRoot> {
    let descriptor = region.stack_root(index)?;
    let desc = read_descriptor(region, descriptor)?;
    if desc.tag != TAG_BOUNDED {
        return Err(Error::CorruptStack(format!("stack {index} is not a bounded stack (tag {})", desc.tag)));
    }
    Ok(StackRoot { index, descriptor, base: desc.location, capacity: desc.param })
}

/// Parses stack `root.index` from the image, bottom to top.
pub fn parse_stack(region: &Region, root: &StackRoot) -> Result<Vec<Frame>> {
    Ok(scan_contiguous(region, root.base, root.capacity)?.into_iter().map(|(_, f)| f).collect())
}

impl PersistentStack for BoundedStack {
    fn region(&self) -> &Arc<Region> {
        &self.region
    }

    fn locs(&self) -> &[FrameLoc] {
        &self.locs
    }

    fn push(&mut self, function_id: u64, args: &[u8]) -> Result<()> {
        check_args(function_id, args)?;
        let encoded = encode_frame(function_id, args)?;
        let available = self.free_space();
        if encoded.len() as u64 > available {
            return Err(Error::Overflow { needed: encoded.len() as u64, available });
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
        Ok(())
    }
}
