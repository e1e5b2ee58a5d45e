use std::sync::Arc;

use super::bounded::BoundedStack;
use super::frame::*;
use crate::error::{Error, Result};
use crate::region::Region;
use crate::unbounded::{ArrayStack, BlockListStack};

/// Stack descriptor, one line in the heap, referenced from the root directory:
/// `+0 tag u64`, `+8 location u64`, `+16 parameter u64`.
/// Only the location word is ever rewritten after registration.
pub(crate) const DESC_TAG: u64 = 0;
pub(crate) const DESC_LOCATION: u64 = 8;
pub(crate) const DESC_PARAM: u64 = 16;
pub(crate) const DESC_LEN: u64 = 24;

pub const TAG_BOUNDED: u64 = 1;
pub const TAG_ARRAY: u64 = 2;
pub const TAG_BLOCK_LIST: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackStrategy {
    /// Fixed-size contiguous area.
    Bounded { capacity: u64 },
    /// Contiguous block that is reallocated on overflow and shrunk when sparse.
    Array { initial_capacity: u64 },
    /// Chain of blocks linked by pointer frames.
    BlockList { block_size: u64 },
}

impl Default for StackStrategy {
    fn default() -> Self {
        StackStrategy::Bounded { capacity: 16 * 1024 }
    }
}

/// Operations shared by every stack strategy.
///
/// Each stack is owned by one worker at a time. The volatile frame index is
/// rebuilt by parsing when a stack is opened.
pub trait PersistentStack {
    fn region(&self) -> &Arc<Region>;

    /// Locations of the ordinary frames, bottom (dummy) first.
    fn locs(&self) -> &[FrameLoc];

    /// Pushes a frame. The invocation linearizes when the previous top's
    /// marker flip is flushed.
    fn push(&mut self, function_id: u64, args: &[u8]) -> Result<()>;

    /// Removes the top frame. The dummy frame is never popped.
    fn pop(&mut self) -> Result<()>;

    fn depth(&self) -> usize {
        self.locs().len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let loc = self.locs().get(index).ok_or(Error::Underflow)?;
        read_frame(self.region(), *loc)
    }

    fn top(&self) -> Result<Frame> {
        self.frame(self.depth() - 1)
    }

    fn frames(&self) -> Result<Vec<Frame>> {
        (0..self.depth()).map(|i| self.frame(i)).collect()
    }

    /// Stores the callee's answer in the caller's (penultimate) frame: answer
    /// bytes first, then the validity byte, each flushed.
    fn write_answer(&mut self, value: u64) -> Result<()> {
        let locs = self.locs();
        if locs.len() < 3 {
            return Err(Error::NoCaller);
        }
        let caller = locs[locs.len() - 2];
        let region = self.region();
        region.write_bytes(caller.answer_at(), &value.to_le_bytes())?;
        region.flush(caller.answer_at(), 8)?;
        region.write_u8(caller.valid_at(), 1)?;
        region.flush(caller.valid_at(), 1)
    }

    /// Clears the top frame's answer slot before it calls a new callee.
    fn reset_answer(&mut self) -> Result<()> {
        let top = *self.locs().last().ok_or(Error::Underflow)?;
        let region = self.region();
        if region.read_u8(top.valid_at())? != 0 {
            region.write_u8(top.valid_at(), 0)?;
            region.flush(top.valid_at(), 1)?;
        }
        Ok(())
    }

    /// Answer slot of the top frame (what its last callee returned).
    fn top_answer(&self) -> Result<Option<u64>> {
        let top = *self.locs().last().ok_or(Error::Underflow)?;
        answer_at(self.region(), top)
    }

    /// Answer slot of frame `index`.
    fn answer_of(&self, index: usize) -> Result<Option<u64>> {
        let loc = *self.locs().get(index).ok_or(Error::Underflow)?;
        answer_at(self.region(), loc)
    }
}

fn answer_at(region: &Region, loc: FrameLoc) -> Result<Option<u64>> {
    match region.read_u8(loc.valid_at())? {
        0 => Ok(None),
        1 => Ok(Some(region.read_u64(loc.answer_at())?)),
        other => Err(Error::CorruptStack(format!("answer_valid byte 0x{other:02x} at {}", loc.valid_at()))),
    }
}

pub(crate) fn read_frame(region: &Region, loc: FrameLoc) -> Result<Frame> {
    let bytes = region.read_vec(loc.offset, loc.len() as usize)?;
    decode_frame(&bytes).map_err(|e| Error::CorruptStack(e.to_string()))
}

/// Writes a single end-marker byte and flushes exactly that byte.
pub(crate) fn set_marker(region: &Region, at: u64, marker: u8) -> Result<()> {
    region.write_u8(at, marker)?;
    region.flush(at, 1)
}

/// The push discipline: write the new frame past the stack end with its own
/// stack-end marker, flush it completely, then move the stack end forward by
/// flipping the previous top's marker and flushing that one byte.
pub(crate) fn commit_push(region: &Region, at: u64, encoded: &[u8], prev_marker_at: u64) -> Result<()> {
    region.write_bytes(at, encoded)?;
    region.flush(at, encoded.len() as u64)?;
    set_marker(region, prev_marker_at, FRAME_END)
}

pub(crate) fn check_args(function_id: u64, args: &[u8]) -> Result<()> {
    if function_id == DUMMY_FUNCTION_ID {
        return Err(Error::ReservedFunction(DUMMY_FUNCTION_ID));
    }
    if args.len() > MAX_ARGS_LEN {
        return Err(Error::Config(format!("arguments of {} bytes exceed the {MAX_ARGS_LEN}-byte cap", args.len())));
    }
    Ok(())
}

/// Parses one ordinary frame at `at`, which must end before `limit`.
pub(crate) fn scan_frame(region: &Region, at: u64, limit: u64) -> Result<(FrameLoc, Frame)> {
    if at + FRAME_HEADER as u64 > limit {
        return Err(Error::CorruptStack(format!("no stack-end marker before offset {limit}")));
    }
    let header = region.read_vec(at, FRAME_HEADER)?;
    let args_len = header_args_len(&header).map_err(|e| Error::CorruptStack(format!("at offset {at}: {e}")))?;
    let loc = FrameLoc { offset: at, args_len: args_len as u32 };
    if loc.end() > limit {
        return Err(Error::CorruptStack(format!("frame at {at} runs past offset {limit}")));
    }
    let frame = read_frame(region, loc)?;
    Ok((loc, frame))
}

/// Forward parse of a contiguous stack in `[base, base+capacity)`, stopping at
/// the first stack-end marker. Bytes after it are never read.
pub(crate) fn scan_contiguous(region: &Region, base: u64, capacity: u64) -> Result<Vec<(FrameLoc, Frame)>> {
    let limit = base + capacity;
    let mut out = Vec::new();
    let mut at = base;
    loop {
        let (loc, frame) = scan_frame(region, at, limit)?;
        if out.is_empty() && (!frame.is_dummy() || !frame.args.is_empty()) {
            return Err(Error::CorruptStack(format!("bottom frame at {base} is not the dummy frame")));
        }
        let end = frame.stack_end;
        at = loc.end();
        out.push((loc, frame));
        if end {
            return Ok(out);
        }
    }
}

pub(crate) struct Descriptor {
    pub tag: u64,
    pub location: u64,
    pub param: u64,
}

pub(crate) fn read_descriptor(region: &Region, offset: u64) -> Result<Descriptor> {
    Ok(Descriptor {
        tag: region.read_u64(offset + DESC_TAG)?,
        location: region.read_u64(offset + DESC_LOCATION)?,
        param: region.read_u64(offset + DESC_PARAM)?,
    })
}

/// Writes and flushes a descriptor, then registers it in the root directory.
pub(crate) fn publish_descriptor(region: &Region, tag: u64, location: u64, param: u64) -> Result<(u64, usize)> {
    let desc = region.allocate(DESC_LEN)?;
    region.write_u64(desc + DESC_TAG, tag)?;
    region.write_u64(desc + DESC_LOCATION, location)?;
    region.write_u64(desc + DESC_PARAM, param)?;
    region.flush(desc, DESC_LEN)?;
    let index = region.register_stack_root(desc)?;
    Ok((desc, index))
}

/// A stack of any strategy.
#[derive(Debug)]
pub enum Stack {
    Bounded(BoundedStack),
    Array(ArrayStack),
    BlockList(BlockListStack),
}

impl Stack {
    pub fn create(region: &Arc<Region>, strategy: StackStrategy) -> Result<Stack> {
        Ok(match strategy {
            StackStrategy::Bounded { capacity } => Stack::Bounded(BoundedStack::init(region, capacity)?),
            StackStrategy::Array { initial_capacity } => Stack::Array(ArrayStack::init(region, initial_capacity)?),
            StackStrategy::BlockList { block_size } => Stack::BlockList(BlockListStack::init(region, block_size)?),
        })
    }

    /// Opens stack `index` of the root directory and parses it.
    pub fn open(region: &Arc<Region>, index: usize) -> Result<Stack> {
        let desc = region.stack_root(index)?;
        let tag = read_descriptor(region, desc)?.tag;
        Ok(match tag {
            TAG_BOUNDED => Stack::Bounded(BoundedStack::open(region, index)?),
            TAG_ARRAY => Stack::Array(ArrayStack::open(region, index)?),
            TAG_BLOCK_LIST => Stack::BlockList(BlockListStack::open(region, index)?),
            other => return Err(Error::CorruptStack(format!("stack {index} has unknown strategy tag {other}"))),
        })
    }

    pub fn index(&self) -> usize {
        match self {
            Stack::Bounded(s) => s.root().index,
            Stack::Array(s) => s.index(),
            Stack::BlockList(s) => s.index(),
        }
    }

    fn inner(&self) -> &dyn PersistentStack {
        match self {
            Stack::Bounded(s) => s,
            Stack::Array(s) => s,
            Stack::BlockList(s) => s,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn PersistentStack {
        match self {
            Stack::Bounded(s) => s,
            Stack::Array(s) => s,
            Stack::BlockList(s) => s,
        }
    }
}

impl PersistentStack for Stack {
    fn region(&self) -> &Arc<Region> {
        self.inner().region()
    }

    fn locs(&self) -> &[FrameLoc] {
        self.inner().locs()
    }

    fn push(&mut self, function_id: u64, args: &[u8]) -> Result<()> {
        self.inner_mut().push(function_id, args)
    }

    fn pop(&mut self) -> Result<()> {
        self.inner_mut().pop()
    }
}
