use std::collections::HashSet;
use std::sync::Arc;

use super::pointer::{decode_pointer_frame, PointerFrame, POINTER_FRAME_LEN};
use crate::error::{Error, Result};
use crate::pstack::*;
use crate::region::Region;

pub const DEFAULT_BLOCK_SIZE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    offset: u64,
    capacity: u64,
}

/// Stack spread over a chain of heap blocks. When a frame does not fit the
/// current block it goes into a new block, linked from the old one by a
/// pointer frame. Every block keeps room for one pointer frame at its end.
#[derive(Debug)]
pub struct BlockListStack {
    region: Arc<Region>,
    index: usize,
    descriptor: u64,
    block_size: u64,
    // Volatile index of the chain, rebuilt by every parse. Gives O(1)
    // predecessor lookup without back pointers in the image.
    blocks: Vec<Block>,
    locs: Vec<FrameLoc>,
    loc_block: Vec<usize>,
}

struct Walk {
    blocks: Vec<Block>,
    frames: Vec<(FrameLoc, Frame, usize)>,
}

fn block_at(region: &Region, offset: u64) -> Result<Block> {
    let capacity = region
        .block_size(offset)
        .map_err(|_| Error::CorruptStack(format!("pointer to {offset}, which is not a heap block")))?;
    Ok(Block { offset, capacity })
}

/// Follows the chain from `first`, collecting ordinary frames up to the stack end.
fn walk(region: &Region, first: u64) -> Result<Walk> {
    let mut blocks = vec![block_at(region, first)?];
    let mut seen = HashSet::from([first]);
    let mut frames = Vec::new();
    let mut at = first;
    loop {
        let block = *blocks.last().unwrap();
        let limit = block.offset + block.capacity;
        if at >= limit {
            return Err(Error::CorruptStack(format!("no stack-end marker in block {}", block.offset)));
        }
        if region.read_u8(at)? == POINTER_PREAMBLE {
            if at + POINTER_FRAME_LEN as u64 > limit {
                return Err(Error::CorruptStack(format!("pointer frame at {at} runs past its block")));
            }
            let bytes = region.read_vec(at, POINTER_FRAME_LEN)?;
            let ptr = decode_pointer_frame(&bytes).map_err(|e| Error::CorruptStack(e.to_string()))?;
            if ptr.stack_end {
                return Err(Error::CorruptStack(format!("pointer frame at {at} carries the stack-end marker")));
            }
            if frames.is_empty() {
                return Err(Error::CorruptStack("pointer frame before the dummy frame".into()));
            }
            if !seen.insert(ptr.next_block) {
                return Err(Error::CorruptStack(format!("cycle: block {} visited twice", ptr.next_block)));
            }
            blocks.push(block_at(region, ptr.next_block)?);
            at = ptr.next_block;
            continue;
        }
        let (loc, frame) = scan_frame(region, at, limit)?;
        if frames.is_empty() && (!frame.is_dummy() || !frame.args.is_empty()) {
            return Err(Error::CorruptStack(format!("bottom frame at {first} is not the dummy frame")));
        }
        let end = frame.stack_end;
        at = loc.end();
        frames.push((loc, frame, blocks.len() - 1));
        if end {
            return Ok(Walk { blocks, frames });
        }
    }
}

/// Ordinary frames of any stack strategy, bottom first, read from the image
/// through the descriptor at `descriptor`.
pub fn parse_stack_unbounded(region: &Region, descriptor: u64) -> Result<Vec<Frame>> {
    let desc = read_descriptor(region, descriptor)?;
    let scanned = match desc.tag {
        TAG_BOUNDED => scan_contiguous(region, desc.location, desc.param)?,
        TAG_ARRAY => {
            let block = block_at(region, desc.location)?;
            scan_contiguous(region, block.offset, block.capacity)?
        }
        TAG_BLOCK_LIST => walk(region, desc.location)?.frames.into_iter().map(|(l, f, _)| (l, f)).collect(),
        other => return Err(Error::CorruptStack(format!("unknown strategy tag {other}"))),
    };
    Ok(scanned.into_iter().map(|(_, f)| f).collect())
}

impl BlockListStack {
    pub fn init(region: &Arc<Region>, block_size: u64) -> Result<BlockListStack> {
        if block_size < (FRAME_OVERHEAD + POINTER_FRAME_LEN) as u64 {
            return Err(Error::Config(format!("block size {block_size} cannot hold a frame and a pointer frame")));
        }
        let first = region.allocate(block_size)?;
        let capacity = region.block_size(first)?;
        region.write_bytes(first, &Frame::dummy().encode())?;
        region.flush(first, FRAME_OVERHEAD as u64)?;
        let (descriptor, index) = publish_descriptor(region, TAG_BLOCK_LIST, first, block_size)?;
        Ok(BlockListStack {
            region: region.clone(),
            index,
            descriptor,
            block_size,
            blocks: vec![Block { offset: first, capacity }],
            locs: vec![FrameLoc { offset: first, args_len: 0 }],
            loc_block: vec![0],
        })
    }

    pub fn open(region: &Arc<Region>, index: usize) -> Result<BlockListStack> {
        let descriptor = region.stack_root(index)?;
        let desc = read_descriptor(region, descriptor)?;
        if desc.tag != TAG_BLOCK_LIST {
            return Err(Error::CorruptStack(format!("stack {index} is not a block-list stack (tag {})", desc.tag)));
        }
        let walk = walk(region, desc.location)?;
        let mut locs = Vec::with_capacity(walk.frames.len());
        let mut loc_block = Vec::with_capacity(walk.frames.len());
        for (loc, _, block) in walk.frames {
            locs.push(loc);
            loc_block.push(block);
        }
        let mut blocks = walk.blocks;
        // Blocks after the one holding the top frame are unreachable garbage.
        blocks.truncate(loc_block.last().unwrap() + 1);
        Ok(BlockListStack {
            region: region.clone(),
            index,
            descriptor,
            block_size: desc.param,
            blocks,
            locs,
            loc_block,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn descriptor(&self) -> u64 {
        self.descriptor
    }

    /// Offsets of the live blocks, first block first.
    pub fn blocks(&self) -> Vec<u64> {
        self.blocks.iter().map(|b| b.offset).collect()
    }

    /// The block linking to `block`, if any.
    pub fn prev_block(&self, block: u64) -> Option<u64> {
        let pos = self.blocks.iter().position(|b| b.offset == block)?;
        pos.checked_sub(1).map(|p| self.blocks[p].offset)
    }
}

impl PersistentStack for BlockListStack {
    fn region(&self) -> &Arc<Region> {
        &self.region
    }

    fn locs(&self) -> &[FrameLoc] {
        &self.locs
    }

    fn push(&mut self, function_id: u64, args: &[u8]) -> Result<()> {
        check_args(function_id, args)?;
        let encoded = encode_frame(function_id, args)?;
        let len = encoded.len() as u64;
        let top = *self.locs.last().unwrap();
        let current = self.blocks[*self.loc_block.last().unwrap()];
        let limit = current.offset + current.capacity;
        if top.end() + len + POINTER_FRAME_LEN as u64 <= limit {
            commit_push(&self.region, top.end(), &encoded, top.marker_at())?;
            self.locs.push(FrameLoc { offset: top.end(), args_len: args.len() as u32 });
            self.loc_block.push(*self.loc_block.last().unwrap());
            return Ok(());
        }
        // New block: the frame goes first, fully flushed, then the pointer
        // frame is written past the stack end, then the old top's marker flips.
        let block = self.region.allocate(self.block_size.max(len + POINTER_FRAME_LEN as u64))?;
        let capacity = self.region.block_size(block)?;
        self.region.write_bytes(block, &encoded)?;
        self.region.flush(block, len)?;
        commit_push(&self.region, top.end(), &PointerFrame::new(block).encode(), top.marker_at())?;
        self.blocks.push(Block { offset: block, capacity });
        self.locs.push(FrameLoc { offset: block, args_len: args.len() as u32 });
        self.loc_block.push(self.blocks.len() - 1);
        Ok(())
    }

    fn pop(&mut self) -> Result<()> {
        let n = self.locs.len();
        if n < 2 {
            return Err(Error::Underflow);
        }
        let below = self.locs[n - 2];
        // When the top is alone in its block, `below` is the frame right before
        // the pointer frame in the previous block; making it the stack end
        // drops the pointer frame along with the top.
        set_marker(&self.region, below.marker_at(), STACK_END)?;
        let emptied = self.loc_block[n - 1] != self.loc_block[n - 2];
        self.locs.pop();
        self.loc_block.pop();
        if emptied {
            let block = self.blocks.pop().unwrap();
            self.region.free(block.offset)?;
        }
        Ok(())
    }
}
