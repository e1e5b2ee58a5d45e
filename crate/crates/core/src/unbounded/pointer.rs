use crate::error::{Error, Result};
use crate::pstack::{decode_frame, Frame, FRAME_END, POINTER_PREAMBLE, STACK_END};

/// `0x0B | next_block u64 | marker`.
pub const POINTER_FRAME_LEN: usize = 10;

/// Link from the last frame of one block to the first frame of the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointerFrame {
    pub next_block: u64,
    pub stack_end: bool,
}

impl PointerFrame {
    pub fn new(next_block: u64) -> Self {
        PointerFrame { next_block, stack_end: false }
    }

    pub fn encode(&self) -> [u8; POINTER_FRAME_LEN] {
        let mut out = [0u8; POINTER_FRAME_LEN];
        out[0] = POINTER_PREAMBLE;
        out[1..9].copy_from_slice(&self.next_block.to_le_bytes());
        out[9] = if self.stack_end { STACK_END } else { FRAME_END };
        out
    }
}

pub fn decode_pointer_frame(bytes: &[u8]) -> Result<PointerFrame> {
    if bytes.len() < POINTER_FRAME_LEN {
        return Err(Error::Parse(format!("truncated pointer frame ({} bytes)", bytes.len())));
    }
    if bytes[0] != POINTER_PREAMBLE {
        return Err(Error::Parse(format!("bad pointer-frame preamble 0x{:02x}", bytes[0])));
    }
    let stack_end = match bytes[9] {
        FRAME_END => false,
        STACK_END => true,
        other => return Err(Error::Parse(format!("end marker 0x{other:02x}"))),
    };
    Ok(PointerFrame { next_block: u64::from_le_bytes(bytes[1..9].try_into().unwrap()), stack_end })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnyFrame {
    Ordinary(Frame),
    Pointer(PointerFrame),
}

/// Decodes either frame kind, discriminated by the preamble.
pub fn decode_any_frame(bytes: &[u8]) -> Result<AnyFrame> {
    match bytes.first() {
        Some(&POINTER_PREAMBLE) => decode_pointer_frame(bytes).map(AnyFrame::Pointer),
        _ => decode_frame(bytes).map(AnyFrame::Ordinary),
    }
}
