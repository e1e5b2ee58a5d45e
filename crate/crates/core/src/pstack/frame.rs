//! Byte layout of an ordinary stack frame (little-endian):
//!
//! ```text
//! +0          preamble      0x0A
//! +1          function_id   u64
//! +9          args_len      u32
//! +13         args          args_len bytes
//! +13+n       answer_valid  0x00 | 0x01
//! +14+n       answer        8 bytes
//! +22+n       end marker    0x00 frame end | 0x01 stack end
//! ```

use crate::error::{Error, Result};

pub const ORDINARY_PREAMBLE: u8 = 0x0A;
pub const POINTER_PREAMBLE: u8 = 0x0B;
pub const FRAME_END: u8 = 0x00;
pub const STACK_END: u8 = 0x01;

/// Encoded size of a frame with no arguments.
pub const FRAME_OVERHEAD: usize = 23;
/// Bytes before the arguments.
pub const FRAME_HEADER: usize = 13;
pub const MAX_ARGS_LEN: usize = 1 << 20;
/// Reserved for the dummy frame at the bottom of every stack.
pub const DUMMY_FUNCTION_ID: u64 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub function_id: u64,
    pub args: Vec<u8>,
    pub answer_valid: bool,
    /// Meaningful only when `answer_valid` is set.
    pub answer: u64,
    pub stack_end: bool,
}

impl Frame {
    /// A fresh frame as written by a push: no answer, stack-end marker set.
    pub fn new(function_id: u64, args: &[u8]) -> Frame {
        Frame { function_id, args: args.to_vec(), answer_valid: false, answer: 0, stack_end: true }
    }

    pub fn dummy() -> Frame {
        Frame::new(DUMMY_FUNCTION_ID, &[])
    }

    pub fn is_dummy(&self) -> bool {
        self.function_id == DUMMY_FUNCTION_ID
    }

    pub fn answer(&self) -> Option<u64> {
        self.answer_valid.then_some(self.answer)
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.args.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(ORDINARY_PREAMBLE);
        out.extend_from_slice(&self.function_id.to_le_bytes());
        out.extend_from_slice(&(self.args.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.args);
        out.push(self.answer_valid as u8);
        out.extend_from_slice(&self.answer.to_le_bytes());
        out.push(if self.stack_end { STACK_END } else { FRAME_END });
        out
    }
}

/// Encodes a frame the way a push writes it (stack-end marker set).
pub fn encode_frame(function_id: u64, args: &[u8]) -> Result<Vec<u8>> {
    if args.len() > MAX_ARGS_LEN {
        return Err(Error::Config(format!("arguments of {} bytes exceed the {MAX_ARGS_LEN}-byte cap", args.len())));
    }
    Ok(Frame::new(function_id, args).encode())
}

/// Reads `args_len` from a frame header, validating the preamble.
pub fn header_args_len(header: &[u8]) -> Result<usize> {
    if header.len() < FRAME_HEADER {
        return Err(Error::Parse(format!("truncated frame header ({} bytes)", header.len())));
    }
    match header[0] {
        ORDINARY_PREAMBLE => {}
        POINTER_PREAMBLE => return Err(Error::Parse("pointer frame where an ordinary frame was expected".into())),
        other => return Err(Error::Parse(format!("bad preamble 0x{other:02x}"))),
    }
    let len = u32::from_le_bytes(header[9..13].try_into().unwrap()) as usize;
    if len > MAX_ARGS_LEN {
        return Err(Error::Parse(format!("args_len {len} exceeds the cap")));
    }
    Ok(len)
}

/// Decodes one ordinary frame from the start of `bytes`; trailing bytes are ignored.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    let len = header_args_len(bytes)?;
    let total = FRAME_OVERHEAD + len;
    if bytes.len() < total {
        return Err(Error::Parse(format!("truncated frame: need {total} bytes, have {}", bytes.len())));
    }
    let function_id = u64::from_le_bytes(bytes[1..9].try_into().unwrap());
    let args = bytes[FRAME_HEADER..FRAME_HEADER + len].to_vec();
    let answer_valid = match bytes[FRAME_HEADER + len] {
        0 => false,
        1 => true,
        other => return Err(Error::Parse(format!("answer_valid byte 0x{other:02x}"))),
    };
    let answer = u64::from_le_bytes(bytes[FRAME_HEADER + len + 1..FRAME_HEADER + len + 9].try_into().unwrap());
    let stack_end = match bytes[total - 1] {
        FRAME_END => false,
        STACK_END => true,
        other => return Err(Error::Parse(format!("end marker 0x{other:02x}"))),
    };
    Ok(Frame { function_id, args, answer_valid, answer, stack_end })
}

/// Position of an ordinary frame in the region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLoc {
    pub offset: u64,
    pub args_len: u32,
}

#[allow(clippy::len_without_is_empty)]
impl FrameLoc {
    pub fn len(&self) -> u64 {
        FRAME_OVERHEAD as u64 + self.args_len as u64
    }

    pub fn end(&self) -> u64 {
        self.offset + self.len()
    }

    pub fn valid_at(&self) -> u64 {
        self.offset + FRAME_HEADER as u64 + self.args_len as u64
    }

    pub fn answer_at(&self) -> u64 {
        self.valid_at() + 1
    }

    pub fn marker_at(&self) -> u64 {
        self.end() - 1
    }
}
