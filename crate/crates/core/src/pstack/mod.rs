//! Persistent call stack.
//!
//! A stack is a run of frames whose last byte is an end marker: `0x1` on the
//! top frame, `0x0` on every other. Push writes and flushes the new frame past
//! the current top, then flips the old top's marker; pop flips the marker of
//! the frame below the top. Both flips are single-byte flushes, so they are
//! atomic under any crash. A dummy frame at the bottom is never popped.

mod bounded;
mod frame;
mod stack;

pub use bounded::{parse_stack, BoundedStack, StackRoot};
pub use frame::{
    decode_frame, encode_frame, Frame, FrameLoc, DUMMY_FUNCTION_ID, FRAME_END, FRAME_HEADER, FRAME_OVERHEAD,
    MAX_ARGS_LEN, ORDINARY_PREAMBLE, POINTER_PREAMBLE, STACK_END,
};
pub use stack::{PersistentStack, Stack, StackStrategy, TAG_ARRAY, TAG_BLOCK_LIST, TAG_BOUNDED};

pub(crate) use stack::{
    check_args, commit_push, publish_descriptor, read_descriptor, scan_contiguous, scan_frame, set_marker,
    DESC_LOCATION,
};
