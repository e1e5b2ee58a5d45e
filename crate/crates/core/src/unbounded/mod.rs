//! Stacks without a fixed capacity: a resizable contiguous array, and a list
//! of blocks joined by pointer frames (preamble `0x0B`).

mod array;
mod block_list;
mod pointer;

pub use array::{ArrayStack, ArrayStackRoot, SHRINK_FACTOR};
pub use block_list::{parse_stack_unbounded, BlockListStack, DEFAULT_BLOCK_SIZE};
pub use pointer::{decode_any_frame, decode_pointer_frame, AnyFrame, PointerFrame, POINTER_FRAME_LEN};
