//! On-image layout of the region header and root directory.
//!
//! ```text
//! 0   magic "NVRG"
//! 4   version            u16
//! 6   cache_line_size    u16
//! 8   region_size        u64
//! 16  root_dir_offset    u64   (always 64)
//! 64  n_stacks           u32   (+4 padding)
//! 72  stack_roots        [u64; MAX_STACKS]
//! 584 heap_head          u64
//! 592 rcas_root          u64
//! 600 task_table_root    u64
//! 608 free_heads         [u64; SIZE_CLASSES]
//! 864 end of root directory; the heap starts at the next line boundary
//! ```
//!
//! All integers are little-endian.

pub const MAGIC: [u8; 4] = *b"NVRG";
pub const VERSION: u16 = 1;

pub const MAGIC_OFFSET: u64 = 0;
pub const VERSION_OFFSET: u64 = 4;
pub const LINE_SIZE_OFFSET: u64 = 6;
pub const REGION_SIZE_OFFSET: u64 = 8;
pub const ROOT_DIR_PTR_OFFSET: u64 = 16;
pub const HEADER_LEN: u64 = 24;

pub const ROOT_DIR_OFFSET: u64 = 64;
pub const MAX_STACKS: usize = 64;
pub const SIZE_CLASSES: usize = 32;

pub const N_STACKS_OFFSET: u64 = ROOT_DIR_OFFSET;
pub const STACK_ROOTS_OFFSET: u64 = ROOT_DIR_OFFSET + 8;
pub const HEAP_HEAD_OFFSET: u64 = STACK_ROOTS_OFFSET + 8 * MAX_STACKS as u64;
pub const RCAS_ROOT_OFFSET: u64 = HEAP_HEAD_OFFSET + 8;
pub const TASK_TABLE_ROOT_OFFSET: u64 = RCAS_ROOT_OFFSET + 8;
pub const FREE_HEADS_OFFSET: u64 = TASK_TABLE_ROOT_OFFSET + 8;
pub const ROOT_DIR_END: u64 = FREE_HEADS_OFFSET + 8 * SIZE_CLASSES as u64;

pub const MIN_LINE_SIZE: usize = 16;
pub const MAX_LINE_SIZE: usize = 4096;
pub const DEFAULT_LINE_SIZE: usize = 64;

pub fn align_up(value: u64, align: u64) -> u64 {
    debug_assert!(align.is_power_of_two());
    (value + align - 1) & !(align - 1)
}

/// First heap byte for a given line size.
pub fn heap_start(line: usize) -> u64 {
    align_up(ROOT_DIR_END, line as u64)
}
