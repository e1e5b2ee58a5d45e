//! Recoverable compare-and-swap register.
//!
//! The register word packs `value: i32 | owner: u8 | seq: u24`. Every
//! installed value carries the (owner, seq) of the operation that installed
//! it, so values may repeat without confusing recovery. Before replacing an
//! instance owned by `q`, process `p` leaves a notification in `R[q][p]`
//! naming the instance; `q`'s recover function finds it there if its value
//! was overwritten before the crash.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::region::Region;

const MAGIC: u64 = u64::from_le_bytes(*b"RCASREG1");
const HDR_MAGIC: u64 = 0;
const HDR_N: u64 = 8;
const HDR_VARIANT: u64 = 16;
const HDR_INIT: u64 = 24;

pub const MAX_PROCESSES: usize = 255;
pub const SEQ_MASK: u32 = 0x00FF_FFFF;
const NOTE_VALID: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Correct,
    /// Notification matrix removed: a success that was overwritten before
    /// the crash is invisible to recovery.
    Buggy,
}

impl Variant {
    fn code(self) -> u64 {
        match self {
            Variant::Correct => 0,
            Variant::Buggy => 1,
        }
    }
}

/// Decoded register word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Word {
    pub value: i32,
    pub owner: u8,
    pub seq: u32,
}

impl Word {
    pub fn pack(self) -> u64 {
        (self.value as u32 as u64) | (self.owner as u64) << 32 | ((self.seq & SEQ_MASK) as u64) << 40
    }

    pub fn unpack(w: u64) -> Word {
        Word { value: w as u32 as i32, owner: (w >> 32) as u8, seq: (w >> 40) as u32 & SEQ_MASK }
    }
}

/// Notification cell contents naming the instance `(value, seq)`.
pub fn encode_note(value: i32, seq: u32) -> u64 {
    NOTE_VALID | ((seq & SEQ_MASK) as u64) << 32 | value as u32 as u64
}

/// Sequence number of operation `op_id`. Never zero, which the initial value uses.
pub fn seq_for(op_id: u64) -> u32 {
    let s = (op_id.wrapping_add(1) as u32) & SEQ_MASK;
    if s == 0 {
        1
    } else {
        s
    }
}

#[derive(Debug, Clone)]
pub struct RcasRegister {
    region: Arc<Region>,
    base: u64,
    n: usize,
    variant: Variant,
}

impl RcasRegister {
    /// Lays out the register for `n` processes with value `init` and records
    /// it in the root directory.
    pub fn init(region: &Arc<Region>, n: usize, init: i32, variant: Variant) -> Result<RcasRegister> {
        if region.rcas_root()? != 0 {
            return Err(Error::Rcas("region already holds a register".into()));
        }
        if n == 0 || n > MAX_PROCESSES {
            return Err(Error::Rcas(format!("process count {n} outside [1, {MAX_PROCESSES}]")));
        }
        let line = region.line_size();
        let base = region.allocate(line * (2 + (n * n) as u64))?;
        let reg = RcasRegister { region: region.clone(), base, n, variant };
        let zero_line = vec![0u8; line as usize];
        for i in 1..=n {
            for j in 1..=n {
                region.write_bytes(reg.note_at(i, j), &zero_line)?;
            }
        }
        region.flush(reg.note_at(1, 1), line * (n * n) as u64)?;
        region.write_u64(reg.word_at(), Word { value: init, owner: 0, seq: 0 }.pack())?;
        region.flush(reg.word_at(), 8)?;
        region.write_u64(base + HDR_N, n as u64)?;
        region.write_u64(base + HDR_VARIANT, variant.code())?;
        region.write_u64(base + HDR_INIT, init as u32 as u64)?;
        region.write_u64(base + HDR_MAGIC, MAGIC)?;
        region.flush(base, 32)?;
        region.set_rcas_root(base)?;
        Ok(reg)
    }

    pub fn attach(region: &Arc<Region>) -> Result<RcasRegister> {
        let base = region.rcas_root()?;
        if base == 0 {
            return Err(Error::Rcas("region holds no register".into()));
        }
        if region.read_u64(base + HDR_MAGIC)? != MAGIC {
            return Err(Error::Rcas(format!("no register header at {base}")));
        }
        let n = region.read_u64(base + HDR_N)? as usize;
        let variant = match region.read_u64(base + HDR_VARIANT)? {
            0 => Variant::Correct,
            1 => Variant::Buggy,
            v => return Err(Error::Rcas(format!("unknown variant {v}"))),
        };
        if n == 0 || n > MAX_PROCESSES {
            return Err(Error::Rcas(format!("bad process count {n}")));
        }
        Ok(RcasRegister { region: region.clone(), base, n, variant })
    }

    pub fn processes(&self) -> usize {
        self.n
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Value the register was created with.
    pub fn initial(&self) -> Result<i32> {
        Ok(self.region.read_u64(self.base + HDR_INIT)? as u32 as i32)
    }

    pub fn word_at(&self) -> u64 {
        self.base + self.region.line_size()
    }

    /// Cell through which process `j` notifies process `i`.
    pub fn note_at(&self, i: usize, j: usize) -> u64 {
        self.base + self.region.line_size() * (2 + ((i - 1) * self.n + (j - 1)) as u64)
    }

    pub fn word(&self) -> Result<Word> {
        Ok(Word::unpack(self.region.load_u64(self.word_at())?))
    }

    pub fn read(&self) -> Result<i32> {
        Ok(self.word()?.value)
    }

    pub fn notification(&self, i: usize, j: usize) -> Result<u64> {
        self.region.load_u64(self.note_at(i, j))
    }

    fn check(&self, p: usize, seq: u32) -> Result<()> {
        if p == 0 || p > self.n {
            return Err(Error::Rcas(format!("process {p} outside [1, {}]", self.n)));
        }
        if seq == 0 || seq > SEQ_MASK {
            return Err(Error::Rcas(format!("sequence number {seq} out of range")));
        }
        Ok(())
    }

    /// CAS by process `p` as its operation number `seq`.
    pub fn cas(&self, p: usize, seq: u32, old: i32, new: i32) -> Result<bool> {
        self.check(p, seq)?;
        let mine = Word { value: new, owner: p as u8, seq }.pack();
        loop {
            let raw = self.region.load_u64(self.word_at())?;
            let cur = Word::unpack(raw);
            if cur.value != old {
                return Ok(false);
            }
            if self.variant == Variant::Correct && cur.owner != 0 {
                // Announce the overwrite before it happens. If the CAS below
                // loses, the instance was replaced by someone else anyway.
                self.region.store_flush_u64(self.note_at(cur.owner as usize, p), encode_note(cur.value, cur.seq))?;
            }
            if self.region.cas_flush_u64(self.word_at(), raw, mine)?.is_ok() {
                return Ok(true);
            }
        }
    }

    /// Finishes an interrupted `cas(p, seq, old, new)`: reports success if its
    /// instance was installed (and possibly overwritten since), otherwise runs it.
    pub fn recover(&self, p: usize, seq: u32, old: i32, new: i32) -> Result<bool> {
        self.check(p, seq)?;
        let mine = Word { value: new, owner: p as u8, seq };
        if self.word()? == mine {
            return Ok(true);
        }
        if self.variant == Variant::Correct {
            let note = encode_note(new, seq);
            for j in 1..=self.n {
                if self.notification(p, j)? == note {
                    return Ok(true);
                }
            }
        }
        self.cas(p, seq, old, new)
    }
}
