use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::region::layout::align_up;
use crate::region::Region;

// Header line: count u32, max args u32, capacity u32.
const COUNT: u64 = 0;
const MAX_ARGS: u64 = 4;
const CAPACITY: u64 = 8;

// Slot fields.
const TASK_ID: u64 = 0;
const FUNCTION_ID: u64 = 8;
const ARGS_LEN: u64 = 16;
const ARGS: u64 = 20;

pub const DEFAULT_MAX_ARGS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskStatus {
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub task_id: u64,
    pub function_id: u64,
    pub args: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDescriptor {
    pub task_id: u64,
    pub function_id: u64,
    pub args: Vec<u8>,
    pub status: TaskStatus,
    pub answer: Option<u64>,
}

/// Persistent table of task descriptors, one line-aligned slot per task.
/// The count is bumped only after the new slots are flushed.
#[derive(Debug, Clone)]
pub struct TaskTable {
    region: Arc<Region>,
    base: u64,
    capacity: u32,
    max_args: u32,
    slot_size: u64,
}

fn slot_size(line: u64, max_args: u32) -> u64 {
    align_up(ARGS + max_args as u64 + 10, line)
}

impl TaskTable {
    pub fn create(region: &Arc<Region>, capacity: u32, max_args: u32) -> Result<TaskTable> {
        if region.task_table_root()? != 0 {
            return Err(Error::TaskTable("region already has a task table".into()));
        }
        let line = region.line_size();
        let slot = slot_size(line, max_args);
        let base = region.allocate(line + slot * capacity.max(1) as u64)?;
        region.write_u32(base + COUNT, 0)?;
        region.write_u32(base + MAX_ARGS, max_args)?;
        region.write_u32(base + CAPACITY, capacity)?;
        region.flush(base, 12)?;
        region.set_task_table_root(base)?;
        Ok(TaskTable { region: region.clone(), base, capacity, max_args, slot_size: slot })
    }

    pub fn open(region: &Arc<Region>) -> Result<TaskTable> {
        let base = region.task_table_root()?;
        if base == 0 {
            return Err(Error::TaskTable("region has no task table".into()));
        }
        let max_args = region.read_u32(base + MAX_ARGS)?;
        let capacity = region.read_u32(base + CAPACITY)?;
        let slot = slot_size(region.line_size(), max_args);
        let table = TaskTable { region: region.clone(), base, capacity, max_args, slot_size: slot };
        if table.len()? > capacity as usize {
            return Err(Error::TaskTable(format!("count exceeds capacity {capacity}")));
        }
        Ok(table)
    }

    fn slot(&self, index: usize) -> u64 {
        self.base + self.region.line_size() + index as u64 * self.slot_size
    }

    fn valid_at(&self, index: usize) -> u64 {
        self.slot(index) + ARGS + self.max_args as u64
    }

    fn answer_at(&self, index: usize) -> u64 {
        self.valid_at(index) + 1
    }

    fn status_at(&self, index: usize) -> u64 {
        self.answer_at(index) + 8
    }

    pub fn len(&self) -> Result<usize> {
        Ok(self.region.read_u32(self.base + COUNT)? as usize)
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }

    pub fn capacity(&self) -> usize {
        self.capacity as usize
    }

    /// Appends tasks. Ids must be unique across the whole table.
    pub fn add(&self, specs: &[TaskSpec]) -> Result<()> {
        let n = self.len()?;
        if n + specs.len() > self.capacity as usize {
            return Err(Error::TaskTable(format!("{} tasks exceed capacity {}", n + specs.len(), self.capacity)));
        }
        let mut ids = HashSet::with_capacity(n + specs.len());
        for i in 0..n {
            ids.insert(self.region.read_u64(self.slot(i) + TASK_ID)?);
        }
        for spec in specs {
            if !ids.insert(spec.task_id) {
                return Err(Error::DuplicateTask(spec.task_id));
            }
            if spec.args.len() > self.max_args as usize {
                return Err(Error::TaskTable(format!(
                    "task {} has {} bytes of arguments",
                    spec.task_id,
                    spec.args.len()
                )));
            }
        }
        for (k, spec) in specs.iter().enumerate() {
            let slot = self.slot(n + k);
            self.region.write_bytes(slot, &vec![0u8; self.slot_size as usize])?;
            self.region.write_u64(slot + TASK_ID, spec.task_id)?;
            self.region.write_u64(slot + FUNCTION_ID, spec.function_id)?;
            self.region.write_u32(slot + ARGS_LEN, spec.args.len() as u32)?;
            self.region.write_bytes(slot + ARGS, &spec.args)?;
            self.region.flush(slot, self.slot_size)?;
        }
        self.region.write_u32(self.base + COUNT, (n + specs.len()) as u32)?;
        self.region.flush(self.base + COUNT, 4)
    }

    pub fn get(&self, index: usize) -> Result<TaskDescriptor> {
        if index >= self.len()? {
            return Err(Error::TaskTable(format!("no task in slot {index}")));
        }
        let slot = self.slot(index);
        let args_len = self.region.read_u32(slot + ARGS_LEN)?;
        if args_len > self.max_args {
            return Err(Error::TaskTable(format!("slot {index} claims {args_len} bytes of arguments")));
        }
        let answer = match self.region.read_u8(self.valid_at(index))? {
            0 => None,
            1 => Some(self.region.read_u64(self.answer_at(index))?),
            b => return Err(Error::TaskTable(format!("slot {index} has answer flag 0x{b:02x}"))),
        };
        let status = match self.region.read_u8(self.status_at(index))? {
            0 => TaskStatus::Pending,
            1 if answer.is_some() => TaskStatus::Done,
            b => return Err(Error::TaskTable(format!("slot {index} has status 0x{b:02x}"))),
        };
        Ok(TaskDescriptor {
            task_id: self.region.read_u64(slot + TASK_ID)?,
            function_id: self.region.read_u64(slot + FUNCTION_ID)?,
            args: self.region.read_vec(slot + ARGS, args_len as usize)?,
            status,
            answer,
        })
    }

    pub fn status(&self, index: usize) -> Result<TaskStatus> {
        Ok(match self.region.read_u8(self.status_at(index))? {
            0 => TaskStatus::Pending,
            _ => TaskStatus::Done,
        })
    }

    /// Records the answer (flushed) and then marks the task done (flushed).
    pub fn complete(&self, index: usize, answer: u64) -> Result<()> {
        self.region.write_bytes(self.answer_at(index), &answer.to_le_bytes())?;
        self.region.flush(self.answer_at(index), 8)?;
        self.region.write_u8(self.valid_at(index), 1)?;
        self.region.flush(self.valid_at(index), 1)?;
        self.region.write_u8(self.status_at(index), 1)?;
        self.region.flush(self.status_at(index), 1)
    }

    pub fn pending(&self) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for i in 0..self.len()? {
            if self.status(i)? == TaskStatus::Pending {
                out.push(i);
            }
        }
        Ok(out)
    }

    pub fn done_count(&self) -> Result<usize> {
        Ok(self.len()? - self.pending()?.len())
    }

    pub fn all(&self) -> Result<Vec<TaskDescriptor>> {
        (0..self.len()?).map(|i| self.get(i)).collect()
    }
}
