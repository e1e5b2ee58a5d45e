use std::collections::HashMap;
use std::sync::Arc;

use super::context::CallContext;
use crate::error::{Error, Result};
use crate::pstack::DUMMY_FUNCTION_ID;

/// Body or recover function. Receives the frame's arguments and returns the
/// 8-byte answer (or a heap offset, for large answers).
pub type Function = Arc<dyn Fn(&mut CallContext<'_>, &[u8]) -> Result<u64> + Send + Sync>;

/// Id of the built-in task wrapper that every worker calls first.
pub const TASK_ENTRY: u64 = u64::MAX;

#[derive(Clone)]
pub struct FunctionEntry {
    pub id: u64,
    pub body: Function,
    pub recover: Function,
}

impl std::fmt::Debug for FunctionEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FunctionEntry").field("id", &self.id).finish_non_exhaustive()
    }
}

/// Function table shared by all workers. Ids are chosen by the application
/// and must be the same in every run that touches the image.
#[derive(Clone, Default, Debug)]
pub struct Registry {
    entries: HashMap<u64, FunctionEntry>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register<B, R>(&mut self, id: u64, body: B, recover: R) -> Result<()>
    where
        B: Fn(&mut CallContext<'_>, &[u8]) -> Result<u64> + Send + Sync + 'static,
        R: Fn(&mut CallContext<'_>, &[u8]) -> Result<u64> + Send + Sync + 'static,
    {
        if id == DUMMY_FUNCTION_ID || id == TASK_ENTRY {
            return Err(Error::ReservedFunction(id));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::DuplicateFunction(id));
        }
        self.entries.insert(id, FunctionEntry { id, body: Arc::new(body), recover: Arc::new(recover) });
        Ok(())
    }

    pub fn get(&self, id: u64) -> Result<&FunctionEntry> {
        self.entries.get(&id).ok_or(Error::UnknownFunction(id))
    }

    pub fn contains(&self, id: u64) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_and_reserved_ids_rejected() {
        let mut r = Registry::new();
        r.register(7, |_, _| Ok(1), |_, _| Ok(1)).unwrap();
        assert!(matches!(r.register(7, |_, _| Ok(1), |_, _| Ok(1)), Err(Error::DuplicateFunction(7))));
        assert!(matches!(r.register(0, |_, _| Ok(1), |_, _| Ok(1)), Err(Error::ReservedFunction(0))));
        assert!(matches!(r.register(TASK_ENTRY, |_, _| Ok(1), |_, _| Ok(1)), Err(Error::ReservedFunction(_))));
        assert!(matches!(r.get(8), Err(Error::UnknownFunction(8))));
        assert_eq!(r.get(7).unwrap().id, 7);
    }
}
