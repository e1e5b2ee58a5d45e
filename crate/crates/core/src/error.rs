use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corrupt region image: {0}")]
    CorruptImage(String),

    #[error("access [{offset}, {offset}+{len}) is outside the region of {size} bytes")]
    Bounds { offset: u64, len: u64, size: u64 },

    #[error("out of persistent memory: requested {requested} bytes")]
    OutOfMemory { requested: u64 },

    #[error("invalid free of offset {0}")]
    BadFree(u64),

    /// The region crashed (simulated). All volatile state must be discarded.
    #[error("system crash")]
    Crashed,

    #[error("frame parse error: {0}")]
    Parse(String),

    #[error("corrupt stack: {0}")]
    CorruptStack(String),

    #[error("stack overflow: frame of {needed} bytes does not fit ({available} bytes free)")]
    Overflow { needed: u64, available: u64 },

    #[error("stack underflow: only the dummy frame is present")]
    Underflow,

    #[error("stack {0} is not initialized")]
    UninitializedStack(usize),

    #[error("too many stacks: the root directory holds at most {0}")]
    TooManyStacks(usize),

    #[error("no caller frame to receive an answer")]
    NoCaller,

    #[error("function id {0} is already registered")]
    DuplicateFunction(u64),

    #[error("function id {0} is reserved")]
    ReservedFunction(u64),

    #[error("unknown function id {0}")]
    UnknownFunction(u64),

    #[error("duplicate task id {0}")]
    DuplicateTask(u64),

    #[error("task table: {0}")]
    TaskTable(String),

    #[error("cas register: {0}")]
    Rcas(String),

    #[error("log line {line}: {msg}")]
    Log { line: usize, msg: String },

    #[error("a worker thread panicked")]
    WorkerPanic,

    #[error("recovery failed: {0}")]
    Recovery(String),

    #[error("{0}")]
    App(String),
}

impl Error {
    pub fn is_crash(&self) -> bool {
        matches!(self, Error::Crashed)
    }
}
