//! Dynamic task-graph runtime.
//!
//! Work is expressed as tasks that return [`Future`]s. Futures compose with
//! [`Future::then`], [`Future::and_then`] and [`when_all`]; every continuation
//! is enqueued on the scheduler as an ordinary task once its predecessor
//! settles, so long chains never grow the stack. Tasks run on a fixed pool of
//! worker threads with per-worker deques (newest-first locally, oldest-first
//! when stolen) and a global injection queue for work submitted from outside.
//!
//! The only blocking entry point is [`Runtime::run_until`], reserved for the
//! external driver thread.

mod future;
mod scheduler;

pub use future::{when_all, Future, Promise};
pub use scheduler::{Handle, HoldGuard, Priority, Runtime, SchedulerStats, WORKERS_ENV};

use std::fmt;
use std::sync::Arc;

/// Failure carried by a [`Future`].
#[derive(Debug, Clone, thiserror::Error)]
pub enum TaskError {
    #[error("scheduler is shut down; task rejected")]
    Rejected,
    #[error("task panicked: {0}")]
    Panicked(String),
    #[error("promise dropped before it was resolved")]
    BrokenPromise,
    #[error("run_until called from inside a task")]
    NestedDrive,
    #[error("run_until is already being driven by another thread")]
    ConcurrentDrive,
    #[error("deadlock: no runnable or outstanding work while the awaited future is pending")]
    Deadlock,
    #[error("{0}")]
    Failed(Arc<dyn std::error::Error + Send + Sync>),
}

impl TaskError {
    /// Wraps an arbitrary error.
    pub fn failed<E>(err: E) -> Self
    where
        E: std::error::Error + Send + Sync + 'static,
    {
        TaskError::Failed(Arc::new(err))
    }

    /// Plain-text failure.
    pub fn msg(text: impl Into<String>) -> Self {
        TaskError::failed(Message(text.into()))
    }

    /// Returns the wrapped error if it is of type `E`.
    pub fn downcast_ref<E: std::error::Error + 'static>(&self) -> Option<&E> {
        match self {
            TaskError::Failed(inner) => inner.downcast_ref::<E>(),
            _ => None,
        }
    }
}

#[derive(Debug)]
struct Message(String);

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Message {}

pub type TaskResult<T> = Result<T, TaskError>;
