use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};

use super::scheduler::{panic_message, Handle, Priority};
use super::{TaskError, TaskResult};

type Callback<T> = Box<dyn FnOnce(TaskResult<T>) + Send + 'static>;

enum Waiter<T> {
    /// Enqueued as an ordinary task once the future settles.
    Task(Callback<T>),
    /// Invoked directly on the settling thread (driver wake-ups only).
    Inline(Callback<T>),
}

enum State<T> {
    Pending(Option<Waiter<T>>),
    Settled(TaskResult<T>),
    Consumed,
}

struct Cell<T> {
    state: Mutex<State<T>>,
}

/// Eventual value produced by a task.
///
/// A future has a single consumer: continuation combinators take it by value.
/// It transitions from pending to settled exactly once.
pub struct Future<T> {
    cell: Arc<Cell<T>>,
    handle: Handle,
}

/// Write side of a [`Future`]. Dropping an unresolved promise fails the
/// future with [`TaskError::BrokenPromise`].
pub struct Promise<T: Send + 'static> {
    cell: Option<Arc<Cell<T>>>,
    handle: Handle,
}

impl<T: Send + 'static> Promise<T> {
    pub(crate) fn pair(handle: Handle) -> (Promise<T>, Future<T>) {
        let cell = Arc::new(Cell {
            state: Mutex::new(State::Pending(None)),
        });
        (
            Promise {
                cell: Some(Arc::clone(&cell)),
                handle: handle.clone(),
            },
            Future { cell, handle },
        )
    }

    pub fn set(self, value: T) {
        self.settle(Ok(value));
    }

    pub fn fail(self, err: TaskError) {
        self.settle(Err(err));
    }

    pub fn settle(mut self, result: TaskResult<T>) {
        if let Some(cell) = self.cell.take() {
            settle_cell(&cell, &self.handle, result);
        }
    }
}

impl<T: Send + 'static> Drop for Promise<T> {
    fn drop(&mut self) {
        if let Some(cell) = self.cell.take() {
            settle_cell(&cell, &self.handle, Err(TaskError::BrokenPromise));
        }
    }
}

fn settle_cell<T: Send + 'static>(cell: &Cell<T>, handle: &Handle, result: TaskResult<T>) {
    let mut state = cell.state.lock().unwrap();
    match std::mem::replace(&mut *state, State::Consumed) {
        State::Pending(None) => *state = State::Settled(result),
        State::Pending(Some(waiter)) => {
            drop(state);
            dispatch(handle, waiter, result);
        }
        State::Settled(_) | State::Consumed => unreachable!("future settled twice"),
    }
}

fn dispatch<T: Send + 'static>(handle: &Handle, waiter: Waiter<T>, result: TaskResult<T>) {
    match waiter {
        Waiter::Task(cb) => handle.push(Priority::Normal, Box::new(move || cb(result))),
        Waiter::Inline(cb) => cb(result),
    }
}

impl<T> std::fmt::Debug for Future<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let state = match &*self.cell.state.lock().unwrap() {
            State::Pending(_) => "pending",
            State::Settled(Ok(_)) => "ready",
            State::Settled(Err(_)) => "failed",
            State::Consumed => "consumed",
        };
        write!(f, "Future({state})")
    }
}

impl<T: Send + 'static> Future<T> {
    pub(crate) fn settled(handle: Handle, result: TaskResult<T>) -> Self {
        Future {
            cell: Arc::new(Cell {
                state: Mutex::new(State::Settled(result)),
            }),
            handle,
        }
    }

    pub fn handle(&self) -> &Handle {
        &self.handle
    }

    pub fn is_ready(&self) -> bool {
        matches!(&*self.cell.state.lock().unwrap(), State::Settled(_))
    }

    fn attach(self, waiter: Waiter<T>) {
        let mut state = self.cell.state.lock().unwrap();
        match std::mem::replace(&mut *state, State::Consumed) {
            State::Pending(None) => *state = State::Pending(Some(waiter)),
            State::Settled(result) => {
                drop(state);
                dispatch(&self.handle, waiter, result);
            }
            State::Pending(Some(_)) | State::Consumed => {
                unreachable!("future consumed twice")
            }
        }
    }

    /// Registers a callback that runs as a task after this future settles.
    pub fn on_settle<F>(self, cb: F)
    where
        F: FnOnce(TaskResult<T>) + Send + 'static,
    {
        self.attach(Waiter::Task(Box::new(cb)));
    }

    pub(crate) fn on_settle_inline<F>(self, cb: F)
    where
        F: FnOnce(TaskResult<T>) + Send + 'static,
    {
        self.attach(Waiter::Inline(Box::new(cb)));
    }

    /// Runs `cont` with the value once ready. Failures skip `cont` and
    /// propagate.
    pub fn then<U, F>(self, cont: F) -> Future<U>
    where
        U: Send + 'static,
        F: FnOnce(T) -> U + Send + 'static,
    {
        self.try_then(move |v| Ok(cont(v)))
    }

    pub fn try_then<U, F>(self, cont: F) -> Future<U>
    where
        U: Send + 'static,
        F: FnOnce(T) -> TaskResult<U> + Send + 'static,
    {
        let (promise, fut) = self.handle.promise();
        self.on_settle(move |result| match result {
            Ok(v) => promise.settle(run_guarded(move || cont(v))),
            Err(e) => promise.fail(e),
        });
        fut
    }

    /// Continuation that itself returns a future; the result is flattened.
    pub fn and_then<U, F>(self, cont: F) -> Future<U>
    where
        U: Send + 'static,
        F: FnOnce(T) -> Future<U> + Send + 'static,
    {
        let (promise, fut) = self.handle.promise();
        self.on_settle(move |result| match result {
            Ok(v) => match catch_unwind(AssertUnwindSafe(move || cont(v))) {
                Ok(inner) => inner.on_settle(move |r| promise.settle(r)),
                Err(p) => promise.fail(TaskError::Panicked(panic_message(p.as_ref()))),
            },
            Err(e) => promise.fail(e),
        });
        fut
    }

    /// Splits one future into `n` futures that each receive a clone of the
    /// outcome.
    pub fn fork(self, n: usize) -> Vec<Future<T>>
    where
        T: Clone,
    {
        let (promises, futures): (Vec<_>, Vec<_>) = (0..n).map(|_| self.handle.promise()).unzip();
        self.on_settle(move |result| {
            for p in promises {
                p.settle(result.clone());
            }
        });
        futures
    }

    /// Maps a failure; successes pass through.
    pub fn map_err<F>(self, f: F) -> Future<T>
    where
        F: FnOnce(TaskError) -> TaskError + Send + 'static,
    {
        let (promise, fut) = self.handle.promise();
        self.on_settle(move |result| promise.settle(result.map_err(f)));
        fut
    }
}

fn run_guarded<U>(f: impl FnOnce() -> TaskResult<U>) -> TaskResult<U> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(TaskError::Panicked(panic_message(p.as_ref()))),
    }
}

struct Join<T: Send + 'static> {
    slots: Vec<Option<TaskResult<T>>>,
    remaining: usize,
    promise: Option<Promise<Vec<T>>>,
}

/// Ready once every input is ready, with values in input order. If any
/// input fails, the result fails with the lowest-index failure.
pub fn when_all<T: Send + 'static>(handle: &Handle, futures: Vec<Future<T>>) -> Future<Vec<T>> {
    if futures.is_empty() {
        return handle.ready(Vec::new());
    }
    let (promise, fut) = handle.promise();
    let n = futures.len();
    let join = Arc::new(Mutex::new(Join {
        slots: (0..n).map(|_| None).collect(),
        remaining: n,
        promise: Some(promise),
    }));
    for (index, f) in futures.into_iter().enumerate() {
        let join = Arc::clone(&join);
        f.on_settle(move |result| {
            let mut j = join.lock().unwrap();
            j.slots[index] = Some(result);
            j.remaining -= 1;
            if j.remaining == 0 {
                let promise = j.promise.take().expect("join promise");
                let slots = std::mem::take(&mut j.slots);
                drop(j);
                let mut values = Vec::with_capacity(slots.len());
                for slot in slots {
                    match slot.expect("every slot settled") {
                        Ok(v) => values.push(v),
                        Err(e) => return promise.fail(e),
                    }
                }
                promise.set(values);
            }
        });
    }
    fut
}
