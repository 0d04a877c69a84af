use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_deque::{Injector, Steal, Stealer, Worker};

use super::future::{Future, Promise};
use super::{TaskError, TaskResult};

/// Environment variable overriding the configured worker count.
pub const WORKERS_ENV: &str = "TASKMESH_WORKERS";

pub(crate) type Task = Box<dyn FnOnce() + Send + 'static>;

static NEXT_RUNTIME_ID: AtomicUsize = AtomicUsize::new(1);

/// Dequeue priority. High-priority tasks are taken before normal ones from
/// the same queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Priority {
    #[default]
    Normal,
    High,
}

impl Priority {
    fn slot(self) -> usize {
        match self {
            Priority::High => 0,
            Priority::Normal => 1,
        }
    }
}

/// Diagnostic counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SchedulerStats {
    pub workers: usize,
    pub spawned: u64,
    pub executed: u64,
    pub steals: u64,
    pub max_queue_depth: u64,
}

struct Shared {
    id: usize,
    workers: usize,
    injector: [Injector<Task>; 2],
    stealers: Vec<[Stealer<Task>; 2]>,
    /// Queued plus running tasks.
    outstanding: AtomicUsize,
    /// External holds: work in flight outside the worker pool (remote replies,
    /// expected inbound messages).
    holds: AtomicUsize,
    sleepers: AtomicUsize,
    sleep_lock: Mutex<()>,
    wake: Condvar,
    shutdown: AtomicBool,
    driving: AtomicBool,
    spawned: AtomicUsize,
    executed: AtomicUsize,
    steals: AtomicUsize,
    max_depth: AtomicUsize,
}

struct WorkerCtx {
    runtime: usize,
    local: [Worker<Task>; 2],
}

thread_local! {
    static CURRENT: RefCell<Option<WorkerCtx>> = const { RefCell::new(None) };
}

/// Owning handle to a worker pool; joins its threads on drop.
pub struct Runtime {
    handle: Handle,
    threads: Vec<JoinHandle<()>>,
}

/// Cloneable, thread-safe reference to a running scheduler.
#[derive(Clone)]
pub struct Handle {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for Handle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Handle")
            .field("id", &self.shared.id)
            .field("workers", &self.shared.workers)
            .finish()
    }
}

impl Runtime {
    /// Starts `workers` worker threads (at least one).
    pub fn new(workers: usize) -> Self {
        let workers = workers.max(1);
        let id = NEXT_RUNTIME_ID.fetch_add(1, Ordering::Relaxed);
        let locals: Vec<[Worker<Task>; 2]> = (0..workers).map(|_| [Worker::new_lifo(), Worker::new_lifo()]).collect();
        let stealers = locals.iter().map(|[hi, lo]| [hi.stealer(), lo.stealer()]).collect();
        let shared = Arc::new(Shared {
            id,
            workers,
            injector: [Injector::new(), Injector::new()],
            stealers,
            outstanding: AtomicUsize::new(0),
            holds: AtomicUsize::new(0),
            sleepers: AtomicUsize::new(0),
            sleep_lock: Mutex::new(()),
            wake: Condvar::new(),
            shutdown: AtomicBool::new(false),
            driving: AtomicBool::new(false),
            spawned: AtomicUsize::new(0),
            executed: AtomicUsize::new(0),
            steals: AtomicUsize::new(0),
            max_depth: AtomicUsize::new(0),
        });
        let threads = locals
            .into_iter()
            .enumerate()
            .map(|(index, local)| {
                let shared = Arc::clone(&shared);
                thread::Builder::new()
                    .name(format!("taskmesh-worker-{id}.{index}"))
                    .spawn(move || worker_main(shared, index, local))
                    .expect("failed to spawn worker thread")
            })
            .collect();
        Runtime {
            handle: Handle { shared },
            threads,
        }
    }

    /// Uses `TASKMESH_WORKERS` when set to a positive integer, else `default`.
    pub fn from_env(default: usize) -> Self {
        Runtime::new(workers_from_env(default))
    }

    pub fn handle(&self) -> &Handle {
        &self.handle
    }

    /// Drives the scheduler until `fut` settles.
    ///
    /// Must be called from the external driver thread. Fails with
    /// [`TaskError::Deadlock`] if no task is queued or running and no
    /// external hold is active while `fut` is still pending.
    pub fn run_until<T: Send + 'static>(&self, fut: Future<T>) -> TaskResult<T> {
        self.handle.run_until(fut)
    }

    /// Blocks until no task is queued or running.
    pub fn quiesce(&self) {
        while self.handle.shared.outstanding.load(Ordering::SeqCst) != 0 {
            thread::sleep(Duration::from_micros(200));
        }
    }

    pub fn shutdown(&mut self) {
        self.handle.shutdown();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl std::ops::Deref for Runtime {
    type Target = Handle;
    fn deref(&self) -> &Handle {
        &self.handle
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub(crate) fn workers_from_env(default: usize) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(default)
}

/// Keeps the deadlock detector from firing while work is in flight
/// outside the worker pool.
#[must_use]
pub struct HoldGuard {
    shared: Arc<Shared>,
}

impl Drop for HoldGuard {
    fn drop(&mut self) {
        self.shared.holds.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Handle {
    pub fn workers(&self) -> usize {
        self.shared.workers
    }

    pub fn is_shut_down(&self) -> bool {
        self.shared.shutdown.load(Ordering::SeqCst)
    }

    /// Runs `work` on some worker exactly once.
    pub fn spawn<T, F>(&self, priority: Priority, work: F) -> Future<T>
    where
        T: Send + 'static,
        F: FnOnce() -> T + Send + 'static,
    {
        self.try_spawn(priority, move || Ok(work()))
    }

    /// Like [`Handle::spawn`] for fallible work; an `Err` fails the future.
    pub fn try_spawn<T, F>(&self, priority: Priority, work: F) -> Future<T>
    where
        T: Send + 'static,
        F: FnOnce() -> TaskResult<T> + Send + 'static,
    {
        if self.is_shut_down() {
            return self.failed(TaskError::Rejected);
        }
        let (promise, fut) = self.promise();
        self.push(priority, Box::new(move || promise.settle(guarded(work))));
        fut
    }

    /// A pending future together with the promise that resolves it.
    pub fn promise<T: Send + 'static>(&self) -> (Promise<T>, Future<T>) {
        Promise::pair(self.clone())
    }

    pub fn ready<T: Send + 'static>(&self, value: T) -> Future<T> {
        Future::settled(self.clone(), Ok(value))
    }

    pub fn failed<T: Send + 'static>(&self, err: TaskError) -> Future<T> {
        Future::settled(self.clone(), Err(err))
    }

    pub fn hold(&self) -> HoldGuard {
        self.shared.holds.fetch_add(1, Ordering::SeqCst);
        HoldGuard {
            shared: Arc::clone(&self.shared),
        }
    }

    /// Queued plus running tasks.
    pub fn outstanding(&self) -> usize {
        self.shared.outstanding.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> SchedulerStats {
        let s = &self.shared;
        SchedulerStats {
            workers: s.workers,
            spawned: s.spawned.load(Ordering::Relaxed) as u64,
            executed: s.executed.load(Ordering::Relaxed) as u64,
            steals: s.steals.load(Ordering::Relaxed) as u64,
            max_queue_depth: s.max_depth.load(Ordering::Relaxed) as u64,
        }
    }

    /// True when the calling thread is a worker of this scheduler.
    pub fn on_worker(&self) -> bool {
        CURRENT.with(|c| c.borrow().as_ref().is_some_and(|ctx| ctx.runtime == self.shared.id))
    }

    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        let _g = self.shared.sleep_lock.lock().unwrap();
        self.shared.wake.notify_all();
    }

    pub fn run_until<T: Send + 'static>(&self, fut: Future<T>) -> TaskResult<T> {
        if self.on_worker() {
            return Err(TaskError::NestedDrive);
        }
        if self
            .shared
            .driving
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return Err(TaskError::ConcurrentDrive);
        }
        struct Unset<'a>(&'a AtomicBool);
        impl Drop for Unset<'_> {
            fn drop(&mut self) {
                self.0.store(false, Ordering::SeqCst);
            }
        }
        let _unset = Unset(&self.shared.driving);

        let slot = Arc::new((Mutex::new(None::<TaskResult<T>>), Condvar::new()));
        let sink = Arc::clone(&slot);
        fut.on_settle_inline(move |result| {
            let (lock, cv) = &*sink;
            *lock.lock().unwrap() = Some(result);
            cv.notify_all();
        });
        let (lock, cv) = &*slot;
        let mut guard = lock.lock().unwrap();
        loop {
            if let Some(result) = guard.take() {
                return result;
            }
            let idle =
                self.shared.outstanding.load(Ordering::SeqCst) == 0 && self.shared.holds.load(Ordering::SeqCst) == 0;
            if idle {
                // Settling happens inside a task, before that task is retired,
                // so an empty slot at zero outstanding work is final.
                if let Some(result) = guard.take() {
                    return result;
                }
                return Err(TaskError::Deadlock);
            }
            guard = cv.wait_timeout(guard, Duration::from_millis(2)).unwrap().0;
        }
    }

    pub(crate) fn push(&self, priority: Priority, task: Task) {
        let s = &*self.shared;
        s.outstanding.fetch_add(1, Ordering::SeqCst);
        s.spawned.fetch_add(1, Ordering::Relaxed);
        let task = CURRENT.with(|c| {
            let borrow = c.borrow();
            match borrow.as_ref() {
                Some(ctx) if ctx.runtime == s.id => {
                    let q = &ctx.local[priority.slot()];
                    q.push(task);
                    s.max_depth.fetch_max(q.len(), Ordering::Relaxed);
                    None
                }
                _ => Some(task),
            }
        });
        if let Some(task) = task {
            let q = &s.injector[priority.slot()];
            q.push(task);
            s.max_depth.fetch_max(q.len(), Ordering::Relaxed);
        }
        if s.sleepers.load(Ordering::SeqCst) > 0 {
            let _g = s.sleep_lock.lock().unwrap();
            s.wake.notify_one();
        }
    }
}

fn guarded<T>(work: impl FnOnce() -> TaskResult<T>) -> TaskResult<T> {
    match catch_unwind(AssertUnwindSafe(work)) {
        Ok(result) => result,
        Err(payload) => Err(TaskError::Panicked(panic_message(payload.as_ref()))),
    }
}

pub(crate) fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

fn steal_from<T>(mut op: impl FnMut() -> Steal<T>) -> Option<T> {
    loop {
        match op() {
            Steal::Success(t) => return Some(t),
            Steal::Empty => return None,
            Steal::Retry => continue,
        }
    }
}

impl Shared {
    fn find_task(&self, index: usize) -> Option<Task> {
        let local = CURRENT.with(|c| {
            let borrow = c.borrow();
            let ctx = borrow.as_ref().expect("worker context");
            ctx.local[0].pop().or_else(|| ctx.local[1].pop())
        });
        if local.is_some() {
            return local;
        }
        for slot in 0..2 {
            if let Some(t) = steal_from(|| self.injector[slot].steal()) {
                return Some(t);
            }
        }
        let n = self.stealers.len();
        for slot in 0..2 {
            for offset in 1..n {
                let victim = (index + offset) % n;
                if let Some(t) = steal_from(|| self.stealers[victim][slot].steal()) {
                    self.steals.fetch_add(1, Ordering::Relaxed);
                    return Some(t);
                }
            }
        }
        None
    }

    fn has_work(&self) -> bool {
        self.injector.iter().any(|q| !q.is_empty())
            || self.stealers.iter().any(|pair| pair.iter().any(|s| !s.is_empty()))
    }
}

fn worker_main(shared: Arc<Shared>, index: usize, local: [Worker<Task>; 2]) {
    CURRENT.with(|c| {
        *c.borrow_mut() = Some(WorkerCtx {
            runtime: shared.id,
            local,
        })
    });
    loop {
        if let Some(task) = shared.find_task(index) {
            // Task bodies catch their own panics; this keeps the worker and
            // the outstanding counter intact for internal callbacks.
            if let Err(payload) = catch_unwind(AssertUnwindSafe(task)) {
                log::error!("internal task panicked: {}", panic_message(payload.as_ref()));
            }
            shared.executed.fetch_add(1, Ordering::Relaxed);
            shared.outstanding.fetch_sub(1, Ordering::SeqCst);
            continue;
        }
        if shared.shutdown.load(Ordering::SeqCst) {
            break;
        }
        let guard = shared.sleep_lock.lock().unwrap();
        shared.sleepers.fetch_add(1, Ordering::SeqCst);
        if !shared.has_work() && !shared.shutdown.load(Ordering::SeqCst) {
            let _ = shared.wake.wait_timeout(guard, Duration::from_millis(10)).unwrap();
        } else {
            drop(guard);
        }
        shared.sleepers.fetch_sub(1, Ordering::SeqCst);
    }
    CURRENT.with(|c| c.borrow_mut().take());
}
