//! Executor pool and dynamic work aggregation.
//!
//! Many small launches of the same kernel are fused into one launch over a
//! packed buffer when the executors are busy, and issued eagerly when the
//! leased executor is otherwise idle. Slices are packed contiguously at
//! `index * slice_size`; a fused launch's per-slice outputs are bitwise
//! identical to solo launches because kernels treat slices independently.
//!
//! An executor stays leased until every output of its launch is dropped, so
//! "busy" means results not yet consumed. Callers that hold outputs until a
//! phase ends see a launch pattern fixed by submission order alone.

use std::ops::Deref;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::bufferpool::{BufferLease, BufferPool};
use crate::taskgraph::{Future, Handle, Priority, Promise, TaskError};

/// Default number of slices a region fuses into one launch.
pub const DEFAULT_MAX_SLICES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KernelId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregationError {
    #[error("slice has {got} elements, region expects {expected}")]
    SliceLength { expected: usize, got: usize },
    #[error("region already flushed")]
    Closed,
    #[error("max_slices must be positive")]
    ZeroMaxSlices,
    #[error("executor pool must not be empty")]
    EmptyPool,
}

/// A kernel that processes `slices` consecutive slices of a packed buffer.
pub trait BatchKernel: Send + Sync + 'static {
    fn kernel_id(&self) -> KernelId;
    /// Elements per input slice.
    fn input_len(&self) -> usize;
    /// Elements per output slice.
    fn output_len(&self) -> usize;
    fn run(&self, input: &[f64], output: &mut [f64], slices: usize);
}

struct ExecutorSlots {
    in_flight: Vec<AtomicUsize>,
    cursor: Mutex<usize>,
}

/// Pre-allocated launch contexts, leased by least load.
#[derive(Clone)]
pub struct ExecutorPool {
    slots: Arc<ExecutorSlots>,
}

impl std::fmt::Debug for ExecutorPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExecutorPool")
            .field("in_flight", &self.in_flight())
            .finish()
    }
}

impl ExecutorPool {
    pub fn new(size: usize) -> Result<Self, AggregationError> {
        if size == 0 {
            return Err(AggregationError::EmptyPool);
        }
        Ok(ExecutorPool {
            slots: Arc::new(ExecutorSlots {
                in_flight: (0..size).map(|_| AtomicUsize::new(0)).collect(),
                cursor: Mutex::new(0),
            }),
        })
    }

    pub fn len(&self) -> usize {
        self.slots.in_flight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.in_flight.is_empty()
    }

    /// Leases the executor with the fewest in-flight launches; ties go to the
    /// first one at or after the round-robin cursor.
    pub fn acquire(&self) -> ExecutorLease {
        let n = self.len();
        let mut cursor = self.slots.cursor.lock().unwrap();
        let mut best = *cursor;
        let mut best_load = usize::MAX;
        for step in 0..n {
            let i = (*cursor + step) % n;
            let load = self.slots.in_flight[i].load(Ordering::SeqCst);
            if load < best_load {
                best = i;
                best_load = load;
            }
        }
        self.slots.in_flight[best].fetch_add(1, Ordering::SeqCst);
        *cursor = (best + 1) % n;
        ExecutorLease {
            slots: Arc::clone(&self.slots),
            index: best,
        }
    }

    pub fn in_flight(&self) -> Vec<usize> {
        self.slots.in_flight.iter().map(|c| c.load(Ordering::SeqCst)).collect()
    }
}

/// Pins one executor; its in-flight counter drops when the lease does.
pub struct ExecutorLease {
    slots: Arc<ExecutorSlots>,
    index: usize,
}

impl ExecutorLease {
    pub fn index(&self) -> usize {
        self.index
    }

    /// In-flight launches on this executor, including this lease.
    pub fn load(&self) -> usize {
        self.slots.in_flight[self.index].load(Ordering::SeqCst)
    }
}

impl Drop for ExecutorLease {
    fn drop(&mut self) {
        self.slots.in_flight[self.index].fetch_sub(1, Ordering::SeqCst);
    }
}

impl std::fmt::Debug for ExecutorLease {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ExecutorLease({})", self.index)
    }
}

/// Counters shared by every region of one locality.
#[derive(Debug, Default)]
pub struct AggregationStats {
    launches: AtomicU64,
    fused_slices: AtomicU64,
    solo_launches: AtomicU64,
    slices: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AggregationCounters {
    pub launches: u64,
    /// Slices that ran inside launches of two or more slices.
    pub fused_slices: u64,
    pub solo_launches: u64,
    pub slices: u64,
}

impl AggregationStats {
    pub fn snapshot(&self) -> AggregationCounters {
        AggregationCounters {
            launches: self.launches.load(Ordering::Relaxed),
            fused_slices: self.fused_slices.load(Ordering::Relaxed),
            solo_launches: self.solo_launches.load(Ordering::Relaxed),
            slices: self.slices.load(Ordering::Relaxed),
        }
    }

    fn record(&self, slice_count: usize) {
        self.launches.fetch_add(1, Ordering::Relaxed);
        self.slices.fetch_add(slice_count as u64, Ordering::Relaxed);
        if slice_count == 1 {
            self.solo_launches.fetch_add(1, Ordering::Relaxed);
        } else {
            self.fused_slices.fetch_add(slice_count as u64, Ordering::Relaxed);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregationConfig {
    pub enabled: bool,
    pub max_slices: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            enabled: true,
            max_slices: DEFAULT_MAX_SLICES,
        }
    }
}

impl AggregationConfig {
    pub fn effective_max_slices(&self) -> usize {
        if self.enabled {
            self.max_slices
        } else {
            1
        }
    }
}

enum Storage {
    Pooled(BufferLease),
    Owned(Vec<f64>),
}

impl Storage {
    fn new(pool: Option<&BufferPool>, len: usize, tag: &'static str) -> Storage {
        match pool {
            Some(p) => Storage::Pooled(p.acquire(len, tag).expect("positive packed size")),
            None => Storage::Owned(vec![0.0; len]),
        }
    }

    fn as_slice(&self) -> &[f64] {
        match self {
            Storage::Pooled(l) => l,
            Storage::Owned(v) => v,
        }
    }

    fn as_mut_slice(&mut self) -> &mut [f64] {
        match self {
            Storage::Pooled(l) => l,
            Storage::Owned(v) => v,
        }
    }
}

/// Packed buffers of a finished launch. Holds the executor lease, so the
/// executor counts as busy until every [`SliceOutput`] is dropped.
struct Settled {
    output: Storage,
    _input: Storage,
    _lease: ExecutorLease,
}

/// One slice's view into a launch's packed output.
#[derive(Clone)]
pub struct SliceOutput {
    packed: Arc<Settled>,
    offset: usize,
    len: usize,
}

impl Deref for SliceOutput {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.packed.output.as_slice()[self.offset..self.offset + self.len]
    }
}

impl std::fmt::Debug for SliceOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SliceOutput")
            .field("offset", &self.offset)
            .field("len", &self.len)
            .finish()
    }
}

/// Description of one launch, as issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusedLaunch {
    pub kernel_id: KernelId,
    pub executor: usize,
    pub slice_count: usize,
}

impl FusedLaunch {
    pub fn slice_offset(&self, index: usize, slice_size: usize) -> usize {
        index * slice_size
    }
}

struct Batch {
    packed: Storage,
    promises: Vec<Promise<SliceOutput>>,
    lease: ExecutorLease,
}

struct RegionState {
    batch: Option<Batch>,
    flushed: bool,
    launches: Vec<FusedLaunch>,
}

struct RegionShared {
    kernel: Arc<dyn BatchKernel>,
    max_slices: usize,
    executors: ExecutorPool,
    buffers: Option<BufferPool>,
    handle: Handle,
    stats: Arc<AggregationStats>,
    state: Mutex<RegionState>,
}

/// Collects slices for one kernel and launches them, fused when executors
/// are busy.
#[derive(Clone)]
pub struct AggregationRegion {
    shared: Arc<RegionShared>,
}

impl AggregationRegion {
    pub fn new(
        handle: Handle,
        kernel: Arc<dyn BatchKernel>,
        max_slices: usize,
        executors: ExecutorPool,
        buffers: Option<BufferPool>,
        stats: Arc<AggregationStats>,
    ) -> Result<Self, AggregationError> {
        if max_slices == 0 {
            return Err(AggregationError::ZeroMaxSlices);
        }
        Ok(AggregationRegion {
            shared: Arc::new(RegionShared {
                kernel,
                max_slices,
                executors,
                buffers,
                handle,
                stats,
                state: Mutex::new(RegionState {
                    batch: None,
                    flushed: false,
                    launches: Vec::new(),
                }),
            }),
        })
    }

    pub fn kernel_id(&self) -> KernelId {
        self.shared.kernel.kernel_id()
    }

    pub fn slice_size(&self) -> usize {
        self.shared.kernel.input_len()
    }

    pub fn max_slices(&self) -> usize {
        self.shared.max_slices
    }

    /// Queues one slice. Launches when the batch is full or when no other
    /// work holds the batch's executor.
    pub fn submit_slice(&self, input: &[f64]) -> Result<Future<SliceOutput>, AggregationError> {
        let sh = &*self.shared;
        let slice_size = sh.kernel.input_len();
        if input.len() != slice_size {
            return Err(AggregationError::SliceLength {
                expected: slice_size,
                got: input.len(),
            });
        }
        let mut st = sh.state.lock().unwrap();
        if st.flushed {
            return Err(AggregationError::Closed);
        }
        let batch = st.batch.get_or_insert_with(|| Batch {
            packed: Storage::new(sh.buffers.as_ref(), sh.max_slices * slice_size, "agg.in"),
            promises: Vec::with_capacity(sh.max_slices),
            lease: sh.executors.acquire(),
        });
        let at = batch.promises.len() * slice_size;
        batch.packed.as_mut_slice()[at..at + slice_size].copy_from_slice(input);
        let (promise, fut) = sh.handle.promise();
        batch.promises.push(promise);
        let executor_idle = batch.lease.load() <= 1;
        if batch.promises.len() == sh.max_slices || executor_idle {
            let batch = st.batch.take().expect("open batch");
            self.launch(&mut st, batch);
        }
        Ok(fut)
    }

    /// Launches any queued slices and closes the region. Idempotent.
    pub fn flush(&self) {
        let mut st = self.shared.state.lock().unwrap();
        if let Some(batch) = st.batch.take() {
            self.launch(&mut st, batch);
        }
        st.flushed = true;
    }

    /// Launches issued so far, in issue order.
    pub fn launches(&self) -> Vec<FusedLaunch> {
        self.shared.state.lock().unwrap().launches.clone()
    }

    fn launch(&self, st: &mut RegionState, batch: Batch) {
        let sh = Arc::clone(&self.shared);
        let count = batch.promises.len();
        st.launches.push(FusedLaunch {
            kernel_id: sh.kernel.kernel_id(),
            executor: batch.lease.index(),
            slice_count: count,
        });
        sh.stats.record(count);
        let handle = sh.handle.clone();
        let task = move || {
            let Batch {
                packed,
                promises,
                lease,
            } = batch;
            let in_len = sh.kernel.input_len();
            let out_len = sh.kernel.output_len();
            // full-batch size so every launch can reuse any pooled buffer
            let mut out = Storage::new(sh.buffers.as_ref(), sh.max_slices * out_len, "agg.out");
            let ran = catch_unwind(AssertUnwindSafe(|| {
                sh.kernel.run(
                    &packed.as_slice()[..count * in_len],
                    &mut out.as_mut_slice()[..count * out_len],
                    count,
                )
            }));
            match ran {
                Ok(()) => {
                    let out = Arc::new(Settled {
                        output: out,
                        _input: packed,
                        _lease: lease,
                    });
                    for (i, p) in promises.into_iter().enumerate() {
                        p.set(SliceOutput {
                            packed: Arc::clone(&out),
                            offset: i * out_len,
                            len: out_len,
                        });
                    }
                }
                Err(_) => {
                    for p in promises {
                        p.fail(TaskError::msg("kernel launch panicked"));
                    }
                }
            }
        };
        // Result futures settle through the promises; the spawn future itself
        // carries nothing.
        drop(handle.spawn(Priority::Normal, task));
    }
}

impl Drop for RegionShared {
    fn drop(&mut self) {
        let st = self.state.get_mut().unwrap();
        if st.batch.is_some() {
            log::warn!("aggregation region dropped with unlaunched slices");
        }
    }
}
