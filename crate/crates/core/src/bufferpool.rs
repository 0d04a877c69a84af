//! Recycling pool for scratch buffers.
//!
//! Released buffers go back on a per-tag free list and stay allocated, so a
//! steady-state timestep draws everything it needs from buffers created
//! during the first one. Sizes are element counts of `f64`.
//!
//! Reuse rule: the smallest free buffer under the same tag whose capacity
//! covers the request; otherwise a fresh buffer of exactly the requested
//! size. Leases are zeroed either way.

use std::collections::HashMap;
use std::ops::{Deref, DerefMut};
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PoolError {
    #[error("buffer size must be positive")]
    ZeroSize,
    #[error("buffer lease released twice")]
    DoubleRelease,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Fresh,
    Recycled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolStats {
    /// Buffers currently owned by the pool (live + free).
    pub total_created: u64,
    pub live: u64,
    pub free: u64,
    pub reused: u64,
    /// Fresh allocations over the pool's lifetime.
    pub allocations: u64,
    /// Sum over tags of the largest simultaneous lease count.
    pub peak_live: u64,
}

#[derive(Default)]
struct TagState {
    free: Vec<Vec<f64>>,
    live: u64,
    peak: u64,
}

#[derive(Default)]
struct State {
    tags: HashMap<&'static str, TagState>,
    total_created: u64,
    live: u64,
    reused: u64,
    allocations: u64,
}

struct Inner {
    enabled: bool,
    state: Mutex<State>,
}

/// Thread-safe, cheaply cloneable pool handle.
#[derive(Clone)]
pub struct BufferPool {
    inner: Arc<Inner>,
}

impl Default for BufferPool {
    fn default() -> Self {
        BufferPool::new(true)
    }
}

impl std::fmt::Debug for BufferPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BufferPool").field("stats", &self.stats()).finish()
    }
}

impl BufferPool {
    /// A disabled pool hands out fresh buffers and frees them on release.
    pub fn new(enabled: bool) -> Self {
        BufferPool {
            inner: Arc::new(Inner {
                enabled,
                state: Mutex::new(State::default()),
            }),
        }
    }

    pub fn enabled(&self) -> bool {
        self.inner.enabled
    }

    pub fn acquire(&self, size: usize, tag: &'static str) -> Result<BufferLease, PoolError> {
        if size == 0 {
            return Err(PoolError::ZeroSize);
        }
        let mut st = self.inner.state.lock().unwrap();
        let tag_state = st.tags.entry(tag).or_default();
        let best = tag_state
            .free
            .iter()
            .enumerate()
            .filter(|(_, b)| b.len() >= size)
            .min_by_key(|(_, b)| b.len())
            .map(|(i, _)| i);
        let (mut buf, origin) = match best {
            Some(i) => (tag_state.free.swap_remove(i), Origin::Recycled),
            None => (Vec::new(), Origin::Fresh),
        };
        tag_state.live += 1;
        tag_state.peak = tag_state.peak.max(tag_state.live);
        st.live += 1;
        match origin {
            Origin::Recycled => st.reused += 1,
            Origin::Fresh => {
                st.total_created += 1;
                st.allocations += 1;
            }
        }
        drop(st);
        match origin {
            Origin::Recycled => buf[..size].fill(0.0),
            Origin::Fresh => buf = vec![0.0; size],
        }
        Ok(BufferLease {
            pool: Some(Arc::clone(&self.inner)),
            buf,
            len: size,
            tag,
            origin,
        })
    }

    pub fn stats(&self) -> PoolStats {
        let st = self.inner.state.lock().unwrap();
        PoolStats {
            total_created: st.total_created,
            live: st.live,
            free: st.tags.values().map(|t| t.free.len() as u64).sum(),
            reused: st.reused,
            allocations: st.allocations,
            peak_live: st.tags.values().map(|t| t.peak).sum(),
        }
    }

    /// Frees every buffer on the free lists.
    pub fn drain(&self) {
        let mut st = self.inner.state.lock().unwrap();
        let mut dropped = 0;
        for t in st.tags.values_mut() {
            dropped += t.free.len() as u64;
            t.free.clear();
        }
        st.total_created -= dropped;
    }
}

impl Inner {
    fn give_back(&self, tag: &'static str, buf: Vec<f64>) {
        let mut st = self.state.lock().unwrap();
        st.live -= 1;
        let enabled = self.enabled;
        let tag_state = st.tags.get_mut(tag).expect("lease tag registered");
        tag_state.live -= 1;
        if enabled {
            tag_state.free.push(buf);
        } else {
            st.total_created -= 1;
        }
    }
}

/// A zeroed scratch buffer drawn from a [`BufferPool`]. Returned to the pool
/// on [`BufferLease::release`] or drop.
pub struct BufferLease {
    pool: Option<Arc<Inner>>,
    buf: Vec<f64>,
    len: usize,
    tag: &'static str,
    origin: Origin,
}

impl BufferLease {
    pub fn tag(&self) -> &'static str {
        self.tag
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn capacity(&self) -> usize {
        self.buf.len()
    }

    pub fn is_live(&self) -> bool {
        self.pool.is_some()
    }

    pub fn release(&mut self) -> Result<(), PoolError> {
        let pool = self.pool.take().ok_or(PoolError::DoubleRelease)?;
        pool.give_back(self.tag, std::mem::take(&mut self.buf));
        self.len = 0;
        Ok(())
    }
}

impl Deref for BufferLease {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.buf[..self.len]
    }
}

impl DerefMut for BufferLease {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.buf[..self.len]
    }
}

impl Drop for BufferLease {
    fn drop(&mut self) {
        if self.pool.is_some() {
            let _ = self.release();
        }
    }
}

impl std::fmt::Debug for BufferLease {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BufferLease")
            .field("tag", &self.tag)
            .field("len", &self.len)
            .field("capacity", &self.buf.len())
            .field("origin", &self.origin)
            .finish()
    }
}
