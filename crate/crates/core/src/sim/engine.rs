//! Per-locality timestep driver.
//!
//! Every locality builds the same mesh and partition, keeps the grids it
//! owns and derives static plans for ghost passes and flux matching. One
//! step is a single future chain: snapshot, then per stage three exchange
//! passes, the stage kernels, refluxing and the stage combine. Data for
//! another locality travels through the parcel layer under a tag that names
//! the step, stage and phase, so early arrivals wait in the inbox.
//!
//! Kernel outputs are held until their stage is combined; with the
//! aggregator's lease rule this fixes the launch pattern by submission order.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aggregator::{AggregationRegion, AggregationStats, BatchKernel, ExecutorLease, ExecutorPool, SliceOutput};
use crate::amr::flux::fine_face_average;
use crate::amr::ghost::{apply, extract, fill_wall, plan_pass};
use crate::amr::{partition, reflux, Checkpoint, Face, FluxRegister, MortonKey, Neighbor, SubGrid, Transfer, Tree};
use crate::bufferpool::BufferPool;
use crate::dist::{DistError, Endpoint, GlobalId, Locality, Loopback, PortConfig, Tcp, Transport};
use crate::hydro::{
    cfl_dt, pack_slice, rk_combine_slice, signal_speed, Mode, StageKernel, StageLayout, StageStatus, RK3_STAGES,
};
use crate::taskgraph::{when_all, Future, Handle, Priority, Runtime, TaskError, TaskResult};

use super::config::{Parcelport, RunConfig};
use super::metrics::{FlopModel, Metrics, StepCounters, StepRecord};
use super::{scenario, SimError};

/// Callbacks invoked by the driver outside the timed region.
#[derive(Clone, Default)]
pub struct Hooks {
    pub after_step: Option<Arc<dyn Fn(u64) + Send + Sync>>,
}

pub struct RunOutcome {
    pub rank: usize,
    pub metrics: Metrics,
    /// Final state with every leaf filled; rank 0 only.
    pub tree: Option<Tree>,
    pub checkpoint: Option<Checkpoint>,
}

const PHASE_REFLUX: u64 = 3;
const PHASE_DT: u64 = 4;
const PHASE_STATS: u64 = 5;
const PHASE_GATHER: u64 = 6;
const PHASE_BARRIER: u64 = 7;

fn tag(step: u64, stage: usize, phase: u64) -> u64 {
    step << 8 | (stage as u64) << 4 | phase
}

fn encode(id: usize, values: &[f64]) -> Vec<u8> {
    let mut b = Vec::with_capacity(4 + 8 * values.len());
    b.extend_from_slice(&(id as u32).to_le_bytes());
    for v in values {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

fn decode(item: &[u8]) -> Result<(usize, Vec<f64>), TaskError> {
    if item.len() < 4 || !(item.len() - 4).is_multiple_of(8) {
        return Err(TaskError::msg(format!("malformed payload of {} bytes", item.len())));
    }
    let id = u32::from_le_bytes(item[..4].try_into().unwrap()) as usize;
    let values = item[4..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((id, values))
}

fn dist_err(e: DistError) -> TaskError {
    TaskError::failed(SimError::Dist(e))
}

struct Leaf {
    key: MortonKey,
    dx: f64,
    grid: Mutex<SubGrid>,
    /// Interior at the start of the step.
    u0: Mutex<Vec<f64>>,
}

struct Pass {
    transfers: Vec<Transfer>,
    /// Owned sources and the transfers they feed.
    sources: Vec<(usize, Vec<usize>)>,
    /// Owned receivers with incoming transfers and wall faces.
    receivers: Vec<(usize, Vec<usize>, Vec<Face>)>,
    remote_in: usize,
}

/// One fine leaf against one coarse face.
struct Link {
    coarse: MortonKey,
    /// Face of the coarse leaf.
    face: Face,
}

#[derive(Default)]
struct RefluxPlan {
    links: Vec<Link>,
    /// Owned fine leaves and their links.
    fine_side: Vec<(usize, Vec<usize>)>,
    /// Per owned slot: coarse faces with links in quadrant order.
    coarse_side: Vec<Vec<(Face, [usize; 4])>>,
    remote_in: usize,
}

struct Engine {
    rank: usize,
    cfg: RunConfig,
    mode: Mode,
    layout: StageLayout,
    kernel: Arc<StageKernel>,
    topology: Tree,
    owner: HashMap<MortonKey, usize>,
    owned: Vec<Arc<Leaf>>,
    /// Submission order of owned slots.
    order: Vec<usize>,
    passes: Vec<Pass>,
    reflux: RefluxPlan,
    ep: Endpoint,
    handle: Handle,
    executors: ExecutorPool,
    pool: Option<BufferPool>,
    agg: Arc<AggregationStats>,
    scratch: Mutex<Vec<f64>>,
    floors: AtomicU64,
    exchange_messages: AtomicU64,
}

impl Engine {
    fn build(cfg: &RunConfig, ep: Endpoint, handle: Handle) -> Result<Engine, SimError> {
        let rank = ep.rank();
        let mut tree = scenario::init_scenario(cfg)?;
        let leaves = tree.leaves();
        // every leaf carries the same cell count
        let parts = partition(&vec![1.0; leaves.len()], ep.size())?;
        let mut owner = HashMap::with_capacity(leaves.len());
        let mut owned = Vec::new();
        let mut slot = HashMap::new();
        for (&key, &o) in leaves.iter().zip(&parts) {
            tree.set_owner(key, o);
            owner.insert(key, o as usize);
            ep.registry().register(GlobalId::subgrid(key), o)?;
            let grid = tree.take_grid(key).expect("leaf grid");
            if o as usize == rank {
                slot.insert(key, owned.len());
                owned.push(Arc::new(Leaf {
                    key,
                    dx: tree.geometry().dx(key.level()),
                    grid: Mutex::new(grid),
                    u0: Mutex::new(Vec::new()),
                }));
            }
        }

        let mut passes = Vec::with_capacity(3);
        for axis in 0..3 {
            let plan = plan_pass(&tree, axis)?;
            let mut sources: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            let mut receivers: BTreeMap<usize, (Vec<usize>, Vec<Face>)> = BTreeMap::new();
            let mut remote_in = 0;
            for (n, t) in plan.transfers.iter().enumerate() {
                if let Some(&s) = slot.get(&t.src) {
                    sources.entry(s).or_default().push(n);
                }
                if let Some(&d) = slot.get(&t.dst) {
                    receivers.entry(d).or_default().0.push(n);
                    if !slot.contains_key(&t.src) {
                        remote_in += 1;
                    }
                }
            }
            for (key, face) in plan.walls {
                if let Some(&d) = slot.get(&key) {
                    receivers.entry(d).or_default().1.push(face);
                }
            }
            passes.push(Pass {
                transfers: plan.transfers,
                sources: sources.into_iter().collect(),
                receivers: receivers.into_iter().map(|(d, (t, w))| (d, t, w)).collect(),
                remote_in,
            });
        }

        let mut rp = RefluxPlan {
            coarse_side: vec![Vec::new(); owned.len()],
            ..Default::default()
        };
        if cfg.reflux {
            let mut fine_side: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &coarse in &leaves {
                for face in Face::ALL {
                    let Neighbor::Finer(kids) = tree.neighbor(coarse, face)? else {
                        continue;
                    };
                    let ids: [usize; 4] = std::array::from_fn(|q| rp.links.len() + q);
                    for (q, fine) in kids.into_iter().enumerate() {
                        rp.links.push(Link { coarse, face });
                        if let Some(&f) = slot.get(&fine) {
                            fine_side.entry(f).or_default().push(ids[q]);
                        }
                        if slot.contains_key(&coarse) && !slot.contains_key(&fine) {
                            rp.remote_in += 1;
                        }
                    }
                    if let Some(&c) = slot.get(&coarse) {
                        rp.coarse_side[c].push((face, ids));
                    }
                }
            }
            rp.fine_side = fine_side.into_iter().collect();
        }

        let mode = scenario::mode(cfg);
        let kernel = Arc::new(StageKernel::new(mode, cfg.edge, cfg.ghost, cfg.lanes));
        let layout = *kernel.layout();
        let mut order: Vec<usize> = (0..owned.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        Ok(Engine {
            rank,
            cfg: cfg.clone(),
            mode,
            layout,
            kernel,
            topology: tree,
            owner,
            owned,
            order,
            passes,
            reflux: rp,
            ep,
            handle,
            executors: ExecutorPool::new(cfg.executors)?,
            pool: cfg.pool.then(|| BufferPool::new(true)),
            agg: Arc::new(AggregationStats::default()),
            scratch: Mutex::new(vec![0.0; layout.input_len()]),
            floors: AtomicU64::new(0),
            exchange_messages: AtomicU64::new(0),
        })
    }

    fn cells(&self) -> u64 {
        self.topology.cell_count() as u64
    }

    fn spawn<T, F>(&self, work: F) -> Future<T>
    where
        T: Send + 'static,
        F: FnOnce() -> TaskResult<T> + Send + 'static,
    {
        self.handle.try_spawn(Priority::Normal, work)
    }

    // ---- ghost exchange ----

    fn exchange_pass(self: &Arc<Self>, step: u64, stage: usize, axis: usize) -> Future<()> {
        let tag = tag(step, stage, axis as u64);
        let before = self.ep.counters().messages_sent;
        let extracts: Vec<_> = (0..self.passes[axis].sources.len())
            .map(|i| {
                let e = Arc::clone(self);
                self.spawn(move || e.extract_source(axis, i, tag))
            })
            .collect();
        let e = Arc::clone(self);
        when_all(&self.handle, extracts).and_then(move |local| {
            if let Err(err) = e.ep.flush() {
                return e.handle.failed(dist_err(err));
            }
            let sent = e.ep.counters().messages_sent - before;
            e.exchange_messages.fetch_add(sent, Ordering::Relaxed);
            let e2 = Arc::clone(&e);
            e.ep.collect(tag, e.passes[axis].remote_in)
                .and_then(move |remote| e2.apply_pass(axis, local, remote))
        })
    }

    fn extract_source(&self, axis: usize, i: usize, tag: u64) -> TaskResult<Vec<(usize, Vec<f64>)>> {
        let pass = &self.passes[axis];
        let (slot, ids) = &pass.sources[i];
        let grid = self.owned[*slot].grid.lock().unwrap();
        let mut local = Vec::new();
        for &n in ids {
            let t = &pass.transfers[n];
            let payload = extract(&grid, t);
            let dest = self.owner[&t.dst];
            if dest == self.rank {
                local.push((n, payload));
            } else {
                self.ep.post(dest, tag, &encode(n, &payload)).map_err(dist_err)?;
            }
        }
        Ok(local)
    }

    fn apply_pass(
        self: &Arc<Self>,
        axis: usize,
        local: Vec<Vec<(usize, Vec<f64>)>>,
        remote: Vec<Vec<u8>>,
    ) -> Future<()> {
        let pass = &self.passes[axis];
        let mut payloads: Vec<Option<Vec<f64>>> = vec![None; pass.transfers.len()];
        for (n, p) in local.into_iter().flatten() {
            payloads[n] = Some(p);
        }
        for item in remote {
            match decode(&item) {
                Ok((n, p)) if n < payloads.len() => payloads[n] = Some(p),
                Ok((n, _)) => {
                    return self
                        .handle
                        .failed(TaskError::msg(format!("ghost payload for unknown transfer {n}")))
                }
                Err(e) => return self.handle.failed(e),
            }
        }
        let payloads = Arc::new(payloads);
        let applies: Vec<_> = (0..pass.receivers.len())
            .map(|r| {
                let e = Arc::clone(self);
                let payloads = Arc::clone(&payloads);
                self.spawn(move || {
                    let pass = &e.passes[axis];
                    let (slot, ids, walls) = &pass.receivers[r];
                    let mut grid = e.owned[*slot].grid.lock().unwrap();
                    for &n in ids {
                        let p = payloads[n]
                            .as_ref()
                            .ok_or_else(|| TaskError::msg(format!("missing ghost payload {n}")))?;
                        apply(&mut grid, &pass.transfers[n], p);
                    }
                    for &face in walls {
                        fill_wall(&mut grid, face);
                    }
                    Ok(())
                })
            })
            .collect();
        when_all(&self.handle, applies).then(|_| ())
    }

    // ---- stage kernels ----

    fn submit_kernels(&self, dt: f64) -> Result<Future<Vec<SliceOutput>>, SimError> {
        let max_slices = if self.cfg.aggregation { self.cfg.max_slices } else { 1 };
        let region = AggregationRegion::new(
            self.handle.clone(),
            Arc::clone(&self.kernel) as Arc<dyn BatchKernel>,
            max_slices,
            self.executors.clone(),
            self.pool.clone(),
            Arc::clone(&self.agg),
        )?;
        let saturation: Vec<ExecutorLease> = if self.cfg.saturate {
            (0..self.executors.len()).map(|_| self.executors.acquire()).collect()
        } else {
            Vec::new()
        };
        let mut scratch = self.scratch.lock().unwrap();
        let mut futs: Vec<Option<Future<SliceOutput>>> = (0..self.owned.len()).map(|_| None).collect();
        for &s in &self.order {
            let leaf = &self.owned[s];
            pack_slice(&leaf.grid.lock().unwrap(), leaf.dx, dt, &mut scratch);
            futs[s] = Some(region.submit_slice(&scratch)?);
        }
        region.flush();
        drop(saturation);
        Ok(when_all(
            &self.handle,
            futs.into_iter().map(|f| f.expect("submitted")).collect(),
        ))
    }

    fn after_kernels(self: &Arc<Self>, step: u64, stage: usize, dt: f64, outs: Vec<SliceOutput>) -> Future<()> {
        for (leaf, out) in self.owned.iter().zip(&outs) {
            let st = StageStatus::read(&self.layout, out);
            self.floors.fetch_add(st.floors, Ordering::Relaxed);
            if st.bad > 0 {
                return self.handle.failed(TaskError::failed(SimError::Solver {
                    step,
                    key: leaf.key,
                    cell: st.first_bad.unwrap_or_default(),
                    bad: st.bad,
                }));
            }
        }
        let outs = Arc::new(outs);
        let rp = &self.reflux;
        let mut fine: Vec<Option<Vec<f64>>> = vec![None; rp.links.len()];
        if !rp.links.is_empty() {
            let tag = tag(step, stage, PHASE_REFLUX);
            let (nvar, edge, face_len) = (self.layout.nvar, self.layout.edge, self.layout.face_len());
            for (slot, ids) in &rp.fine_side {
                for &id in ids {
                    let link = &rp.links[id];
                    let off = self.layout.face_offset(link.face.opposite().id());
                    let avg = fine_face_average(&outs[*slot][off..off + face_len], nvar, edge);
                    let dest = self.owner[&link.coarse];
                    if dest == self.rank {
                        fine[id] = Some(avg);
                    } else if let Err(e) = self.ep.post(dest, tag, &encode(id, &avg)) {
                        return self.handle.failed(dist_err(e));
                    }
                }
            }
            if let Err(e) = self.ep.flush() {
                return self.handle.failed(dist_err(e));
            }
            let e = Arc::clone(self);
            return self.ep.collect(tag, rp.remote_in).and_then(move |remote| {
                for item in remote {
                    match decode(&item) {
                        Ok((id, avg)) if id < fine.len() => fine[id] = Some(avg),
                        Ok((id, _)) => return e.handle.failed(TaskError::msg(format!("flux for unknown link {id}"))),
                        Err(err) => return e.handle.failed(err),
                    }
                }
                e.combine(stage, dt, outs, Arc::new(fine))
            });
        }
        self.combine(stage, dt, outs, Arc::new(fine))
    }

    fn combine(
        self: &Arc<Self>,
        stage: usize,
        dt: f64,
        outs: Arc<Vec<SliceOutput>>,
        fine: Arc<Vec<Option<Vec<f64>>>>,
    ) -> Future<()> {
        let tasks: Vec<_> = (0..self.owned.len())
            .map(|slot| {
                let e = Arc::clone(self);
                let outs = Arc::clone(&outs);
                let fine = Arc::clone(&fine);
                self.spawn(move || e.combine_leaf(stage, dt, slot, &outs[slot], &fine))
            })
            .collect();
        when_all(&self.handle, tasks).then(|_| ())
    }

    fn combine_leaf(
        &self,
        stage: usize,
        dt: f64,
        slot: usize,
        out: &[f64],
        fine: &[Option<Vec<f64>>],
    ) -> TaskResult<()> {
        let l = &self.layout;
        let leaf = &self.owned[slot];
        let mut x = out[..l.update_len()].to_vec();
        for (face, ids) in &self.reflux.coarse_side[slot] {
            let mut reg = FluxRegister::new(*face, l.nvar, l.edge);
            let off = l.face_offset(face.id());
            reg.set_coarse(&out[off..off + l.face_len()]);
            for (q, &id) in ids.iter().enumerate() {
                let avg = fine[id]
                    .as_ref()
                    .ok_or_else(|| TaskError::msg(format!("missing fine flux for {}", leaf.key)))?;
                reg.add_fine(q as u8, avg);
            }
            reflux(&mut x, &mut reg, dt / leaf.dx);
        }
        rk_combine_slice(stage, &leaf.u0.lock().unwrap(), &mut x);
        leaf.grid.lock().unwrap().set_interior(&x);
        Ok(())
    }

    fn stage_future(self: &Arc<Self>, step: u64, stage: usize, dt: f64) -> Future<()> {
        let mut f = self.handle.ready(());
        for axis in 0..3 {
            let e = Arc::clone(self);
            f = f.and_then(move |_| e.exchange_pass(step, stage, axis));
        }
        let e = Arc::clone(self);
        let e2 = Arc::clone(self);
        f.and_then(move |_| match e.submit_kernels(dt) {
            Ok(fut) => fut,
            Err(err) => e.handle.failed(TaskError::failed(err)),
        })
        .and_then(move |outs| e2.after_kernels(step, stage, dt, outs))
    }

    fn step_future(self: &Arc<Self>, step: u64, dt: f64) -> Future<()> {
        let snaps: Vec<_> = self
            .owned
            .iter()
            .map(|leaf| {
                let leaf = Arc::clone(leaf);
                self.spawn(move || {
                    let mut u0 = leaf.u0.lock().unwrap();
                    u0.clear();
                    leaf.grid.lock().unwrap().interior_into(&mut u0);
                    Ok(())
                })
            })
            .collect();
        let mut f = when_all(&self.handle, snaps).then(|_| ());
        for stage in 0..RK3_STAGES {
            let e = Arc::clone(self);
            f = f.and_then(move |_| e.stage_future(step, stage, dt));
        }
        f
    }

    /// Global `cfl · min(dx / s)`; infinite when every speed is zero.
    fn dt_future(self: &Arc<Self>, step: u64) -> Future<f64> {
        let bounds: Vec<_> = self
            .owned
            .iter()
            .map(|leaf| {
                let (leaf, mode) = (Arc::clone(leaf), self.mode);
                self.spawn(move || Ok((leaf.dx, signal_speed(&leaf.grid.lock().unwrap(), &mode))))
            })
            .collect();
        let e = Arc::clone(self);
        when_all(&self.handle, bounds).and_then(move |pairs| {
            let local = cfl_dt(e.cfg.cfl, pairs).unwrap_or(f64::INFINITY);
            match e.ep.allgather(tag(step, 0, PHASE_DT), &local.to_le_bytes()) {
                Ok(f) => f.then(|items| {
                    items
                        .iter()
                        .map(|b| f64::from_le_bytes(b[..8].try_into().unwrap()))
                        .fold(f64::INFINITY, f64::min)
                }),
                Err(err) => e.handle.failed(dist_err(err)),
            }
        })
    }

    // ---- diagnostics ----

    /// Local conserved totals and absolute totals, owned leaves in Morton
    /// order.
    fn local_totals(&self) -> (Vec<f64>, Vec<f64>) {
        let nvar = self.layout.nvar;
        let (mut t, mut a) = (vec![0.0; nvar], vec![0.0; nvar]);
        for leaf in &self.owned {
            let g = leaf.grid.lock().unwrap();
            let vol = leaf.dx.powi(3);
            let interior = g.interior();
            let per = interior.len() / nvar;
            for v in 0..nvar {
                t[v] += g.interior_sum(v) * vol;
                a[v] += interior[v * per..(v + 1) * per].iter().map(|x| x.abs()).sum::<f64>() * vol;
            }
        }
        (t, a)
    }

    /// Sums per-locality totals and counters in rank order.
    fn reduce(
        self: &Arc<Self>,
        step: u64,
        counters: StepCounters,
        with_abs: bool,
    ) -> Future<(Vec<f64>, Vec<f64>, StepCounters, u64)> {
        let (t, a) = self.local_totals();
        let mut b = Vec::new();
        for x in t.iter().chain(if with_abs { a.iter() } else { [].iter() }) {
            b.extend_from_slice(&x.to_le_bytes());
        }
        for c in counters.to_array() {
            b.extend_from_slice(&c.to_le_bytes());
        }
        b.extend_from_slice(&self.exchange_messages.swap(0, Ordering::Relaxed).to_le_bytes());
        let nvar = self.layout.nvar;
        let nf = if with_abs { 2 * nvar } else { nvar };
        match self.ep.allgather(tag(step, 0, PHASE_STATS), &b) {
            Err(e) => self.handle.failed(dist_err(e)),
            Ok(f) => f.then(move |items| {
                let mut sums = vec![0.0; nf];
                let mut c = StepCounters::default();
                let mut exch = 0;
                for it in items {
                    let f64_at = |i: usize| f64::from_le_bytes(it[8 * i..8 * i + 8].try_into().unwrap());
                    let u64_at = |i: usize| u64::from_le_bytes(it[8 * i..8 * i + 8].try_into().unwrap());
                    for (i, s) in sums.iter_mut().enumerate() {
                        *s += f64_at(i);
                    }
                    c.add(&StepCounters::from_array(std::array::from_fn(|i| u64_at(nf + i))));
                    exch += u64_at(nf + StepCounters::LEN);
                }
                let abs = if with_abs { sums.split_off(nvar) } else { Vec::new() };
                (sums, abs, c, exch)
            }),
        }
    }

    /// Cumulative local counters.
    fn counters(&self) -> StepCounters {
        let s = self.handle.stats();
        let a = self.agg.snapshot();
        let d = self.ep.counters();
        StepCounters {
            tasks_spawned: s.spawned,
            steals: s.steals,
            launches: a.launches,
            fused_launches: a.launches - a.solo_launches,
            solo_launches: a.solo_launches,
            parcels_sent: d.parcels_sent,
            messages_sent: d.messages_sent,
            bytes_sent: d.bytes_sent,
            pool_created: self.pool.as_ref().map_or(0, |p| p.stats().total_created),
            floors: self.floors.load(Ordering::Relaxed),
        }
    }

    /// Sends owned interiors to rank 0, which assembles the full tree.
    fn gather(self: &Arc<Self>, step: u64) -> Future<Option<Tree>> {
        let tag = tag(step, 0, PHASE_GATHER);
        let index: HashMap<MortonKey, usize> = self
            .topology
            .leaves()
            .into_iter()
            .enumerate()
            .map(|(n, k)| (k, n))
            .collect();
        if self.rank != 0 {
            for leaf in &self.owned {
                let item = encode(index[&leaf.key], &leaf.grid.lock().unwrap().interior());
                if let Err(e) = self.ep.post(0, tag, &item) {
                    return self.handle.failed(dist_err(e));
                }
            }
            if let Err(e) = self.ep.flush() {
                return self.handle.failed(dist_err(e));
            }
            return self.handle.ready(None);
        }
        let remote = index.len() - self.owned.len();
        let e = Arc::clone(self);
        self.ep.collect(tag, remote).try_then(move |items| {
            let mut tree = e.topology.clone();
            let keys = tree.leaves();
            let g = tree.geometry().clone();
            let blank = || SubGrid::new(g.nvar, g.edge, g.ghost);
            for leaf in &e.owned {
                let mut s = blank();
                s.set_interior(&leaf.grid.lock().unwrap().interior());
                tree.put_grid(leaf.key, s);
            }
            for item in items {
                let (n, values) = decode(&item)?;
                let mut s = blank();
                s.set_interior(&values);
                tree.put_grid(keys[n], s);
            }
            Ok(Some(tree))
        })
    }
}

fn task_error(step: u64, e: TaskError) -> SimError {
    if let Some(inner) = e.downcast_ref::<SimError>() {
        return inner.clone();
    }
    if let Some(inner) = e.downcast_ref::<DistError>() {
        return SimError::Dist(inner.clone());
    }
    SimError::Step {
        step,
        cause: e.to_string(),
    }
}

fn is_abort(e: &SimError) -> bool {
    matches!(e, SimError::Dist(DistError::Aborted(_)))
}

/// Runs one locality to completion over `transport`.
pub fn run_locality(cfg: &RunConfig, transport: Box<dyn Transport>, hooks: &Hooks) -> Result<RunOutcome, SimError> {
    cfg.validate()?;
    let rt = Runtime::new(cfg.workers);
    let port = PortConfig {
        bundling: cfg.bundling,
        bundle_bytes: cfg.bundle_bytes,
    };
    let locality = Locality::start(transport, rt.handle().clone(), port);
    let result = drive(cfg, &rt, locality.endpoint(), hooks);
    if let Err(e) = &result {
        if !is_abort(e) {
            locality.abort(&e.to_string());
        }
    }
    drop(locality);
    result
}

fn drive(cfg: &RunConfig, rt: &Runtime, ep: &Endpoint, hooks: &Hooks) -> Result<RunOutcome, SimError> {
    let engine = Arc::new(Engine::build(cfg, ep.clone(), rt.handle().clone())?);
    let flop = FlopModel::for_mode(&engine.mode);
    let cells = engine.cells();

    let (t0, a0, _, _) = rt
        .run_until(engine.reduce(0, StepCounters::default(), true))
        .map_err(|e| task_error(0, e))?;
    let mut metrics = Metrics::new(cfg.workers * cfg.localities, flop, t0, a0);
    let mut last = engine.counters();
    let mut t = 0.0;
    let mut done = 0u64;
    for step in 1..=cfg.steps as u64 {
        if cfg.t_end.is_some_and(|te| t >= te) {
            break;
        }
        let start = Instant::now();
        let mut dt = rt.run_until(engine.dt_future(step)).map_err(|e| task_error(step, e))?;
        if !dt.is_finite() {
            return Err(SimError::NoSignal { step });
        }
        if let Some(te) = cfg.t_end {
            dt = dt.min(te - t);
        }
        rt.run_until(engine.step_future(step, dt))
            .map_err(|e| task_error(step, e))?;
        let wall = start.elapsed();
        t += dt;
        done = step;

        let now = engine.counters();
        let mut delta = StepCounters::from_array(std::array::from_fn(|i| now.to_array()[i] - last.to_array()[i]));
        delta.pool_created = now.pool_created;
        last = now;
        let (totals, _, counters, exchange_messages) = rt
            .run_until(engine.reduce(step, delta, false))
            .map_err(|e| task_error(step, e))?;
        metrics.steps.push(StepRecord {
            step,
            t,
            dt,
            cells,
            wall_ms: duration_ms(wall),
            counters,
            drift: metrics.drift_of(&totals),
            exchange_messages,
        });
        metrics.final_totals = totals;
        if let Some(h) = &hooks.after_step {
            h(step);
        }
    }

    let tree = rt
        .run_until(engine.gather(cfg.steps as u64 + 1))
        .map_err(|e| task_error(done, e))?;
    let barrier = engine.ep.allgather(tag(cfg.steps as u64 + 1, 0, PHASE_BARRIER), &[])?;
    rt.run_until(barrier).map_err(|e| task_error(done, e))?;
    let checkpoint = tree.as_ref().map(|t_| Checkpoint::from_tree(t_, done, t));
    if engine.rank == 0 {
        if let (Some(path), Some(c)) = (&cfg.checkpoint, &checkpoint) {
            c.write(path)
                .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        }
        if let Some(path) = &cfg.csv {
            metrics
                .write_csv(path)
                .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(RunOutcome {
        rank: engine.rank,
        metrics,
        tree,
        checkpoint,
    })
}

fn duration_ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn run(cfg: &RunConfig) -> Result<RunOutcome, SimError> {
    run_with(cfg, &Hooks::default())
}

/// Loopback runs every locality on its own thread and returns rank 0's
/// outcome. TCP runs the configured rank only.
pub fn run_with(cfg: &RunConfig, hooks: &Hooks) -> Result<RunOutcome, SimError> {
    cfg.validate()?;
    match cfg.parcelport {
        Parcelport::Tcp => {
            let rank = cfg.rank.expect("validated");
            let t = Tcp::connect(rank, &cfg.roster, Duration::from_secs(60))?;
            run_locality(cfg, Box::new(t), hooks)
        }
        Parcelport::Loopback => {
            let mut fabric = Loopback::fabric(cfg.localities).into_iter();
            let first = fabric.next().expect("at least one locality");
            let others: Vec<_> = fabric
                .map(|t| {
                    let cfg = cfg.clone();
                    std::thread::Builder::new()
                        .name(format!("taskmesh-locality-{}", t.rank()))
                        .spawn(move || run_locality(&cfg, Box::new(t), &Hooks::default()))
                        .expect("locality thread")
                })
                .collect();
            let mine = run_locality(cfg, Box::new(first), hooks);
            // report the root cause, not the aborts it triggered elsewhere
            let mut failure: Option<SimError> = None;
            for (n, h) in others.into_iter().enumerate() {
                let e = match h.join() {
                    Ok(Ok(_)) => continue,
                    Ok(Err(e)) if is_abort(&e) => e,
                    Ok(Err(e)) => SimError::Locality {
                        rank: n + 1,
                        cause: e.to_string(),
                    },
                    Err(_) => SimError::Locality {
                        rank: n + 1,
                        cause: "panicked".into(),
                    },
                };
                if failure.as_ref().is_none_or(is_abort) {
                    failure = Some(e);
                }
            }
            match (mine, failure) {
                (Err(e), Some(f)) if is_abort(&e) && !is_abort(&f) => Err(f),
                (Err(e), _) => Err(e),
                (Ok(_), Some(e)) => Err(e),
                (Ok(o), None) => Ok(o),
            }
        }
    }
}
