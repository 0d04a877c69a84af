//! Quick invariant checks, each independent of the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskmesh::amr::SubGrid;
use taskmesh::dist::{bundle, unbundle, GlobalId, Parcel};
use taskmesh::hydro::{conserved, stage_slice, Mode, StageLayout, GAMMA};
use taskmesh::lanes::LaneWidth;
use taskmesh::sim::{self, RunConfig};
use taskmesh::taskgraph::{when_all, Future, Priority, Runtime};

type Check = fn() -> Result<(), String>;

const CHECKS: &[(&str, Check)] = &[
    ("dag runs every task once in dependency order", dag),
    ("lane widths give identical bits", lanes),
    ("parcels survive bundling", parcels),
    ("small run conserves and is reproducible", small_run),
];

pub fn run_all() -> bool {
    let mut ok = true;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => println!("ok    {name}"),
            Err(e) => {
                ok = false;
                println!("FAIL  {name}: {e}");
            }
        }
    }
    ok
}

/// Node `i` depends on up to three earlier nodes and yields a hash of its
/// inputs; the sequential fold is the oracle.
fn dag() -> Result<(), String> {
    const N: usize = 5_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let deps: Vec<Vec<usize>> = (0..N)
        .map(|i| {
            let n = if i == 0 { 0 } else { rng.gen_range(0..=3.min(i)) };
            let mut d: Vec<usize> = (0..n).map(|_| rng.gen_range(0..i)).collect();
            d.sort_unstable();
            d.dedup();
            d
        })
        .collect();
    let mix = |i: usize, inputs: &[u64]| {
        inputs
            .iter()
            .fold(i as u64 + 1, |h, x| h.wrapping_mul(31).wrapping_add(*x))
    };
    let mut expect = vec![0u64; N];
    for i in 0..N {
        let inputs: Vec<u64> = deps[i].iter().map(|&d| expect[d]).collect();
        expect[i] = mix(i, &inputs);
    }

    let mut consumers = vec![0usize; N];
    deps.iter().flatten().for_each(|&d| consumers[d] += 1);
    for workers in [1, 4] {
        let rt = Runtime::new(workers);
        let h = rt.handle().clone();
        let mut pending: Vec<Vec<Future<u64>>> = Vec::with_capacity(N);
        let mut sinks = Vec::new();
        for i in 0..N {
            let inputs: Vec<Future<u64>> = deps[i].iter().map(|&d| pending[d].pop().unwrap()).collect();
            let h2 = h.clone();
            let f = when_all(&h, inputs).and_then(move |vals| h2.spawn(Priority::Normal, move || mix(i, &vals)));
            let mut copies = f.fork(consumers[i] + 1);
            sinks.push(copies.pop().unwrap());
            pending.push(copies);
        }
        let got = rt.run_until(when_all(&h, sinks)).map_err(|e| e.to_string())?;
        if got != expect {
            return Err(format!("{workers} workers disagree with the sequential fold"));
        }
    }
    Ok(())
}

fn lanes() -> Result<(), String> {
    const E: usize = 8;
    const G: usize = 2;
    let p = E + 2 * G;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = SubGrid::new(5, E, G);
    for n in 0..p * p * p {
        let vel = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let q = conserved(rng.gen_range(0.5..2.0), vel, rng.gen_range(0.2..3.0), GAMMA);
        for (v, x) in q.into_iter().enumerate() {
            g.put(v, [n % p, n / p % p, n / (p * p)], x);
        }
    }
    let mode = Mode::Euler { gamma: GAMMA };
    let lay = StageLayout {
        nvar: 5,
        edge: E,
        ghost: G,
    };
    let mut input = vec![0.05, 0.004];
    input.extend_from_slice(g.storage());
    let run = |w| {
        let mut out = vec![0.0; lay.output_len()];
        stage_slice(&mode, &lay, w, &input, &mut out);
        out
    };
    let reference = run(LaneWidth::W1);
    for w in LaneWidth::ALL {
        if !run(w).iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits()) {
            return Err(format!("{w:?} differs from scalar"));
        }
    }
    Ok(())
}

fn parcels() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ps: Vec<Parcel> = (0..50)
        .map(|i| Parcel {
            flags: 0,
            action: rng.gen(),
            dest: GlobalId::locality(i % 4),
            seq: rng.gen(),
            payload: (0..rng.gen_range(0..300)).map(|_| rng.gen()).collect(),
        })
        .collect();
    let b = Parcel::from_bytes(&bundle(&ps).to_bytes()).map_err(|e| e.to_string())?;
    let back = unbundle(&b).map_err(|e| e.to_string())?;
    if back != ps {
        return Err("unbundled parcels differ".into());
    }
    Ok(())
}

fn small_run() -> Result<(), String> {
    let base = "scenario = two-blob\namr.min_level = 2\namr.max_level = 3\nsteps = 3\n";
    let go = |extra: &str| {
        let c = RunConfig::parse(&format!("{base}{extra}")).map_err(|e| e.to_string())?;
        sim::run(&c).map_err(|e| e.to_string())
    };
    let a = go("workers = 1\n")?;
    let b = go("workers = 2\nlocalities = 2\n")?;
    let drift = a.metrics.max_drift();
    if drift.iter().any(|&d| d > 1e-13) {
        return Err(format!("drift {drift:?}"));
    }
    let created: Vec<u64> = a.metrics.steps.iter().map(|s| s.counters.pool_created).collect();
    if created.iter().any(|&c| c != created[0]) {
        return Err(format!("pool kept growing: {created:?}"));
    }
    let bytes = |o: &sim::RunOutcome| o.checkpoint.as_ref().map(|c| c.to_bytes());
    if bytes(&a) != bytes(&b) {
        return Err("checkpoint depends on worker or locality count".into());
    }
    Ok(())
}
