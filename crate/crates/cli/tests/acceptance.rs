//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits non-zero if any check fails.

use std::net::TcpListener;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskmesh::amr::{Checkpoint, SubGrid, Tree};
use taskmesh::hydro::kernels::{EulerFlux, Reconstruct, ScalarFlux};
use taskmesh::hydro::{conserved, stage_slice, Mode, StageLayout, GAMMA};
use taskmesh::lanes::{vmap, LaneKernel, LaneWidth};
use taskmesh::sim::{self, parallel_efficiency, Metrics, RunConfig, RunOutcome};
use taskmesh::taskgraph::{when_all, Future, Priority, Runtime, TaskError};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> Verdict;

const CHECKS: &[(&str, Check)] = &[
    ("uniform-conservation", uniform_conservation),
    ("amr-reflux-conservation", amr_reflux_conservation),
    ("sod-accuracy", sod_accuracy),
    ("amr-vs-fine", amr_vs_fine),
    ("aggregation-transparency", aggregation_transparency),
    ("backend-transparency", backend_transparency),
    ("pool-steady-state", pool_steady_state),
    ("lane-invariance", lane_invariance),
    ("determinism-exactly-once", determinism),
    ("strong-scaling", strong_scaling),
];

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, (name, check)) in CHECKS.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{:>2} {:<26} {}  {} [{secs:.1} s]",
            n + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += !v.pass as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn cfg(text: &str) -> RunConfig {
    RunConfig::parse(text).expect("valid config")
}

fn run(text: &str) -> RunOutcome {
    sim::run(&cfg(text)).expect("run succeeds")
}

fn ckpt(o: &RunOutcome) -> Vec<u8> {
    o.checkpoint.as_ref().expect("rank 0 checkpoint").to_bytes()
}

fn worst(d: &[f64]) -> f64 {
    d.iter().copied().fold(0.0, f64::max)
}

fn uniform_conservation() -> Verdict {
    let m = run("scenario = gaussian-blob\namr.min_level = 3\namr.max_level = 3\nsteps = 100\nworkers = 1\n").metrics;
    let d = m.max_drift()[0];
    verdict(
        d <= 1e-12 && m.steps.len() == 100,
        format!("cells={} drift={d:.2e} (limit 1e-12)", m.steps[0].cells),
    )
}

fn amr_reflux_conservation() -> Verdict {
    let base = format!(
        "scenario = two-blob\namr.min_level = 2\namr.max_level = 4\nsteps = 50\nworkers = {}\n",
        workers()
    );
    let on = run(&base).metrics;
    let off = run(&format!("{base}hydro.reflux = false\n")).metrics;
    let d_on = worst(&on.max_drift());
    let d_off = off.max_drift()[0];
    verdict(
        d_on <= 1e-11 && d_off > 1e-8,
        format!("drift with reflux={d_on:.2e} (limit 1e-11), mass drift without={d_off:.2e} (must exceed 1e-8)"),
    )
}

/// Exact solution of the Riemann problem for an ideal gas, sampled at
/// `s = (x - x0) / t`. States are (density, velocity, pressure).
fn exact_riemann(l: [f64; 3], r: [f64; 3], g: f64, s: f64) -> f64 {
    let sound = |q: [f64; 3]| (g * q[2] / q[0]).sqrt();
    let (cl, cr) = (sound(l), sound(r));
    // pressure function of one side and its derivative
    let side = |q: [f64; 3], c: f64, p: f64| -> (f64, f64) {
        if p > q[2] {
            let a = 2.0 / ((g + 1.0) * q[0]);
            let b = (g - 1.0) / (g + 1.0) * q[2];
            let sq = (a / (p + b)).sqrt();
            ((p - q[2]) * sq, sq * (1.0 - 0.5 * (p - q[2]) / (p + b)))
        } else {
            let e = (g - 1.0) / (2.0 * g);
            let ratio = p / q[2];
            (
                2.0 * c / (g - 1.0) * (ratio.powf(e) - 1.0),
                ratio.powf(-(g + 1.0) / (2.0 * g)) / (q[0] * c),
            )
        }
    };
    let mut p = 0.5 * (l[2] + r[2]);
    for _ in 0..100 {
        let (fl, dl) = side(l, cl, p);
        let (fr, dr) = side(r, cr, p);
        let next = (p - (fl + fr + r[1] - l[1]) / (dl + dr)).max(1e-12);
        let done = (next - p).abs() < 1e-14 * p;
        p = next;
        if done {
            break;
        }
    }
    let u = 0.5 * (l[1] + r[1]) + 0.5 * (side(r, cr, p).0 - side(l, cl, p).0);
    let gm = (g - 1.0) / (g + 1.0);
    if s <= u {
        let (q, c) = (l, cl);
        if p > q[2] {
            let shock = q[1] - c * ((g + 1.0) / (2.0 * g) * p / q[2] + (g - 1.0) / (2.0 * g)).sqrt();
            if s < shock {
                q[0]
            } else {
                q[0] * (p / q[2] + gm) / (gm * p / q[2] + 1.0)
            }
        } else {
            let c_star = c * (p / q[2]).powf((g - 1.0) / (2.0 * g));
            if s < q[1] - c {
                q[0]
            } else if s > u - c_star {
                q[0] * (p / q[2]).powf(1.0 / g)
            } else {
                q[0] * (2.0 / (g + 1.0) + gm / c * (q[1] - s)).powf(2.0 / (g - 1.0))
            }
        }
    } else {
        let (q, c) = (r, cr);
        if p > q[2] {
            let shock = q[1] + c * ((g + 1.0) / (2.0 * g) * p / q[2] + (g - 1.0) / (2.0 * g)).sqrt();
            if s > shock {
                q[0]
            } else {
                q[0] * (p / q[2] + gm) / (gm * p / q[2] + 1.0)
            }
        } else {
            let c_star = c * (p / q[2]).powf((g - 1.0) / (2.0 * g));
            if s > q[1] + c {
                q[0]
            } else if s < u + c_star {
                q[0] * (p / q[2]).powf(1.0 / g)
            } else {
                q[0] * (2.0 / (g + 1.0) - gm / c * (q[1] - s)).powf(2.0 / (g - 1.0))
            }
        }
    }
}

fn interior_cells(tree: &Tree) -> impl Iterator<Item = [usize; 3]> {
    let g = tree.geometry();
    let (e, gh) = (g.edge, g.ghost);
    (0..e * e * e).map(move |n| [gh + n % e, gh + n / e % e, gh + n / (e * e)])
}

fn sod_accuracy() -> Verdict {
    let c = cfg(&format!(
        "scenario = sod\nt_end = 0.2\nsteps = 100000\nworkers = {}\n",
        workers()
    ));
    let out = sim::run(&c).expect("sod run");
    let tree = out.tree.expect("rank 0 tree");
    let extent = tree.geometry().extent();
    let (mut err, mut vol, mut nx) = (0.0, 0.0, 0usize);
    for k in tree.leaves() {
        let grid = tree.grid(k).unwrap();
        for s in interior_cells(&tree) {
            let x = tree.cell_center(k, s);
            let exact = exact_riemann(
                [1.0, 0.0, 1.0],
                [0.125, 0.0, 0.1],
                GAMMA,
                (x[0] - 0.5 * extent[0]) / 0.2,
            );
            err += (grid.at(0, s) - exact).abs();
            vol += 1.0;
        }
        nx += tree.geometry().edge;
    }
    let l1 = err / vol * extent[0];
    let t = out.metrics.end_time();
    verdict(
        l1 <= 0.02 && (t - 0.2).abs() < 1e-12 && nx == 128,
        format!("cells along x={nx} t={t:.4} L1(rho)={l1:.4e} (limit 0.02)"),
    )
}

fn amr_vs_fine() -> Verdict {
    let base = format!(
        "scenario = gaussian-blob\nscenario.profile = slab\namr.roots = 8,1,1\nt_end = 1.0\nsteps = 100000\nworkers = {}\n",
        workers()
    );
    let amr = run(&format!("{base}amr.min_level = 0\namr.max_level = 2\n"));
    let fine = run(&format!("{base}amr.min_level = 2\namr.max_level = 2\n"));
    let (a, f) = (amr.tree.unwrap(), fine.tree.unwrap());
    let mut linf: f64 = 0.0;
    let mut compared = 0;
    for k in a.leaves().into_iter().filter(|k| k.level() == 2) {
        let (ga, gf) = (a.grid(k).unwrap(), f.grid(k).expect("fine run has every level-2 block"));
        for s in interior_cells(&a) {
            linf = linf.max((ga.at(0, s) - gf.at(0, s)).abs());
            compared += 1;
        }
    }
    verdict(
        compared > 0 && linf <= 5e-3,
        format!(
            "t={:.3} fine-region cells={compared} Linf={linf:.3e} (limit 5e-3)",
            amr.metrics.end_time()
        ),
    )
}

fn aggregation_transparency() -> Verdict {
    let base = "scenario = two-blob\namr.min_level = 2\namr.max_level = 3\nsteps = 10\nworkers = 2\n";
    let runs: Vec<RunOutcome> = [1, 4, 8]
        .iter()
        .map(|m| run(&format!("{base}aggregation.max_slices = {m}\n")))
        .collect();
    let same = runs.iter().all(|r| ckpt(r) == ckpt(&runs[0]));
    let solo = runs[0].metrics.totals().launches;
    let sat = run(&format!(
        "{base}aggregation.max_slices = 8\naggregation.saturate = true\n"
    ));
    let fused = sat.metrics.totals().launches;
    let localities = 1;
    let bound = solo as f64 / 8.0 + localities as f64;
    let same_sat = ckpt(&sat) == ckpt(&runs[0]);
    verdict(
        same && same_sat && (fused as f64) <= bound,
        format!(
            "checkpoints identical={} launches: solo={solo} fused={fused} (limit {bound:.1})",
            same && same_sat
        ),
    )
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn backend_transparency() -> Verdict {
    let base = "scenario = two-blob\namr.min_level = 2\namr.max_level = 3\nsteps = 3\nworkers = 2\nlocalities = 2\n";
    let loopback = ckpt(&run(base));

    let dir = tempfile::tempdir().unwrap();
    let roster = format!("127.0.0.1:{},127.0.0.1:{}", free_port(), free_port());
    let file = dir.path().join("tcp.cfg");
    std::fs::write(&file, format!("{base}dist.parcelport = tcp\ndist.roster = {roster}\n")).unwrap();
    let out = dir.path().join("tcp.ckpt");
    let children: Vec<_> = (0..2)
        .map(|rank| {
            Command::new(env!("CARGO_BIN_EXE_taskmesh"))
                .arg("run")
                .arg("--config")
                .arg(&file)
                .arg("--checkpoint")
                .arg(&out)
                .env("TASKMESH_RANK", rank.to_string())
                .output_spawn()
        })
        .collect();
    let ok = children
        .into_iter()
        .all(|c| c.wait_with_output().map(|o| o.status.success()).unwrap_or(false));
    let tcp_same = ok && read_ckpt(&out).is_some_and(|c| c == loopback);

    let bundled = run(base).metrics;
    let unbundled = run(&format!("{base}dist.bundling = false\n")).metrics;
    let per_phase =
        |m: &Metrics| m.steps.iter().map(|s| s.exchange_messages).sum::<u64>() as f64 / (m.steps.len() * 9) as f64;
    let (on, off) = (per_phase(&bundled), per_phase(&unbundled));
    let ratio = off / on;
    verdict(
        tcp_same && ratio >= 3.0,
        format!(
            "tcp processes ok={ok} tcp==loopback={tcp_same} messages per exchange phase: {on:.1} bundled vs {off:.1} ({ratio:.1}x, need 3x)"
        ),
    )
}

fn read_ckpt(p: &Path) -> Option<Vec<u8>> {
    Checkpoint::read(p).ok().map(|c| c.to_bytes())
}

trait SpawnPiped {
    fn output_spawn(&mut self) -> std::process::Child;
}

impl SpawnPiped for Command {
    fn output_spawn(&mut self) -> std::process::Child {
        self.stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::piped())
            .spawn()
            .expect("spawn taskmesh")
    }
}

fn pool_steady_state() -> Verdict {
    let m = run("scenario = two-blob\namr.min_level = 2\namr.max_level = 3\nsteps = 20\nworkers = 2\n").metrics;
    let created: Vec<u64> = m.steps.iter().map(|s| s.counters.pool_created).collect();
    verdict(
        created.len() == 20 && created[0] > 0 && created[0] == created[19],
        format!(
            "total_created after step 1={} after step 20={}",
            created[0], created[19]
        ),
    )
}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn widths_agree<K: LaneKernel>(k: &K, inputs: &[Vec<f64>]) -> bool {
    let n = inputs[0].len();
    let ins: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let mut results = LaneWidth::ALL.iter().map(|&w| {
        let mut outs = vec![vec![0.0; n]; K::OUTPUTS];
        let mut refs: Vec<&mut [f64]> = outs.iter_mut().map(Vec::as_mut_slice).collect();
        vmap(k, w, &ins, &mut refs).expect("arity");
        outs.concat()
    });
    let first = results.next().unwrap();
    results.all(|r| bits_equal(&r, &first))
}

fn lane_invariance() -> Verdict {
    const N: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut uniform = |count: usize, lo: f64, hi: f64| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..N).map(|_| rng.gen_range(lo..hi)).collect())
            .collect()
    };
    let reconstruct = widths_agree(&Reconstruct, &uniform(4, -2.0, 2.0));
    let scalar = widths_agree(&ScalarFlux { speed: 0.7 }, &uniform(2, -2.0, 2.0))
        && widths_agree(&ScalarFlux { speed: -1.3 }, &uniform(2, -2.0, 2.0));

    let mut states = vec![vec![0.0; N]; 10];
    for n in 0..N {
        for side in 0..2 {
            let vel = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let q = conserved(rng.gen_range(0.05..3.0), vel, rng.gen_range(0.01..5.0), GAMMA);
            for v in 0..5 {
                states[side * 5 + v][n] = q[v];
            }
        }
    }
    let euler = (0..3).all(|axis| widths_agree(&EulerFlux { axis, gamma: GAMMA }, &states));

    let (e, g) = (8usize, 2usize);
    let p = e + 2 * g;
    let mut stage = true;
    for trial in 0..20 {
        let scalar_mode = trial % 2 == 0;
        let mode = if scalar_mode {
            Mode::Scalar {
                velocity: [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ],
            }
        } else {
            Mode::Euler { gamma: GAMMA }
        };
        let nvar = mode.nvar();
        let mut grid = SubGrid::new(nvar, e, g);
        for n in 0..p * p * p {
            let c = [n % p, n / p % p, n / (p * p)];
            if scalar_mode {
                grid.put(0, c, rng.gen_range(-1.0..1.0));
            } else {
                let vel = [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ];
                let q = conserved(rng.gen_range(0.2..2.0), vel, rng.gen_range(0.1..3.0), GAMMA);
                for (v, x) in q.into_iter().enumerate() {
                    grid.put(v, c, x);
                }
            }
        }
        let lay = StageLayout {
            nvar,
            edge: e,
            ghost: g,
        };
        let mut input = vec![0.05, 0.004];
        input.extend_from_slice(grid.storage());
        let outs: Vec<Vec<f64>> = LaneWidth::ALL
            .iter()
            .map(|&w| {
                let mut out = vec![0.0; lay.output_len()];
                stage_slice(&mode, &lay, w, &input, &mut out);
                out
            })
            .collect();
        stage &= outs.iter().all(|o| bits_equal(o, &outs[0]));
    }
    verdict(
        reconstruct && scalar && euler && stage,
        format!(
            "widths {:?} over {N} random inputs: reconstruct={reconstruct} scalar-flux={scalar} euler-flux={euler} stage(20 blocks)={stage}",
            LaneWidth::ALL
        ),
    )
}

/// Runs a random DAG; every task checks that its inputs have run and bumps
/// its own execution count.
fn dag_once(deps: &[Vec<usize>], workers: usize) -> Result<(), String> {
    let n = deps.len();
    let runs: Arc<Vec<AtomicU32>> = Arc::new((0..n).map(|_| AtomicU32::new(0)).collect());
    let mut consumers = vec![0usize; n];
    deps.iter().flatten().for_each(|&d| consumers[d] += 1);
    let rt = Runtime::new(workers);
    let h = rt.handle().clone();
    let mut pending: Vec<Vec<Future<()>>> = Vec::with_capacity(n);
    let mut sinks = Vec::new();
    for i in 0..n {
        let inputs: Vec<Future<()>> = deps[i].iter().map(|&d| pending[d].pop().unwrap()).collect();
        let (h2, runs, mine) = (h.clone(), Arc::clone(&runs), deps[i].clone());
        let f = when_all(&h, inputs).and_then(move |_| {
            h2.try_spawn(Priority::Normal, move || {
                if mine.iter().any(|&d| runs[d].load(Ordering::SeqCst) != 1) {
                    return Err(TaskError::msg(format!("task {i} ran before an input")));
                }
                runs[i].fetch_add(1, Ordering::SeqCst);
                Ok(())
            })
        });
        if consumers[i] == 0 {
            sinks.push(f);
            pending.push(Vec::new());
        } else {
            pending.push(f.fork(consumers[i]));
        }
    }
    rt.run_until(when_all(&h, sinks)).map_err(|e| e.to_string())?;
    rt.quiesce();
    let bad = runs.iter().filter(|r| r.load(Ordering::SeqCst) != 1).count();
    if bad > 0 {
        return Err(format!("{bad} tasks did not run exactly once"));
    }
    Ok(())
}

fn determinism() -> Verdict {
    const N: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let deps: Vec<Vec<usize>> = (0..N)
        .map(|i| {
            let k = if i == 0 { 0 } else { rng.gen_range(0..=4.min(i)) };
            let mut d: Vec<usize> = (0..k).map(|_| i - rng.gen_range(1..=i.min(500))).collect();
            d.sort_unstable();
            d.dedup();
            d
        })
        .collect();
    let mut problems = Vec::new();
    for w in [1, 2, 4, 8] {
        if let Err(e) = dag_once(&deps, w) {
            problems.push(format!("{w} workers: {e}"));
        }
    }
    let base = "scenario = two-blob\namr.min_level = 2\namr.max_level = 3\nsteps = 5\n";
    let reference = ckpt(&run(&format!("{base}workers = 1\n")));
    for w in [2, 4, 8] {
        if ckpt(&run(&format!("{base}workers = {w}\n"))) != reference {
            problems.push(format!("checkpoint differs with {w} workers"));
        }
    }
    let ok = problems.is_empty();
    verdict(
        ok,
        if ok {
            format!("{N}-task DAG exactly once for 1,2,4,8 workers; checkpoints identical")
        } else {
            problems.join("; ")
        },
    )
}

fn strong_scaling() -> Verdict {
    let base = "scenario = two-blob\namr.min_level = 3\namr.max_level = 3\nsteps = 6\n";
    let one = run(&format!("{base}workers = 1\n")).metrics;
    let eight = run(&format!("{base}workers = 8\n")).metrics;
    let leaves = one.steps[0].cells / 512;
    let (t1, t8) = (one.median_step_ms().unwrap(), eight.median_step_ms().unwrap());
    let eff = parallel_efficiency(t1, 1, t8, 8);
    verdict(
        eff >= 0.6 && leaves >= 512,
        format!(
            "sub-grids={leaves} median step 1w={t1:.1} ms 8w={t8:.1} ms efficiency={:.1}% (limit 60%, host has {} CPUs)",
            eff * 100.0,
            workers()
        ),
    )
}
