use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskmesh::bufferpool::{BufferLease, BufferPool};

const TAGS: [&str; 3] = ["ghost", "stage", "flux"];
const SIZES: [usize; 3] = [64, 300, 17];

#[derive(Debug, Clone)]
enum Op {
    Acquire(usize),
    /// Releases the live lease at this position, modulo the live count.
    Release(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..TAGS.len()).prop_map(Op::Acquire),
        any::<usize>().prop_map(Op::Release)
    ]
}

proptest! {
    /// One size per tag: accounting holds after every operation, and the
    /// pool never owns more buffers than were ever live at once.
    #[test]
    fn accounting_and_peak_bound(ops in prop::collection::vec(op(), 1..200)) {
        let pool = BufferPool::new(true);
        let mut live: Vec<BufferLease> = Vec::new();
        let mut peak = [0u64; 3];
        let mut count = [0u64; 3];
        for o in ops {
            match o {
                Op::Acquire(t) => {
                    let lease = pool.acquire(SIZES[t], TAGS[t]).unwrap();
                    prop_assert!(lease.iter().all(|&x| x == 0.0));
                    live.push(lease);
                    count[t] += 1;
                    peak[t] = peak[t].max(count[t]);
                }
                Op::Release(i) if !live.is_empty() => {
                    let mut lease = live.swap_remove(i % live.len());
                    lease.iter_mut().for_each(|x| *x = 1.0);
                    count[TAGS.iter().position(|&t| t == lease.tag()).unwrap()] -= 1;
                    lease.release().unwrap();
                }
                Op::Release(_) => {}
            }
            let s = pool.stats();
            prop_assert_eq!(s.live + s.free, s.total_created);
            prop_assert_eq!(s.live, live.len() as u64);
            prop_assert!(s.total_created <= peak.iter().sum::<u64>());
            prop_assert_eq!(s.peak_live, peak.iter().sum::<u64>());
        }
        drop(live);
        let s = pool.stats();
        prop_assert_eq!((s.live, s.free), (0, s.total_created));
    }
}

#[test]
fn concurrent_stress_keeps_accounting() {
    let pool = BufferPool::new(true);
    std::thread::scope(|scope| {
        for t in 0..8u64 {
            let pool = pool.clone();
            scope.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(t);
                let mut held: Vec<BufferLease> = Vec::new();
                for _ in 0..5_000 {
                    if held.len() < 6 && rng.gen_bool(0.55) {
                        let tag = TAGS[rng.gen_range(0..TAGS.len())];
                        let lease = pool.acquire(rng.gen_range(1..512), tag).unwrap();
                        assert!(lease.iter().all(|&x| x == 0.0));
                        held.push(lease);
                    } else if !held.is_empty() {
                        let mut lease = held.swap_remove(rng.gen_range(0..held.len()));
                        lease.iter_mut().for_each(|x| *x = 7.0);
                        drop(lease);
                    }
                    let s = pool.stats();
                    assert_eq!(s.live + s.free, s.total_created);
                }
            });
        }
    });
    let s = pool.stats();
    assert_eq!(s.live, 0);
    assert_eq!(s.free, s.total_created);
    assert!(s.reused > 0);
    pool.drain();
    assert_eq!(pool.stats().total_created, 0);
}
