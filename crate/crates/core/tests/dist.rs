use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use taskmesh::amr::MortonKey;
use taskmesh::dist::{DistError, GlobalId, Kind, Locality, Loopback, Parcel, PortConfig, Registry, Tcp, Transport};
use taskmesh::taskgraph::{when_all, Runtime};

const ECHO: u16 = 1;
const COUNT: u16 = 2;

fn cluster(n: usize, config: PortConfig) -> Vec<(Runtime, Locality)> {
    Loopback::fabric(n)
        .into_iter()
        .map(|t| {
            let rt = Runtime::new(2);
            let loc = Locality::start(Box::new(t), rt.handle().clone(), config);
            loc.register_action(ECHO, |_, _, payload| Ok(payload));
            (rt, loc)
        })
        .collect()
}

fn free_addr() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().to_string()
}

proptest! {
    #[test]
    fn gid_roundtrip(kind in any::<u8>(), level in 0u8..=15, seed in any::<u64>()) {
        let bits = 6 + 3 * level as u32;
        let index = seed & ((1u64 << bits) - 1);
        let key = MortonKey::from_raw(level, index);
        let g = GlobalId::new(Kind(kind), key);
        prop_assert_eq!(g.kind(), Kind(kind));
        prop_assert_eq!(g.key(), key);
        prop_assert_eq!(GlobalId::from_bits(g.bits()), g);
    }

    #[test]
    fn parcel_roundtrip(flags in any::<u8>(), action in any::<u16>(), dest in any::<u64>(), seq in any::<u64>(),
                        payload in proptest::collection::vec(any::<u8>(), 0..300)) {
        let p = Parcel { flags: flags & !1, action, dest: GlobalId::from_bits(dest), seq, payload };
        let bytes = p.to_bytes();
        prop_assert_eq!(bytes.len(), 28 + p.payload.len());
        prop_assert_eq!(Parcel::from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..100)) {
        let _ = Parcel::from_bytes(&bytes);
    }
}

#[test]
fn registry_contract() {
    let r = Registry::default();
    let g = GlobalId::subgrid(MortonKey::root(0));
    r.register(g, 0).unwrap();
    assert_eq!(r.resolve(g), Ok(0));
    assert_eq!(r.register(g, 1), Err(DistError::AlreadyRegistered(g)));
    let unknown = GlobalId::subgrid(MortonKey::root(1));
    assert_eq!(r.resolve(unknown), Err(DistError::UnknownGid(unknown)));
    assert!(r.update(g, 1, 1));
    assert!(!r.update(g, 0, 1));
    assert_eq!(r.entry(g), Some((1, 1)));
}

#[test]
fn echo_remote_and_self() {
    let c = cluster(2, PortConfig::default());
    let (rt, a) = &c[0];
    for dest in 0..2 {
        let f = a.send_action(GlobalId::locality(dest), ECHO, b"hello".to_vec());
        a.flush().unwrap();
        assert_eq!(rt.run_until(f).unwrap(), b"hello");
    }
}

#[test]
fn unknown_action_and_gid_fail() {
    let c = cluster(2, PortConfig::default());
    let (rt, a) = &c[0];
    let f = a.send_action(GlobalId::locality(1), 77, vec![]);
    a.flush().unwrap();
    let err = rt.run_until(f).unwrap_err();
    assert!(err.to_string().contains("unknown action"), "{err}");
    let f = a.send_action(GlobalId::subgrid(MortonKey::root(3)), ECHO, vec![]);
    assert!(matches!(
        rt.run_until(f).unwrap_err().downcast_ref::<DistError>(),
        Some(DistError::UnknownGid(_))
    ));
}

#[test]
fn ten_thousand_sends_all_settle() {
    let c = cluster(2, PortConfig::default());
    let hits: Vec<Arc<AtomicU64>> = (0..2).map(|_| Arc::new(AtomicU64::new(0))).collect();
    for ((_, loc), h) in c.iter().zip(&hits) {
        let h = Arc::clone(h);
        loc.register_action(COUNT, move |_, _, p| {
            h.fetch_add(1, Ordering::Relaxed);
            Ok(p)
        });
    }
    let (rt, a) = &c[0];
    let n = 10_000u64;
    let futs: Vec<_> = (0..n)
        .map(|i| a.send_action(GlobalId::locality((i % 2) as usize), COUNT, i.to_le_bytes().to_vec()))
        .collect();
    a.flush().unwrap();
    let replies = rt.run_until(when_all(rt.handle(), futs)).unwrap();
    let sum: u64 = replies
        .iter()
        .map(|b| u64::from_le_bytes(b[..8].try_into().unwrap()))
        .sum();
    assert_eq!(sum, n * (n - 1) / 2);
    assert_eq!(hits[0].load(Ordering::Relaxed), n / 2);
    assert_eq!(hits[1].load(Ordering::Relaxed), n / 2);
    assert_eq!(c[1].1.counters().duplicates, 0);
}

#[test]
fn one_inbound_parcel_spawns_one_handler() {
    let c = cluster(2, PortConfig::default());
    let (rt, a) = &c[0];
    assert_eq!(c[1].1.progress(), 0);
    let f = a.send_action(GlobalId::locality(1), ECHO, vec![1]);
    a.flush().unwrap();
    rt.run_until(f).unwrap();
    assert_eq!(c[1].1.counters().handlers_spawned, 1);
    assert_eq!(c[1].1.counters().parcels_received, 1);
}

#[test]
fn concurrent_progress_loses_nothing() {
    let c = cluster(2, PortConfig::default());
    let (rt1, b) = &c[1];
    let n = 5_000;
    let fut = b.collect(9, n);
    let a = c[0].1.endpoint().clone();
    let sender = std::thread::spawn(move || {
        for i in 0..n {
            a.post(1, 9, &(i as u64).to_le_bytes()).unwrap();
        }
        a.flush().unwrap();
    });
    let pollers: Vec<_> = (0..3)
        .map(|_| {
            let b = b.endpoint().clone();
            std::thread::spawn(move || {
                for _ in 0..2_000 {
                    b.progress();
                    std::thread::yield_now();
                }
            })
        })
        .collect();
    sender.join().unwrap();
    pollers.into_iter().for_each(|p| p.join().unwrap());
    let mut got: Vec<u64> = rt1
        .run_until(fut)
        .unwrap()
        .iter()
        .map(|b| u64::from_le_bytes(b[..8].try_into().unwrap()))
        .collect();
    got.sort_unstable();
    assert_eq!(got, (0..n as u64).collect::<Vec<_>>());
}

#[test]
fn migration_converges_and_stale_sends_are_forwarded() {
    let c = cluster(3, PortConfig::default());
    let g = GlobalId::subgrid(MortonKey::root(5));
    for (_, loc) in &c {
        loc.registry().register(g, 0).unwrap();
    }
    c[0].1.migrate(g, 2).unwrap();
    // wait for the broadcast to land everywhere
    for _ in 0..1000 {
        if c.iter().all(|(_, l)| l.registry().entry(g) == Some((2, 1))) {
            break;
        }
        std::thread::sleep(Duration::from_millis(1));
    }
    for (_, l) in &c {
        assert_eq!(l.registry().resolve(g), Ok(2));
    }

    // a sender whose replica still says 0 reaches the new owner via forwarding
    let g2 = GlobalId::subgrid(MortonKey::root(6));
    c[0].1.registry().register(g2, 2).unwrap();
    c[1].1.registry().register(g2, 0).unwrap();
    c[2].1.registry().register(g2, 2).unwrap();
    let (rt, b) = &c[1];
    let f = b.send_action(g2, ECHO, vec![4, 2]);
    b.flush().unwrap();
    assert_eq!(rt.run_until(f).unwrap(), vec![4, 2]);
    assert_eq!(c[0].1.counters().forwarded, 1);
}

#[test]
fn allgather_is_rank_ordered() {
    let c = cluster(3, PortConfig::default());
    let futs: Vec<_> = c
        .iter()
        .map(|(_, l)| l.allgather(42, &[l.rank() as u8 * 10]).unwrap())
        .collect();
    for ((rt, _), f) in c.iter().zip(futs) {
        assert_eq!(rt.run_until(f).unwrap(), vec![vec![0], vec![10], vec![20]]);
    }
}

#[test]
fn bundling_cuts_wire_messages() {
    let mut counts = Vec::new();
    for bundling in [false, true] {
        let c = cluster(
            2,
            PortConfig {
                bundling,
                bundle_bytes: 64 * 1024,
            },
        );
        let (rt1, b) = &c[1];
        let fut = b.collect(1, 64);
        let a = &c[0].1;
        for _ in 0..64 {
            a.post(1, 1, &[0u8; 1500]).unwrap();
        }
        a.flush().unwrap();
        rt1.run_until(fut).unwrap();
        counts.push(a.counters().messages_sent);
    }
    assert_eq!(counts[0], 64);
    assert!(counts[1] * 3 <= counts[0], "{counts:?}");
}

#[test]
fn tcp_pair_echoes() {
    let roster = vec![free_addr(), free_addr()];
    let r2 = roster.clone();
    let peer = std::thread::spawn(move || Tcp::connect(1, &r2, Duration::from_secs(10)).unwrap());
    let t0 = Tcp::connect(0, &roster, Duration::from_secs(10)).unwrap();
    let t1 = peer.join().unwrap();
    assert_eq!((t0.size(), t1.rank()), (2, 1));
    let rts = [Runtime::new(1), Runtime::new(1)];
    let locs: Vec<Locality> = [Box::new(t0) as Box<dyn Transport>, Box::new(t1)]
        .into_iter()
        .zip(&rts)
        .map(|(t, rt)| {
            let l = Locality::start(t, rt.handle().clone(), PortConfig::default());
            l.register_action(ECHO, |_, _, p| Ok(p));
            l
        })
        .collect();
    for dest in 0..2 {
        let payload: Vec<u8> = (0..=255).collect();
        let f = locs[0].send_action(GlobalId::locality(dest), ECHO, payload.clone());
        locs[0].flush().unwrap();
        assert_eq!(rts[0].run_until(f).unwrap(), payload);
    }
    let fs: Vec<_> = locs
        .iter()
        .map(|l| l.allgather(7, &[l.rank() as u8]).unwrap())
        .collect();
    for (rt, f) in rts.iter().zip(fs) {
        assert_eq!(rt.run_until(f).unwrap(), vec![vec![0], vec![1]]);
    }
}

#[test]
fn abort_fails_waiters_everywhere() {
    let c = cluster(2, PortConfig::default());
    let waiting = c[1].1.collect(3, 1);
    c[0].1.abort("boom");
    let err = c[1].0.run_until(waiting).unwrap_err();
    assert!(
        matches!(err.downcast_ref::<DistError>(), Some(DistError::Aborted(r)) if r == "boom"),
        "{err}"
    );
    let later = c[0].1.collect(4, 1);
    assert!(c[0].0.run_until(later).is_err());
    assert_eq!(c[1].1.aborted().as_deref(), Some("boom"));
}
