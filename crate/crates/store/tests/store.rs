use std::io::Write;
use std::sync::{Arc, Barrier};
use std::thread;

use mpcc_sparse::{SensingMatrix, SolverOptions};
use mpcc_store::protocol::{encode_query, QUERY_FRAME_LEN};
use mpcc_store::{
    CiphertextRecord, Client, Geometry, Op, Query, Server, Status, Store, StoreConfig, StoreError,
};

const GEOM: Geometry = Geometry {
    m: 16,
    n: 32,
    phi_seed: 77,
};

fn config() -> StoreConfig {
    StoreConfig {
        geometry: Some(GEOM),
        ..Default::default()
    }
}

/// A 1-sparse block `value * e_pos` as the encoder would measure it.
fn planted(index: u64, pos: usize, value: f64) -> (CiphertextRecord, Vec<f64>) {
    let phi = SensingMatrix::generate(GEOM.phi_seed, GEOM.m as usize, GEOM.n as usize).unwrap();
    let mut z = vec![0.0; GEOM.n as usize];
    z[pos] = value;
    let y = phi.measure(&z).unwrap();
    (CiphertextRecord::new(index, 1, GEOM, y), z)
}

#[test]
fn records_survive_reopen_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log");
    let mut raws = Vec::new();
    {
        let store = Store::open(&path, config()).unwrap();
        for i in 0..5 {
            let (rec, _) = planted(i, i as usize, 1.0 + i as f64);
            store.put_record(&rec).unwrap();
            let raw = store.get_raw(i).unwrap();
            assert_eq!(raw, rec.encode());
            raws.push(raw);
        }
    }
    let store = Store::open(&path, StoreConfig::default()).unwrap();
    assert_eq!(store.geometry(), Some(GEOM));
    assert_eq!(store.indices(), vec![0, 1, 2, 3, 4]);
    for (i, raw) in raws.iter().enumerate() {
        assert_eq!(&store.get_raw(i as u64).unwrap(), raw);
    }
}

#[test]
fn truncated_tail_is_dropped_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log");
    {
        let store = Store::open(&path, config()).unwrap();
        store.put_record(&planted(0, 1, 2.0).0).unwrap();
    }
    let partial = planted(1, 2, 2.0).0.encode();
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(&partial[..partial.len() / 2])
        .unwrap();
    let store = Store::open(&path, config()).unwrap();
    assert_eq!(store.indices(), vec![0]);
    store.put_record(&planted(1, 2, 2.0).0).unwrap();
    drop(store);
    assert_eq!(Store::open(&path, config()).unwrap().indices(), vec![0, 1]);
}

#[test]
fn corrupt_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log");
    let store = Store::open(&path, config()).unwrap();
    let mut bytes = planted(0, 0, 1.0).0.encode();
    bytes[40] ^= 0xff;
    assert!(matches!(
        store.put_bytes(&bytes),
        Err(StoreError::CorruptRecord(_))
    ));

    let other = Geometry { m: 8, ..GEOM };
    let rec = CiphertextRecord::new(3, 0, other, vec![0.0; 8]);
    assert!(matches!(
        store.put_record(&rec),
        Err(StoreError::DimensionMismatch { .. })
    ));
    assert!(store.is_empty());
    drop(store);

    // a flipped byte inside the log is reported, not skipped
    let good = planted(0, 0, 1.0).0.encode();
    let mut log = good.clone();
    log.extend_from_slice(&good);
    log[good.len() + 35] ^= 1;
    std::fs::write(&path, &log).unwrap();
    assert!(matches!(
        Store::open(&path, config()),
        Err(StoreError::CorruptLog { offset, .. }) if offset == good.len() as u64
    ));
}

#[test]
fn decompression_recovers_planted_block_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path().join("log"), config()).unwrap();
    let (rec, z) = planted(7, 13, -7.5);
    store.put_record(&rec).unwrap();
    let opts = SolverOptions::default();

    let first = store.get_decompressed(7, &opts).unwrap();
    assert!(!first.cached);
    for (a, b) in first.block.z.iter().zip(&z) {
        assert!((a - b).abs() < 1e-6);
    }
    let second = store.get_decompressed(7, &opts).unwrap();
    assert!(second.cached);
    assert_eq!(second.block, first.block);
    assert_eq!(store.solver_runs(), 1);

    assert!(matches!(
        store.get_decompressed(8, &opts),
        Err(StoreError::NotFound(8))
    ));

    // a rewrite of the block invalidates its cache entry
    let (rec, z) = planted(7, 2, 3.0);
    store.put_record(&rec).unwrap();
    let third = store.get_decompressed(7, &opts).unwrap();
    assert!(!third.cached);
    assert!((third.block.z[2] - z[2]).abs() < 1e-6);
    assert_eq!(store.solver_runs(), 2);
    assert_eq!(store.len(), 1);
}

#[test]
fn concurrent_duplicate_queries_share_one_solve() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path().join("log"), config()).unwrap());
    for i in 0..3 {
        store
            .put_record(&planted(i, 5 + i as usize, 2.0).0)
            .unwrap();
    }
    let barrier = Arc::new(Barrier::new(12));
    let handles: Vec<_> = (0..12)
        .map(|t| {
            let store = Arc::clone(&store);
            let barrier = Arc::clone(&barrier);
            thread::spawn(move || {
                barrier.wait();
                store
                    .get_decompressed(t % 3, &SolverOptions::default())
                    .unwrap()
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(store.solver_runs(), 3);
}

#[test]
fn server_answers_queries() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path().join("log"), config()).unwrap());
    let (rec, z) = planted(4, 9, 1.25);
    store.put_record(&rec).unwrap();

    let server = Server::bind("127.0.0.1:0", Arc::clone(&store))
        .unwrap()
        .with_workers(2);
    let addr = server.local_addr().unwrap();
    let stop = server.shutdown_handle();
    let runner = thread::spawn(move || server.run().unwrap());

    let mut c = Client::connect(addr).unwrap();
    let reply = c.request(&Query::new(Op::FetchDecompressed, 4)).unwrap();
    assert_eq!(reply.status, Status::Ok);
    assert_eq!(reply.payload.len(), GEOM.n as usize);
    assert!((reply.payload[9] - z[9]).abs() < 1e-6);

    let raw = c.request(&Query::new(Op::FetchRaw, 4)).unwrap();
    assert_eq!(raw.payload, rec.payload);
    let count = c.request(&Query::new(Op::StatCount, 0)).unwrap();
    assert_eq!(count.payload, vec![1.0]);
    let missing = c.request(&Query::new(Op::FetchDecompressed, 99)).unwrap();
    assert_eq!(missing.status, Status::NotFound);
    let unknown = c.request(&Query { op: 99, index: 4 }).unwrap();
    assert_eq!(unknown.status, Status::UnknownOp);
    // the connection stays usable after a well-formed but unknown op
    assert_eq!(
        c.request(&Query::new(Op::StatCount, 0)).unwrap().status,
        Status::Ok
    );

    let mut t = Client::connect(addr).unwrap();
    let frame = encode_query(&Query::new(Op::FetchRaw, 4));
    t.send_bytes(&frame[..QUERY_FRAME_LEN - 3]).unwrap();
    t.finish_sending().unwrap();
    assert_eq!(t.read_reply().unwrap().status, Status::Malformed);
    assert!(t.read_reply().is_err(), "connection should be closed");

    stop.shutdown();
    runner.join().unwrap();
}
