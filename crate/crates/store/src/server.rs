//! TCP front end for a [`Store`].

use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mpcc_sparse::RecoveryError;

use crate::protocol::{
    decode_query, decode_reply, encode_query, encode_reply, read_frame, write_frame, FrameError,
    Op, Query, Reply, Status,
};
use crate::store::{Store, StoreError};

/// Environment variable holding the worker pool size.
pub const WORKERS_ENV: &str = "MPCC_WORKERS";
pub const DEFAULT_WORKERS: usize = 4;

const POLL: Duration = Duration::from_millis(50);
const FRAME_TIMEOUT: Duration = Duration::from_secs(10);

pub fn workers_from_env() -> usize {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => {
                log::warn!("ignoring {WORKERS_ENV}={v:?}; using {DEFAULT_WORKERS}");
                DEFAULT_WORKERS
            }
        },
        Err(_) => DEFAULT_WORKERS,
    }
}

/// Cloneable flag that stops a running server.
#[derive(Debug, Clone, Default)]
pub struct ShutdownHandle(Arc<AtomicBool>);

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_shutdown(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

pub struct Server {
    listener: TcpListener,
    store: Arc<Store>,
    shutdown: ShutdownHandle,
    workers: usize,
}

impl Server {
    pub fn bind(addr: &str, store: Arc<Store>) -> Result<Self, StoreError> {
        let listener = TcpListener::bind(addr).map_err(|source| StoreError::BindFailure {
            addr: addr.to_string(),
            source,
        })?;
        Ok(Self {
            listener,
            store,
            shutdown: ShutdownHandle::default(),
            workers: workers_from_env(),
        })
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        self.shutdown.clone()
    }

    /// Serves until the shutdown handle fires. Connections beyond what the
    /// pool can queue are refused.
    pub fn run(self) -> io::Result<()> {
        self.listener.set_nonblocking(true)?;
        let (tx, rx) = sync_channel::<TcpStream>(self.workers * 4);
        let rx = Arc::new(Mutex::new(rx));
        let mut handles = Vec::with_capacity(self.workers);
        for id in 0..self.workers {
            let rx = Arc::clone(&rx);
            let store = Arc::clone(&self.store);
            let shutdown = self.shutdown.clone();
            handles.push(
                thread::Builder::new()
                    .name(format!("mpcc-worker-{id}"))
                    .spawn(move || loop {
                        let next = rx.lock().unwrap().recv();
                        match next {
                            Ok(stream) => {
                                if let Err(e) = handle_connection(&store, stream, &shutdown) {
                                    log::debug!("connection ended: {e}");
                                }
                            }
                            Err(_) => break,
                        }
                    })?,
            );
        }
        log::info!(
            "serving on {} with {} workers",
            self.listener.local_addr()?,
            self.workers
        );

        while !self.shutdown.is_shutdown() {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    match tx.try_send(stream) {
                        Ok(()) => log::debug!("accepted {peer}"),
                        Err(TrySendError::Full(_)) => {
                            log::warn!("worker queue full; dropping {peer}")
                        }
                        Err(TrySendError::Disconnected(_)) => break,
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        drop(tx);
        for h in handles {
            let _ = h.join();
        }
        log::info!("server stopped");
        Ok(())
    }
}

/// Waits for the next frame to start; false once the peer closed or the
/// server is shutting down.
fn await_frame(stream: &TcpStream, shutdown: &ShutdownHandle) -> io::Result<bool> {
    stream.set_read_timeout(Some(POLL))?;
    let mut probe = [0u8; 1];
    loop {
        if shutdown.is_shutdown() {
            return Ok(false);
        }
        match stream.peek(&mut probe) {
            Ok(0) => return Ok(false),
            Ok(_) => {
                stream.set_read_timeout(Some(FRAME_TIMEOUT))?;
                return Ok(true);
            }
            Err(e)
                if matches!(
                    e.kind(),
                    ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted
                ) => {}
            Err(e) => return Err(e),
        }
    }
}

fn handle_connection(
    store: &Store,
    mut stream: TcpStream,
    shutdown: &ShutdownHandle,
) -> io::Result<()> {
    while await_frame(&stream, shutdown)? {
        let query = match read_frame(&mut stream).map(|b| b.map(|b| decode_query(&b))) {
            Ok(Some(Ok(q))) => q,
            Ok(None) => return Ok(()),
            Ok(Some(Err(e))) | Err(e) => {
                log::debug!("malformed frame: {e}");
                let _ = write_frame(
                    &mut stream,
                    &encode_reply(&Reply::error(Status::Malformed, 0)),
                );
                let _ = stream.shutdown(std::net::Shutdown::Both);
                return Ok(());
            }
        };
        write_frame(&mut stream, &encode_reply(&answer(store, &query)))?;
    }
    Ok(())
}

/// Computes the reply to one query.
pub fn answer(store: &Store, q: &Query) -> Reply {
    let Some(op) = Op::from_code(q.op) else {
        return Reply::error(Status::UnknownOp, q.index);
    };
    let result = match op {
        Op::FetchDecompressed => store.decompress(q.index).map(|d| d.block.z),
        Op::FetchRaw => store.get_record(q.index).map(|r| r.payload),
        Op::StatCount => Ok(vec![store.len() as f64]),
    };
    match result {
        Ok(payload) => Reply {
            status: Status::Ok,
            index: q.index,
            payload,
        },
        Err(e) => {
            let status = match e {
                StoreError::NotFound(_) => Status::NotFound,
                StoreError::Recovery(RecoveryError::NotConverged(_)) => Status::NotConverged,
                _ => Status::Internal,
            };
            log::warn!("query op={} index={} failed: {e}", q.op, q.index);
            Reply::error(status, q.index)
        }
    }
}

/// Blocking client for one connection.
pub struct Client {
    stream: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(Duration::from_secs(600)))?;
        Ok(Self { stream })
    }

    pub fn request(&mut self, q: &Query) -> Result<Reply, FrameError> {
        self.send_bytes(&encode_query(q))?;
        self.read_reply()
    }

    /// Sends arbitrary bytes, for exercising error paths.
    pub fn send_bytes(&mut self, bytes: &[u8]) -> Result<(), FrameError> {
        write_frame(&mut self.stream, bytes)?;
        Ok(())
    }

    pub fn read_reply(&mut self) -> Result<Reply, FrameError> {
        let body = read_frame(&mut self.stream)?.ok_or(FrameError::Truncated)?;
        decode_reply(&body)
    }

    /// Closes the sending half so the server sees end of stream.
    pub fn finish_sending(&self) -> io::Result<()> {
        self.stream.shutdown(std::net::Shutdown::Write)
    }
}
