//! Live ingest service.
//!
//! Anchors connect over TCP and send newline-delimited wire reports. Each
//! connection gets a reader thread that parses lines and forwards reports
//! to a single router thread, which owns the [`Ingestor`] and the log
//! writer. Records go to the log and to every subscriber.

use std::io::{self, BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;
use tracing::{debug, info, warn};
use wanderloc_core::RawReport;

use crate::log::{LogWriter, TrajectoryLogRecord};
use crate::pipeline::{IngestOptions, IngestStats, Ingestor};
use crate::wire::{parse_report_bytes, MAX_LINE_BYTES};

const POLL: Duration = Duration::from_millis(20);
const READ_TIMEOUT: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Stop by itself once no connection has been open or sent data for this long,
    /// after at least one connection was seen.
    pub idle_exit: Option<Duration>,
}

#[derive(Debug, Default)]
struct Counters {
    connections: AtomicU64,
    open: AtomicUsize,
    lines: AtomicU64,
    parse_errors: AtomicU64,
    last_activity_ms: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSummary {
    pub connections: u64,
    pub lines: u64,
    pub parse_errors: u64,
    pub ingest: IngestStats,
    pub log_write_errors: u64,
}

enum Msg {
    Report(RawReport<f64>),
    Subscribe(Sender<TrajectoryLogRecord>),
    Finish,
}

type Sink = Box<dyn Write + Send>;

/// Running service. Dropping it without [`shutdown`](Self::shutdown) stops
/// the threads but loses the final flush summary.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    counters: Arc<Counters>,
    tx: Mutex<Sender<Msg>>,
    acceptor: Option<JoinHandle<()>>,
    router: Option<JoinHandle<(IngestStats, u64)>>,
}

/// Binds the listener and starts the service threads.
pub fn serve_ingest(
    addr: SocketAddr,
    ingest_config: wanderloc_core::TrackerConfig<f64>,
    ingest_options: IngestOptions,
    log: Option<Sink>,
    options: ServeOptions,
) -> Result<ServerHandle, ServeError> {
    let listener = TcpListener::bind(addr).map_err(|source| ServeError::BindFailure { addr, source })?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    info!(addr = %local, "listening");

    let stop = Arc::new(AtomicBool::new(false));
    let counters = Arc::new(Counters::default());
    let (tx, rx) = mpsc::channel();

    let ingestor = Ingestor::new(ingest_config, ingest_options);
    let router = thread::Builder::new()
        .name("ingest-router".into())
        .spawn(move || route(rx, ingestor, log))?;

    let acceptor = {
        let (stop, counters, tx) = (stop.clone(), counters.clone(), tx.clone());
        thread::Builder::new()
            .name("ingest-accept".into())
            .spawn(move || accept_loop(listener, stop, counters, tx, options))?
    };

    Ok(ServerHandle {
        addr: local,
        stop,
        counters,
        tx: Mutex::new(tx),
        acceptor: Some(acceptor),
        router: Some(router),
    })
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stream of records produced from now on, in log order.
    pub fn subscribe(&self) -> Receiver<TrajectoryLogRecord> {
        let (tx, rx) = mpsc::channel();
        let _ = self.tx.lock().expect("sender lock").send(Msg::Subscribe(tx));
        rx
    }

    pub fn parse_errors(&self) -> u64 {
        self.counters.parse_errors.load(Ordering::Relaxed)
    }

    pub fn lines(&self) -> u64 {
        self.counters.lines.load(Ordering::Relaxed)
    }

    /// True once the service decided to stop (idle exit or shutdown).
    pub fn is_stopping(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// Blocks until the idle timer or another thread stops the service.
    pub fn wait(self) -> SessionSummary {
        while !self.is_stopping() {
            thread::sleep(POLL);
        }
        self.shutdown()
    }

    /// Stops accepting, lets open connections drain, flushes the pipeline.
    pub fn shutdown(mut self) -> SessionSummary {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        let _ = self.tx.lock().expect("sender lock").send(Msg::Finish);
        let (ingest, log_write_errors) = self
            .router
            .take()
            .and_then(|r| r.join().ok())
            .unwrap_or_default();
        let c = &self.counters;
        SessionSummary {
            connections: c.connections.load(Ordering::Relaxed),
            lines: c.lines.load(Ordering::Relaxed),
            parse_errors: c.parse_errors.load(Ordering::Relaxed),
            ingest,
            log_write_errors,
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        if let Ok(tx) = self.tx.lock() {
            let _ = tx.send(Msg::Finish);
        }
        if let Some(r) = self.router.take() {
            let _ = r.join();
        }
    }
}

fn now_ms(epoch: Instant) -> u64 {
    epoch.elapsed().as_millis() as u64
}

fn accept_loop(
    listener: TcpListener,
    stop: Arc<AtomicBool>,
    counters: Arc<Counters>,
    tx: Sender<Msg>,
    options: ServeOptions,
) {
    let epoch = Instant::now();
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!(%peer, "anchor connected");
                counters.connections.fetch_add(1, Ordering::Relaxed);
                counters.open.fetch_add(1, Ordering::SeqCst);
                counters.last_activity_ms.store(now_ms(epoch), Ordering::Relaxed);
                let (stop, worker_counters, tx) = (stop.clone(), counters.clone(), tx.clone());
                let spawned = thread::Builder::new()
                    .name(format!("ingest-{peer}"))
                    .spawn(move || {
                        let c = &worker_counters;
                        if let Err(e) = read_connection(stream, &stop, c, &tx, epoch) {
                            warn!(%peer, error = %e, "connection ended with error");
                        }
                        c.open.fetch_sub(1, Ordering::SeqCst);
                        c.last_activity_ms.store(now_ms(epoch), Ordering::Relaxed);
                    });
                match spawned {
                    Ok(h) => workers.push(h),
                    Err(e) => {
                        warn!(error = %e, "cannot spawn connection thread");
                        counters.open.fetch_sub(1, Ordering::SeqCst);
                    }
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                warn!(error = %e, "accept failed");
                thread::sleep(POLL);
            }
        }
        workers.retain(|h| !h.is_finished());
        if let Some(idle) = options.idle_exit {
            let quiet = now_ms(epoch).saturating_sub(counters.last_activity_ms.load(Ordering::Relaxed));
            if counters.connections.load(Ordering::Relaxed) > 0
                && counters.open.load(Ordering::SeqCst) == 0
                && quiet >= idle.as_millis() as u64
            {
                info!("idle, stopping");
                stop.store(true, Ordering::SeqCst);
            }
        }
    }
    for h in workers {
        let _ = h.join();
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

fn read_connection(
    stream: TcpStream,
    stop: &AtomicBool,
    counters: &Counters,
    tx: &Sender<Msg>,
    epoch: Instant,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(READ_TIMEOUT))?;
    let mut reader = BufReader::new(stream);
    let mut line = Vec::with_capacity(256);
    // set while discarding the rest of an oversized line
    let mut skipping = false;
    loop {
        let budget = (MAX_LINE_BYTES + 2).saturating_sub(line.len()) as u64;
        let n = match (&mut reader).take(budget.max(1)).read_until(b'\n', &mut line) {
            Ok(n) => n,
            Err(e) if is_timeout(&e) => {
                // after shutdown, exit once the peer has nothing more queued
                if stop.load(Ordering::SeqCst) {
                    return Ok(());
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let complete = line.last() == Some(&b'\n');
        if n == 0 && !complete {
            // EOF; an unterminated tail is a torn line
            if !line.is_empty() && !skipping {
                counters.parse_errors.fetch_add(1, Ordering::Relaxed);
            }
            return Ok(());
        }
        counters.last_activity_ms.store(now_ms(epoch), Ordering::Relaxed);
        if !complete {
            if line.len() > MAX_LINE_BYTES + 1 {
                if !skipping {
                    counters.lines.fetch_add(1, Ordering::Relaxed);
                    counters.parse_errors.fetch_add(1, Ordering::Relaxed);
                }
                skipping = true;
                line.clear();
            }
            continue;
        }
        if skipping {
            skipping = false;
            line.clear();
            continue;
        }
        counters.lines.fetch_add(1, Ordering::Relaxed);
        match parse_report_bytes(&line) {
            Ok(r) => {
                if tx.send(Msg::Report(r)).is_err() {
                    return Ok(());
                }
            }
            Err(e) => {
                counters.parse_errors.fetch_add(1, Ordering::Relaxed);
                debug!(error = %e, "bad line");
            }
        }
        line.clear();
    }
}

fn route(rx: Receiver<Msg>, mut ingestor: Ingestor, log: Option<Sink>) -> (IngestStats, u64) {
    let mut writer = log.and_then(|s| match LogWriter::new(s, false) {
        Ok(w) => Some(w),
        Err(e) => {
            warn!(error = %e, "log unavailable");
            None
        }
    });
    let mut subscribers: Vec<Sender<TrajectoryLogRecord>> = Vec::new();
    let mut write_errors = 0u64;
    let mut publish = |records: Vec<TrajectoryLogRecord>, subscribers: &mut Vec<Sender<TrajectoryLogRecord>>| {
        for r in records {
            if let Some(w) = writer.as_mut() {
                if let Err(e) = w.append(&r) {
                    write_errors += 1;
                    warn!(error = %e, "log write failed");
                }
            }
            subscribers.retain(|s| s.send(r.clone()).is_ok());
        }
    };
    loop {
        match rx.recv() {
            Ok(Msg::Report(r)) => {
                let out = ingestor.push(r);
                publish(out, &mut subscribers);
            }
            Ok(Msg::Subscribe(s)) => subscribers.push(s),
            Ok(Msg::Finish) | Err(_) => break,
        }
    }
    // connection threads are joined before Finish is sent, so nothing is queued behind it
    while let Ok(Msg::Report(r)) = rx.try_recv() {
        let out = ingestor.push(r);
        publish(out, &mut subscribers);
    }
    let out = ingestor.finish();
    publish(out, &mut subscribers);
    if let Some(w) = writer.as_mut() {
        if let Err(e) = w.flush() {
            write_errors += 1;
            warn!(error = %e, "log flush failed");
        }
    }
    (ingestor.stats().clone(), write_errors)
}
