//! Replays a report file into a live service, one connection per anchor.

use std::collections::BTreeMap;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use wanderloc_core::{AnchorId, RawReport};

use crate::wire::format_report;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayStats {
    pub connections: usize,
    pub lines: u64,
}

/// Sends reports in timestamp order, pacing them so that `speed` seconds
/// of report time pass per wall-clock second. A non-finite or
/// non-positive speed sends as fast as possible.
pub fn replay(reports: &[RawReport<f64>], addr: SocketAddr, speed: f64) -> io::Result<ReplayStats> {
    let mut order: Vec<&RawReport<f64>> = reports.iter().collect();
    order.sort_by_key(|r| r.timestamp);

    let mut streams: BTreeMap<AnchorId, BufWriter<TcpStream>> = BTreeMap::new();
    for r in &order {
        if !streams.contains_key(&r.anchor_id) {
            let s = TcpStream::connect(addr)?;
            s.set_nodelay(true)?;
            streams.insert(r.anchor_id.clone(), BufWriter::new(s));
        }
    }

    let paced = speed.is_finite() && speed > 0.0;
    let start = Instant::now();
    let t0 = order.first().map_or(0, |r| r.timestamp);
    let mut lines = 0u64;
    for r in order {
        if paced {
            let due = Duration::from_secs_f64((r.timestamp - t0) as f64 / 1000.0 / speed);
            let elapsed = start.elapsed();
            if due > elapsed {
                for s in streams.values_mut() {
                    s.flush()?;
                }
                thread::sleep(due - elapsed);
            }
        }
        let s = streams.get_mut(&r.anchor_id).expect("stream opened above");
        s.write_all(format_report(r).as_bytes())?;
        s.write_all(b"\n")?;
        lines += 1;
    }
    let connections = streams.len();
    for (_, s) in streams {
        let stream = s.into_inner().map_err(|e| e.into_error())?;
        stream.shutdown(std::net::Shutdown::Write)?;
    }
    Ok(ReplayStats { connections, lines })
}
