use std::io::Write;
use std::net::{SocketAddr, TcpStream};
use std::sync::mpsc::Receiver;
use std::time::{Duration, Instant};

use wanderloc::log::{render_log, TrajectoryLogRecord};
use wanderloc::offline::{simulate, track_reports};
use wanderloc::pipeline::IngestOptions;
use wanderloc::server::{serve_ingest, ServeOptions, ServerHandle};
use wanderloc::wire::format_report;
use wanderloc::{DeploymentConfig, ScenarioFile, ServeError};
use wanderloc_core::RawReport;

fn start(cfg: &DeploymentConfig) -> ServerHandle {
    serve_ingest(
        SocketAddr::from(([127, 0, 0, 1], 0)),
        cfg.tracker_config().unwrap(),
        IngestOptions::from_config(cfg),
        None,
        ServeOptions::default(),
    )
    .unwrap()
}

fn wait_for_lines(server: &ServerHandle, n: u64) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while server.lines() < n && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn drain(rx: &Receiver<TrajectoryLogRecord>) -> Vec<TrajectoryLogRecord> {
    rx.try_iter().collect()
}

fn short_run() -> (DeploymentConfig, Vec<RawReport<f64>>) {
    let cfg = DeploymentConfig::load("fig2-corridors").unwrap();
    let mut file = ScenarioFile::load("corridor-walk").unwrap();
    file.duration_s = 20.0;
    let reports = simulate(&file.to_scenario().unwrap()).unwrap().reports;
    (cfg, reports)
}

/// Sends one anchor per connection. After each chunk the sender waits for
/// the service to read it, which bounds the skew between connections.
fn send_interleaved(server: &ServerHandle, reports: &[RawReport<f64>], anchors: [&str; 2], reverse_chunks: bool) {
    let addr = server.local_addr();
    let mut conns: Vec<TcpStream> = anchors.iter().map(|_| TcpStream::connect(addr).unwrap()).collect();
    let mut mine: Vec<&RawReport<f64>> = reports
        .iter()
        .filter(|r| anchors.contains(&r.anchor_id.as_str()))
        .collect();
    let mut sent = 0;
    // 30 reports is under one second of report time for two anchors
    for chunk in mine.chunks_mut(30) {
        if reverse_chunks {
            chunk.reverse();
        }
        for r in chunk.iter() {
            let i = anchors.iter().position(|a| *a == r.anchor_id.as_str()).unwrap();
            writeln!(conns[i], "{}", format_report(r)).unwrap();
        }
        sent += chunk.len() as u64;
        wait_for_lines(server, sent);
    }
}

#[test]
fn interleaving_order_does_not_change_output() {
    let (cfg, reports) = short_run();
    let anchors = ["A1", "A2"];
    let subset: Vec<_> = reports
        .iter()
        .filter(|r| anchors.contains(&r.anchor_id.as_str()))
        .cloned()
        .collect();
    let expected = track_reports(&cfg, subset.clone()).unwrap().records;
    assert!(!expected.is_empty());

    for reverse in [false, true] {
        let server = start(&cfg);
        let rx = server.subscribe();
        send_interleaved(&server, &reports, anchors, reverse);
        wait_for_lines(&server, subset.len() as u64);
        let summary = server.shutdown();
        assert_eq!(summary.ingest.late, 0);
        assert_eq!(summary.connections, 2);
        assert_eq!(render_log(&drain(&rx)), render_log(&expected), "reverse = {reverse}");
    }
}

#[test]
fn stale_report_is_dropped_and_counted() {
    let cfg = DeploymentConfig::load("fig2-corridors").unwrap();
    let server = start(&cfg);
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    let now = RawReport::new("A1", 0, "T1", -60.0, 1_700_000_020_000).unwrap();
    let stale = RawReport::new("A1", 0, "T1", -60.0, 1_700_000_010_000).unwrap();
    writeln!(s, "{}", format_report(&now)).unwrap();
    writeln!(s, "{}", format_report(&stale)).unwrap();
    drop(s);
    wait_for_lines(&server, 2);
    let summary = server.shutdown();
    assert_eq!(summary.ingest.late, 1);
    assert_eq!(summary.ingest.accepted, 1);
}

#[test]
fn bad_lines_are_counted_not_fatal() {
    let (cfg, reports) = short_run();
    let server = start(&cfg);
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    writeln!(s, "not json").unwrap();
    writeln!(s, "{{\"v\":9}}").unwrap();
    s.write_all(&[0xff, 0xfe, b'\n']).unwrap();
    writeln!(s, "{}", "x".repeat(5000)).unwrap();
    let good = &reports[..50];
    for r in good {
        writeln!(s, "{}", format_report(r)).unwrap();
    }
    drop(s);
    wait_for_lines(&server, 54);
    let summary = server.shutdown();
    assert_eq!(summary.parse_errors, 4);
    assert_eq!(summary.ingest.accepted, 50);
}

#[test]
fn occupied_port_is_a_bind_failure() {
    let cfg = DeploymentConfig::load("fig2-corridors").unwrap();
    let first = start(&cfg);
    let err = serve_ingest(
        first.local_addr(),
        cfg.tracker_config().unwrap(),
        IngestOptions::from_config(&cfg),
        None,
        ServeOptions::default(),
    );
    assert!(matches!(err, Err(ServeError::BindFailure { .. })));
    first.shutdown();
}

#[test]
fn idle_exit_stops_the_service() {
    let (cfg, reports) = short_run();
    let server = serve_ingest(
        SocketAddr::from(([127, 0, 0, 1], 0)),
        cfg.tracker_config().unwrap(),
        IngestOptions::from_config(&cfg),
        None,
        ServeOptions {
            idle_exit: Some(Duration::from_millis(200)),
        },
    )
    .unwrap();
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    for r in &reports[..20] {
        writeln!(s, "{}", format_report(r)).unwrap();
    }
    drop(s);
    let summary = server.wait();
    assert_eq!(summary.lines, 20);
}
