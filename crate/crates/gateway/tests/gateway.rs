use std::net::{SocketAddr, TcpListener};
use std::thread;
use std::time::Duration;

use hsi_core::hazard::HazardKind;
use hsi_core::sagat::Answer;
use hsi_core::session::{replay, EndStatus, RunOutcome, SessionConfig, SessionLog};
use hsi_core::world::CellIndex;
use hsi_gateway::audit::{hazard_ground_truth, scan_frames};
use hsi_gateway::{serve, Client, ClientMessage, ConsoleScript, GatewayConfig, RejectReason, ScriptedConsole, ServerMessage, PROTOCOL};

fn fast() -> GatewayConfig {
    GatewayConfig { time_scale: None, render_hz: 10.0, hello_timeout_ms: 5_000, ..Default::default() }
}

/// Starts a server thread; returns its address and a handle yielding the outcome and log.
fn start(seed: u64, kind: HazardKind, cfg: GatewayConfig) -> (SocketAddr, thread::JoinHandle<(RunOutcome, SessionLog)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        let setup = SessionConfig { seed, hazard_kind: kind, ..Default::default() }.prepare().unwrap();
        let mut lines: Vec<String> = Vec::new();
        let out = serve(&setup, listener, &cfg, &mut lines).unwrap();
        let log = SessionLog::parse(&lines.join("\n")).unwrap();
        (out, log)
    });
    (addr, handle)
}

fn recv(c: &mut Client) -> ServerMessage {
    c.recv().unwrap().expect("server still open").1
}

fn recv_until(c: &mut Client, type_name: &str) -> ServerMessage {
    loop {
        let m = recv(c);
        if m.type_name() == type_name {
            return m;
        }
    }
}

#[test]
fn full_session_follows_protocol_and_replays() {
    let (addr, server) = start(11, HazardKind::Dis, fast());
    let trace = ScriptedConsole::connect(addr, ConsoleScript::default()).unwrap().run().unwrap();
    let (out, log) = server.join().unwrap();
    assert_eq!(out.end, EndStatus::Complete);

    let types: Vec<&str> = trace.messages.iter().map(|m| m.type_name()).filter(|t| *t != "Rejection").collect();
    assert_eq!(types[0], "Welcome");
    assert_eq!(types[1], "Snapshot");
    assert_eq!(*types.last().unwrap(), "SessionEnd");
    assert_eq!(types[types.len() - 2], "SartForm");
    assert_eq!(trace.count("PauseBegin"), 2);
    assert_eq!(trace.count("PauseEnd"), 2);
    assert_eq!(trace.count("QueryPrompt"), 28);

    let mut in_pause = false;
    let mut prompts = 0;
    for m in &trace.messages {
        match m {
            ServerMessage::PauseBegin { total, .. } => {
                assert_eq!(*total, 14);
                in_pause = true;
                prompts = 0;
            }
            ServerMessage::QueryPrompt { index, total, .. } => {
                assert!(in_pause);
                prompts += 1;
                assert_eq!(*index, prompts);
                assert_eq!(*total, 14);
            }
            ServerMessage::PauseEnd { .. } => {
                assert_eq!(prompts, 14, "PauseEnd only after 14 answers");
                in_pause = false;
            }
            ServerMessage::Snapshot { .. } => assert!(!in_pause, "no snapshot while paused"),
            _ => {}
        }
    }

    assert!(trace.sent.iter().any(|m| matches!(m, ClientMessage::Mark { .. })));
    assert!(trace.sent.iter().any(|m| matches!(m, ClientMessage::Swipe { .. })));
    assert!(log.is_complete());
    assert_eq!(log.count("SagatAnswer"), 28);
    assert_eq!(log.count("SartSubmission"), 1);
    let r = replay(&log).unwrap();
    assert!(r.complete);
    assert!(r.hashes_checked > 0);

    let mut forbidden = hazard_ground_truth(&log);
    assert!(!forbidden.is_empty());
    for c in trace.sent_cells() {
        forbidden.remove(&c);
    }
    assert!(scan_frames(&trace.frames, &forbidden).is_empty());
}

#[test]
fn render_rate_decimates_snapshots_and_keeps_alerts() {
    let cfg = GatewayConfig { render_hz: 2.0, ..fast() };
    let (addr, server) = start(3, HazardKind::Dis, cfg);
    let trace = ScriptedConsole::connect(addr, ConsoleScript { mark_alerts: 0.0, swipe_every: 0, ..Default::default() }).unwrap().run().unwrap();
    let (_, log) = server.join().unwrap();
    let ticks: Vec<u64> = trace
        .messages
        .iter()
        .filter_map(|m| match m {
            ServerMessage::Snapshot { tick, .. } => Some(*tick),
            _ => None,
        })
        .collect();
    assert_eq!(ticks.len(), 3000 / 5 + 1);
    assert!(ticks.iter().all(|t| t % 5 == 0));
    let alerted: usize = trace
        .messages
        .iter()
        .map(|m| match m {
            ServerMessage::Snapshot { alerts, .. } => alerts.len(),
            _ => 0,
        })
        .sum();
    assert_eq!(alerted, log.count("Alert"));
}

#[test]
fn protocol_rejections_keep_the_session_alive() {
    let (addr, server) = start(5, HazardKind::Spr, fast());
    let mut c = Client::connect_retry(addr, Duration::from_secs(5)).unwrap();
    assert!(matches!(c.hello("manual").unwrap(), ServerMessage::Welcome { .. }));

    c.send_raw(b"{not json").unwrap();
    let r = recv_until(&mut c, "Rejection");
    assert!(matches!(r, ServerMessage::Rejection { reason: RejectReason::Malformed, .. }));

    let ServerMessage::PauseBegin { pause: 1, .. } = recv_until(&mut c, "PauseBegin") else { panic!() };
    let ServerMessage::QueryPrompt { index: 1, query: q1, .. } = recv(&mut c) else { panic!("prompt expected") };

    c.send(&ClientMessage::Mark { cell: CellIndex::new(1, 1) }).unwrap();
    let ServerMessage::Rejection { reason, .. } = recv(&mut c) else { panic!() };
    assert_eq!(reason, RejectReason::Paused);

    c.send(&ClientMessage::SagatAnswer { query_id: "p1-03".into(), answer: Answer::DontKnow }).unwrap();
    let ServerMessage::Rejection { reason, .. } = recv(&mut c) else { panic!() };
    assert_eq!(reason, RejectReason::OutOfOrder);

    let wrong = if q1.options.is_some() { Answer::NotApplicable } else { Answer::DontKnow };
    c.send(&ClientMessage::SagatAnswer { query_id: q1.query_id.clone(), answer: wrong }).unwrap();
    let ServerMessage::Rejection { reason, .. } = recv(&mut c) else { panic!() };
    assert_eq!(reason, RejectReason::InvalidAnswer);

    c.send(&ClientMessage::Hello { protocol: PROTOCOL.into(), console_version: "again".into() }).unwrap();
    let ServerMessage::Rejection { reason, .. } = recv(&mut c) else { panic!() };
    assert_eq!(reason, RejectReason::Unexpected);

    // A second console is turned away while this one is connected.
    let mut intruder = Client::connect(addr).unwrap();
    intruder.send(&ClientMessage::Hello { protocol: PROTOCOL.into(), console_version: "x".into() }).unwrap();
    let ServerMessage::Rejection { reason, .. } = recv(&mut intruder) else { panic!() };
    assert_eq!(reason, RejectReason::Busy);

    let answer_for = |q: &hsi_gateway::PromptView| if q.options.is_some() { Answer::DontKnow } else { Answer::NotApplicable };
    c.send(&ClientMessage::SagatAnswer { query_id: q1.query_id.clone(), answer: answer_for(&q1) }).unwrap();
    let mut answered = 1;
    loop {
        match recv(&mut c) {
            ServerMessage::QueryPrompt { query, .. } => {
                c.send(&ClientMessage::SagatAnswer { query_id: query.query_id.clone(), answer: answer_for(&query) }).unwrap();
                answered += 1;
            }
            ServerMessage::PauseEnd { pause } => {
                assert_eq!(pause, 1);
                break;
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    assert_eq!(answered, 14);

    c.send(&ClientMessage::SartSubmit { ratings: vec![4; 10] }).unwrap();
    let ServerMessage::Rejection { reason, .. } = recv_until(&mut c, "Rejection") else { panic!() };
    assert_eq!(reason, RejectReason::Unexpected);
    c.close();

    let (out, log) = server.join().unwrap();
    assert!(matches!(out.end, EndStatus::Aborted { .. }));
    assert!(!log.is_complete());
    assert_eq!(log.count("SagatAnswer"), 14);
    let r = replay(&log).unwrap();
    assert!(!r.complete);
}

#[test]
fn bad_handshakes_do_not_start_the_session() {
    let (addr, server) = start(8, HazardKind::Mov, fast());
    let mut old = Client::connect_retry(addr, Duration::from_secs(5)).unwrap();
    old.send(&ClientMessage::Hello { protocol: "hsi-gateway/0".into(), console_version: "old".into() }).unwrap();
    let ServerMessage::Rejection { reason, .. } = recv(&mut old) else { panic!() };
    assert_eq!(reason, RejectReason::UnsupportedProtocol);

    let mut rude = Client::connect(addr).unwrap();
    rude.send(&ClientMessage::Mark { cell: CellIndex::new(0, 0) }).unwrap();
    let ServerMessage::Rejection { reason, .. } = recv(&mut rude) else { panic!() };
    assert_eq!(reason, RejectReason::Unexpected);

    let trace = ScriptedConsole::connect(addr, ConsoleScript { seed: 2, ..Default::default() }).unwrap().run().unwrap();
    assert!(matches!(trace.messages[0], ServerMessage::Welcome { .. }));
    let (out, _) = server.join().unwrap();
    assert_eq!(out.end, EndStatus::Complete);
}

#[test]
fn disconnect_aborts_and_invalid_sart_is_rejected() {
    let (addr, server) = start(9, HazardKind::Dis, fast());
    let mut c = Client::connect_retry(addr, Duration::from_secs(5)).unwrap();
    assert!(matches!(c.hello("manual").unwrap(), ServerMessage::Welcome { .. }));
    loop {
        match recv(&mut c) {
            ServerMessage::QueryPrompt { query, .. } => {
                let answer = if query.options.is_some() { Answer::DontKnow } else { Answer::NotApplicable };
                c.send(&ClientMessage::SagatAnswer { query_id: query.query_id, answer }).unwrap();
            }
            ServerMessage::SartForm { .. } => break,
            _ => {}
        }
    }
    c.send(&ClientMessage::SartSubmit { ratings: vec![9; 10] }).unwrap();
    let ServerMessage::Rejection { reason, .. } = recv_until(&mut c, "Rejection") else { panic!() };
    assert_eq!(reason, RejectReason::InvalidRatings);
    c.send(&ClientMessage::SartSubmit { ratings: vec![4; 3] }).unwrap();
    let ServerMessage::Rejection { reason, .. } = recv_until(&mut c, "Rejection") else { panic!() };
    assert_eq!(reason, RejectReason::InvalidRatings);
    c.close();

    let (out, log) = server.join().unwrap();
    assert!(matches!(out.end, EndStatus::Aborted { .. }));
    assert_eq!(log.count("SartSubmission"), 0);
    assert_eq!(log.count("SagatAnswer"), 28);
}

#[test]
fn paced_run_respects_time_scale() {
    let cfg = GatewayConfig { time_scale: Some(100.0), ..fast() };
    let (addr, server) = start(4, HazardKind::Off, cfg);
    let t0 = std::time::Instant::now();
    let trace = ScriptedConsole::connect(addr, ConsoleScript::default()).unwrap().run().unwrap();
    let (out, _) = server.join().unwrap();
    assert_eq!(out.end, EndStatus::Complete);
    // 300 s of task at 100x is at least 3 s of wall time.
    assert!(t0.elapsed() >= Duration::from_millis(2900));
    // 10 Hz of wall time over 3 s renders every 100th tick.
    assert_eq!(trace.count("Snapshot"), 3000 / 100 + 1);
}
