//! Client/server sessions over loopback TCP.

use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use baar::client::{Client, ClientError};
use baar::runtime::{ClientRuntime, RunOptions};
use baar::server::{Server, ServerConfig};
use baar::transport::{read_message, write_message, TransportError};
use baar_core::analysis::{analyze_program, AliasMode, AnalysisConfig};
use baar_core::interp::{self, Value};
use baar_core::ir::parse_program;
use baar_core::offload::{build_remote_part, OffloadConfig, Placement, RemoteCaller, RemoteError, RemotePart};
use baar_core::proto::{Kind, Message};

fn server(workers: usize) -> SocketAddr {
    Server::bind("127.0.0.1:0", ServerConfig { workers, vector_width: 1 }).unwrap().spawn().unwrap()
}

fn eager() -> AnalysisConfig {
    AnalysisConfig { threshold: 0, alias: AliasMode::Ignore, ..Default::default() }
}

fn connect(addr: SocketAddr) -> Client {
    Client::connect(&addr.to_string(), Duration::from_secs(5), Duration::from_secs(60)).unwrap()
}

const BOUNDED: &str = "\
func fill(k: i64, A: f64[8]) -> f64 {
  loop i in [0, k) step 1 {
    A[i] = f64(i) * 0.5
  }
  return A[0] + 1.0
}
func main(k: i64, A: f64[8]) -> f64 {
  let r = call fill(k, A)
  return r
}
";

fn part_of(src: &str) -> RemotePart {
    let p = parse_program(src).unwrap();
    build_remote_part(&p, &analyze_program(&p, &eager())).unwrap()
}

#[test]
fn calls_match_the_interpreter_and_faults_keep_the_session() {
    let addr = server(2);
    let part = part_of(BOUNDED);
    assert_eq!(part.functions.len(), 1);
    let mut client = connect(addr);
    let ready = client.prepare(&part).unwrap();
    assert!(ready.contains("fill"), "{ready}");

    let p = parse_program(BOUNDED).unwrap();
    let arr = || Value::zeros(&p.function("fill").unwrap().params[1].ty);
    let mut local = vec![Value::I64(8), arr()];
    let expected = interp::run(&p, "fill", &mut local).unwrap();
    let reply = client.call("fill", &[Value::I64(8), arr()]).unwrap();
    assert_eq!(reply.result, expected.result);
    assert_eq!(reply.arrays, vec![local[1].clone()]);

    match client.call("fill", &[Value::I64(9), arr()]) {
        Err(RemoteError::Fault(msg)) => assert!(msg.contains("outside extent 8"), "{msg}"),
        other => panic!("expected a fault, got {other:?}"),
    }
    match client.call("main", &[Value::I64(1), arr()]) {
        Err(RemoteError::Fault(msg)) => assert!(msg.contains("not exported"), "{msg}"),
        other => panic!("expected a fault, got {other:?}"),
    }
    let again = client.call("fill", &[Value::I64(3), arr()]).unwrap();
    assert_eq!(again.result, Some(Value::F64(1.0)));
}

fn raw_session(addr: SocketAddr) -> (TcpStream, BufReader<TcpStream>) {
    let s = TcpStream::connect(addr).unwrap();
    let r = BufReader::new(s.try_clone().unwrap());
    (s, r)
}

#[test]
fn version_mismatch_is_rejected() {
    let addr = server(1);
    let (mut w, mut r) = raw_session(addr);
    write_message(&mut w, &Message::new(Kind::Hello, "baar 99")).unwrap();
    let reply = read_message(&mut r).unwrap();
    assert_eq!(reply.kind, Kind::Reject);
    assert!(reply.payload.contains("99"), "{}", reply.payload);
    assert!(matches!(read_message(&mut r), Err(TransportError::Closed)));
}

#[test]
fn invalid_remote_parts_are_rejected() {
    let addr = server(1);
    let mut part = part_of(BOUNDED);
    // Point the exported function at a helper the part does not carry.
    let src = "func fill(k: i64, A: f64[8]) -> f64 {\n  let z = call missing(1.0)\n  loop i in [0, k) step 1 {\n    A[i] = 1.0\n  }\n  return z\n}\n";
    let broken = baar_core::ir::parse_unchecked(src).unwrap();
    part.functions[0].function = broken.functions[0].clone();
    let mut client = connect(addr);
    match client.prepare(&part) {
        Err(ClientError::Rejected(why)) => assert!(why.contains("missing"), "{why}"),
        other => panic!("expected REJECT, got {other:?}"),
    }

    let mut client = connect(addr);
    let mut newer = part_of(BOUNDED);
    newer.version = 7;
    assert!(matches!(client.prepare(&newer), Err(ClientError::Rejected(_))));
}

#[test]
fn out_of_order_messages_end_the_session() {
    let addr = server(1);
    let (mut w, mut r) = raw_session(addr);
    write_message(&mut w, &Message::hello()).unwrap();
    write_message(&mut w, &Message::new(Kind::Call, "fill\n")).unwrap();
    assert!(matches!(read_message(&mut r), Err(TransportError::Closed)));
    // The server goes on to serve the next client.
    let mut client = connect(addr);
    client.prepare(&part_of(BOUNDED)).unwrap();
}

#[test]
fn unreachable_server_fails_preparation() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let p = parse_program(BOUNDED).unwrap();
    let cfg = OffloadConfig { server: Some(port.to_string()), connect_timeout_ms: 500, ..Default::default() };
    let rt = ClientRuntime::start(p.clone(), eager(), cfg).unwrap();
    assert!(rt.wait_ready().is_err());
    // Calls still run, locally.
    let mut args = vec![Value::I64(8), Value::zeros(&p.function("main").unwrap().params[1].ty)];
    let out = rt.run("main", &mut args, RunOptions::default()).unwrap();
    assert_eq!(out.outcome.result, Some(Value::F64(1.0)));
    assert!(out.events.is_empty());
}

#[test]
fn dropped_connection_falls_back_to_local_execution() {
    // Accepts the remote part, then hangs up.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        let mut r = BufReader::new(s.try_clone().unwrap());
        let mut w = s;
        read_message(&mut r).unwrap();
        read_message(&mut r).unwrap();
        write_message(&mut w, &Message::new(Kind::Ready, "")).unwrap();
    });
    let p = parse_program(BOUNDED).unwrap();
    let cfg = OffloadConfig { server: Some(addr.to_string()), ..Default::default() };
    let rt = ClientRuntime::start(p.clone(), eager(), cfg).unwrap();
    rt.wait_ready().unwrap();
    let arr = Value::zeros(&p.function("main").unwrap().params[1].ty);
    let mut expected_args = vec![Value::I64(8), arr.clone()];
    let expected = interp::run(&p, "main", &mut expected_args).unwrap();
    for _ in 0..2 {
        let mut args = vec![Value::I64(8), arr.clone()];
        let out = rt.run("main", &mut args, RunOptions::default()).unwrap();
        assert_eq!(out.outcome.result, expected.result);
        assert_eq!(args, expected_args);
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events[0].decision.placement, Placement::Remote);
        assert!(out.events[0].fallback.is_some());
    }
}

const TWICE: &str = "\
func tick(x: f64) -> f64 {
  return x + 1.0
}
func kernel(n: i64, A: f64[32][32]) {
  let z = call tick(0.0)
  loop i in [0, n) step 1 {
    loop j in [0, n) step 1 {
      A[i][j] = A[i][j] + f64(i - j) * z
    }
  }
}
func main(n: i64, A: f64[32][32]) {
  call kernel(n, A)
  call kernel(n, A)
}
";

#[test]
fn installing_mid_call_only_affects_later_calls() {
    let addr = server(2);
    let p = parse_program(TWICE).unwrap();
    let cfg = OffloadConfig { server: Some(addr.to_string()), ..Default::default() };
    let rt = ClientRuntime::start(p.clone(), eager(), cfg).unwrap();
    let prep = rt.wait_ready().unwrap();
    assert_eq!(prep.exported(), ["kernel"]);
    assert_eq!(prep.remote_part.helpers.len(), 1);
    let part = rt.local_part().unwrap();
    rt.install(None);

    let arr = Value::zeros(&p.function("main").unwrap().params[1].ty);
    let mut expected_args = vec![Value::I64(32), arr.clone()];
    interp::run(&p, "main", &mut expected_args).unwrap();

    let mut args = vec![Value::I64(32), arr];
    let mut installed = false;
    let mut observe = |callee: &str| {
        if callee == "tick" && !installed {
            rt.install(Some((*part).clone()));
            installed = true;
        }
    };
    let out = rt.run("main", &mut args, RunOptions { timed: Some("kernel"), observer: Some(&mut observe) }).unwrap();
    assert_eq!(args, expected_args);
    // The first kernel call started before installation and ran locally;
    // the second saw the guard and went remote.
    assert_eq!(out.events.len(), 1);
    assert_eq!(out.events[0].decision.placement, Placement::Remote);
    assert!(out.events[0].raw_ns.is_some());
    assert_eq!(out.outcome.stats.calls["tick"], 1);
    assert_eq!(out.timed_ns.len(), 2);
}

#[test]
fn forced_placements_override_the_decision() {
    let addr = server(1);
    let p = parse_program(TWICE).unwrap();
    for (force, remote) in [(Placement::Local, false), (Placement::Remote, true)] {
        let cfg = OffloadConfig { server: Some(addr.to_string()), force: Some(force), ..Default::default() };
        let rt = ClientRuntime::start(p.clone(), eager(), cfg).unwrap();
        rt.wait_ready().unwrap();
        let mut args = vec![Value::I64(4), Value::zeros(&p.function("main").unwrap().params[1].ty)];
        let out = rt.run("main", &mut args, RunOptions::default()).unwrap();
        assert_eq!(out.events.len(), 2);
        assert!(out.events.iter().all(|e| e.decision.placement == force && e.raw_ns.is_some() == remote));
    }
}
