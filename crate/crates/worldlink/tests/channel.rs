// SPDX-License-Identifier: Apache-2.0

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use ecig_core::audit::{AuditLog, Outcome, World};
use ecig_core::clock::SystemClock;
use ecig_worldlink::message::{Reply, Request, WireError, WireParam};
use ecig_worldlink::server::{Attestor, SecureWorld, SecureWorldServer, SessionInfo, TrustedApplication};
use ecig_worldlink::{
    HashAlgorithm, MeasurementMode, ParamDirection, Parameter, WorldCommand, WorldContext, WorldError,
};

const TA: &str = "test.echo";
const ECHO: u32 = 0;
const FAIL: u32 = 1;
const SCRIBBLE: u32 = 2;
const SLOW: u32 = 3;

struct EchoTa {
    busy: Arc<AtomicUsize>,
    overlap: Arc<AtomicUsize>,
}

impl TrustedApplication for EchoTa {
    fn ta_id(&self) -> &str {
        TA
    }

    fn invoke(&mut self, _s: &SessionInfo, command_id: u32, params: &mut [Parameter]) -> Result<(), u32> {
        match command_id {
            ECHO => {
                let input = params.first().ok_or(0xFFFF_0006u32)?.payload.clone();
                for p in params.iter_mut().skip(1) {
                    p.payload = input.clone();
                }
                Ok(())
            }
            FAIL => Err(0xFFFF_0006),
            SCRIBBLE => {
                for p in params.iter_mut() {
                    p.payload = b"scribbled".to_vec();
                }
                Ok(())
            }
            SLOW => {
                if self.busy.fetch_add(1, Ordering::SeqCst) > 0 {
                    self.overlap.fetch_add(1, Ordering::SeqCst);
                }
                thread::sleep(Duration::from_millis(5));
                self.busy.fetch_sub(1, Ordering::SeqCst);
                Ok(())
            }
            _ => Err(0xFFFF_000A),
        }
    }
}

struct Fixture {
    dir: tempfile::TempDir,
    image: PathBuf,
    server: SecureWorldServer,
    overlap: Arc<AtomicUsize>,
}

impl Fixture {
    fn socket(&self) -> &Path {
        self.server.path()
    }

    fn audit_path(&self) -> PathBuf {
        self.dir.path().join("sw-audit.log")
    }
}

fn start(mode: MeasurementMode, train_first: bool) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("nw-image.bin");
    std::fs::write(&image, b"normal world image v1").unwrap();
    let refs = dir.path().join("attestation.json");
    if train_first {
        let mut a = Attestor::open(&refs, MeasurementMode::Training, HashAlgorithm::Sha1).unwrap();
        a.train(TA, &image).unwrap();
    }
    let attestor = Attestor::open(&refs, mode, HashAlgorithm::Sha1).unwrap();
    let audit = AuditLog::open(dir.path().join("sw-audit.log"), World::Secure, Arc::new(SystemClock::default())).unwrap();
    let world = Arc::new(SecureWorld::new(attestor, Arc::new(audit)));
    let overlap = Arc::new(AtomicUsize::new(0));
    world
        .install(Box::new(EchoTa {
            busy: Arc::new(AtomicUsize::new(0)),
            overlap: overlap.clone(),
        }))
        .unwrap();
    let server = world.listen(dir.path().join("sw.sock")).unwrap();
    Fixture {
        dir,
        image,
        server,
        overlap,
    }
}

#[test]
fn unreachable_endpoint() {
    let err = WorldContext::initialize("/nonexistent/sw.sock").unwrap_err();
    assert!(matches!(err, WorldError::EndpointUnreachable(_)));
}

#[test]
fn echo_round_trip_and_in_payloads_are_preserved() {
    let fx = start(MeasurementMode::Normal, true);
    let ctx = WorldContext::initialize(fx.socket()).unwrap();
    let s = ctx.open_session(TA, &fx.image).unwrap();
    assert!(s.is_attested());

    let mut cmd = WorldCommand::new(ECHO)
        .param(Parameter::input(b"hello".to_vec()))
        .unwrap()
        .param(Parameter::output())
        .unwrap()
        .param(Parameter::in_out(b"xx".to_vec()))
        .unwrap();
    let outs = s.invoke(&mut cmd).unwrap();
    assert_eq!(outs, vec![b"hello".to_vec(), b"hello".to_vec()]);
    assert_eq!(cmd.params()[0].payload, b"hello");

    let mut cmd = WorldCommand::new(SCRIBBLE)
        .param(Parameter::input(b"keep".to_vec()))
        .unwrap()
        .param(Parameter::output())
        .unwrap();
    s.invoke(&mut cmd).unwrap();
    assert_eq!(cmd.params()[0].payload, b"keep");
    assert_eq!(cmd.params()[1].payload, b"scribbled");

    // The reply on the wire carries the In payload unchanged as well.
    let raw = ctx
        .send_raw(&Request::InvokeCommand {
            session_id: s.id(),
            command_id: SCRIBBLE,
            params: vec![WireParam {
                direction: ParamDirection::In,
                payload: b"keep".to_vec(),
            }],
        })
        .unwrap();
    match raw {
        Reply::CommandDone { params } => assert_eq!(params[0].payload, b"keep"),
        other => panic!("{other:?}"),
    }

    s.close().unwrap();
    ctx.finalize().unwrap();
}

#[test]
fn handler_errors_and_unknown_ta() {
    let fx = start(MeasurementMode::Normal, true);
    let ctx = WorldContext::initialize(fx.socket()).unwrap();
    let s = ctx.open_session(TA, &fx.image).unwrap();
    let err = s.invoke(&mut WorldCommand::new(FAIL)).unwrap_err();
    assert!(matches!(err, WorldError::HandlerError { code: 0xFFFF_0006 }));
    let err = ctx.open_session("no.such.ta", &fx.image).unwrap_err();
    assert!(matches!(err, WorldError::UnknownTa(_)));
}

#[test]
fn more_than_four_parameters_rejected_on_both_sides() {
    let fx = start(MeasurementMode::Normal, true);
    let ctx = WorldContext::initialize(fx.socket()).unwrap();
    let s = ctx.open_session(TA, &fx.image).unwrap();
    let five = vec![Parameter::output(); 5];
    assert!(WorldCommand::with_params(ECHO, five).is_err());

    let raw = ctx
        .send_raw(&Request::InvokeCommand {
            session_id: s.id(),
            command_id: ECHO,
            params: vec![
                WireParam {
                    direction: ParamDirection::Out,
                    payload: vec![]
                };
                5
            ],
        })
        .unwrap();
    assert_eq!(raw, Reply::Error(WireError::TooManyParameters { count: 5 }));
}

#[test]
fn closed_session_and_finalized_context() {
    let fx = start(MeasurementMode::Normal, true);
    let ctx = WorldContext::initialize(fx.socket()).unwrap();
    let s = ctx.open_session(TA, &fx.image).unwrap();
    let sid = s.id();
    assert!(matches!(ctx.finalize(), Err(WorldError::SessionsStillOpen(1))));
    s.close().unwrap();
    s.close().unwrap();
    assert!(matches!(s.invoke(&mut WorldCommand::new(ECHO)), Err(WorldError::SessionClosed)));

    // Server-side check, bypassing the client's own bookkeeping.
    let raw = ctx
        .send_raw(&Request::InvokeCommand {
            session_id: sid,
            command_id: ECHO,
            params: vec![],
        })
        .unwrap();
    assert_eq!(raw, Reply::Error(WireError::SessionClosed));

    ctx.finalize().unwrap();
    ctx.finalize().unwrap();
    assert!(matches!(ctx.open_session(TA, &fx.image), Err(WorldError::ContextFinalized)));
    let raw = ctx
        .send_raw(&Request::OpenSession {
            context_id: ctx.id(),
            ta_id: TA.into(),
            image_path: fx.image.to_string_lossy().into(),
        })
        .unwrap();
    assert_eq!(raw, Reply::Error(WireError::ContextFinalized));
}

#[test]
fn tampered_image_fails_attestation_and_session_is_closed() {
    let fx = start(MeasurementMode::Normal, true);
    let mut f = std::fs::OpenOptions::new().append(true).open(&fx.image).unwrap();
    f.write_all(b"!").unwrap();
    drop(f);

    let ctx = WorldContext::initialize(fx.socket()).unwrap();
    let err = ctx.open_session(TA, &fx.image).unwrap_err();
    let WorldError::AttestationMismatch { session_id } = err else {
        panic!("{err:?}");
    };
    let raw = ctx
        .send_raw(&Request::InvokeCommand {
            session_id,
            command_id: ECHO,
            params: vec![],
        })
        .unwrap();
    assert_eq!(raw, Reply::Error(WireError::SessionClosed));

    let records = ecig_core::audit::read_file(&fx.audit_path()).unwrap();
    assert!(records
        .iter()
        .any(|r| r.activity == "ws.attest" && r.outcome == Some(Outcome::Denied)));
}

#[test]
fn normal_mode_without_training() {
    let fx = start(MeasurementMode::Normal, false);
    let ctx = WorldContext::initialize(fx.socket()).unwrap();
    assert!(matches!(ctx.open_session(TA, &fx.image), Err(WorldError::NoTrainedHash)));
}

#[test]
fn missing_image_is_reported() {
    let fx = start(MeasurementMode::Normal, true);
    let ctx = WorldContext::initialize(fx.socket()).unwrap();
    let err = ctx.open_session(TA, fx.dir.path().join("gone.bin")).unwrap_err();
    assert!(matches!(err, WorldError::FileUnreadable(_)));
}

#[test]
fn training_mode_records_reference_and_sessions_are_unattested() {
    let fx = start(MeasurementMode::Training, false);
    let ctx = WorldContext::initialize(fx.socket()).unwrap();
    let s = ctx.open_session(TA, &fx.image).unwrap();
    assert!(!s.is_attested());
    s.close().unwrap();

    let refs = Attestor::open(
        fx.dir.path().join("attestation.json"),
        MeasurementMode::Normal,
        HashAlgorithm::Sha1,
    )
    .unwrap();
    let expected = ecig_worldlink::measure_image(&fx.image, HashAlgorithm::Sha1).unwrap();
    assert_eq!(refs.reference(TA), Some(expected.digest));
}

#[test]
fn training_is_refused_in_normal_mode() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img");
    std::fs::write(&img, b"x").unwrap();
    let mut a = Attestor::open(dir.path().join("a.json"), MeasurementMode::Normal, HashAlgorithm::Sha256).unwrap();
    assert!(a.train(TA, &img).is_err());
}

#[test]
fn secure_world_runs_one_command_at_a_time() {
    let fx = start(MeasurementMode::Normal, true);
    let mut handles = Vec::new();
    for _ in 0..4 {
        let sock = fx.socket().to_path_buf();
        let image = fx.image.clone();
        handles.push(thread::spawn(move || {
            let ctx = WorldContext::initialize(&sock).unwrap();
            let s = Arc::new(ctx.open_session(TA, &image).unwrap());
            let inner: Vec<_> = (0..2)
                .map(|_| {
                    let s = s.clone();
                    thread::spawn(move || {
                        for _ in 0..5 {
                            s.invoke(&mut WorldCommand::new(SLOW)).unwrap();
                        }
                    })
                })
                .collect();
            for h in inner {
                h.join().unwrap();
            }
        }));
    }
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(fx.overlap.load(Ordering::SeqCst), 0);
}

#[test]
fn refused_and_failed_invocations_are_audited() {
    let fx = start(MeasurementMode::Normal, true);
    let ctx = WorldContext::initialize(fx.socket()).unwrap();
    let s = ctx.open_session(TA, &fx.image).unwrap();
    for _ in 0..3 {
        s.invoke(&mut WorldCommand::new(ECHO).param(Parameter::input(b"a".to_vec())).unwrap())
            .unwrap();
    }
    let _ = s.invoke(&mut WorldCommand::new(FAIL));
    let sid = s.id();
    s.close().unwrap();
    let _ = ctx.send_raw(&Request::InvokeCommand {
        session_id: sid,
        command_id: ECHO,
        params: vec![],
    });
    let records = ecig_core::audit::read_file(&fx.audit_path()).unwrap();
    let invokes: Vec<_> = records.iter().filter(|r| r.activity == "ws.invoke").collect();
    assert_eq!(invokes.len(), 2);
    assert_eq!(invokes[0].outcome, Some(Outcome::Failed));
    assert_eq!(invokes[1].outcome, Some(Outcome::Denied));
    assert!(records.iter().all(|r| r.world == World::Secure));
    ecig_core::audit::check_monotonic(&records).unwrap();
}

#[test]
fn dropped_connection_closes_its_sessions() {
    let fx = start(MeasurementMode::Normal, true);
    {
        let mut raw = std::os::unix::net::UnixStream::connect(fx.socket()).unwrap();
        let open = Request::OpenSession {
            context_id: 42,
            ta_id: TA.into(),
            image_path: fx.image.to_string_lossy().into(),
        };
        ecig_worldlink::frame::write_message(&mut raw, &open).unwrap();
        let reply: Reply = ecig_worldlink::frame::read_message(&mut raw).unwrap().unwrap();
        assert!(matches!(reply, Reply::SessionOpened { .. }));
    }
    thread::sleep(Duration::from_millis(100));
    let records = ecig_core::audit::read_file(&fx.audit_path()).unwrap();
    assert!(records.iter().any(|r| r.activity == "ws.close_session"));
}
