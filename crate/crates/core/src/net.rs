//! Two-process socket mode: the plant served over TCP with real wall-clock
//! pacing, and an event-driven remote controller client. Frames are fixed
//! 25-byte little-endian records with no delimiters.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::error::{CoreError, Result};
use crate::plant::{plant_step, Calibration, PlantState};
use crate::sim::{LoopDesign, Scenario, SimTrace, TraceRow};
use crate::twodof::{controller_step, inverse_deadzone, ControllerState, SetpointFilter};

pub const FRAME_LEN: usize = 25;
pub const KIND_MEASUREMENT: u8 = 1;
pub const KIND_COMMAND: u8 = 2;

/// One wire record: kind(1) | sequence(8) | timestamp(8) | value(8),
/// little-endian, 25 bytes total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub kind: u8,
    pub sequence: u64,
    pub timestamp: f64,
    pub value: f64,
}

impl Frame {
    pub fn encode(&self) -> [u8; FRAME_LEN] {
        let mut buf = [0u8; FRAME_LEN];
        buf[0] = self.kind;
        buf[1..9].copy_from_slice(&self.sequence.to_le_bytes());
        buf[9..17].copy_from_slice(&self.timestamp.to_le_bytes());
        buf[17..25].copy_from_slice(&self.value.to_le_bytes());
        buf
    }

    pub fn decode(buf: &[u8; FRAME_LEN]) -> Result<Frame> {
        let kind = buf[0];
        if kind != KIND_MEASUREMENT && kind != KIND_COMMAND {
            return Err(CoreError::InvalidParam(format!("unknown frame kind {kind}")));
        }
        Ok(Frame {
            kind,
            sequence: u64::from_le_bytes(buf[1..9].try_into().unwrap()),
            timestamp: f64::from_le_bytes(buf[9..17].try_into().unwrap()),
            value: f64::from_le_bytes(buf[17..25].try_into().unwrap()),
        })
    }
}

/// Reads one frame; `Ok(None)` on a clean EOF at a frame boundary.
fn read_frame(stream: &mut TcpStream) -> std::io::Result<Option<Frame>> {
    let mut buf = [0u8; FRAME_LEN];
    let mut filled = 0;
    while filled < FRAME_LEN {
        match stream.read(&mut buf[filled..]) {
            Ok(0) => {
                if filled == 0 {
                    return Ok(None);
                }
                return Err(std::io::Error::new(
                    ErrorKind::UnexpectedEof,
                    "connection closed mid-frame",
                ));
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Frame::decode(&buf).map(Some).map_err(|e| std::io::Error::new(ErrorKind::InvalidData, e.to_string()))
}

/// Single-writer freshest-command register shared between the server's
/// receiver thread and its paced emitter, plus the true per-sequence RTT log.
#[derive(Debug, Default)]
struct CommandRegister {
    /// Highest command sequence seen and its value.
    latest: Option<(u64, f64)>,
    /// (sequence, rtt seconds) in arrival order.
    rtts: Vec<(u64, f64)>,
}

/// Binds `addr` and serves the plant to a single controller peer.
pub fn run_plant_server(addr: &str, scenario: &Scenario, cal: &Calibration) -> Result<SimTrace> {
    let listener = TcpListener::bind(addr)
        .map_err(|e| CoreError::Network(format!("bind {addr}: {e}")))?;
    serve_plant(listener, scenario, cal)
}

/// Serves the plant on an already-bound listener: accepts one peer, emits a
/// measurement frame every controller period under wall-clock pacing, applies
/// the freshest command, and logs the true RTT per echoed sequence. On peer
/// disconnect the valve command is forced to 0 and the partial trace is
/// returned.
pub fn serve_plant(listener: TcpListener, scenario: &Scenario, cal: &Calibration) -> Result<SimTrace> {
    scenario.validate()?;
    cal.validate()?;
    let (stream, _peer) = listener
        .accept()
        .map_err(|e| CoreError::Network(format!("accept: {e}")))?;
    stream.set_nodelay(true).ok();
    let mut tx = stream.try_clone().map_err(CoreError::Io)?;
    let register = Arc::new(Mutex::new(CommandRegister::default()));
    let disconnected = Arc::new(AtomicBool::new(false));
    let start = Instant::now();

    let rx_register = Arc::clone(&register);
    let rx_flag = Arc::clone(&disconnected);
    let mut rx_stream = stream;
    let receiver = std::thread::spawn(move || {
        loop {
            match read_frame(&mut rx_stream) {
                Ok(Some(f)) if f.kind == KIND_COMMAND => {
                    let now = start.elapsed().as_secs_f64();
                    let mut reg = rx_register.lock().unwrap();
                    reg.rtts.push((f.sequence, now - f.timestamp));
                    if reg.latest.map_or(true, |(s, _)| f.sequence > s) {
                        reg.latest = Some((f.sequence, f.value));
                    }
                }
                Ok(Some(_)) => {} // measurement echoed back: ignore
                Ok(None) | Err(_) => {
                    rx_flag.store(true, Ordering::SeqCst);
                    return;
                }
            }
        }
    });

    let nsub = (scenario.ts / scenario.plant_dt).round() as usize;
    let nticks = (scenario.duration / scenario.ts).round() as usize;
    let mut st = PlantState::at_rest();
    let mut rows: Vec<(f64, u64, TraceRow)> = Vec::with_capacity(nticks + 1);
    let mut fault = None;
    let mut peer_gone = false;

    'ticks: for n in 0..=nticks {
        let t = n as f64 * scenario.ts;
        let target = start + Duration::from_secs_f64(t);
        let now = Instant::now();
        if now < target {
            std::thread::sleep(target - now);
        }
        if disconnected.load(Ordering::SeqCst) {
            peer_gone = true;
        }
        let stamp = start.elapsed().as_secs_f64();
        if !peer_gone {
            let frame = Frame { kind: KIND_MEASUREMENT, sequence: n as u64, timestamp: stamp, value: st.x };
            if tx.write_all(&frame.encode()).is_err() {
                peer_gone = true;
            }
        }
        let u = if peer_gone {
            0.0
        } else {
            register.lock().unwrap().latest.map_or(0.0, |(_, v)| v)
        };
        rows.push((
            stamp,
            n as u64,
            TraceRow {
                t,
                x_ref: scenario.reference_at(t),
                x: st.x,
                v: st.v,
                p_load: st.p_load,
                u,
                rtt: 0.0,
            },
        ));
        for k in 0..nsub {
            let u_now = if peer_gone {
                0.0
            } else {
                register.lock().unwrap().latest.map_or(0.0, |(_, v)| v)
            };
            let drive = inverse_deadzone(u_now, cal.valve.deadzone_halfwidth);
            let tp = t + k as f64 * scenario.plant_dt;
            match plant_step(&st, drive, scenario.plant_dt, tp, &cal.plant, &cal.valve, &cal.friction) {
                Ok(next) => st = next,
                Err(CoreError::IntegrationBlowup { t }) => {
                    fault = Some(t);
                    break 'ticks;
                }
                Err(CoreError::Cavitation { .. }) => {
                    fault = Some(tp);
                    break 'ticks;
                }
                Err(e) => {
                    let _ = tx.shutdown(std::net::Shutdown::Both);
                    let _ = receiver.join();
                    return Err(e);
                }
            }
        }
    }

    // closing the write half makes the client see EOF and exit; the receiver
    // thread then sees the client's own close and terminates
    let _ = tx.shutdown(std::net::Shutdown::Write);
    let _ = receiver.join();
    let reg = register.lock().unwrap();
    let mut trace = SimTrace { rows: Vec::with_capacity(rows.len()), fault };
    for (_, seq, mut row) in rows {
        row.rtt = reg
            .rtts
            .iter()
            .find(|(s, _)| *s == seq)
            .map_or(0.0, |(_, r)| r.max(0.0));
        trace.rows.push(row);
    }
    Ok(trace)
}

/// Event-driven controller client: connects, and on each fresh measurement
/// frame steps the controller and replies with a command frame echoing the
/// measurement's sequence and timestamp bit-exactly. Stale frames (sequence
/// <= last seen) are discarded. Returns when the server closes the stream;
/// `timeout` of silence is a network failure.
pub fn run_controller_client(
    addr: &str,
    design: &LoopDesign,
    scenario: &Scenario,
    timeout: Duration,
) -> Result<()> {
    let stream = TcpStream::connect(addr)
        .map_err(|e| CoreError::Network(format!("connect {addr}: {e}")))?;
    run_controller_on(stream, design, scenario, timeout)
}

/// Client loop on an established stream (see [`run_controller_client`]).
pub fn run_controller_on(
    mut stream: TcpStream,
    design: &LoopDesign,
    scenario: &Scenario,
    timeout: Duration,
) -> Result<()> {
    design.cfg.validate()?;
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(Some(timeout)).map_err(CoreError::Io)?;
    let sp = if scenario.sp_filter { design.sp.clone() } else { SetpointFilter::disabled() };
    let mut ctl = ControllerState::new();
    let mut last_seq: Option<u64> = None;
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(e) if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut => {
                return Err(CoreError::Network(format!(
                    "no measurement for {:.1} s",
                    timeout.as_secs_f64()
                )));
            }
            Err(e) => return Err(CoreError::Network(format!("receive: {e}"))),
        };
        if frame.kind != KIND_MEASUREMENT {
            continue;
        }
        if last_seq.map_or(false, |s| frame.sequence <= s) {
            continue; // stale or duplicate
        }
        last_seq = Some(frame.sequence);
        let t = frame.sequence as f64 * scenario.ts;
        let u = controller_step(&mut ctl, scenario.reference_at(t), frame.value, &design.cfg, &sp);
        let reply = Frame { kind: KIND_COMMAND, sequence: frame.sequence, timestamp: frame.timestamp, value: u };
        if stream.write_all(&reply.encode()).is_err() {
            return Ok(()); // server already gone: clean stop
        }
    }
}
