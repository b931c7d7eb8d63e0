//! Closed-loop execution in virtual time: the nonlinear truth plant stepped
//! at the fast rate, the 2DOF controller at the communication period, and a
//! stochastic round-trip-delay channel between them. Fully deterministic for
//! a fixed seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::plant::{plant_step, plant_step_linear, Calibration, PlantState};
use crate::twodof::{controller_step, inverse_deadzone, ControllerState, SetpointFilter, TwoDofConfig};
use crate::uncertainty::{sample_rtt, GammaFit};

/// Round-trip-delay law of the channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ChannelMode {
    /// Fixed RTT every tick (wired point-to-point link).
    Constant { rtt: f64 },
    /// Shifted-gamma RTT, quantized upward to the quantum grid (wireless link).
    Gamma { shape: f64, scale: f64, tau_min: f64, quantum: f64 },
}

fn default_split() -> f64 {
    0.5
}

/// Stochastic delay channel between plant and controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayChannel {
    #[serde(flatten)]
    pub mode: ChannelMode,
    /// Fraction of the RTT spent on the measurement path; the rest delays the
    /// command.
    #[serde(default = "default_split")]
    pub split: f64,
}

impl DelayChannel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.split) {
            return Err(CoreError::InvalidParam(format!("split {} outside [0, 1]", self.split)));
        }
        match &self.mode {
            ChannelMode::Constant { rtt } => {
                if !(*rtt >= 0.0) {
                    return Err(CoreError::InvalidParam(format!("negative RTT {rtt}")));
                }
            }
            ChannelMode::Gamma { shape, scale, tau_min, quantum } => {
                let fit = GammaFit {
                    shape: *shape,
                    scale: *scale,
                    quantum: *quantum,
                    tau_min: *tau_min,
                    tau_max: f64::INFINITY,
                };
                if !(fit.shape > 0.0 && fit.scale > 0.0 && fit.tau_min >= fit.quantum) {
                    return Err(CoreError::InvalidParam("invalid gamma channel parameters".into()));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.mode {
            ChannelMode::Constant { rtt } => *rtt,
            ChannelMode::Gamma { shape, scale, tau_min, quantum } => {
                let fit = GammaFit {
                    shape: *shape,
                    scale: *scale,
                    quantum: *quantum,
                    tau_min: *tau_min,
                    tau_max: f64::INFINITY,
                };
                sample_rtt(&fit, rng)
            }
        }
    }
}

fn default_plant_dt() -> f64 {
    5e-4
}

fn default_ts() -> f64 {
    0.01
}

fn default_true() -> bool {
    true
}

/// A closed-loop experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Square-pulse reference breakpoints: the reference holds the value of
    /// the latest breakpoint whose time is <= t.
    pub reference: Vec<[f64; 2]>,
    /// Seconds.
    pub duration: f64,
    #[serde(default = "default_plant_dt")]
    pub plant_dt: f64,
    #[serde(default = "default_ts")]
    pub ts: f64,
    pub channel: DelayChannel,
    #[serde(default)]
    pub seed: u64,
    /// Set-point pre-filter enabled.
    #[serde(default = "default_true")]
    pub sp_filter: bool,
    /// Replace the truth plant by its linearization at the nominal gains
    /// (consistency checks only).
    #[serde(default)]
    pub linear_plant: bool,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.plant_dt > 0.0 && self.ts > 0.0) {
            return Err(CoreError::InvalidParam("durations and rates must be positive".into()));
        }
        let ratio = self.ts / self.plant_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(CoreError::InvalidParam(
                "controller period must be an integer multiple of the plant step".into(),
            ));
        }
        self.channel.validate()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let sc: Scenario = serde_json::from_str(&text)?;
        sc.validate()?;
        Ok(sc)
    }

    /// Square-pulse reference value at time t.
    pub fn reference_at(&self, t: f64) -> f64 {
        let mut r = 0.0;
        for bp in &self.reference {
            if t >= bp[0] - 1e-12 {
                r = bp[1];
            }
        }
        r
    }
}

/// One controller-tick record of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x_ref: f64,
    pub x: f64,
    pub v: f64,
    pub p_load: f64,
    pub u: f64,
    pub rtt: f64,
}

/// Recorded closed-loop run; `fault` holds the blowup time when integration
/// failed and the trace was truncated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub rows: Vec<TraceRow>,
    pub fault: Option<f64>,
}

/// Everything the closed loop needs from the design stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopDesign {
    pub cfg: TwoDofConfig,
    pub sp: SetpointFilter,
    /// Nominal linearization gains (used by the linear-plant mode).
    pub c_q_nom: f64,
    pub c_qp_nom: f64,
}

/// Freshest-sample register: offered values only replace the view when their
/// generation timestamp is strictly newer, so reordered or duplicated
/// arrivals can never move the view backward.
#[derive(Debug, Clone)]
pub struct FreshestRegister {
    gen_t: f64,
    value: f64,
}

impl FreshestRegister {
    pub fn new(initial: f64) -> Self {
        Self { gen_t: f64::NEG_INFINITY, value: initial }
    }

    pub fn offer(&mut self, gen_t: f64, value: f64) -> bool {
        if gen_t > self.gen_t {
            self.gen_t = gen_t;
            self.value = value;
            true
        } else {
            false
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn gen_t(&self) -> f64 {
        self.gen_t
    }
}

/// In-flight payloads ordered by arrival time.
struct Inbox {
    pending: Vec<(f64, f64, f64)>, // (arrival_t, gen_t, value)
}

impl Inbox {
    fn new() -> Self {
        Self { pending: Vec::new() }
    }

    fn send(&mut self, arrival_t: f64, gen_t: f64, value: f64) {
        self.pending.push((arrival_t, gen_t, value));
    }

    /// Delivers everything arrived by `now` into the register.
    fn deliver(&mut self, now: f64, reg: &mut FreshestRegister) {
        let eps = 1e-12;
        self.pending.retain(|&(at, gt, v)| {
            if at <= now + eps {
                reg.offer(gt, v);
                false
            } else {
                true
            }
        });
    }
}

/// Runs the full virtual-time closed loop and records one row per controller
/// tick. Bit-reproducible for a fixed (scenario, design, calibration).
pub fn run_inprocess(
    scenario: &Scenario,
    design: &LoopDesign,
    cal: &Calibration,
) -> Result<SimTrace> {
    scenario.validate()?;
    design.cfg.validate()?;
    cal.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let nsub = (scenario.ts / scenario.plant_dt).round() as usize;
    let nticks = (scenario.duration / scenario.ts).round() as usize;
    let mut st = PlantState::at_rest();
    let mut ctl = ControllerState::new();
    let sp = if scenario.sp_filter { design.sp.clone() } else { SetpointFilter::disabled() };
    let mut meas_inbox = Inbox::new();
    let mut cmd_inbox = Inbox::new();
    let mut meas_view = FreshestRegister::new(0.0);
    let mut cmd_view = FreshestRegister::new(0.0);
    let mut trace = SimTrace::default();

    for n in 0..=nticks {
        let t = n as f64 * scenario.ts;
        let rtt = scenario.channel.draw(&mut rng);
        let d_meas = self_split(&scenario.channel) * rtt;
        let d_act = rtt - d_meas;
        meas_inbox.send(t + d_meas, t, st.x);
        meas_inbox.deliver(t, &mut meas_view);
        let u = controller_step(&mut ctl, scenario.reference_at(t), meas_view.value(), &design.cfg, &sp);
        cmd_inbox.send(t + d_act, t, u);
        trace.rows.push(TraceRow {
            t,
            x_ref: scenario.reference_at(t),
            x: st.x,
            v: st.v,
            p_load: st.p_load,
            u: cmd_view.value(),
            rtt,
        });
        for k in 0..nsub {
            let tp = t + k as f64 * scenario.plant_dt;
            cmd_inbox.deliver(tp, &mut cmd_view);
            let step = if scenario.linear_plant {
                plant_step_linear(
                    &st,
                    cmd_view.value(),
                    scenario.plant_dt,
                    tp,
                    &cal.plant,
                    design.c_q_nom,
                    design.c_qp_nom,
                )
            } else {
                let drive = inverse_deadzone(cmd_view.value(), cal.valve.deadzone_halfwidth);
                plant_step(&st, drive, scenario.plant_dt, tp, &cal.plant, &cal.valve, &cal.friction)
            };
            match step {
                Ok(next) => st = next,
                Err(CoreError::IntegrationBlowup { t }) => {
                    trace.fault = Some(t);
                    return Ok(trace);
                }
                // leaving the physical pressure domain mid-integration is a
                // divergence of the run, not bad input data
                Err(CoreError::Cavitation { .. }) => {
                    trace.fault = Some(tp);
                    return Ok(trace);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(trace)
}

fn self_split(ch: &DelayChannel) -> f64 {
    ch.split
}

/// Serializes a trace as CSV with 17-significant-digit floats (lossless for
/// f64); a fault is recorded as a trailing comment line.
pub fn trace_to_csv(trace: &SimTrace) -> String {
    let mut out = String::from("t,x_ref,x,v,p_load,u,rtt\n");
    for r in &trace.rows {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.t, r.x_ref, r.x, r.v, r.p_load, r.u, r.rtt
        ));
    }
    if let Some(t) = trace.fault {
        out.push_str(&format!("# fault,{t:.16e}\n"));
    }
    out
}

/// Parses a CSV produced by [`trace_to_csv`]; an exact inverse.
pub fn trace_from_csv(text: &str) -> Result<SimTrace> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CoreError::InvalidParam("empty CSV".into()))?;
    if header.trim() != "t,x_ref,x,v,p_load,u,rtt" {
        return Err(CoreError::InvalidParam(format!("unexpected CSV header: {header}")));
    }
    let mut trace = SimTrace::default();
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("# fault,") {
            trace.fault = Some(rest.trim().parse().map_err(|e| {
                CoreError::InvalidParam(format!("bad fault time on line {}: {e}", i + 2))
            })?);
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(CoreError::InvalidParam(format!(
                "line {} has {} fields, expected 7",
                i + 2,
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 7];
        for (j, f) in fields.iter().enumerate() {
            vals[j] = f.trim().parse().map_err(|e| {
                CoreError::InvalidParam(format!("bad number on line {}: {e}", i + 2))
            })?;
        }
        trace.rows.push(TraceRow {
            t: vals[0],
            x_ref: vals[1],
            x: vals[2],
            v: vals[3],
            p_load: vals[4],
            u: vals[5],
            rtt: vals[6],
        });
    }
    Ok(trace)
}

/// Per-edge step metrics over a square-pulse trace: 2%-band settling time,
/// signed overshoot fraction and final error, computed from `t_edge` until
/// `t_edge + window`.
pub fn edge_metrics(
    trace: &SimTrace,
    t_edge: f64,
    amplitude: f64,
    direction: f64,
    window: f64,
) -> Option<(f64, f64, f64)> {
    let rows: Vec<&TraceRow> = trace
        .rows
        .iter()
        .filter(|r| r.t >= t_edge - 1e-12 && r.t < t_edge + window)
        .collect();
    let last = *rows.last()?;
    let target = last.x_ref;
    let band = 0.02 * amplitude;
    let mut settle = 0.0;
    let mut overshoot = f64::NEG_INFINITY;
    for r in &rows {
        let err = (r.x - target).abs();
        if err > band {
            settle = r.t - t_edge + (rows[1].t - rows[0].t);
        }
        overshoot = overshoot.max(direction * (r.x - target) / amplitude);
    }
    Some((settle, overshoot, (last.x - target).abs()))
}
