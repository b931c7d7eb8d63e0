//! `hydroloop` — design, verify and simulate a robust 2DOF PID position
//! controller for a hydraulic valve-cylinder drive over a delayed network.

mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use hydroloop_core::{
    fit_gamma, run_controller_client, run_inprocess, run_plant_server, trace_to_csv, Calibration,
    CoreError, DesignReport, FrequencyGrid, GammaFitConfig, OperatingRange, Scenario, SimTrace,
};

#[derive(Parser)]
#[command(name = "hydroloop", version, about = "Robust 2DOF PID design for a networked hydraulic drive")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Plant,
    Controller,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Cmd {
    /// Linearize the calibrated plant: integral-mean nominal gains, nominal
    /// transfer function, deviation scan.
    Linearize {
        /// Calibration JSON.
        #[arg(long)]
        config: PathBuf,
        /// Cumulative design-report JSON (created or updated).
        #[arg(long)]
        report: PathBuf,
    },
    /// Maximize the integral gain under the M_s constraint, certify the
    /// design, fit the uncertainty weight and compute the robust margin.
    Tune {
        #[arg(long)]
        report: PathBuf,
        /// Maximum sensitivity bound.
        #[arg(long, default_value_t = 1.1)]
        ms: f64,
        /// RTT design bound in seconds (default: the report's delay model).
        #[arg(long)]
        taumax: Option<f64>,
    },
    /// Run the in-process closed loop and write a CSV trace plus SVG plots.
    Simulate {
        #[arg(long)]
        report: PathBuf,
        /// Scenario JSON.
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's set-point filter switch.
        #[arg(long)]
        spfilter: Option<OnOff>,
        /// Output prefix: writes <out>.csv and <out>_*.svg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one side of the two-process socket loop.
    Netloop {
        /// Which side to run.
        role: Role,
        /// Address to bind (plant) or connect to (controller).
        address: String,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Output prefix for the plant-side trace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the shifted-gamma delay model to measured RTT samples.
    Rttfit {
        /// CSV of RTT samples in seconds, one per row.
        samples: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Output prefix for the histogram-overlay SVG.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Infeasible { .. } => 2,
        CoreError::IntegrationBlowup { .. } | CoreError::NominallyUnstable { .. } => 3,
        CoreError::Network(_) => 4,
        _ => 5,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                ClapErrorKind::DisplayHelp
                    | ClapErrorKind::DisplayVersion
                    | ClapErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) =>
        {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(5);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CoreError> {
    match cli.cmd {
        Cmd::Linearize { config, report } => cmd_linearize(&config, &report),
        Cmd::Tune { report, ms, taumax } => cmd_tune(&report, ms, taumax),
        Cmd::Simulate { report, scenario, seed, spfilter, out } => {
            cmd_simulate(&report, &scenario, seed, spfilter, &out)
        }
        Cmd::Netloop { role, address, report, scenario, out } => {
            cmd_netloop(role, &address, &report, &scenario, out.as_deref())
        }
        Cmd::Rttfit { samples, report, out } => cmd_rttfit(&samples, &report, out.as_deref()),
    }
}

fn load_or_new_report(report_path: &Path, calibration: Calibration) -> Result<DesignReport, CoreError> {
    if report_path.exists() {
        let mut rep = DesignReport::load(report_path)?;
        rep.calibration = calibration;
        Ok(rep)
    } else {
        Ok(DesignReport::new(calibration))
    }
}

fn cmd_linearize(config: &Path, report_path: &Path) -> Result<ExitCode, CoreError> {
    let calibration = Calibration::load(config)?;
    let mut rep = load_or_new_report(report_path, calibration)?;
    let lin = rep.stage_linearize(&OperatingRange::default())?.clone();
    rep.save(report_path)?;
    println!("nominal gains:  C_q = {:.6e} m^3/s, C_qp = {:.6e} m^3/s/Pa", lin.c_q_nom, lin.c_qp_nom);
    println!(
        "nominal plant:  {:.4e} / (s (s^2 + {:.1} s + {:.4e})), delay {:.3} s",
        lin.p_nom_num[0], lin.p_nom_den[2], lin.p_nom_den[1], lin.delay
    );
    println!(
        "deviations:     k {:.1}%  xi {:.1}%  omega_n {:.1}%  (gain ratio up to {:.3})",
        100.0 * lin.deviations.dev_k,
        100.0 * lin.deviations.dev_xi,
        100.0 * lin.deviations.dev_omega_n,
        lin.deviations.gain_ratio_upper
    );
    println!("report written: {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_tune(report_path: &Path, ms: f64, taumax: Option<f64>) -> Result<ExitCode, CoreError> {
    let mut rep = DesignReport::load(report_path)?;
    let grid = FrequencyGrid::default_grid();
    let tun = rep.stage_tune(ms, taumax, &grid)?.clone();
    rep.save(report_path)?;
    println!(
        "gains:      k_p = {:.4}, k_i = {:.4}, k_d = {:.4}  (M_s = {})",
        tun.gains.k_p, tun.gains.k_i, tun.gains.k_d, tun.m_s
    );
    println!("constraint: min f = {:.7} with {} tangencies", tun.min_f, tun.tangencies.len());
    println!("robust margin ||W_U T||_inf = {:.4} (tau_max = {} s)", tun.margin, tun.tau_max);
    let rt = rep.runtime.as_ref().expect("tune populates the runtime section");
    println!(
        "runtime:    omega_o = {:.3} rad/s, tau_sp = {:.3} s (M_w = {:.4} at {:.3} rad/s)",
        rt.cfg.omega_o, rt.sp.tau_sp, rt.sp.m_w, rt.sp.omega_sp
    );
    if tun.margin >= 1.0 {
        eprintln!("robust stability NOT certified: margin {:.4} >= 1", tun.margin);
        return Ok(ExitCode::from(2));
    }
    println!("report written: {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

fn write_sim_outputs(trace: &SimTrace, out: &Path) -> Result<(), CoreError> {
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let stem = out.to_string_lossy();
    std::fs::write(format!("{stem}.csv"), trace_to_csv(trace))?;
    let pos = svg::line_plot(
        "Position, reference and round-trip time",
        "t (s)",
        "x (m), rtt (s)",
        &[
            svg::Series {
                label: "x_ref (m)".into(),
                color: svg::PALETTE[1],
                points: trace.rows.iter().map(|r| (r.t, r.x_ref)).collect(),
            },
            svg::Series {
                label: "x (m)".into(),
                color: svg::PALETTE[0],
                points: trace.rows.iter().map(|r| (r.t, r.x)).collect(),
            },
            svg::Series {
                label: "rtt (s)".into(),
                color: svg::PALETTE[2],
                points: trace.rows.iter().map(|r| (r.t, r.rtt)).collect(),
            },
        ],
    );
    std::fs::write(format!("{stem}_position.svg"), pos)?;
    let ctl = svg::line_plot(
        "Control signal",
        "t (s)",
        "u (-)",
        &[svg::Series {
            label: "u".into(),
            color: svg::PALETTE[0],
            points: trace.rows.iter().map(|r| (r.t, r.u)).collect(),
        }],
    );
    std::fs::write(format!("{stem}_control.svg"), ctl)?;
    let pl = svg::line_plot(
        "Load pressure",
        "t (s)",
        "P_L (Pa)",
        &[svg::Series {
            label: "P_L".into(),
            color: svg::PALETTE[3],
            points: trace.rows.iter().map(|r| (r.t, r.p_load)).collect(),
        }],
    );
    std::fs::write(format!("{stem}_pressure.svg"), pl)?;
    Ok(())
}

fn print_edge_metrics(trace: &SimTrace, sc: &Scenario) {
    let bps = &sc.reference;
    for i in 1..bps.len() {
        let delta = bps[i][1] - bps[i - 1][1];
        if delta == 0.0 {
            continue;
        }
        let t_edge = bps[i][0];
        let window = bps
            .get(i + 1)
            .map_or(sc.duration, |b| b[0])
            .min(sc.duration)
            - t_edge
            - sc.ts;
        if let Some((settle, overshoot, steady)) =
            hydroloop_core::edge_metrics(trace, t_edge, delta.abs(), delta.signum(), window)
        {
            println!(
                "edge at {t_edge:.2} s: settling {settle:.2} s (2% band), overshoot {:.2}%, final error {steady:.2e} m",
                100.0 * overshoot.max(0.0)
            );
        }
    }
    let max_rtt = trace.rows.iter().map(|r| r.rtt).fold(0.0f64, f64::max);
    println!("max RTT: {max_rtt:.3} s");
}

fn cmd_simulate(
    report_path: &Path,
    scenario_path: &Path,
    seed: Option<u64>,
    spfilter: Option<OnOff>,
    out: &Path,
) -> Result<ExitCode, CoreError> {
    let rep = DesignReport::load(report_path)?;
    let design = rep.loop_design()?;
    let mut sc = Scenario::load(scenario_path)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(sw) = spfilter {
        sc.sp_filter = matches!(sw, OnOff::On);
    }
    let trace = run_inprocess(&sc, &design, &rep.calibration)?;
    write_sim_outputs(&trace, out)?;
    print_edge_metrics(&trace, &sc);
    if let Some(t) = trace.fault {
        eprintln!("simulation unstable: integration blew up at t = {t:.4} s; partial trace written");
        return Ok(ExitCode::from(3));
    }
    println!("trace and plots written with prefix {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_netloop(
    role: Role,
    address: &str,
    report_path: &Path,
    scenario_path: &Path,
    out: Option<&Path>,
) -> Result<ExitCode, CoreError> {
    let rep = DesignReport::load(report_path)?;
    let design = rep.loop_design()?;
    let sc = Scenario::load(scenario_path)?;
    match role {
        Role::Plant => {
            let trace = run_plant_server(address, &sc, &rep.calibration)?;
            let out = out
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("netloop_plant"));
            write_sim_outputs(&trace, &out)?;
            print_edge_metrics(&trace, &sc);
            if let Some(t) = trace.fault {
                eprintln!("plant unstable: integration blew up at t = {t:.4} s; partial trace written");
                return Ok(ExitCode::from(3));
            }
            println!("trace and plots written with prefix {}", out.display());
        }
        Role::Controller => {
            run_controller_client(address, &design, &sc, Duration::from_secs(1))?;
            println!("controller finished: server closed the stream");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_samples_csv(path: &Path) -> Result<Vec<f64>, CoreError> {
    let text = std::fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => samples.push(v),
            Err(_) if i == 0 => {} // header row
            Err(e) => {
                return Err(CoreError::InvalidParam(format!(
                    "bad RTT sample on line {}: {e}",
                    i + 1
                )))
            }
        }
    }
    Ok(samples)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7
    const C: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn cmd_rttfit(samples_path: &Path, report_path: &Path, out: Option<&Path>) -> Result<ExitCode, CoreError> {
    let samples = read_samples_csv(samples_path)?;
    let cfg = GammaFitConfig::default();
    let fit = fit_gamma(&samples, &cfg)?;
    let mut rep = DesignReport::load(report_path)?;
    rep.delay_model = Some(fit.clone());
    rep.save(report_path)?;
    println!(
        "gamma fit: shape = {:.4}, scale = {:.6} s, tau_min = {} s, tau_max = {:.3} s",
        fit.shape, fit.scale, fit.tau_min, fit.tau_max
    );
    println!("tau_nom = tau_min + shape*scale = {:.6} s", fit.tau_nom());
    if let Some(out) = out {
        let (k, th, t0) = (fit.shape, fit.scale, fit.tau_min);
        let norm = (k * th.ln() + ln_gamma(k)).exp();
        let pdf = move |x: f64| {
            if x <= t0 {
                0.0
            } else {
                let e = x - t0;
                e.powf(k - 1.0) * (-e / th).exp() / norm
            }
        };
        let svg = svg::histogram_with_pdf(
            "Round-trip-time distribution and gamma fit",
            "rtt (s)",
            &samples,
            40,
            pdf,
            "fitted shifted-gamma density",
        );
        let path = format!("{}_rtt.svg", out.to_string_lossy());
        std::fs::write(&path, svg)?;
        println!("histogram written: {path}");
    }
    println!("report updated: {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}
