//! Design, verification and simulation toolkit for a robust 2DOF PID position
//! controller driving a hydraulic valve-cylinder axis over a stochastic-delay
//! network.

pub mod error;
pub mod lti;
pub mod net;
pub mod numeric;
pub mod plant;
pub mod report;
pub mod sim;
pub mod synthesis;
pub mod twodof;
pub mod uncertainty;

pub use error::{CoreError, Result};
pub use lti::{
    closed_loop_t, freq_response, hinf_norm, hinf_norm_tf, nyquist_check, series,
    tustin_discretize, DiscreteFilter, FrequencyGrid, TransferFunction,
};
pub use net::{
    run_controller_client, run_controller_on, run_plant_server, serve_plant, Frame, FRAME_LEN,
    KIND_COMMAND, KIND_MEASUREMENT,
};
pub use report::{
    default_delay_model, DesignReport, LinearizationSection, RuntimeSection, TuningSection,
};
pub use sim::{
    edge_metrics, run_inprocess, trace_from_csv, trace_to_csv, ChannelMode, DelayChannel,
    FreshestRegister, LoopDesign, Scenario, SimTrace, TraceRow,
};
pub use synthesis::{
    constraint_f, maximize_ki, min_constraint, verify_design, PidGains, RobustSpec,
    TangencyReport,
};
pub use twodof::{
    build_ff, build_fn, controller_step, crossover_frequency, design_sp_filter,
    inverse_deadzone, tau_sp_from, ClosedLoopW, ControllerState, SetpointFilter, TwoDofConfig,
};
pub use uncertainty::{
    deviation_scan, fit_gamma, fit_weight, nominal_gains, robust_stability_margin, sample_rtt,
    weight_target, DeviationReport, GammaFit, GammaFitConfig, LeadWeight, OperatingRange,
};
pub use plant::{
    apply_valve, fit_sigma_lin, linearize, nominal_tf, orifice_flow, plant_step,
    plant_step_linear, pole_params, stribeck_force, Calibration, PlantParams, PlantState,
    StribeckParams, ValveNonlinearity,
};
