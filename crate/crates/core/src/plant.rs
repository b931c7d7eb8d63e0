//! Reduced-order hydraulic valve-cylinder physics: orifice flow, local
//! linearization gains, nominal transfer-function construction, Stribeck
//! friction, valve dead-zone/saturation and the nonlinear RK4 truth plant.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::lti::TransferFunction;
use crate::numeric::simpson;

/// Physical parameters of the drive, all SI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Total moving mass, kg.
    pub m: f64,
    /// Linear viscous coefficient, N*s/m.
    pub sigma_lin: f64,
    /// Total oil volume, m^3.
    pub v_t: f64,
    /// Bulk modulus, Pa.
    pub e: f64,
    /// Mean piston area, m^2.
    pub a_bar: f64,
    /// Valve flow coefficient, m^3/s/sqrt(Pa) per unit spool.
    pub k: f64,
    /// Supply pressure, Pa.
    pub p_s: f64,
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m", self.m),
            ("sigma_lin", self.sigma_lin),
            ("v_t", self.v_t),
            ("e", self.e),
            ("a_bar", self.a_bar),
            ("k", self.k),
            ("p_s", self.p_s),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CoreError::InvalidParam(format!(
                    "plant parameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Spool-stroke nonlinearities: dead-zone half-width plus the fixed |z| <= 1
/// saturation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValveNonlinearity {
    /// Dead-zone half-width, dimensionless, in [0, 1).
    pub deadzone_halfwidth: f64,
}

impl ValveNonlinearity {
    pub fn validate(&self) -> Result<()> {
        let d = self.deadzone_halfwidth;
        if !(0.0..1.0).contains(&d) {
            return Err(CoreError::InvalidParam(format!("deadzone half-width {d} outside [0, 1)")));
        }
        Ok(())
    }
}

/// Stribeck friction curve parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StribeckParams {
    /// Coulomb force, N.
    pub f_c: f64,
    /// Static (breakaway) force, N.
    pub f_s: f64,
    /// Stribeck velocity, m/s.
    pub v_s: f64,
    /// Shape exponent.
    pub delta: f64,
    /// Viscous coefficient, N*s/m.
    pub sigma_v: f64,
}

impl StribeckParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_c > 0.0 && self.f_s >= self.f_c) {
            return Err(CoreError::InvalidParam("friction requires F_s >= F_c > 0".into()));
        }
        if !(self.v_s > 0.0 && self.delta > 0.0 && self.sigma_v >= 0.0) {
            return Err(CoreError::InvalidParam("friction requires v_s > 0, delta > 0, sigma_v >= 0".into()));
        }
        Ok(())
    }
}

/// Continuous plant state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Rod position, m.
    pub x: f64,
    /// Rod velocity, m/s.
    pub v: f64,
    /// Load pressure, Pa.
    pub p_load: f64,
}

impl PlantState {
    pub fn at_rest() -> Self {
        Self { x: 0.0, v: 0.0, p_load: 0.0 }
    }
}

/// Full plant calibration document (`default_calibration.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub plant: PlantParams,
    pub valve: ValveNonlinearity,
    pub friction: StribeckParams,
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.valve.validate()?;
        self.friction.validate()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cal: Calibration = serde_json::from_str(&text)?;
        cal.validate()?;
        Ok(cal)
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Load flow through the equivalent orifice:
/// `Q_L = z K sqrt((P_S - sign(z) P_L)/2)`, with `sign(0) := 0` so the flow is
/// continuous (and zero) at z = 0.
pub fn orifice_flow(z: f64, p_load: f64, p: &PlantParams) -> Result<f64> {
    if z == 0.0 {
        return Ok(0.0);
    }
    let arg = 0.5 * (p.p_s - signum0(z) * p_load);
    if arg <= 0.0 {
        return Err(CoreError::Cavitation { z, p_load });
    }
    Ok(z * p.k * arg.sqrt())
}

/// Local linearization gains of the orifice at an operating point:
/// `C_q = dQ_L/dz` and `C_qp = -dQ_L/dP_L`.
pub fn linearize(z_hat: f64, p_load_hat: f64, p: &PlantParams) -> Result<(f64, f64)> {
    if z_hat.abs() > 1.0 || p_load_hat.abs() > 0.95 * p.p_s {
        return Err(CoreError::OperatingPoint { z: z_hat, p_load: p_load_hat });
    }
    let root = (0.5 * (p.p_s - signum0(z_hat) * p_load_hat)).sqrt();
    let c_q = p.k * root;
    let c_qp = z_hat.abs() * p.k / (4.0 * root);
    Ok((c_q, c_qp))
}

/// Gain factor, natural frequency and damping ratio of the pole pair formed by
/// the linearized drive at gains `(c_q, c_qp)`.
pub fn pole_params(c_q: f64, c_qp: f64, p: &PlantParams) -> (f64, f64, f64) {
    let denom = p.sigma_lin * c_qp + p.a_bar * p.a_bar;
    let k = c_q * p.a_bar / denom;
    let omega_n = (4.0 * p.e * denom / (p.m * p.v_t)).sqrt();
    let two_xi_omega_n = 4.0 * p.e * c_qp / p.v_t + p.sigma_lin / p.m;
    let xi = two_xi_omega_n / (2.0 * omega_n);
    (k, omega_n, xi)
}

/// Nominal process transfer function
/// `P_nom(s) = e^{-s tau} k w_n^2 / (s (s^2 + 2 xi w_n s + w_n^2))`
/// built from the linearization gains at the nominal operating point.
pub fn nominal_tf(p: &PlantParams, c_q: f64, c_qp: f64, tau: f64) -> Result<TransferFunction> {
    p.validate()?;
    if !(c_q > 0.0 && c_qp >= 0.0) {
        return Err(CoreError::InvalidParam("nominal_tf requires C_q > 0 and C_qp >= 0".into()));
    }
    let (k, omega_n, xi) = pole_params(c_q, c_qp, p);
    let wn2 = omega_n * omega_n;
    TransferFunction::new(vec![k * wn2], vec![0.0, wn2, 2.0 * xi * omega_n, 1.0], tau)
}

/// Stribeck friction force at velocity `v`; `F(0) = 0` (the static regime is
/// handled by the integrator's stiction band).
pub fn stribeck_force(v: f64, fp: &StribeckParams) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let strib = fp.f_c + (fp.f_s - fp.f_c) * (-(v / fp.v_s).abs().powf(fp.delta)).exp();
    signum0(v) * strib + fp.sigma_v * v
}

/// Equivalent linear viscous coefficient: least-squares line through the
/// origin fitted to the friction curve over [0, v_max], via composite Simpson
/// quadrature with at least 1001 points.
pub fn fit_sigma_lin(fp: &StribeckParams, v_max: f64) -> Result<f64> {
    if !(v_max > 0.0) {
        return Err(CoreError::InvalidParam(format!("v_max must be positive, got {v_max}")));
    }
    let n = 1001;
    let h = v_max / (n - 1) as f64;
    let num = simpson(n, h, |i| {
        let v = i as f64 * h;
        stribeck_force(v, fp) * v
    });
    let den = simpson(n, h, |i| {
        let v = i as f64 * h;
        v * v
    });
    Ok(num / den)
}

/// Dead-zone plus saturation of the spool stroke: continuous, odd, |z| <= 1.
pub fn apply_valve(u: f64, vn: &ValveNonlinearity) -> f64 {
    let d = vn.deadzone_halfwidth;
    let au = u.abs();
    if au <= d {
        0.0
    } else if au <= 1.0 {
        signum0(u) * (au - d) / (1.0 - d)
    } else {
        signum0(u)
    }
}

fn derivs(st: &PlantState, z: f64, p: &PlantParams, fp: &StribeckParams) -> Result<[f64; 3]> {
    let q = orifice_flow(z, st.p_load, p)?;
    let f = stribeck_force(st.v, fp);
    Ok([
        st.v,
        (p.a_bar * st.p_load - f) / p.m,
        (4.0 * p.e / p.v_t) * (q - p.a_bar * st.v),
    ])
}

fn advance(st: &PlantState, d: &[f64; 3], h: f64) -> PlantState {
    PlantState { x: st.x + h * d[0], v: st.v + h * d[1], p_load: st.p_load + h * d[2] }
}

/// Advance the nonlinear truth plant by one RK4 step of length `dt` with the
/// commanded spool `u` held constant (zero-order hold). The commanded spool is
/// passed through the valve dead-zone/saturation; the load pressure is clamped
/// to +/-0.98 P_S after the step and a stiction band freezes the rod when
/// |v| < 1e-5 m/s and the pressure force cannot break static friction.
pub fn plant_step(
    state: &PlantState,
    u: f64,
    dt: f64,
    t: f64,
    p: &PlantParams,
    vn: &ValveNonlinearity,
    fp: &StribeckParams,
) -> Result<PlantState> {
    if !(dt > 0.0) {
        return Err(CoreError::InvalidParam(format!("dt must be positive, got {dt}")));
    }
    let z = apply_valve(u, vn);
    let k1 = derivs(state, z, p, fp)?;
    let k2 = derivs(&advance(state, &k1, dt / 2.0), z, p, fp)?;
    let k3 = derivs(&advance(state, &k2, dt / 2.0), z, p, fp)?;
    let k4 = derivs(&advance(state, &k3, dt), z, p, fp)?;
    let mut next = PlantState {
        x: state.x + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        v: state.v + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        p_load: state.p_load + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    };
    next.p_load = next.p_load.clamp(-0.98 * p.p_s, 0.98 * p.p_s);
    if next.v.abs() < 1e-5 && (p.a_bar * next.p_load).abs() <= fp.f_s {
        next.v = 0.0;
    }
    if !(next.x.is_finite() && next.v.is_finite() && next.p_load.is_finite()) {
        return Err(CoreError::IntegrationBlowup { t });
    }
    Ok(next)
}

/// Advance the linearized plant (linear orifice at fixed gains, pure viscous
/// friction, no valve nonlinearity, no stiction) by one RK4 step. Used by the
/// linear-consistency check of the simulator.
pub fn plant_step_linear(
    state: &PlantState,
    z: f64,
    dt: f64,
    t: f64,
    p: &PlantParams,
    c_q: f64,
    c_qp: f64,
) -> Result<PlantState> {
    if !(dt > 0.0) {
        return Err(CoreError::InvalidParam(format!("dt must be positive, got {dt}")));
    }
    let deriv = |st: &PlantState| -> [f64; 3] {
        let q = c_q * z - c_qp * st.p_load;
        [
            st.v,
            (p.a_bar * st.p_load - p.sigma_lin * st.v) / p.m,
            (4.0 * p.e / p.v_t) * (q - p.a_bar * st.v),
        ]
    };
    let k1 = deriv(state);
    let k2 = deriv(&advance(state, &k1, dt / 2.0));
    let k3 = deriv(&advance(state, &k2, dt / 2.0));
    let k4 = deriv(&advance(state, &k3, dt));
    let next = PlantState {
        x: state.x + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        v: state.v + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        p_load: state.p_load + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    };
    if !(next.x.is_finite() && next.v.is_finite() && next.p_load.is_finite()) {
        return Err(CoreError::IntegrationBlowup { t });
    }
    Ok(next)
}
