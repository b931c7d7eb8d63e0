//! Robust PID synthesis: maximizes the integral gain subject to the
//! sensitivity-circle constraint and verifies the resulting Nyquist geometry.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::lti::{nyquist_check, series, FrequencyGrid, TransferFunction};
use crate::numeric::{golden_min, nelder_mead};

/// Robustness specification and search box of the synthesis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustSpec {
    /// Sensitivity peak bound M_s (> 1); the constraint radius is r = 1/M_s.
    pub m_s: f64,
    /// Search-box upper bounds for (k_p, k_i, k_d); lower bounds are 0.
    pub kp_max: f64,
    pub ki_max: f64,
    pub kd_max: f64,
}

impl Default for RobustSpec {
    fn default() -> Self {
        Self { m_s: 1.1, kp_max: 100.0, ki_max: 500.0, kd_max: 5.0 }
    }
}

impl RobustSpec {
    pub fn r(&self) -> f64 {
        1.0 / self.m_s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m_s > 1.0) {
            return Err(CoreError::InvalidParam(format!("M_s must exceed 1, got {}", self.m_s)));
        }
        if !(self.kp_max > 0.0 && self.ki_max > 0.0 && self.kd_max > 0.0) {
            return Err(CoreError::InvalidParam("gain box bounds must be positive".into()));
        }
        Ok(())
    }
}

/// PID gains of the feedback controller `C_c(s) = k_p + k_i/s + k_d s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_i > 0.0 && self.k_p.is_finite() && self.k_d.is_finite()) {
            return Err(CoreError::InvalidParam("gains must be finite with k_i > 0".into()));
        }
        Ok(())
    }

    /// The ideal PID controller as a transfer function (improper by design;
    /// only ever evaluated on the imaginary axis or composed with a strictly
    /// proper plant).
    pub fn to_tf(&self) -> TransferFunction {
        TransferFunction::new(vec![self.k_i, self.k_p, self.k_d], vec![0.0, 1.0], 0.0).unwrap()
    }

    /// `C_c(i omega)`.
    pub fn eval_iw(&self, omega: f64) -> Complex64 {
        Complex64::new(self.k_p, self.k_d * omega - self.k_i / omega)
    }
}

/// Frequencies where the open loop touches the constraint circle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TangencyReport {
    /// Local minima of f within 1% of r^2: (frequency rad/s, f value).
    pub tangencies: Vec<(f64, f64)>,
    pub min_f: f64,
    pub argmin_omega: f64,
}

/// Squared distance of the open-loop Nyquist point from (-1, 0):
/// `f = |C_c(i omega) P_nom(i omega) + 1|^2`.
pub fn constraint_f(g: &PidGains, omega: f64, p_nom: &TransferFunction) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(CoreError::InvalidParam(format!("omega must be positive, got {omega}")));
    }
    let l = g.eval_iw(omega) * p_nom.eval_iw(omega)?;
    Ok((l + Complex64::new(1.0, 0.0)).norm_sqr())
}

fn grid_min_f(g: &PidGains, p_resp: &[Complex64], omegas: &[f64]) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut idx = 0;
    for (i, (&w, &pv)) in omegas.iter().zip(p_resp).enumerate() {
        let f = (g.eval_iw(w) * pv + Complex64::new(1.0, 0.0)).norm_sqr();
        if f < best {
            best = f;
            idx = i;
        }
    }
    (best, idx)
}

/// Pointwise minimum of the constraint over the grid, refined between the
/// argmin's neighbors by golden section (relative tolerance 1e-8).
pub fn min_constraint(
    g: &PidGains,
    p_nom: &TransferFunction,
    grid: &FrequencyGrid,
) -> Result<(f64, f64)> {
    let omegas = grid.omegas();
    let p_resp: Vec<Complex64> =
        omegas.iter().map(|&w| p_nom.eval_iw(w)).collect::<Result<_>>()?;
    let (coarse, idx) = grid_min_f(g, &p_resp, omegas);
    let lo = omegas[idx.saturating_sub(1)];
    let hi = omegas[(idx + 1).min(omegas.len() - 1)];
    if hi > lo {
        let (w, v) = golden_min(
            |w| constraint_f(g, w, p_nom).unwrap_or(f64::INFINITY),
            lo,
            hi,
            1e-8,
        );
        if v <= coarse {
            return Ok((v, w));
        }
    }
    Ok((coarse, omegas[idx]))
}

/// Inner feasibility problem: the largest achievable grid-minimum of f over
/// the (k_p, k_d) box at fixed k_i. Coarse 21x21 grid then Nelder-Mead.
fn best_over_kp_kd(
    ki: f64,
    p_resp: &[Complex64],
    omegas: &[f64],
    spec: &RobustSpec,
    f_tol: f64,
    max_iter: usize,
) -> (f64, (f64, f64)) {
    let eval = |kp: f64, kd: f64| -> f64 {
        if !(0.0..=spec.kp_max).contains(&kp) || !(0.0..=spec.kd_max).contains(&kd) {
            return -f64::INFINITY;
        }
        grid_min_f(&PidGains { k_p: kp, k_i: ki, k_d: kd }, p_resp, omegas).0
    };
    let n = 21;
    let mut best = (-f64::INFINITY, (0.0, 0.0));
    for i in 0..n {
        let kp = spec.kp_max * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let kd = spec.kd_max * j as f64 / (n - 1) as f64;
            let v = eval(kp, kd);
            if v > best.0 {
                best = (v, (kp, kd));
            }
        }
    }
    let (x, neg) = nelder_mead(
        |p| -eval(p[0], p[1]),
        &[best.1 .0, best.1 .1],
        &[0.02 * spec.kp_max, 0.02 * spec.kd_max],
        f_tol,
        max_iter,
    );
    if -neg > best.0 {
        best = (-neg, (x[0], x[1]));
    }
    best
}

/// Maximizes the integral gain subject to `min_omega f >= r^2` by outer
/// bisection on k_i with an inner feasibility search over (k_p, k_d), then a
/// tight re-polish at the last feasible k_i. Deterministic.
pub fn maximize_ki(
    p_nom: &TransferFunction,
    spec: &RobustSpec,
    grid: &FrequencyGrid,
) -> Result<PidGains> {
    spec.validate()?;
    let omegas = grid.omegas();
    let p_resp: Vec<Complex64> =
        omegas.iter().map(|&w| p_nom.eval_iw(w)).collect::<Result<_>>()?;
    let r2 = spec.r() * spec.r();
    let feasible_level = r2 * (1.0 - 1e-6);

    let mut lo = 0.0f64;
    let mut hi = spec.ki_max;
    let mut best: Option<(f64, (f64, f64), f64)> = None; // (ki, (kp, kd), achieved)
    let mut best_violation = f64::NEG_INFINITY;

    // the box edge may already be feasible; then it is the answer
    let (v_hi, g_hi) = best_over_kp_kd(hi, &p_resp, omegas, spec, 1e-10, 400);
    if v_hi >= feasible_level {
        best = Some((hi, g_hi, v_hi));
        lo = hi;
    }
    best_violation = best_violation.max(v_hi);

    while best.map_or(true, |(ki, ..)| ki < lo) || hi - lo > 0.01 {
        if hi - lo <= 0.01 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (v, g) = best_over_kp_kd(mid, &p_resp, omegas, spec, 1e-10, 400);
        best_violation = best_violation.max(v);
        if v >= feasible_level {
            lo = mid;
            best = Some((mid, g, v));
        } else {
            hi = mid;
        }
    }

    let (ki, (kp0, kd0), _) = best.ok_or(CoreError::Infeasible {
        best_f: best_violation,
        required: feasible_level,
    })?;
    // final polish: tight inner search at the accepted k_i
    let eval = |kp: f64, kd: f64| -> f64 {
        if !(0.0..=spec.kp_max).contains(&kp) || !(0.0..=spec.kd_max).contains(&kd) {
            return -f64::INFINITY;
        }
        grid_min_f(&PidGains { k_p: kp, k_i: ki, k_d: kd }, &p_resp, omegas).0
    };
    let (x, neg) = nelder_mead(|p| -eval(p[0], p[1]), &[kp0, kd0], &[0.5, 0.02], 1e-14, 2000);
    let (kp, kd) = if -neg >= eval(kp0, kd0) { (x[0], x[1]) } else { (kp0, kd0) };
    let gains = PidGains { k_p: kp, k_i: ki, k_d: kd };
    // certify on the same dense grid the feasibility search used: at a true
    // tangency the continuum minimum equals r^2, so a sub-grid refinement
    // would always sit marginally below the level and is not the certificate
    let (min_f, _) = grid_min_f(&gains, &p_resp, omegas);
    if min_f < feasible_level * (1.0 - 1e-9) {
        return Err(CoreError::Infeasible { best_f: min_f, required: feasible_level });
    }
    Ok(gains)
}

/// Lists the near-tangency local minima of f (within 1% of r^2) and runs the
/// Nyquist crossing-count check of the open loop; rejects unstable designs.
pub fn verify_design(
    g: &PidGains,
    p_nom: &TransferFunction,
    spec: &RobustSpec,
    grid: &FrequencyGrid,
) -> Result<TangencyReport> {
    g.validate()?;
    let open_loop = series(&g.to_tf(), p_nom);
    nyquist_check(&open_loop, grid)?;
    let omegas = grid.omegas();
    let f: Vec<f64> = omegas
        .iter()
        .map(|&w| constraint_f(g, w, p_nom))
        .collect::<Result<_>>()?;
    let r2 = spec.r() * spec.r();
    let mut tangencies = Vec::new();
    for j in 1..f.len() - 1 {
        if f[j] <= f[j - 1] && f[j] <= f[j + 1] {
            // refine the local minimum before the tolerance test
            let (w, v) = golden_min(
                |w| constraint_f(g, w, p_nom).unwrap_or(f64::INFINITY),
                omegas[j - 1],
                omegas[j + 1],
                1e-8,
            );
            let (w, v) = if v <= f[j] { (w, v) } else { (omegas[j], f[j]) };
            if (v - r2).abs() <= 0.01 * r2 {
                tangencies.push((w, v));
            }
        }
    }
    let (min_f, argmin_omega) = min_constraint(g, p_nom, grid)?;
    Ok(TangencyReport { tangencies, min_f, argmin_omega })
}
