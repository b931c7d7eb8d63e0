//! Cumulative design report: one JSON document mutated stage by stage
//! (linearize -> delay model -> tune -> runtime), consumed by the simulators.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::lti::{nyquist_check, series, FrequencyGrid, TransferFunction};
use crate::plant::{nominal_tf, Calibration};
use crate::sim::LoopDesign;
use crate::synthesis::{maximize_ki, verify_design, PidGains, RobustSpec, TangencyReport};
use crate::twodof::{crossover_frequency, design_sp_filter, SetpointFilter, TwoDofConfig};
use crate::uncertainty::{
    deviation_scan, fit_weight, nominal_gains, robust_stability_margin, DeviationReport,
    GammaFit, LeadWeight, OperatingRange,
};

/// Output of the linearization stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearizationSection {
    /// Integral-mean flow gain, m^3/s per unit spool.
    pub c_q_nom: f64,
    /// Integral-mean flow-pressure gain, m^3/s/Pa.
    pub c_qp_nom: f64,
    /// Nominal plant numerator/denominator, ascending powers of s, plus the
    /// nominal loop delay in seconds.
    pub p_nom_num: Vec<f64>,
    pub p_nom_den: Vec<f64>,
    pub delay: f64,
    pub deviations: DeviationReport,
}

/// Output of the tuning stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningSection {
    pub m_s: f64,
    pub tau_max: f64,
    pub gains: PidGains,
    pub min_f: f64,
    /// Constraint-circle tangencies: (frequency rad/s, f value).
    pub tangencies: Vec<(f64, f64)>,
    pub weight: LeadWeight,
    /// ||W_U T||_inf; < 1 certifies robust stability.
    pub margin: f64,
}

/// Output of the runtime-design stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuntimeSection {
    pub cfg: TwoDofConfig,
    pub sp: SetpointFilter,
}

/// The cumulative design document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignReport {
    pub calibration: Calibration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linearization: Option<LinearizationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_model: Option<GammaFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<RuntimeSection>,
}

/// Delay model assumed when no RTT measurements have been fitted:
/// mean 0.03 s, hard floor 0.01 s, design bound 0.11 s.
pub fn default_delay_model() -> GammaFit {
    GammaFit { shape: 4.0, scale: 0.005, quantum: 0.01, tau_min: 0.01, tau_max: 0.11 }
}

impl DesignReport {
    pub fn new(calibration: Calibration) -> Self {
        Self { calibration, linearization: None, delay_model: None, tuning: None, runtime: None }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let report: DesignReport = serde_json::from_str(&text)?;
        report.validate()?;
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Internal-consistency check: the stored nominal plant must be
    /// recomputable from the calibration and nominal gains within 1e-9
    /// relative on every coefficient.
    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        if let Some(lin) = &self.linearization {
            let tf = nominal_tf(&self.calibration.plant, lin.c_q_nom, lin.c_qp_nom, lin.delay)?;
            let close = |a: &[f64], b: &[f64]| -> bool {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| {
                        let scale = x.abs().max(y.abs()).max(1e-300);
                        (x - y).abs() <= 1e-9 * scale
                    })
            };
            if !close(&lin.p_nom_num, &tf.num) || !close(&lin.p_nom_den, &tf.den) {
                return Err(CoreError::InvalidParam(
                    "linearization: p_nom coefficients are not recomputable from the \
                     calibration and nominal gains within 1e-9"
                        .into(),
                ));
            }
        }
        if let Some(dm) = &self.delay_model {
            dm.validate()?;
        }
        if let Some(rt) = &self.runtime {
            rt.cfg.validate()?;
        }
        Ok(())
    }

    /// The stored nominal plant as a transfer function.
    pub fn p_nom(&self) -> Result<TransferFunction> {
        let lin = self.linearization.as_ref().ok_or_else(|| {
            CoreError::InvalidParam("report has no linearization section; run linearize".into())
        })?;
        TransferFunction::new(lin.p_nom_num.clone(), lin.p_nom_den.clone(), lin.delay)
    }

    /// Everything the simulators need; requires linearize and runtime stages.
    pub fn loop_design(&self) -> Result<LoopDesign> {
        let lin = self.linearization.as_ref().ok_or_else(|| {
            CoreError::InvalidParam("report has no linearization section; run linearize".into())
        })?;
        let rt = self.runtime.as_ref().ok_or_else(|| {
            CoreError::InvalidParam("report has no runtime section; run tune".into())
        })?;
        Ok(LoopDesign {
            cfg: rt.cfg.clone(),
            sp: rt.sp.clone(),
            c_q_nom: lin.c_q_nom,
            c_qp_nom: lin.c_qp_nom,
        })
    }

    /// Linearization stage: integral-mean nominal gains over the operating
    /// range, nominal plant at the delay model's mean RTT, deviation scan.
    pub fn stage_linearize(&mut self, range: &OperatingRange) -> Result<&LinearizationSection> {
        let dm = self.delay_model.get_or_insert_with(default_delay_model).clone();
        let (c_q_nom, c_qp_nom) = nominal_gains(&self.calibration.plant, range)?;
        let deviations = deviation_scan(&self.calibration.plant, range, (c_q_nom, c_qp_nom))?;
        let tf = nominal_tf(&self.calibration.plant, c_q_nom, c_qp_nom, dm.tau_nom())?;
        self.linearization = Some(LinearizationSection {
            c_q_nom,
            c_qp_nom,
            p_nom_num: tf.num.clone(),
            p_nom_den: tf.den.clone(),
            delay: tf.delay,
            deviations,
        });
        Ok(self.linearization.as_ref().unwrap())
    }

    /// Tuning stage: maximize the integral gain under the M_s constraint,
    /// certify the result, fit the uncertainty weight for the scanned gain
    /// ratio and the delay bound, compute the robust margin, and design the
    /// 2DOF runtime (noise filter at the gain crossover, set-point filter
    /// from the reference-to-output peak).
    pub fn stage_tune(
        &mut self,
        m_s: f64,
        tau_max_override: Option<f64>,
        grid: &FrequencyGrid,
    ) -> Result<&TuningSection> {
        let lin = self
            .linearization
            .as_ref()
            .ok_or_else(|| {
                CoreError::InvalidParam("report has no linearization section; run linearize".into())
            })?
            .clone();
        let p_nom = self.p_nom()?;
        let spec = RobustSpec { m_s, ..RobustSpec::default() };
        let gains = maximize_ki(&p_nom, &spec, grid)?;
        let cert = verify_design(&gains, &p_nom, &spec, grid)?;
        let tau_max = tau_max_override
            .unwrap_or_else(|| self.delay_model.as_ref().map_or(0.11, |d| d.tau_max));
        let weight = fit_weight(lin.deviations.gain_ratio_upper, tau_max, grid)?;
        let open_loop = series(&gains.to_tf(), &p_nom);
        let margin = robust_stability_margin(&weight.to_tf()?, &open_loop, grid)?;
        self.tuning = Some(TuningSection {
            m_s,
            tau_max,
            gains,
            min_f: cert.min_f,
            tangencies: cert.tangencies.clone(),
            weight,
            margin,
        });
        self.stage_runtime(grid)?;
        Ok(self.tuning.as_ref().unwrap())
    }

    /// Runtime-design stage (invoked by [`Self::stage_tune`]).
    fn stage_runtime(&mut self, grid: &FrequencyGrid) -> Result<&RuntimeSection> {
        let gains = self
            .tuning
            .as_ref()
            .ok_or_else(|| CoreError::InvalidParam("report has no tuning section".into()))?
            .gains;
        let p_nom = self.p_nom()?;
        let omega_o = crossover_frequency(&gains, &p_nom, grid)?;
        let cfg = TwoDofConfig { gains, b: 0.5, n_filter: 5.0, omega_o, ts: 0.01 };
        let sp = design_sp_filter(&cfg, &p_nom, grid)?;
        self.runtime = Some(RuntimeSection { cfg, sp });
        Ok(self.runtime.as_ref().unwrap())
    }

    /// Certification summary used by tangency-style reporting.
    pub fn certification(&self) -> Option<TangencyReport> {
        self.tuning.as_ref().map(|t| TangencyReport {
            tangencies: t.tangencies.clone(),
            min_f: t.min_f,
            argmin_omega: t.tangencies.first().map_or(0.0, |&(w, _)| w),
        })
    }

    /// Nominal open loop `C_c P_nom`; errors if either stage is missing or
    /// the loop is nominally unstable.
    pub fn open_loop(&self, grid: &FrequencyGrid) -> Result<TransferFunction> {
        let t = self
            .tuning
            .as_ref()
            .ok_or_else(|| CoreError::InvalidParam("report has no tuning section".into()))?;
        let ol = series(&t.gains.to_tf(), &self.p_nom()?);
        nyquist_check(&ol, grid)?;
        Ok(ol)
    }
}
