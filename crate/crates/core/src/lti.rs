//! Rational transfer functions with exact delay terms: frequency evaluation,
//! interconnection, infinity-norm estimation and bilinear discretization.
//!
//! The delay is always carried as an exact `e^{-s tau}` factor in frequency
//! evaluations; it is never rationally approximated.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numeric::{golden_max, polymul, polytrim, polyval};

/// A proper rational transfer function `N(s)/D(s) * e^{-s delay}` with real
/// coefficients stored in ascending powers of `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
    /// Pure time delay in seconds, >= 0.
    pub delay: f64,
}

impl TransferFunction {
    pub fn new(num: Vec<f64>, den: Vec<f64>, delay: f64) -> Result<Self> {
        let num = polytrim(num);
        let den = polytrim(den);
        if den.iter().all(|&c| c == 0.0) {
            return Err(CoreError::InvalidParam("zero denominator polynomial".into()));
        }
        if *den.last().unwrap() == 0.0 {
            return Err(CoreError::InvalidParam("leading denominator coefficient is zero".into()));
        }
        if !(delay >= 0.0) {
            return Err(CoreError::InvalidParam(format!("negative delay {delay}")));
        }
        if num.iter().chain(den.iter()).any(|c| !c.is_finite()) {
            return Err(CoreError::InvalidParam("non-finite coefficient".into()));
        }
        Ok(Self { num, den, delay })
    }

    /// Constant gain.
    pub fn gain(k: f64) -> Self {
        Self::new(vec![k], vec![1.0], 0.0).unwrap()
    }

    /// Pure delay element.
    pub fn pure_delay(tau: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![1.0], tau)
    }

    /// Free integrator `1/s`.
    pub fn integrator() -> Self {
        Self::new(vec![1.0], vec![0.0, 1.0], 0.0).unwrap()
    }

    /// Evaluate at `s = i omega` including the exact delay factor.
    pub fn eval_iw(&self, omega: f64) -> Result<Complex64> {
        let s = Complex64::new(0.0, omega);
        let d = polyval(&self.den, s);
        let scale: f64 = self
            .den
            .iter()
            .enumerate()
            .map(|(k, c)| c.abs() * omega.abs().powi(k as i32))
            .sum();
        if d.norm() < 1e-14 * scale.max(f64::MIN_POSITIVE) {
            return Err(CoreError::SingularFrequency { omega });
        }
        let rot = Complex64::from_polar(1.0, -omega * self.delay);
        Ok(polyval(&self.num, s) / d * rot)
    }

    /// DC gain `N(0)/D(0)`; infinite if the function has a free integrator.
    pub fn dc_gain(&self) -> f64 {
        self.num[0] / self.den[0]
    }
}

/// Series interconnection: numerators and denominators multiplied, delays
/// summed. No pole-zero cancellation is performed.
pub fn series(a: &TransferFunction, b: &TransferFunction) -> TransferFunction {
    TransferFunction {
        num: polytrim(polymul(&a.num, &b.num)),
        den: polytrim(polymul(&a.den, &b.den)),
        delay: a.delay + b.delay,
    }
}

/// A strictly increasing grid of positive angular frequencies (rad/s).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        if omegas.len() < 2 {
            return Err(CoreError::InvalidParam("frequency grid needs at least 2 points".into()));
        }
        if omegas[0] <= 0.0 || omegas.iter().any(|w| !w.is_finite()) {
            return Err(CoreError::InvalidParam("frequency grid must be positive and finite".into()));
        }
        if omegas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::InvalidParam("frequency grid must be strictly increasing".into()));
        }
        Ok(Self { omegas })
    }

    /// Logarithmically spaced grid over [lo, hi].
    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && n >= 2) {
            return Err(CoreError::InvalidParam("invalid log grid bounds".into()));
        }
        let (la, lb) = (lo.ln(), hi.ln());
        let omegas = (0..n)
            .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
            .collect();
        Self::new(omegas)
    }

    /// The toolkit default: 2000 points over [1e-2, 1e4] rad/s, with the point
    /// count overridable through the `HYDROLOOP_GRID` environment variable.
    pub fn default_grid() -> Self {
        let n = std::env::var("HYDROLOOP_GRID")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 2)
            .unwrap_or(2000);
        Self::log_spaced(1e-2, 1e4, n).unwrap()
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

/// Frequency response of `tf` on the grid, one complex value per point.
pub fn freq_response(tf: &TransferFunction, grid: &FrequencyGrid) -> Result<Vec<Complex64>> {
    grid.omegas().iter().map(|&w| tf.eval_iw(w)).collect()
}

/// Closed-loop complementary response `L/(1+L)` evaluated pointwise on the
/// grid. The delay stays inside `L`'s evaluation.
pub fn closed_loop_t(open_loop: &TransferFunction, grid: &FrequencyGrid) -> Result<Vec<Complex64>> {
    grid.omegas()
        .iter()
        .map(|&w| {
            let l = open_loop.eval_iw(w)?;
            let one_plus = Complex64::new(1.0, 0.0) + l;
            if one_plus.norm() < 1e-12 {
                return Err(CoreError::NearSingularLoop { omega: w, distance: one_plus.norm() });
            }
            Ok(l / one_plus)
        })
        .collect()
}

/// Supremum of a magnitude function over the grid with local golden-section
/// refinement around the coarse peak. Returns `(peak, peak_frequency)`.
///
/// Refinement runs when requested or when adjacent grid magnitudes differ by
/// 20% or more around the peak; tolerance is 1e-6 relative on the abscissa.
pub fn hinf_norm<F: Fn(f64) -> f64>(mag: F, grid: &FrequencyGrid, refine: bool) -> Result<(f64, f64)> {
    let w = grid.omegas();
    if w.is_empty() {
        return Err(CoreError::InvalidParam("empty grid".into()));
    }
    let vals: Vec<f64> = w.iter().map(|&x| mag(x)).collect();
    let mut imax = 0;
    for i in 1..vals.len() {
        if vals[i] > vals[imax] {
            imax = i;
        }
    }
    let lo = if imax == 0 { w[0] } else { w[imax - 1] };
    let hi = if imax == vals.len() - 1 { w[imax] } else { w[imax + 1] };
    let coarse_jump = {
        let a = vals[imax];
        let b = if imax == 0 { vals[1] } else { vals[imax - 1] };
        (a - b).abs() > 0.2 * a.abs().max(f64::MIN_POSITIVE)
    };
    if (refine || coarse_jump) && hi > lo {
        let (x, v) = golden_max(&mag, lo, hi, 1e-6);
        if v >= vals[imax] {
            return Ok((v, x));
        }
    }
    Ok((vals[imax], w[imax]))
}

/// Infinity norm of a transfer function's frequency response on the grid.
pub fn hinf_norm_tf(tf: &TransferFunction, grid: &FrequencyGrid, refine: bool) -> Result<(f64, f64)> {
    // singular grid points surface through a pre-pass
    freq_response(tf, grid)?;
    hinf_norm(|w| tf.eval_iw(w).map(|v| v.norm()).unwrap_or(f64::NAN), grid, refine)
}

/// Nominal-stability check of a unity-feedback loop: counts signed crossings
/// of the Nyquist locus of `open_loop` over the ray (-inf, -1) on the grid.
///
/// For the loop family handled by this toolkit (open loops with a free
/// integrator and no right-half-plane poles) a net crossing count of zero is
/// equivalent to closed-loop stability; a nonzero count rejects the design
/// with the crossing frequency.
pub fn nyquist_check(open_loop: &TransferFunction, grid: &FrequencyGrid) -> Result<()> {
    let w = grid.omegas();
    let resp = freq_response(open_loop, grid)?;
    let mut net = 0i64;
    let mut first_cross = None;
    for i in 1..resp.len() {
        let (a, b) = (resp[i - 1], resp[i]);
        if a.im == 0.0 && b.im == 0.0 {
            continue;
        }
        if a.im.signum() != b.im.signum() {
            // linear interpolation of the real-axis crossing
            let t = a.im / (a.im - b.im);
            let re = a.re + t * (b.re - a.re);
            if re < -1.0 {
                net += if b.im > a.im { 1 } else { -1 };
                let omega = w[i - 1] + t * (w[i] - w[i - 1]);
                first_cross.get_or_insert(omega);
            }
        }
    }
    if net != 0 {
        return Err(CoreError::NominallyUnstable { omega: first_cross.unwrap_or(w[0]) });
    }
    Ok(())
}

/// A discrete-time IIR filter obtained from a bilinear transform; direct form
/// II transposed stepping with its own state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteFilter {
    /// Feedforward coefficients b0..bN (powers of z^-1).
    pub ff: Vec<f64>,
    /// Feedback coefficients a0..aN with a0 normalized to 1.
    pub fb: Vec<f64>,
    /// Sample period in seconds.
    pub ts: f64,
    state: Vec<f64>,
}

impl DiscreteFilter {
    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.ff[0] * x + self.state.first().copied().unwrap_or(0.0);
        let n = self.state.len();
        for i in 0..n {
            let carry = if i + 1 < n { self.state[i + 1] } else { 0.0 };
            let b = self.ff.get(i + 1).copied().unwrap_or(0.0);
            let a = self.fb.get(i + 1).copied().unwrap_or(0.0);
            self.state[i] = carry + b * x - a * y;
        }
        y
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = 0.0);
    }

    /// Steady-state output for a unit constant input, when finite.
    pub fn dc_gain(&self) -> f64 {
        self.ff.iter().sum::<f64>() / self.fb.iter().sum::<f64>()
    }
}

/// Bilinear (Tustin) discretization of a delay-free proper transfer function.
///
/// `s <- (2/Ts)(z-1)/(z+1)`; the DC gain is preserved exactly whenever it is
/// finite and an integrator maps to a trapezoidal accumulator. Delays are the
/// channel model's concern and are rejected here.
pub fn tustin_discretize(tf: &TransferFunction, ts: f64) -> Result<DiscreteFilter> {
    if tf.delay != 0.0 {
        return Err(CoreError::InvalidParam(
            "tustin_discretize requires a delay-free transfer function (delays are realized by the channel)".into(),
        ));
    }
    if !(ts > 0.0) {
        return Err(CoreError::InvalidParam(format!("non-positive sample period {ts}")));
    }
    let order = tf.den.len().max(tf.num.len()) - 1;
    let two_over_ts = 2.0 / ts;

    // p(s) -> sum_k p_k (2/Ts)^k (z-1)^k (z+1)^(order-k), ascending powers of z
    let transform = |p: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; order + 1];
        for (k, &c) in p.iter().enumerate() {
            let mut term = vec![c * two_over_ts.powi(k as i32)];
            for _ in 0..k {
                term = polymul(&term, &[-1.0, 1.0]);
            }
            for _ in 0..order - k {
                term = polymul(&term, &[1.0, 1.0]);
            }
            for (i, v) in term.iter().enumerate() {
                out[i] += v;
            }
        }
        out
    };

    let bz = transform(&tf.num); // ascending powers of z
    let az = transform(&tf.den);
    // convert to z^-1 form: reverse so index = power of z^-1, normalize a0 = 1
    let a0 = *az.last().unwrap();
    if a0 == 0.0 {
        return Err(CoreError::InvalidParam("bilinear transform produced a singular filter".into()));
    }
    let ff: Vec<f64> = bz.iter().rev().map(|&c| c / a0).collect();
    let fb: Vec<f64> = az.iter().rev().map(|&c| c / a0).collect();
    Ok(DiscreteFilter { state: vec![0.0; order], ff, fb, ts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid_small() -> FrequencyGrid {
        FrequencyGrid::log_spaced(1e-3, 1e4, 500).unwrap()
    }

    #[test]
    fn integrator_identity() {
        let tf = TransferFunction::integrator();
        let v = tf.eval_iw(1.0).unwrap();
        assert_relative_eq!(v.re, 0.0, epsilon = 1e-15);
        assert_relative_eq!(v.im, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn delay_factor_magnitude_and_phase() {
        let tf = TransferFunction::pure_delay(0.03).unwrap();
        for &w in &[0.1, 1.0, 10.0, 313.0] {
            let v = tf.eval_iw(w).unwrap();
            assert_eq!(v.norm(), 1.0);
            let expect = Complex64::from_polar(1.0, -0.03 * w);
            assert_relative_eq!(v.re, expect.re, epsilon = 1e-12);
            assert_relative_eq!(v.im, expect.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn nominal_plant_low_frequency_limit() {
        // velocity gain of the identified nominal plant: |s P(s)| -> 8.255e5/2.219e6
        let p = TransferFunction::new(vec![8.255e5], vec![0.0, 2.219e6, 948.0, 1.0], 0.03).unwrap();
        let w = 1e-4;
        let v = p.eval_iw(w).unwrap().norm() * w;
        assert_relative_eq!(v, 8.255e5 / 2.219e6, max_relative = 1e-6);
    }

    #[test]
    fn singular_frequency_reported() {
        // 1/(s^2+1) is singular at omega = 1
        let tf = TransferFunction::new(vec![1.0], vec![1.0, 0.0, 1.0], 0.0).unwrap();
        let grid = FrequencyGrid::new(vec![0.5, 1.0, 2.0]).unwrap();
        match freq_response(&tf, &grid) {
            Err(CoreError::SingularFrequency { omega }) => assert_eq!(omega, 1.0),
            other => panic!("expected singular frequency error, got {other:?}"),
        }
    }

    #[test]
    fn series_double_integrator() {
        let one_over_s = TransferFunction::integrator();
        let sq = series(&one_over_s, &one_over_s);
        assert_eq!(sq.num, vec![1.0]);
        assert_eq!(sq.den, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn series_gains_and_delays() {
        let a = TransferFunction::new(vec![2.0], vec![1.0], 0.01).unwrap();
        let b = TransferFunction::new(vec![3.0], vec![1.0], 0.02).unwrap();
        let c = series(&a, &b);
        assert_eq!(c.num, vec![6.0]);
        assert_relative_eq!(c.delay, 0.03);
    }

    #[test]
    fn closed_loop_constant_and_asymptote() {
        let grid = grid_small();
        let l1 = TransferFunction::gain(1.0);
        for v in closed_loop_t(&l1, &grid).unwrap() {
            assert_relative_eq!(v.re, 0.5, epsilon = 1e-14);
            assert_relative_eq!(v.im, 0.0, epsilon = 1e-14);
        }
        let lbig = TransferFunction::gain(1e9);
        for v in closed_loop_t(&lbig, &grid).unwrap() {
            assert_relative_eq!(v.re, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn closed_loop_independent_complex_oracle() {
        // C_c * P_nom of the identified design, checked at omega = 100 rad/s
        // against a from-scratch complex-arithmetic evaluation.
        let p = TransferFunction::new(vec![8.255e5], vec![0.0, 2.219e6, 948.0, 1.0], 0.03).unwrap();
        let c = TransferFunction::new(vec![31.1783, 12.7534, 0.1472], vec![0.0, 1.0], 0.0).unwrap();
        let l = series(&c, &p);
        let grid = FrequencyGrid::new(vec![99.0, 100.0, 101.0]).unwrap();
        let t = closed_loop_t(&l, &grid).unwrap()[1];

        let w = 100.0;
        let s = Complex64::new(0.0, w);
        let pv = 8.255e5 * Complex64::from_polar(1.0, -0.03 * w)
            / (s * (s * s + 948.0 * s + 2.219e6));
        let cv = Complex64::new(12.7534, 0.1472 * w - 31.1783 / w);
        let lv = cv * pv;
        let tv = lv / (Complex64::new(1.0, 0.0) + lv);
        assert_relative_eq!(t.re, tv.re, max_relative = 1e-12);
        assert_relative_eq!(t.im, tv.im, max_relative = 1e-12);
    }

    #[test]
    fn hinf_constant_and_lag() {
        let grid = grid_small();
        let k = TransferFunction::gain(0.7);
        let (peak, _) = hinf_norm_tf(&k, &grid, true).unwrap();
        assert_relative_eq!(peak, 0.7, epsilon = 1e-12);

        let lag = TransferFunction::new(vec![1.0], vec![1.0, 1.0], 0.0).unwrap();
        let (peak, _) = hinf_norm_tf(&lag, &grid, false).unwrap();
        assert_relative_eq!(peak, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn hinf_resonance_analytic() {
        // peak of 1/(s^2/wn^2 + 2 xi s/wn + 1) is 1/(2 xi sqrt(1-xi^2))
        let grid = FrequencyGrid::default_grid();
        for &xi in &[0.1, 0.2, 0.318, 0.5] {
            let wn = 1489.63;
            let tf = TransferFunction::new(
                vec![1.0],
                vec![1.0, 2.0 * xi / wn, 1.0 / (wn * wn)],
                0.0,
            )
            .unwrap();
            let (peak, wpk) = hinf_norm_tf(&tf, &grid, true).unwrap();
            let expect = 1.0 / (2.0 * xi * (1.0 - xi * xi).sqrt());
            assert_relative_eq!(peak, expect, max_relative = 1e-4);
            assert_relative_eq!(wpk, wn * (1.0 - 2.0 * xi * xi).sqrt(), max_relative = 1e-2);
        }
    }

    #[test]
    fn tustin_constant_and_dc_preservation() {
        let k = TransferFunction::gain(4.25);
        let f = tustin_discretize(&k, 0.01).unwrap();
        assert_relative_eq!(f.dc_gain(), 4.25, epsilon = 1e-15);

        let lag = TransferFunction::new(vec![1.0], vec![1.0, 0.37], 0.0).unwrap();
        for &ts in &[0.001, 0.01, 0.1] {
            let f = tustin_discretize(&lag, ts).unwrap();
            assert_relative_eq!(f.dc_gain(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tustin_rejects_delay() {
        let tf = TransferFunction::new(vec![1.0], vec![1.0, 1.0], 0.02).unwrap();
        assert!(tustin_discretize(&tf, 0.01).is_err());
    }

    #[test]
    fn tustin_integrator_matches_trapezoid_sum() {
        // k_i/s driven by a unit step: output after n samples equals the
        // trapezoidal quadrature of the constant 1 scaled by k_i.
        let ki = 31.1783;
        let ts = 0.01;
        let tf = TransferFunction::new(vec![ki], vec![0.0, 1.0], 0.0).unwrap();
        let mut f = tustin_discretize(&tf, ts).unwrap();
        let mut trapezoid = 0.0;
        let mut prev = 0.0;
        for n in 0..200 {
            let y = f.step(1.0);
            let x = 1.0;
            trapezoid += ki * ts * 0.5 * (x + prev);
            prev = x;
            assert_relative_eq!(y, trapezoid, max_relative = 1e-12, epsilon = 1e-12);
            let _ = n;
        }
    }

    #[test]
    fn tustin_low_frequency_matches_continuous() {
        // sweep well below 1/Ts and compare the stepped magnitude to the
        // continuous response within 1%
        let tf = TransferFunction::new(vec![1.0, 0.02], vec![1.0, 0.15], 0.0).unwrap();
        let ts = 0.001;
        for &w in &[0.5, 2.0, 10.0] {
            let mut f = tustin_discretize(&tf, ts).unwrap();
            let n = (4000.0 * (1.0_f64 / w).max(0.05) / ts) as usize;
            let mut peak: f64 = 0.0;
            for i in 0..n {
                let t = i as f64 * ts;
                let y = f.step((w * t).sin());
                if t > 0.75 * n as f64 * ts {
                    peak = peak.max(y.abs());
                }
            }
            let cont = tf.eval_iw(w).unwrap().norm();
            assert_relative_eq!(peak, cont, max_relative = 0.01);
        }
    }

    proptest! {
        #[test]
        fn magnitude_invariant_under_common_scaling(scale in 1e-3f64..1e3, w in 1e-2f64..1e3) {
            let tf = TransferFunction::new(vec![1.0, 0.5], vec![2.0, 1.0, 0.25], 0.0).unwrap();
            let scaled = TransferFunction::new(
                tf.num.iter().map(|c| c * scale).collect(),
                tf.den.iter().map(|c| c * scale).collect(),
                0.0,
            ).unwrap();
            let a = tf.eval_iw(w).unwrap().norm();
            let b = scaled.eval_iw(w).unwrap().norm();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-300));
        }

        #[test]
        fn series_is_associative(k1 in -5.0f64..5.0, k2 in -5.0f64..5.0, d in 0.0f64..0.1) {
            let a = TransferFunction::new(vec![k1, 1.0], vec![1.0, 1.0], d).unwrap();
            let b = TransferFunction::new(vec![k2], vec![1.0, 2.0], 0.0).unwrap();
            let c = TransferFunction::new(vec![1.0], vec![0.0, 1.0], d).unwrap();
            let left = series(&series(&a, &b), &c);
            let right = series(&a, &series(&b, &c));
            prop_assert_eq!(left.num.len(), right.num.len());
            for (x, y) in left.num.iter().zip(&right.num) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
            for (x, y) in left.den.iter().zip(&right.den) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
            prop_assert!((left.delay - right.delay).abs() < 1e-15);
        }
    }

    #[test]
    fn hinf_submultiplicative_spot_check() {
        let grid = grid_small();
        let a = TransferFunction::new(vec![1.0], vec![1.0, 0.2, 0.01], 0.0).unwrap();
        let b = TransferFunction::new(vec![2.0, 0.1], vec![1.0, 3.0], 0.0).unwrap();
        let (na, _) = hinf_norm_tf(&a, &grid, true).unwrap();
        let (nb, _) = hinf_norm_tf(&b, &grid, true).unwrap();
        let (nab, _) = hinf_norm_tf(&series(&a, &b), &grid, true).unwrap();
        assert!(nab <= na * nb * (1.0 + 1e-9));
    }
}
