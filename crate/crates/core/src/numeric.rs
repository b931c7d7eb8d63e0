//! Small numerical kernels shared across the design routines: polynomial
//! arithmetic in the monomial basis, composite Simpson quadrature,
//! golden-section line search, a deterministic Nelder-Mead simplex and the
//! digamma/trigamma functions needed by the gamma-distribution fit.

use num_complex::Complex64;

/// Evaluate a polynomial with ascending-power coefficients at a complex point.
pub fn polyval(coeffs: &[f64], s: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        acc = acc * s + c;
    }
    acc
}

/// Multiply two polynomials (ascending powers).
pub fn polymul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Drop trailing (highest-power) zero coefficients, keeping at least one entry.
pub fn polytrim(mut c: Vec<f64>) -> Vec<f64> {
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    c
}

/// Composite Simpson weights for `n` points (n odd, >= 3) with spacing `h`.
/// Returns the quadrature of `f` sampled on the uniform grid.
pub fn simpson<F: Fn(usize) -> f64>(n: usize, h: f64, f: F) -> f64 {
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd point count >= 3");
    let mut acc = f(0) + f(n - 1);
    for i in 1..n - 1 {
        acc += if i % 2 == 1 { 4.0 * f(i) } else { 2.0 * f(i) };
    }
    acc * h / 3.0
}

/// Golden-section search for the minimum of `f` on [a, b].
/// `rel_tol` is relative to the midpoint abscissa.
pub fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, rel_tol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > rel_tol * (0.5 * (a.abs() + b.abs())).max(f64::MIN_POSITIVE) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Golden-section search for the maximum of `f` on [a, b].
pub fn golden_max<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> (f64, f64) {
    let (x, v) = golden_min(|w| -f(w), a, b, rel_tol);
    (x, -v)
}

/// Deterministic Nelder-Mead minimizer.
///
/// Starts from `x0` with per-coordinate `steps`, runs at most `max_iter`
/// reflections and stops when the simplex value spread drops below `f_tol`.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    steps: &[f64],
    f_tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += steps[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();

    for _ in 0..max_iter {
        // sort ascending by value; ties broken by insertion order (stable sort)
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap_or(std::cmp::Ordering::Equal));
        let pts_s: Vec<Vec<f64>> = order.iter().map(|&i| pts[i].clone()).collect();
        let vals_s: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
        pts = pts_s;
        vals = vals_s;

        if (vals[n] - vals[0]).abs() < f_tol {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| pts[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64)
            .collect();
        let reflect: Vec<f64> = (0..n).map(|k| 2.0 * centroid[k] - pts[n][k]).collect();
        let fr = f(&reflect);

        if fr < vals[0] {
            let expand: Vec<f64> = (0..n).map(|k| 3.0 * centroid[k] - 2.0 * pts[n][k]).collect();
            let fe = f(&expand);
            if fe < fr {
                pts[n] = expand;
                vals[n] = fe;
            } else {
                pts[n] = reflect;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = reflect;
            vals[n] = fr;
        } else {
            let contract: Vec<f64> = (0..n).map(|k| 0.5 * (centroid[k] + pts[n][k])).collect();
            let fc = f(&contract);
            if fc < vals[n] {
                pts[n] = contract;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    for k in 0..n {
                        pts[i][k] = 0.5 * (pts[0][k] + pts[i][k]);
                    }
                    vals[i] = f(&pts[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    (pts[best].clone(), vals[best])
}

/// Digamma function via upward recurrence and the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln() - 0.5 * inv
        - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0)))
}

/// Trigamma function via upward recurrence and the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv * (1.0 + 0.5 * inv + inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 / 42.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polyval_quadratic() {
        // 1 + 2s + 3s^2 at s = 2i
        let v = polyval(&[1.0, 2.0, 3.0], Complex64::new(0.0, 2.0));
        assert_relative_eq!(v.re, 1.0 - 12.0);
        assert_relative_eq!(v.im, 4.0);
    }

    #[test]
    fn simpson_cubic_exact() {
        // integral of x^3 over [0,1] = 1/4; Simpson is exact for cubics
        let n = 5;
        let h = 1.0 / (n as f64 - 1.0);
        let v = simpson(n, h, |i| (i as f64 * h).powi(3));
        assert_relative_eq!(v, 0.25, max_relative = 1e-14);
    }

    #[test]
    fn golden_finds_parabola_min() {
        let (x, _) = golden_min(|x| (x - 3.0) * (x - 3.0), 0.0, 10.0, 1e-9);
        assert_relative_eq!(x, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let (x, _) = nelder_mead(
            |p| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2),
            &[-1.0, 1.0],
            &[0.5, 0.5],
            1e-14,
            2000,
        );
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn digamma_known_values() {
        // psi(1) = -gamma
        assert_relative_eq!(digamma(1.0), -0.5772156649015329, epsilon = 1e-12);
        // psi(1/2) = -gamma - 2 ln 2
        assert_relative_eq!(digamma(0.5), -1.9635100260214235, epsilon = 1e-12);
    }

    #[test]
    fn trigamma_known_values() {
        // psi'(1) = pi^2/6
        assert_relative_eq!(trigamma(1.0), std::f64::consts::PI.powi(2) / 6.0, epsilon = 1e-12);
    }
}
