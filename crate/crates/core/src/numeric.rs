//! Small shared numerical routines: linear interpolation, a damped
//! Gauss-Newton least-squares solver, and an embedded Runge-Kutta
//! integrator.

use crate::{Error, Result};

/// Piecewise-linear interpolation of `(xs, ys)` at `x`. `xs` must be strictly
/// increasing. Returns an error when `x` lies outside the tabulated range.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("interp: need at least two samples"));
    }
    if x < xs[0] || x > xs[xs.len() - 1] {
        return Err(Error::invalid(format!(
            "interp: x = {x} outside range [{}, {}]",
            xs[0],
            xs[xs.len() - 1]
        )));
    }
    let i = match xs.partition_point(|&v| v < x) {
        0 => 0,
        i if i >= xs.len() => xs.len() - 2,
        i => i - 1,
    };
    let (x0, x1) = (xs[i], xs[i + 1]);
    let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    Ok(ys[i] + t * (ys[i + 1] - ys[i]))
}

/// Solve a small dense linear system `a x = b` by Gaussian elimination with
/// partial pivoting. `a` is row-major `n x n`.
pub fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[piv * n + col].abs() {
                piv = row;
            }
        }
        if m[piv * n + col].abs() < 1e-300 {
            return Err(Error::numerical("singular matrix in linear solve"));
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            rhs.swap(col, piv);
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = rhs[row];
        for k in row + 1..n {
            s -= m[row * n + k] * x[k];
        }
        x[row] = s / m[row * n + row];
    }
    Ok(x)
}

/// Result of a damped Gauss-Newton fit.
#[derive(Debug, Clone)]
pub struct LsqFit {
    pub params: Vec<f64>,
    /// 1-sigma parameter uncertainties from the Jacobian covariance at the
    /// optimum, scaled by the reduced residual.
    pub sigmas: Vec<f64>,
    pub residual_norm: f64,
    pub reduced_chi2: f64,
    pub iterations: usize,
}

/// Damped Gauss-Newton (Levenberg-style) least squares.
///
/// `model(p, x)` evaluates the model, `jacobian(p, x)` its gradient with
/// respect to the parameters. Converges when the relative step falls below
/// 1e-10; fails after `max_iter` iterations.
pub fn least_squares<M, J>(
    model: M,
    jacobian: J,
    xs: &[f64],
    ys: &[f64],
    p0: &[f64],
    max_iter: usize,
) -> Result<LsqFit>
where
    M: Fn(&[f64], f64) -> f64,
    J: Fn(&[f64], f64) -> Vec<f64>,
{
    let n = xs.len();
    let np = p0.len();
    if n < np {
        return Err(Error::invalid("least_squares: fewer points than parameters"));
    }
    let mut p = p0.to_vec();
    let mut lambda = 1e-3;
    let ssr = |p: &[f64]| -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let r = y - model(p, x);
                r * r
            })
            .sum()
    };
    let mut current = ssr(&p);
    let mut iterations = 0;

    for it in 0..max_iter {
        iterations = it + 1;
        // normal equations J^T J + lambda diag(J^T J)
        let mut jtj = vec![0.0; np * np];
        let mut jtr = vec![0.0; np];
        for (&x, &y) in xs.iter().zip(ys) {
            let g = jacobian(&p, x);
            let r = y - model(&p, x);
            for i in 0..np {
                jtr[i] += g[i] * r;
                for j in 0..np {
                    jtj[i * np + j] += g[i] * g[j];
                }
            }
        }
        let mut step = None;
        for _ in 0..12 {
            let mut damped = jtj.clone();
            for i in 0..np {
                damped[i * np + i] += lambda * jtj[i * np + i].max(1e-12);
            }
            let Ok(delta) = solve_dense(&damped, &jtr, np) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(&delta).map(|(a, d)| a + d).collect();
            let trial_ssr = ssr(&trial);
            if trial_ssr.is_finite() && trial_ssr <= current {
                step = Some((trial, trial_ssr, delta));
                break;
            }
            lambda *= 10.0;
        }
        let Some((trial, trial_ssr, delta)) = step else {
            break; // damping saturated; treat as converged-at-current
        };
        let rel_step = delta
            .iter()
            .zip(&trial)
            .map(|(d, v)| (d / v.abs().max(1e-30)).abs())
            .fold(0.0f64, f64::max);
        p = trial;
        current = trial_ssr;
        lambda = (lambda / 10.0).max(1e-14);
        if rel_step < 1e-10 {
            return finish(jacobian, xs, p, current, iterations);
        }
    }
    if iterations >= max_iter {
        return Err(Error::FitFailure {
            residual: current.sqrt(),
            iterations,
        });
    }
    finish(jacobian, xs, p, current, iterations)
}

fn finish<J>(
    jacobian: J,
    xs: &[f64],
    p: Vec<f64>,
    ssr: f64,
    iterations: usize,
) -> Result<LsqFit>
where
    J: Fn(&[f64], f64) -> Vec<f64>,
{
    let n = xs.len();
    let np = p.len();
    let dof = n.saturating_sub(np).max(1);
    let reduced_chi2 = ssr / dof as f64;
    // covariance = s^2 (J^T J)^{-1}; invert column by column
    let mut jtj = vec![0.0; np * np];
    for &x in xs {
        let g = jacobian(&p, x);
        for i in 0..np {
            for j in 0..np {
                jtj[i * np + j] += g[i] * g[j];
            }
        }
    }
    let mut sigmas = vec![f64::NAN; np];
    let mut ok = true;
    let mut cov_diag = vec![0.0; np];
    for i in 0..np {
        let mut e = vec![0.0; np];
        e[i] = 1.0;
        match solve_dense(&jtj, &e, np) {
            Ok(col) => cov_diag[i] = col[i],
            Err(_) => {
                ok = false;
                break;
            }
        }
    }
    if ok {
        for i in 0..np {
            sigmas[i] = (cov_diag[i].max(0.0) * reduced_chi2).sqrt();
        }
    }
    Ok(LsqFit {
        params: p,
        sigmas,
        residual_norm: ssr.sqrt(),
        reduced_chi2,
        iterations,
    })
}

/// Dormand-Prince 4(5) adaptive integrator for small fixed-size systems.
///
/// Integrates `dy/dt = f(t, y)` from `t0` to `t1`. The observer is called
/// after every accepted step and may reject the state (returning an error
/// aborts integration).
pub fn integrate_rk45<const N: usize, F, O>(
    f: F,
    mut y: [f64; N],
    t0: f64,
    t1: f64,
    rtol: f64,
    atol: f64,
    mut observer: O,
) -> Result<[f64; N]>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
    O: FnMut(f64, &[f64; N]) -> Result<()>,
{
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    // 5th-order solution weights
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    // embedded 4th-order weights
    const E1: f64 = 5179.0 / 57600.0;
    const E3: f64 = 7571.0 / 16695.0;
    const E4: f64 = 393.0 / 640.0;
    const E5: f64 = -92097.0 / 339200.0;
    const E6: f64 = 187.0 / 2100.0;
    const E7: f64 = 1.0 / 40.0;

    let span = t1 - t0;
    if span <= 0.0 {
        return Ok(y);
    }
    let mut t = t0;
    let mut h = span / 100.0;
    let h_min = span * 1e-14;
    let mut rejects_in_a_row = 0usize;

    let axpy = |y: &[f64; N], coeffs: &[(f64, [f64; N])], h: f64| -> [f64; N] {
        let mut out = *y;
        for (c, k) in coeffs {
            for i in 0..N {
                out[i] += h * c * k[i];
            }
        }
        out
    };

    while t < t1 {
        if h > t1 - t {
            h = t1 - t;
        }
        let k1 = f(t, &y);
        let k2 = f(t + h / 5.0, &axpy(&y, &[(A21, k1)], h));
        let k3 = f(t + 3.0 * h / 10.0, &axpy(&y, &[(A31, k1), (A32, k2)], h));
        let k4 = f(t + 4.0 * h / 5.0, &axpy(&y, &[(A41, k1), (A42, k2), (A43, k3)], h));
        let k5 = f(
            t + 8.0 * h / 9.0,
            &axpy(&y, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)], h),
        );
        let k6 = f(
            t + h,
            &axpy(&y, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)], h),
        );
        let y5 = axpy(&y, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)], h);
        let k7 = f(t + h, &y5);
        let y4 = axpy(&y, &[(E1, k1), (E3, k3), (E4, k4), (E5, k5), (E6, k6), (E7, k7)], h);

        let mut err: f64 = 0.0;
        for i in 0..N {
            let scale = atol + rtol * y[i].abs().max(y5[i].abs());
            err = err.max(((y5[i] - y4[i]) / scale).abs());
        }
        if err <= 1.0 {
            t += h;
            y = y5;
            observer(t, &y)?;
            rejects_in_a_row = 0;
            let grow = 0.9 * err.max(1e-10).powf(-0.2);
            h *= grow.min(5.0);
        } else {
            rejects_in_a_row += 1;
            if rejects_in_a_row > 200 || h < h_min {
                return Err(Error::numerical(format!(
                    "rk45: step rejection cascade at t = {t:.6e} (h = {h:.3e}, err = {err:.3e})"
                )));
            }
            h *= (0.9 * err.powf(-0.2)).max(0.1);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interp_endpoints_and_midpoint() {
        let xs = [0.0, 1.0, 3.0];
        let ys = [1.0, 3.0, -1.0];
        assert_relative_eq!(interp_linear(&xs, &ys, 0.0).unwrap(), 1.0);
        assert_relative_eq!(interp_linear(&xs, &ys, 2.0).unwrap(), 1.0);
        assert_relative_eq!(interp_linear(&xs, &ys, 3.0).unwrap(), -1.0);
        assert!(interp_linear(&xs, &ys, 3.1).is_err());
    }

    #[test]
    fn linear_solve_3x3() {
        let a = [2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
        let x_true = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3)
            .map(|i| (0..3).map(|j| a[i * 3 + j] * x_true[j]).sum())
            .collect();
        let x = solve_dense(&a, &b, 3).unwrap();
        for (xi, ti) in x.iter().zip(&x_true) {
            assert_relative_eq!(xi, ti, epsilon = 1e-12);
        }
    }

    #[test]
    fn gauss_newton_recovers_exact_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.25).collect();
        let fit = least_squares(
            |p, x| p[0] * x + p[1],
            |_, x| vec![x, 1.0],
            &xs,
            &ys,
            &[1.0, 0.0],
            200,
        )
        .unwrap();
        assert_relative_eq!(fit.params[0], 2.5, epsilon = 1e-9);
        assert_relative_eq!(fit.params[1], -1.25, epsilon = 1e-9);
    }

    #[test]
    fn rk45_exponential_decay() {
        let y = integrate_rk45(
            |_, y: &[f64; 1]| [-y[0]],
            [1.0],
            0.0,
            2.0,
            1e-10,
            1e-12,
            |_, _| Ok(()),
        )
        .unwrap();
        assert_relative_eq!(y[0], (-2.0f64).exp(), epsilon = 1e-8);
    }

    #[test]
    fn rk45_harmonic_oscillator_energy() {
        let y = integrate_rk45(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            [1.0, 0.0],
            0.0,
            20.0 * std::f64::consts::PI,
            1e-10,
            1e-12,
            |_, _| Ok(()),
        )
        .unwrap();
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(y[1], 0.0, epsilon = 1e-6);
    }
}
