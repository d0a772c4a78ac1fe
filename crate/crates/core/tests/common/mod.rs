//! Shared oracles for the integration suites: central finite differences,
//! an independent direct-form biquad, a naive convolution, and the
//! closed-form band-pass frequency response. Everything here is written
//! against the mathematical definitions, independent of the library's
//! implementation paths.

#![allow(dead_code)]

use eulernet_core::tensor::Tensor;

/// Central finite differences of a scalar function at `x` with step `h`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Largest relative error between analytic and numeric gradients, with an
/// absolute floor so that near-zero pairs do not blow up the ratio.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn assert_gradients_close(name: &str, analytic: &[f64], numeric: &[f64], tol: f64) {
    let err = max_relative_error(analytic, numeric);
    assert!(
        err <= tol,
        "{name}: max relative gradient error {err:.3e} exceeds {tol:.1e}"
    );
}

/// Weighted sum of all elements; a scalar loss that is sensitive to every
/// output component. Weights are a fixed pseudo-random pattern.
pub fn probe_loss(output: &Tensor<f64>) -> Tensor<f64> {
    let weights: Vec<f64> = (0..output.numel())
        .map(|i| (((i * 2654435761) % 1000) as f64 / 500.0) - 1.0 + 0.001)
        .collect();
    let w = Tensor::from_vec(weights, output.shape()).expect("weight shape");
    output.mul(&w).expect("probe mul").sum()
}

/// Direct-form-I biquad recursion from the transfer function
/// H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2), zero state.
pub fn biquad_direct_form(x: &[f64], c: [f64; 5]) -> Vec<f64> {
    let [b0, b1, b2, a1, a2] = c;
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let x1 = if n >= 1 { x[n - 1] } else { 0.0 };
        let x2 = if n >= 2 { x[n - 2] } else { 0.0 };
        let y1 = if n >= 1 { y[n - 1] } else { 0.0 };
        let y2 = if n >= 2 { y[n - 2] } else { 0.0 };
        y[n] = b0 * x[n] + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    }
    y
}

/// Naive six-loop 3x3 same convolution.
pub fn conv3x3_naive(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n * cout * h * w];
    for b in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let iy = y as isize + ky as isize - 1;
                                let ix = x as isize + kx as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += weight[((co * cin + ci) * 3 + ky) * 3 + kx]
                                    * input[((b * cin + ci) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((b * cout + co) * h + y) * w + x] = acc;
                }
            }
        }
    }
    out
}

/// Closed-form frequency response (re, im) of the difference-of-low-passes
/// band-pass at frequency `f`, for smoothing coefficients derived from the
/// cutoffs: a = c/(c+1), c = 2*pi*fc/fps, and H_lp(w) = a/(1-(1-a)e^{-iw}).
pub fn bandpass_response(f_low: f64, f_high: f64, fps: f64, f: f64) -> (f64, f64) {
    let omega = 2.0 * std::f64::consts::PI * f / fps;
    let section = |fc: f64| -> (f64, f64) {
        let c = 2.0 * std::f64::consts::PI * fc / fps;
        let a = c / (c + 1.0);
        let (re, im) = (1.0 - (1.0 - a) * omega.cos(), (1.0 - a) * omega.sin());
        let d = re * re + im * im;
        (a * re / d, -a * im / d)
    };
    let hi = section(f_high);
    let lo = section(f_low);
    (hi.0 - lo.0, hi.1 - lo.1)
}

/// Least-squares amplitude of a known-frequency sinusoid in `series`,
/// ignoring the first `skip` samples.
pub fn fit_sinusoid_amplitude(series: &[f64], omega: f64, skip: usize) -> f64 {
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for (i, &v) in series.iter().enumerate().skip(skip) {
        let t = i as f64;
        let basis = [(omega * t).sin(), (omega * t).cos(), 1.0];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += basis[r] * basis[c];
            }
            rhs[r] += basis[r] * v;
        }
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).expect("finite"))
            .expect("non-empty");
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut sol = [0.0f64; 3];
    for row in (0..3).rev() {
        let mut acc = rhs[row];
        for k in row + 1..3 {
            acc -= m[row][k] * sol[k];
        }
        sol[row] = acc / m[row][row];
    }
    (sol[0] * sol[0] + sol[1] * sol[1]).sqrt()
}
