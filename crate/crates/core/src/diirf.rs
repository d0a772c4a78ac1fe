//! Differential infinite impulse response filter: a trainable biquad applied
//! independently at every spatial location of a frame sequence.
//!
//! The recursion is the transposed direct-form-II structure. With per-pixel
//! state maps h1, h2 initialized to zero at the start of each sequence:
//!
//! ```text
//! y[n]  = b0 * x[n] + h1[n-1]
//! h1[n] = b1 * x[n] + h2[n-1] - a1 * y[n]
//! h2[n] = b2 * x[n]           - a2 * y[n]
//! ```
//!
//! The five coefficients are scalars shared across all pixels, so one filter
//! instance contributes exactly five trainable values. The forward pass is
//! built from tape-recorded elementwise operations, which makes the gradient
//! with respect to the coefficients and the input flow back through all time
//! steps automatically.

use crate::error::{Error, Result};
use crate::tensor::{num, Element, Tensor};

/// Margin keeping projected coefficients strictly inside the stability region.
pub const STABILITY_EPS: f64 = 1e-3;

/// The five trainable biquad coefficients, each a shape `[1]` tensor.
#[derive(Debug, Clone)]
pub struct BiquadParams<T: Element> {
    pub b0: Tensor<T>,
    pub b1: Tensor<T>,
    pub b2: Tensor<T>,
    pub a1: Tensor<T>,
    pub a2: Tensor<T>,
}

impl<T: Element> BiquadParams<T> {
    pub fn from_values(b0: f64, b1: f64, b2: f64, a1: f64, a2: f64) -> Self {
        BiquadParams {
            b0: Tensor::param_scalar(num(b0)),
            b1: Tensor::param_scalar(num(b1)),
            b2: Tensor::param_scalar(num(b2)),
            a1: Tensor::param_scalar(num(a1)),
            a2: Tensor::param_scalar(num(a2)),
        }
    }

    /// Identity filter (b0=1, rest 0): a safe, signal-preserving start point.
    pub fn identity() -> Self {
        Self::from_values(1.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn values(&self) -> [f64; 5] {
        [
            self.b0.scalar_value().to_f64(),
            self.b1.scalar_value().to_f64(),
            self.b2.scalar_value().to_f64(),
            self.a1.scalar_value().to_f64(),
            self.a2.scalar_value().to_f64(),
        ]
    }

    /// True when (a1, a2) lies in the closed stability triangle
    /// |a2| <= 1 - eps and |a1| <= 1 + a2 - eps.
    pub fn is_stable(&self) -> bool {
        let [_, _, _, a1, a2] = self.values();
        in_stability_triangle(a1, a2)
    }
}

pub fn in_stability_triangle(a1: f64, a2: f64) -> bool {
    a2.abs() <= 1.0 - STABILITY_EPS && a1.abs() <= 1.0 + a2 - STABILITY_EPS
}

/// Clamp a feedback pair into the stability triangle. Idempotent; points
/// already inside are returned unchanged.
pub fn project_feedback_pair(a1: f64, a2: f64) -> (f64, f64) {
    let a2 = a2.clamp(-(1.0 - STABILITY_EPS), 1.0 - STABILITY_EPS);
    let bound = (1.0 + a2 - STABILITY_EPS).max(0.0);
    (a1.clamp(-bound, bound), a2)
}

/// Project the feedback coefficients of `params` into the stability triangle,
/// leaving the feedforward coefficients untouched.
pub fn stability_project<T: Element>(params: &BiquadParams<T>) -> BiquadParams<T> {
    let [b0, b1, b2, a1, a2] = params.values();
    let (a1, a2) = project_feedback_pair(a1, a2);
    BiquadParams {
        b0: Tensor::param_scalar(num(b0)),
        b1: Tensor::param_scalar(num(b1)),
        b2: Tensor::param_scalar(num(b2)),
        a1: Tensor::param_scalar(num(a1)),
        a2: Tensor::param_scalar(num(a2)),
    }
}

/// Per-sequence filter state: the two state maps and the frame counter.
/// Created zeroed at sequence start and never shared across sequences.
pub struct FilterState<T: Element> {
    pub h1: Tensor<T>,
    pub h2: Tensor<T>,
    pub timestamp: usize,
}

impl<T: Element> FilterState<T> {
    pub fn zeroed(frame_shape: &[usize]) -> Self {
        FilterState {
            h1: Tensor::zeros(frame_shape),
            h2: Tensor::zeros(frame_shape),
            timestamp: 0,
        }
    }
}

/// Run the filter over a sequence whose leading axis is time. Frames may be
/// `[H,W]` or `[1,H,W]`; the recursion is elementwise either way.
///
/// Differentiable with respect to the input and all five coefficients via
/// backpropagation through the unrolled time steps. Unstable coefficients are
/// tolerated (they only warn) because short training sequences cannot diverge
/// far, but non-finite input is rejected outright.
pub fn diirf_forward<T: Element>(x: &Tensor<T>, params: &BiquadParams<T>) -> Result<Tensor<T>> {
    let Some((&t_len, frame_shape)) = x.shape().split_first() else {
        return Err(Error::ShapeMismatch {
            op: "diirf_forward",
            detail: "input must have a leading time axis".into(),
        });
    };
    if t_len == 0 {
        return Err(Error::ShapeMismatch {
            op: "diirf_forward",
            detail: "sequence length must be at least 1".into(),
        });
    }
    if !x.all_finite() {
        return Err(Error::NonFinite {
            context: "diirf_forward input".into(),
        });
    }
    if !params.is_stable() {
        let [_, _, _, a1, a2] = params.values();
        log::warn!("diirf coefficients outside stability triangle: a1={a1}, a2={a2}");
    }

    let mut state = FilterState::zeroed(frame_shape);
    let mut outputs = Vec::with_capacity(t_len);
    for n in 0..t_len {
        let xn = x.index_axis0(n)?;
        let y = xn.scale(&params.b0)?.add(&state.h1)?;
        let h1 = xn
            .scale(&params.b1)?
            .add(&state.h2)?
            .sub(&y.scale(&params.a1)?)?;
        let h2 = xn.scale(&params.b2)?.sub(&y.scale(&params.a2)?)?;
        state = FilterState {
            h1,
            h2,
            timestamp: n + 1,
        };
        outputs.push(y);
    }
    Tensor::stack_axis0(&outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-form-I reference recursion, written from the transfer function
    /// H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
    fn biquad_oracle(x: &[f64], b0: f64, b1: f64, b2: f64, a1: f64, a2: f64) -> Vec<f64> {
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

    fn series_tensor(x: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(x.to_vec(), &[x.len(), 1, 1]).unwrap()
    }

    #[test]
    fn identity_params_pass_input_through() {
        let x = Tensor::from_vec((0..12).map(|v| v as f64 - 4.0).collect(), &[3, 2, 2]).unwrap();
        let y = diirf_forward(&x, &BiquadParams::identity()).unwrap();
        assert_eq!(y.data(), x.data());
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn zero_input_stays_zero() {
        let x = Tensor::<f64>::zeros(&[5, 3, 3]);
        let params = BiquadParams::from_values(0.7, -0.4, 0.2, 0.5, -0.3);
        let y = diirf_forward(&x, &params).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response_matches_precomputed_values() {
        // y[0]=0.5, y[1]=0.35, y[2]=0.18 for the impulse response of
        // (b0,b1,b2,a1,a2) = (0.5, 0.2, 0.1, -0.3, 0.05), computed from the
        // direct-form recursion by hand before the implementation existed.
        let x = series_tensor(&[1.0, 0.0, 0.0]);
        let params = BiquadParams::from_values(0.5, 0.2, 0.1, -0.3, 0.05);
        let y = diirf_forward(&x, &params).unwrap();
        let got: Vec<f64> = y.data().to_vec();
        assert!((got[0] - 0.5).abs() < 1e-12, "{got:?}");
        assert!((got[1] - 0.35).abs() < 1e-12, "{got:?}");
        assert!((got[2] - 0.18).abs() < 1e-12, "{got:?}");
    }

    #[test]
    fn matches_direct_form_oracle_on_random_input() {
        let coeffs = [0.9, -0.35, 0.15, -0.4, 0.2];
        let x: Vec<f64> = (0..24)
            .map(|i| ((i * 37 + 11) % 17) as f64 / 8.5 - 1.0)
            .collect();
        let y = diirf_forward(
            &series_tensor(&x),
            &BiquadParams::from_values(coeffs[0], coeffs[1], coeffs[2], coeffs[3], coeffs[4]),
        )
        .unwrap();
        let expect = biquad_oracle(&x, coeffs[0], coeffs[1], coeffs[2], coeffs[3], coeffs[4]);
        for (a, e) in y.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn equals_truncated_impulse_response_convolution() {
        // For zero initial state the filter is linear and time-invariant, so
        // the output is the convolution of the input with the impulse
        // response truncated to the sequence length.
        let (b0, b1, b2, a1, a2) = (0.6, 0.25, -0.1, -0.5, 0.3);
        let t = 32;
        let mut impulse = vec![0.0; t];
        impulse[0] = 1.0;
        let ir = biquad_oracle(&impulse, b0, b1, b2, a1, a2);
        let x: Vec<f64> = (0..t).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut expect = vec![0.0; t];
        for n in 0..t {
            for k in 0..=n {
                expect[n] += ir[k] * x[n - k];
            }
        }
        let y = diirf_forward(
            &series_tensor(&x),
            &BiquadParams::from_values(b0, b1, b2, a1, a2),
        )
        .unwrap();
        for (a, e) in y.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
    }

    #[test]
    fn spatially_independent_per_pixel() {
        // Permuting pixel locations of the input permutes the output the same way.
        let t = 4;
        let hw = 6;
        let x: Vec<f64> = (0..t * hw).map(|i| (i as f64 * 1.3).cos()).collect();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut xp = vec![0.0; t * hw];
        for n in 0..t {
            for (j, &p) in perm.iter().enumerate() {
                xp[n * hw + j] = x[n * hw + p];
            }
        }
        let params = BiquadParams::from_values(0.8, 0.1, -0.2, -0.3, 0.1);
        let y = diirf_forward(&Tensor::from_vec(x, &[t, 2, 3]).unwrap(), &params).unwrap();
        let yp = diirf_forward(&Tensor::from_vec(xp, &[t, 2, 3]).unwrap(), &params).unwrap();
        for n in 0..t {
            for (j, &p) in perm.iter().enumerate() {
                assert_eq!(yp.data()[n * hw + j], y.data()[n * hw + p]);
            }
        }
    }

    #[test]
    fn linear_in_input() {
        let alpha = 2.5;
        let x: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
        let params = BiquadParams::from_values(0.5, 0.3, 0.1, -0.2, 0.05);
        let y = diirf_forward(&series_tensor(&x), &params).unwrap();
        let ys = diirf_forward(&series_tensor(&scaled), &params).unwrap();
        for (a, b) in ys.data().iter().zip(y.data()) {
            assert!((a - alpha * b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let x = Tensor::from_vec(vec![1.0, f64::NAN], &[2, 1, 1]).unwrap();
        let err = diirf_forward(&x, &BiquadParams::identity()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn projection_keeps_interior_points() {
        assert_eq!(project_feedback_pair(0.0, 0.0), (0.0, 0.0));
        assert_eq!(project_feedback_pair(0.5, 0.2), (0.5, 0.2));
    }

    #[test]
    fn projection_clamps_a2_to_boundary() {
        let (_, a2) = project_feedback_pair(0.0, 2.0);
        assert_eq!(a2, 1.0 - STABILITY_EPS);
    }

    #[test]
    fn projection_is_idempotent_on_random_points() {
        let mut seed = 42u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 8.0 - 4.0
        };
        for _ in 0..100 {
            let (a1, a2) = (next(), next());
            let once = project_feedback_pair(a1, a2);
            let twice = project_feedback_pair(once.0, once.1);
            assert_eq!(once, twice);
            assert!(in_stability_triangle(once.0, once.1));
        }
    }

    #[test]
    fn bptt_gradients_flow_to_all_coefficients() {
        let x = Tensor::param_from_vec((0..8).map(|i| (i as f64).sin()).collect(), &[8, 1, 1])
            .unwrap();
        let params = BiquadParams::from_values(0.5, 0.2, 0.1, -0.3, 0.05);
        let y = diirf_forward(&x, &params).unwrap();
        let loss = y.mul(&y).unwrap().sum();
        loss.backward().unwrap();
        for (name, p) in [
            ("b0", &params.b0),
            ("b1", &params.b1),
            ("b2", &params.b2),
            ("a1", &params.a1),
            ("a2", &params.a2),
        ] {
            let g = p.grad().expect(name);
            assert!(g[0].is_finite());
        }
        assert!(x.grad().is_some());
    }
}
