//! Feature-compressed attention: squash channels to one with a 3x3
//! convolution, filter the squashed map over time, squeeze it through a
//! sigmoid gate, and multiply the gate back onto the original features.
//!
//! The gate is computed from the same features it modulates, and one gate map
//! is shared across all channels of a frame. Each attention layer owns its
//! temporal filter, so different depths can select different frequency bands.

use rand::Rng;

use crate::diirf::{diirf_forward, BiquadParams};
use crate::error::{Error, Result};
use crate::tensor::{num, Element, Tensor};

/// Channel-squashing convolution plus the owned temporal filter.
#[derive(Debug, Clone)]
pub struct FcamLayer<T: Element> {
    /// `[1, C, 3, 3]` weights mapping C channels to a single gate channel.
    pub squash_weight: Tensor<T>,
    /// `[1]` bias of the squash convolution.
    pub squash_bias: Tensor<T>,
    pub filter: BiquadParams<T>,
}

impl<T: Element> FcamLayer<T> {
    /// He-style fan-in initialization for the squash conv, zero bias, and an
    /// identity filter perturbed by uniform noise in [-0.05, 0.05].
    pub fn init(in_channels: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * 9;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight: Vec<T> = (0..fan_in)
            .map(|_| num((rng.gen::<f64>() * 2.0 - 1.0) * std * 1.732_050_8))
            .collect();
        let mut noise = || num::<T>((rng.gen::<f64>() * 2.0 - 1.0) * 0.05);
        let filter = BiquadParams {
            b0: Tensor::param_scalar(T::one() + noise()),
            b1: Tensor::param_scalar(noise()),
            b2: Tensor::param_scalar(noise()),
            a1: Tensor::param_scalar(noise()),
            a2: Tensor::param_scalar(noise()),
        };
        FcamLayer {
            squash_weight: Tensor::param_from_vec(weight, &[1, in_channels, 3, 3])
                .expect("squash weight shape"),
            squash_bias: Tensor::param_from_vec(vec![T::zero()], &[1]).expect("squash bias shape"),
            filter,
        }
    }
}

/// Apply attention to a `[T, C, H, W]` frame sequence: the output is
/// `features * sigmoid(filter(squash(features)))` with the single-channel
/// gate replicated across C. Shape is preserved.
pub fn fcam_forward<T: Element>(
    features: &Tensor<T>,
    layer: &FcamLayer<T>,
) -> Result<Tensor<T>> {
    let [t, c, _, _] = features.shape() else {
        return Err(Error::ShapeMismatch {
            op: "fcam_forward",
            detail: format!("expected [T,C,H,W], got {:?}", features.shape()),
        });
    };
    if *t == 0 {
        return Err(Error::ShapeMismatch {
            op: "fcam_forward",
            detail: "sequence length must be at least 1".into(),
        });
    }
    if layer.squash_weight.shape()[1] != *c {
        return Err(Error::ShapeMismatch {
            op: "fcam_forward",
            detail: format!(
                "features have {c} channels (dim 1) but squash weights expect {}",
                layer.squash_weight.shape()[1]
            ),
        });
    }
    // Frames act as the batch axis for the shared-weight squash conv.
    let squashed = features.conv2d_3x3(&layer.squash_weight, &layer.squash_bias)?;
    let filtered = diirf_forward(&squashed, &layer.filter)?;
    let gate = filtered.sigmoid();
    features.mul_gate(&gate)
}
