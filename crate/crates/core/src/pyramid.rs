//! Residual pyramid fusion of three backbone feature levels.
//!
//! The finer two levels are reduced to residuals against the upsampled next
//! coarser level, passed through a 3x3 conv, and everything is concatenated
//! at the coarsest scale:
//!
//! ```text
//! S128 = conv128(F128 - upsample2(F64))
//! S64  = conv64 (F64  - upsample2(F32))
//! out  = concat(downsample2(downsample2(S128)), downsample2(S64), F32)
//! ```
//!
//! The finest residual is halved twice because its extent is four times the
//! output extent; the spatial arithmetic admits no other reading.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// The three backbone outputs, finest first. Extents must halve from one
/// level to the next and the batch axis must agree; field names follow the
/// canonical 256-pixel input, but any consistent sizes work.
#[derive(Debug, Clone)]
pub struct FeatureLevels<T: Element> {
    pub f128: Tensor<T>,
    pub f64: Tensor<T>,
    pub f32: Tensor<T>,
}

impl<T: Element> FeatureLevels<T> {
    fn validate(&self) -> Result<()> {
        let dims = |t: &Tensor<T>| -> Result<[usize; 4]> {
            match t.shape() {
                [n, c, h, w] => Ok([*n, *c, *h, *w]),
                other => Err(Error::ShapeMismatch {
                    op: "pyramid_fuse",
                    detail: format!("level must be [N,C,H,W], got {other:?}"),
                }),
            }
        };
        let [n0, c0, h0, w0] = dims(&self.f128)?;
        let [n1, c1, h1, w1] = dims(&self.f64)?;
        let [n2, c2, h2, w2] = dims(&self.f32)?;
        if n0 != n1 || n1 != n2 {
            return Err(Error::ShapeMismatch {
                op: "pyramid_fuse",
                detail: format!("batch extents differ across levels: {n0}, {n1}, {n2}"),
            });
        }
        if h0 != 2 * h1 || w0 != 2 * w1 || h1 != 2 * h2 || w1 != 2 * w2 {
            return Err(Error::ShapeMismatch {
                op: "pyramid_fuse",
                detail: format!(
                    "levels must halve spatially: {h0}x{w0} -> {h1}x{w1} -> {h2}x{w2}"
                ),
            });
        }
        if c0 != c1 {
            return Err(Error::ShapeMismatch {
                op: "pyramid_fuse",
                detail: format!(
                    "finest level has {c0} channels but middle level has {c1}; \
                     adjacent levels must match for the residual subtraction"
                ),
            });
        }
        if c1 != c2 {
            return Err(Error::ShapeMismatch {
                op: "pyramid_fuse",
                detail: format!(
                    "middle level has {c1} channels but coarsest level has {c2}; \
                     adjacent levels must match for the residual subtraction"
                ),
            });
        }
        Ok(())
    }
}

/// Fuse the three levels into a single stack at the coarsest resolution.
/// Output channels: ch(conv128) + ch(conv64) + ch(F32).
pub fn pyramid_fuse<T: Element>(
    levels: &FeatureLevels<T>,
    conv128_weight: &Tensor<T>,
    conv128_bias: &Tensor<T>,
    conv64_weight: &Tensor<T>,
    conv64_bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    levels.validate()?;
    let s128 = levels
        .f128
        .sub(&levels.f64.upsample2()?)?
        .conv2d_3x3(conv128_weight, conv128_bias)?;
    let s64 = levels
        .f64
        .sub(&levels.f32.upsample2()?)?
        .conv2d_3x3(conv64_weight, conv64_bias)?;
    Tensor::concat_channels(&[
        s128.downsample2()?.downsample2()?,
        s64.downsample2()?,
        levels.f32.clone(),
    ])
}
