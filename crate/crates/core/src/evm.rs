//! Linear Eulerian video magnification.
//!
//! Each frame is decomposed into a Gaussian pyramid (5-tap binomial blur,
//! then 2x decimation). The pyramid is rearranged into residual bands, every
//! band except the full-resolution one is temporally band-passed per pixel by
//! a pair of first-order low-pass filters, the amplified band signal is added
//! back, and the pyramid is collapsed. Collapsing the unmodified bands
//! telescopes back to the original frame exactly, so `alpha = 0` round-trips.
//!
//! The full-resolution band is never amplified, which keeps sensor noise out
//! of the output. Filter states start at the first frame's value, making the
//! response to a constant input exactly zero from the first sample.

use crate::error::{Error, Result};
use crate::tensor::{num, Element, Tensor};

/// Magnification parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvmConfig {
    /// Pyramid depth (level count, including the unamplified base).
    pub levels: usize,
    /// Lower passband edge in Hz.
    pub f_low: f64,
    /// Upper passband edge in Hz.
    pub f_high: f64,
    /// Source frame rate in Hz.
    pub fps: f64,
    /// Amplification factor applied to the band-passed signal.
    pub alpha: f64,
}

impl Default for EvmConfig {
    fn default() -> Self {
        EvmConfig {
            levels: 4,
            f_low: 0.4,
            f_high: 3.0,
            fps: 30.0,
            alpha: 10.0,
        }
    }
}

impl EvmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::InvalidConfig("evm levels must be >= 1".into()));
        }
        if !(self.f_low > 0.0 && self.f_low < self.f_high && self.f_high < self.fps / 2.0) {
            return Err(Error::InvalidConfig(format!(
                "evm passband must satisfy 0 < f_low < f_high < fps/2, got \
                 f_low={}, f_high={}, fps={}",
                self.f_low, self.f_high, self.fps
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::InvalidConfig("evm alpha must be >= 0".into()));
        }
        Ok(())
    }

    /// Smoothing coefficient of the first-order low-pass at cutoff `fc`.
    fn smoothing(&self, fc: f64) -> f64 {
        let c = 2.0 * std::f64::consts::PI * fc / self.fps;
        c / (c + 1.0)
    }
}

/// 5-tap binomial blur [1,4,6,4,1]/16, separable, with clamped borders so
/// constants are preserved.
fn blur5<T: Element>(src: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let taps: [T; 5] = [
        num(1.0 / 16.0),
        num(4.0 / 16.0),
        num(6.0 / 16.0),
        num(4.0 / 16.0),
        num(1.0 / 16.0),
    ];
    let mut tmp = vec![T::zero(); src.len()];
    // Horizontal pass.
    for ci in 0..c {
        for y in 0..h {
            let row = &src[(ci * h + y) * w..][..w];
            let out = &mut tmp[(ci * h + y) * w..][..w];
            for x in 0..w {
                let mut acc = T::zero();
                for (k, &t) in taps.iter().enumerate() {
                    let ix = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc = acc + t * row[ix];
                }
                out[x] = acc;
            }
        }
    }
    // Vertical pass.
    let mut out = vec![T::zero(); src.len()];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for (k, &t) in taps.iter().enumerate() {
                    let iy = (y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc = acc + t * tmp[(ci * h + iy) * w + x];
                }
                out[(ci * h + y) * w + x] = acc;
            }
        }
    }
    out
}

fn check_divisible(h: usize, w: usize, levels: usize) -> Result<()> {
    let div = 1usize << (levels - 1);
    if h % div != 0 || w % div != 0 {
        return Err(Error::ShapeMismatch {
            op: "build_gaussian_pyramid",
            detail: format!("extents {h}x{w} not divisible by 2^(levels-1) = {div}"),
        });
    }
    Ok(())
}

/// Gaussian pyramid of a `[C,H,W]` frame: level 0 is the frame itself, each
/// following level is the 2x decimation of the blurred previous level.
pub fn build_gaussian_pyramid<T: Element>(
    frame: &Tensor<T>,
    levels: usize,
) -> Result<Vec<Tensor<T>>> {
    let [c, h, w] = frame.shape() else {
        return Err(Error::ShapeMismatch {
            op: "build_gaussian_pyramid",
            detail: format!("expected [C,H,W], got {:?}", frame.shape()),
        });
    };
    if levels < 1 {
        return Err(Error::InvalidConfig("pyramid needs at least one level".into()));
    }
    check_divisible(*h, *w, levels)?;
    let (c, mut lh, mut lw) = (*c, *h, *w);
    let mut out = vec![frame.clone()];
    for _ in 1..levels {
        let prev = out.last().expect("non-empty pyramid");
        let blurred = blur5(prev.data(), c, lh, lw);
        let down = Tensor::from_vec(blurred, &[1, c, lh, lw])?
            .downsample2()?;
        lh /= 2;
        lw /= 2;
        out.push(down.reshape(&[c, lh, lw])?);
    }
    Ok(out)
}

/// Temporal band-pass of one pixel series: the difference of two first-order
/// low-pass filters with cutoffs `f_high` and `f_low`. Both filters start at
/// the first sample, so the response to a constant series is exactly zero.
pub fn temporal_bandpass<T: Element>(series: &[T], config: &EvmConfig) -> Vec<T> {
    debug_assert!(series.len() >= 4, "band-pass expects at least 4 samples");
    let a_hi = num::<T>(config.smoothing(config.f_high));
    let a_lo = num::<T>(config.smoothing(config.f_low));
    let mut out = Vec::with_capacity(series.len());
    let Some(&first) = series.first() else {
        return out;
    };
    let (mut lo, mut hi) = (first, first);
    for &x in series {
        hi = hi + a_hi * (x - hi);
        lo = lo + a_lo * (x - lo);
        out.push(hi - lo);
    }
    out
}

/// State for streaming band-pass over many pixels at once.
struct BandpassState<T: Element> {
    lo: Vec<T>,
    hi: Vec<T>,
    a_lo: T,
    a_hi: T,
    started: bool,
}

impl<T: Element> BandpassState<T> {
    fn new(len: usize, config: &EvmConfig) -> Self {
        BandpassState {
            lo: vec![T::zero(); len],
            hi: vec![T::zero(); len],
            a_lo: num(config.smoothing(config.f_low)),
            a_hi: num(config.smoothing(config.f_high)),
            started: false,
        }
    }

    /// Advance one time step and return the band-passed plane.
    fn step(&mut self, plane: &[T]) -> Vec<T> {
        if !self.started {
            self.lo.copy_from_slice(plane);
            self.hi.copy_from_slice(plane);
            self.started = true;
        }
        let mut out = vec![T::zero(); plane.len()];
        for i in 0..plane.len() {
            self.hi[i] = self.hi[i] + self.a_hi * (plane[i] - self.hi[i]);
            self.lo[i] = self.lo[i] + self.a_lo * (plane[i] - self.lo[i]);
            out[i] = self.hi[i] - self.lo[i];
        }
        out
    }
}

fn up2_plane<T: Element>(src: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = src.shape() else {
        return Err(Error::ShapeMismatch {
            op: "evm::up2",
            detail: format!("expected [C,H,W], got {:?}", src.shape()),
        });
    };
    let up = src.reshape(&[1, *c, *h, *w])?.upsample2()?;
    up.reshape(&[*c, 2 * h, 2 * w])
}

/// Magnify temporal variation in a `[T,C,H,W]` clip. Values are treated as
/// intensities in [0,1] and the output is clamped back into that range.
pub fn magnify<T: Element>(clip: &Tensor<T>, config: &EvmConfig) -> Result<Tensor<T>> {
    config.validate()?;
    let [t_len, c, h, w] = clip.shape() else {
        return Err(Error::ShapeMismatch {
            op: "magnify",
            detail: format!("expected [T,C,H,W], got {:?}", clip.shape()),
        });
    };
    let (t_len, c, h, w) = (*t_len, *c, *h, *w);
    if t_len < 4 {
        return Err(Error::TooShort {
            frames: t_len,
            needed: 4,
        });
    }
    check_divisible(h, w, config.levels)?;

    let levels = config.levels;
    let alpha = num::<T>(config.alpha);
    // One band-pass state per amplified band (levels 1..levels).
    let mut states: Vec<BandpassState<T>> = (1..levels)
        .map(|k| {
            let (lh, lw) = (h >> k, w >> k);
            BandpassState::new(c * lh * lw, config)
        })
        .collect();

    let mut out = Vec::with_capacity(clip.numel());
    for fi in 0..t_len {
        let frame = clip.index_axis0(fi)?;
        let gauss = build_gaussian_pyramid(&frame, levels)?;
        // Residual bands: band[k] = gauss[k] - up2(gauss[k+1]), top level kept.
        let mut bands: Vec<Tensor<T>> = Vec::with_capacity(levels);
        for k in 0..levels - 1 {
            bands.push(gauss[k].sub(&up2_plane(&gauss[k + 1])?)?);
        }
        bands.push(gauss[levels - 1].clone());

        // Amplify every band except the full-resolution one.
        for k in 1..levels {
            let bp = states[k - 1].step(bands[k].data());
            let amplified: Vec<T> = bands[k]
                .data()
                .iter()
                .zip(&bp)
                .map(|(&b, &v)| b + alpha * v)
                .collect();
            bands[k] = Tensor::from_vec(amplified, bands[k].shape())?;
        }

        // Collapse from coarsest to finest.
        let mut acc = bands[levels - 1].clone();
        for k in (0..levels - 1).rev() {
            acc = bands[k].add(&up2_plane(&acc)?)?;
        }
        out.extend(acc.data().iter().map(|&v| v.max(T::zero()).min(T::one())));
    }
    Tensor::from_vec(out, &[t_len, c, h, w])
}
