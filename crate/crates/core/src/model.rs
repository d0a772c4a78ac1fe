//! EulerNet: a shared-weight per-frame backbone over short frame sequences
//! with temporal attention between levels, residual pyramid fusion, and a
//! sigmoid location-map head.
//!
//! Backbone: a stem conv at full resolution, then three levels of
//! {convs_per_level x (conv3x3 + rectifier)} -> temporal attention ->
//! 2x max pooling, producing feature maps at 1/2, 1/4, and 1/8 of the input
//! extent. The three levels are fused by the residual pyramid and a final
//! 3x3 conv + sigmoid yields one location map per frame. The video-level
//! score is the mean over frames and map pixels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{count_frames, load_frames, sample_sequences, SamplerConfig};
use crate::error::{Error, Result};
use crate::fcam::{fcam_forward, FcamLayer};
use crate::params::ParamStore;
use crate::pyramid::{pyramid_fuse, FeatureLevels};
use crate::supervision::TargetMap;
use crate::tensor::{num, Element, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EulerNetConfig {
    /// Channels produced by the stem conv.
    pub stem_channels: usize,
    /// Channels of the three backbone levels. Adjacent counts must be equal
    /// so the pyramid residual subtraction is well-typed.
    pub level_channels: [usize; 3],
    /// Conv+rectifier pairs per backbone level.
    pub convs_per_level: usize,
    /// Output channels of each residual conv in the pyramid.
    pub residual_conv_channels: usize,
    /// Frames per input sequence.
    pub sequence_length: usize,
    /// Index stride between consecutive frames of a sequence.
    pub frame_interval: usize,
    /// Square input extent; must be divisible by 8.
    pub input_size: usize,
}

impl Default for EulerNetConfig {
    fn default() -> Self {
        EulerNetConfig {
            stem_channels: 16,
            level_channels: [16, 16, 16],
            convs_per_level: 2,
            residual_conv_channels: 8,
            sequence_length: 4,
            frame_interval: 3,
            input_size: 256,
        }
    }
}

impl EulerNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.level_channels[0] != self.level_channels[1]
            || self.level_channels[1] != self.level_channels[2]
        {
            return Err(Error::InvalidConfig(format!(
                "adjacent level channel counts must be equal for the residual \
                 subtraction, got {:?}",
                self.level_channels
            )));
        }
        if self.input_size % 8 != 0 || self.input_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "input_size must be a positive multiple of 8, got {}",
                self.input_size
            )));
        }
        if self.sequence_length == 0 || self.frame_interval == 0 {
            return Err(Error::InvalidConfig(
                "sequence_length and frame_interval must be at least 1".into(),
            ));
        }
        if self.stem_channels == 0 || self.convs_per_level == 0 || self.residual_conv_channels == 0
        {
            return Err(Error::InvalidConfig(
                "channel counts and convs_per_level must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Side length of the predicted location map (input / 8).
    pub fn map_size(&self) -> usize {
        self.input_size / 8
    }

    pub fn sampler(&self, mode_train: bool) -> SamplerConfig {
        if mode_train {
            SamplerConfig::train(self.sequence_length, self.frame_interval)
        } else {
            SamplerConfig::eval(self.sequence_length, self.frame_interval)
        }
    }

    /// Minimum frames a video needs for one sequence.
    pub fn min_frames(&self) -> usize {
        (self.sequence_length - 1) * self.frame_interval + 1
    }
}

/// Per-sequence network output.
#[derive(Debug, Clone)]
pub struct PredictionOutput<T: Element> {
    /// `[T, M, M]` location maps, tape-connected for training.
    pub per_frame_maps: Tensor<T>,
    /// Mean over frames of the per-frame maps, `M*M` values.
    pub fused_map: Vec<T>,
    pub map_size: usize,
    /// Mean of the fused map: the live score in (0,1).
    pub score: T,
}

impl<T: Element> PredictionOutput<T> {
    /// Assemble the fused map and score from per-frame maps.
    pub fn from_maps(per_frame_maps: Tensor<T>, map_size: usize) -> Self {
        let t_len = per_frame_maps.shape()[0];
        let plane = map_size * map_size;
        let mut fused = vec![T::zero(); plane];
        for fr in 0..t_len {
            for (i, f) in fused.iter_mut().enumerate() {
                *f = *f + per_frame_maps.data()[fr * plane + i];
            }
        }
        let inv_t = num::<T>(1.0 / t_len as f64);
        for f in fused.iter_mut() {
            *f = *f * inv_t;
        }
        let mut score = T::zero();
        for &v in &fused {
            score = score + v;
        }
        score = score * num::<T>(1.0 / plane as f64);
        PredictionOutput {
            per_frame_maps,
            fused_map: fused,
            map_size,
            score,
        }
    }
}

/// Mean activation heatmaps of the stages an operator inspects: the three
/// pooled levels, the fusion output, and the predicted map.
pub struct ActivationDump<T: Element> {
    /// (name, height, width, values), in network order.
    pub stages: Vec<(String, usize, usize, Vec<T>)>,
    pub score: T,
}

pub struct EulerNet<T: Element> {
    pub config: EulerNetConfig,
    pub params: ParamStore<T>,
}

fn conv_init<T: Element>(
    cout: usize,
    cin: usize,
    rng: &mut ChaCha8Rng,
) -> (Tensor<T>, Tensor<T>) {
    let fan_in = cin * 9;
    let bound = (2.0 / fan_in as f64).sqrt() * 1.732_050_8;
    let weight: Vec<T> = (0..cout * cin * 9)
        .map(|_| num((rng.gen::<f64>() * 2.0 - 1.0) * bound))
        .collect();
    (
        Tensor::param_from_vec(weight, &[cout, cin, 3, 3]).expect("conv weight shape"),
        Tensor::param_from_vec(vec![T::zero(); cout], &[cout]).expect("conv bias shape"),
    )
}

impl<T: Element> EulerNet<T> {
    /// Build a freshly initialized network. Initialization order is fixed, so
    /// identical seeds give identical parameters.
    pub fn new(config: EulerNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();

        let (w, b) = conv_init::<T>(config.stem_channels, 3, &mut rng);
        params.insert("stem.weight", w);
        params.insert("stem.bias", b);

        let mut in_ch = config.stem_channels;
        for (lvl, &out_ch) in config.level_channels.iter().enumerate() {
            let lvl = lvl + 1;
            for j in 0..config.convs_per_level {
                let cin = if j == 0 { in_ch } else { out_ch };
                let (w, b) = conv_init::<T>(out_ch, cin, &mut rng);
                params.insert(format!("level{lvl}.conv{j}.weight"), w);
                params.insert(format!("level{lvl}.conv{j}.bias"), b);
            }
            let fcam = FcamLayer::<T>::init(out_ch, &mut rng);
            params.insert(format!("level{lvl}.fcam.squash.weight"), fcam.squash_weight);
            params.insert(format!("level{lvl}.fcam.squash.bias"), fcam.squash_bias);
            params.insert(format!("level{lvl}.fcam.filter.b0"), fcam.filter.b0);
            params.insert(format!("level{lvl}.fcam.filter.b1"), fcam.filter.b1);
            params.insert(format!("level{lvl}.fcam.filter.b2"), fcam.filter.b2);
            params.insert(format!("level{lvl}.fcam.filter.a1"), fcam.filter.a1);
            params.insert(format!("level{lvl}.fcam.filter.a2"), fcam.filter.a2);
            in_ch = out_ch;
        }

        let rc = config.residual_conv_channels;
        let (w, b) = conv_init::<T>(rc, config.level_channels[0], &mut rng);
        params.insert("pyramid.conv128.weight", w);
        params.insert("pyramid.conv128.bias", b);
        let (w, b) = conv_init::<T>(rc, config.level_channels[1], &mut rng);
        params.insert("pyramid.conv64.weight", w);
        params.insert("pyramid.conv64.bias", b);

        let fused_ch = 2 * rc + config.level_channels[2];
        let (w, b) = conv_init::<T>(1, fused_ch, &mut rng);
        params.insert("head.weight", w);
        params.insert("head.bias", b);

        Ok(EulerNet { config, params })
    }

    pub fn from_parts(config: EulerNetConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        Ok(EulerNet { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn fcam_layer(&self, lvl: usize) -> Result<FcamLayer<T>> {
        Ok(FcamLayer {
            squash_weight: self.params.get(&format!("level{lvl}.fcam.squash.weight"))?.clone(),
            squash_bias: self.params.get(&format!("level{lvl}.fcam.squash.bias"))?.clone(),
            filter: crate::diirf::BiquadParams {
                b0: self.params.get(&format!("level{lvl}.fcam.filter.b0"))?.clone(),
                b1: self.params.get(&format!("level{lvl}.fcam.filter.b1"))?.clone(),
                b2: self.params.get(&format!("level{lvl}.fcam.filter.b2"))?.clone(),
                a1: self.params.get(&format!("level{lvl}.fcam.filter.a1"))?.clone(),
                a2: self.params.get(&format!("level{lvl}.fcam.filter.a2"))?.clone(),
            },
        })
    }

    fn check_clip(&self, clip: &Tensor<T>) -> Result<()> {
        let s = self.config.input_size;
        let t = self.config.sequence_length;
        match clip.shape() {
            [ct, 3, ch, cw] if *ct == t && *ch == s && *cw == s => Ok(()),
            other => Err(Error::ShapeMismatch {
                op: "EulerNet::forward",
                detail: format!("expected [{t},3,{s},{s}], got {other:?}"),
            }),
        }
    }

    /// Run the backbone and return (level outputs after pooling, fused stack).
    fn backbone(&self, clip: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let mut x = clip.conv2d_3x3(
            self.params.get("stem.weight")?,
            self.params.get("stem.bias")?,
        )?;
        let mut levels = Vec::with_capacity(3);
        for lvl in 1..=3 {
            for j in 0..self.config.convs_per_level {
                x = x
                    .conv2d_3x3(
                        self.params.get(&format!("level{lvl}.conv{j}.weight"))?,
                        self.params.get(&format!("level{lvl}.conv{j}.bias"))?,
                    )?
                    .relu();
            }
            x = fcam_forward(&x, &self.fcam_layer(lvl)?)?;
            x = x.max_pool2()?;
            levels.push(x.clone());
        }
        let fused = pyramid_fuse(
            &FeatureLevels {
                f128: levels[0].clone(),
                f64: levels[1].clone(),
                f32: levels[2].clone(),
            },
            self.params.get("pyramid.conv128.weight")?,
            self.params.get("pyramid.conv128.bias")?,
            self.params.get("pyramid.conv64.weight")?,
            self.params.get("pyramid.conv64.bias")?,
        )?;
        Ok((levels, fused))
    }

    fn head(&self, fused: &Tensor<T>) -> Result<Tensor<T>> {
        let maps = fused
            .conv2d_3x3(self.params.get("head.weight")?, self.params.get("head.bias")?)?
            .sigmoid();
        let m = self.config.map_size();
        maps.reshape(&[self.config.sequence_length, m, m])
    }

    /// Forward one clip of shape `[T,3,S,S]` with pixel values in [0,1].
    pub fn forward(&self, clip: &Tensor<T>) -> Result<PredictionOutput<T>> {
        self.check_clip(clip)?;
        let (_, fused) = self.backbone(clip)?;
        let maps = self.head(&fused)?;
        Ok(PredictionOutput::from_maps(maps, self.config.map_size()))
    }

    /// Forward pass that also returns stage heatmaps (mean absolute
    /// activation over frames and channels) for operator inspection.
    pub fn forward_with_activations(
        &self,
        clip: &Tensor<T>,
    ) -> Result<(PredictionOutput<T>, ActivationDump<T>)> {
        self.check_clip(clip)?;
        let (levels, fused) = self.backbone(clip)?;
        let maps = self.head(&fused)?;
        let pred = PredictionOutput::from_maps(maps, self.config.map_size());

        let mean_map = |t: &Tensor<T>| -> (usize, usize, Vec<T>) {
            let [n, c, h, w] = t.shape() else { unreachable!("backbone outputs are 4-d") };
            let plane = h * w;
            let mut acc = vec![T::zero(); plane];
            for img in 0..n * c {
                for (a, &v) in acc.iter_mut().zip(&t.data()[img * plane..][..plane]) {
                    *a = *a + v;
                }
            }
            let inv = num::<T>(1.0 / (n * c) as f64);
            for a in acc.iter_mut() {
                *a = *a * inv;
            }
            (*h, *w, acc)
        };

        let mut stages = Vec::with_capacity(5);
        for (i, level) in levels.iter().enumerate() {
            let (h, w, values) = mean_map(level);
            stages.push((format!("pool{}", i + 1), h, w, values));
        }
        let (h, w, values) = mean_map(&fused);
        stages.push(("fusion".into(), h, w, values));
        let m = pred.map_size;
        stages.push(("predicted".into(), m, m, pred.fused_map.clone()));

        let score = pred.score;
        Ok((pred, ActivationDump { stages, score }))
    }

    /// Mean over frames of the mean squared error against a shared target.
    pub fn loss(&self, pred: &PredictionOutput<T>, target: &TargetMap) -> Result<Tensor<T>> {
        let m = self.config.map_size();
        if target.height != m || target.width != m {
            return Err(Error::ShapeMismatch {
                op: "EulerNet::loss",
                detail: format!(
                    "target is {}x{}, predictions are {m}x{m}",
                    target.height, target.width
                ),
            });
        }
        let t_len = self.config.sequence_length;
        let mut tiled = Vec::with_capacity(t_len * m * m);
        for _ in 0..t_len {
            tiled.extend(target.values.iter().map(|&v| num::<T>(v)));
        }
        let target_tensor = Tensor::from_vec(tiled, &[t_len, m, m])?;
        let diff = pred.per_frame_maps.sub(&target_tensor)?;
        Ok(diff.mul(&diff)?.mean())
    }

    /// Score a whole video directory: greedy non-overlapping sequences, one
    /// forward pass each, arithmetic mean of sequence scores.
    pub fn predict_video(&self, frames_dir: &Path) -> Result<f64> {
        let n = count_frames(frames_dir)?;
        let sequences = sample_sequences(n, &self.config.sampler(false));
        if sequences.is_empty() {
            return Err(Error::TooShort {
                frames: n,
                needed: self.config.min_frames(),
            });
        }
        let mut total = 0.0;
        let count = sequences.len();
        for indices in sequences {
            let clip = load_frames::<T>(frames_dir, &indices, self.config.input_size)?;
            total += self.forward(&clip)?.score.to_f64();
        }
        Ok(total / count as f64)
    }
}
