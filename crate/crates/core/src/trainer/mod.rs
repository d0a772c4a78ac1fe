//! Training loop: random sequence sampling, L2 location-map loss, the
//! rectified-Adam + lookahead step, optional feedback-coefficient stability
//! projection, loss-curve records, and per-epoch checkpoints.

pub mod checkpoint;
pub mod ranger;

pub use checkpoint::Checkpoint;
pub use ranger::{ranger_step, RangerState};

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_all_frames, sample_sequences, write_loss_csv, Label, ManifestRecord, SampleMode,
    SamplerConfig,
};
use crate::diirf::project_feedback_pair;
use crate::error::{Error, Result};
use crate::model::{EulerNet, EulerNetConfig};
use crate::supervision::{
    load_depth_map, make_binary_mask, rasterize_position_map, LandmarkSet, TargetKind, TargetMap,
};
use crate::tensor::Element;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lookahead_k: u64,
    pub lookahead_alpha: f64,
    pub stability_projection: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Hard cap on optimizer steps; overrides the epoch budget when smaller.
    pub max_steps: Option<u64>,
    /// Stop once the batch loss drops below this value.
    pub early_stop_loss: Option<f64>,
    /// Randomly mirror clips (and their targets) left-right.
    pub hflip_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 16,
            epochs: 1,
            seed: 0,
            lookahead_k: 5,
            lookahead_alpha: 0.5,
            stability_projection: true,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_steps: None,
            early_stop_loss: None,
            hflip_augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.lookahead_alpha > 0.0 && self.lookahead_alpha <= 1.0) {
            return Err(Error::InvalidConfig(
                "lookahead_alpha must lie in (0, 1]".into(),
            ));
        }
        if self.lookahead_k < 1 {
            return Err(Error::InvalidConfig("lookahead_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainOutcome<T: Element> {
    pub checkpoint: Checkpoint<T>,
    pub loss_curve: Vec<(u64, f64)>,
}

/// Build the supervision target for one record at the model's map size.
pub fn target_for_record(record: &ManifestRecord, map_size: usize) -> Result<TargetMap> {
    match record.target_kind {
        TargetKind::PositionMap => match (&record.landmarks, record.label) {
            (Some(points), Label::Live) => rasterize_position_map(
                &LandmarkSet::from_contour(points.clone()),
                Label::Live,
                (map_size, map_size),
            ),
            (_, Label::Spoof) => Ok(TargetMap {
                values: vec![0.0; map_size * map_size],
                height: map_size,
                width: map_size,
                kind: TargetKind::PositionMap,
            }),
            (None, Label::Live) => Err(Error::InvalidConfig(format!(
                "record '{}' needs landmarks for live position_map supervision",
                record.video_id
            ))),
        },
        TargetKind::BinaryMask => Ok(make_binary_mask(record.label, (map_size, map_size))),
        TargetKind::DepthMap => {
            let dir = record.depth_dir.as_ref().ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "record '{}' has depth_map supervision but no depth_dir",
                    record.video_id
                ))
            })?;
            load_depth_map(&dir.join(format!("{}.pgm", record.video_id)), (map_size, map_size))
        }
    }
}

/// Per-step observer: (step number, batch loss, model after the step).
pub type StepObserver<'a, T> = &'a mut dyn FnMut(u64, f64, &EulerNet<T>);

/// Train a fresh model over the given records (the caller chooses the split).
/// Checkpoints land in `out_dir` when given, along with `loss.csv`.
pub fn train<T: Element>(
    train_config: &TrainConfig,
    model_config: &EulerNetConfig,
    records: &[ManifestRecord],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    train_with_observer(train_config, model_config, records, out_dir, None)
}

pub fn train_with_observer<T: Element>(
    train_config: &TrainConfig,
    model_config: &EulerNetConfig,
    records: &[ManifestRecord],
    out_dir: Option<&Path>,
    mut observer: Option<StepObserver<'_, T>>,
) -> Result<TrainOutcome<T>> {
    train_config.validate()?;
    model_config.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("training manifest has no records"));
    }

    let mut model = EulerNet::<T>::new(model_config.clone(), train_config.seed)?;
    let mut state = RangerState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);

    // Decode every video once and precompute its target and valid starts.
    let map_size = model_config.map_size();
    let sampler = SamplerConfig {
        length: model_config.sequence_length,
        interval: model_config.frame_interval,
        mode: SampleMode::TrainRandom,
    };
    let mut videos = Vec::with_capacity(records.len());
    for record in records {
        let frames = load_all_frames::<T>(&record.frames_dir, model_config.input_size)?;
        let starts = sample_sequences(frames.len(), &sampler);
        if starts.is_empty() {
            return Err(Error::TooShort {
                frames: frames.len(),
                needed: sampler.span(),
            });
        }
        let target = target_for_record(record, map_size)?;
        videos.push((frames, starts, target));
    }

    let steps_per_epoch = records.len().div_ceil(train_config.batch_size).max(1);
    let mut total_steps = (train_config.epochs * steps_per_epoch) as u64;
    if let Some(cap) = train_config.max_steps {
        total_steps = total_steps.min(cap);
    }

    let mut loss_curve = Vec::new();
    let inv_batch = 1.0 / train_config.batch_size as f64;
    let mut epoch = 0usize;

    for step in 1..=total_steps {
        let mut batch_loss = 0.0f64;
        for _ in 0..train_config.batch_size {
            let vid = rng.gen_range(0..videos.len());
            let (frames, starts, target) = &videos[vid];
            let indices = &starts[rng.gen_range(0..starts.len())];
            let flip = train_config.hflip_augment && rng.gen::<bool>();

            let selected: Vec<_> = indices.iter().map(|&i| frames[i].clone()).collect();
            let mut clip = crate::tensor::Tensor::stack_axis0(&selected)?;
            let mut target = target.clone();
            if flip {
                clip = flip_clip(&clip)?;
                target = target.flip_horizontal();
            }

            let pred = model.forward(&clip)?;
            let loss = model.loss(&pred, &target)?;
            let loss_value = loss.scalar_value().to_f64();
            if !loss_value.is_finite() {
                return Err(Error::NumericFailure {
                    context: format!("training loss became non-finite at step {step}"),
                });
            }
            batch_loss += loss_value * inv_batch;
            // Per-sample backward: gradients accumulate on the shared
            // parameter leaves while each sample's tape is dropped early.
            loss.scale_const(inv_batch).backward()?;
        }

        let grads = collect_grads(&model);
        ranger_step(&mut model.params, &grads, &mut state, train_config)?;
        if train_config.stability_projection {
            apply_stability_projection(&mut model, &mut state)?;
        }

        loss_curve.push((step, batch_loss));
        if let Some(obs) = observer.as_mut() {
            obs(step, batch_loss, &model);
        }

        let epoch_now = (step as usize).div_ceil(steps_per_epoch);
        if epoch_now > epoch {
            epoch = epoch_now;
            if let Some(dir) = out_dir {
                Checkpoint::capture(&model, &state, train_config)
                    .save(&dir.join(format!("checkpoint_epoch_{epoch:04}.eulckpt")))?;
            }
        }

        if let Some(stop) = train_config.early_stop_loss {
            if batch_loss < stop {
                break;
            }
        }
    }

    let checkpoint = Checkpoint::capture(&model, &state, train_config);
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join("checkpoint.eulckpt"))?;
        write_loss_csv(&dir.join("loss.csv"), &loss_curve)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        loss_curve,
    })
}

/// Gradients of every parameter after the batch's backward passes. Fresh
/// parameter tensors are created on update, so slots start clean each step.
fn collect_grads<T: Element>(model: &EulerNet<T>) -> BTreeMap<String, Vec<T>> {
    let mut grads = BTreeMap::new();
    for (name, tensor) in model.params.iter() {
        if let Some(g) = tensor.grad() {
            grads.insert(name.to_string(), g);
        }
    }
    grads
}

/// Clamp the feedback pair of every temporal filter (fast weights and the
/// lookahead slow copy) into the stability triangle. The projection is
/// idempotent and the triangle is convex, so repeated application and
/// slow/fast interpolation both stay inside.
fn apply_stability_projection<T: Element>(
    model: &mut EulerNet<T>,
    state: &mut RangerState<T>,
) -> Result<()> {
    let filter_pairs: Vec<String> = model
        .params
        .names()
        .into_iter()
        .filter_map(|name| name.strip_suffix(".a1").map(str::to_string))
        .collect();
    for base in filter_pairs {
        if !base.contains(".fcam.filter") {
            continue;
        }
        let a1_name = format!("{base}.a1");
        let a2_name = format!("{base}.a2");
        let a1 = model.params.get(&a1_name)?.data()[0].to_f64();
        let a2 = model.params.get(&a2_name)?.data()[0].to_f64();
        let (p1, p2) = project_feedback_pair(a1, a2);
        if p1 != a1 {
            model.params.replace(
                &a1_name,
                crate::tensor::Tensor::param_scalar(crate::tensor::num(p1)),
            )?;
        }
        if p2 != a2 {
            model.params.replace(
                &a2_name,
                crate::tensor::Tensor::param_scalar(crate::tensor::num(p2)),
            )?;
        }
        let s1 = state.slow.get(&a1_name).map(|v| v[0].to_f64());
        let s2 = state.slow.get(&a2_name).map(|v| v[0].to_f64());
        if let (Some(s1), Some(s2)) = (s1, s2) {
            let (q1, q2) = project_feedback_pair(s1, s2);
            state.slow.insert(a1_name, vec![crate::tensor::num(q1)]);
            state.slow.insert(a2_name, vec![crate::tensor::num(q2)]);
        }
    }
    Ok(())
}

/// Mirror a `[T,C,H,W]` clip around the vertical axis.
fn flip_clip<T: Element>(clip: &crate::tensor::Tensor<T>) -> Result<crate::tensor::Tensor<T>> {
    let [t, c, h, w] = clip.shape() else {
        return Err(Error::ShapeMismatch {
            op: "flip_clip",
            detail: format!("expected [T,C,H,W], got {:?}", clip.shape()),
        });
    };
    let (t, c, h, w) = (*t, *c, *h, *w);
    let src = clip.data();
    let mut out = vec![T::zero(); src.len()];
    for img in 0..t * c {
        for y in 0..h {
            let row = (img * h + y) * w;
            for x in 0..w {
                out[row + x] = src[row + w - 1 - x];
            }
        }
    }
    crate::tensor::Tensor::from_vec(out, clip.shape())
}
