//! Dataset manifests, frame I/O, sequence sampling, and the synthetic clip
//! generator used by the desk-scale test suites.
//!
//! A dataset is a directory of per-video frame folders plus a JSON Lines
//! manifest, one record per video. Frames are binary PPM files named
//! `frame_%06d.ppm`, zero-based.

pub mod netpbm;
mod synth;

pub use synth::synth_dataset;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supervision::TargetKind;
use crate::tensor::{bilinear_axis, num, Element, Tensor};

/// Ground-truth class of a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Live,
    Spoof,
}

/// Dataset partition a video belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One manifest line: a video, its label and split, and how to supervise it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub video_id: String,
    pub frames_dir: PathBuf,
    pub label: Label,
    pub split: Split,
    /// Ordered outer-contour landmark points in normalized [0,1] coordinates.
    /// Required when `target_kind` is `position_map` and the label is live.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<Vec<[f64; 2]>>,
    pub target_kind: TargetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_dir: Option<PathBuf>,
}

impl ManifestRecord {
    pub fn validate(&self) -> Result<()> {
        if self.target_kind == TargetKind::PositionMap
            && self.label == Label::Live
            && self.landmarks.is_none()
        {
            return Err(Error::InvalidConfig(format!(
                "record '{}' needs landmarks for live position_map supervision",
                self.video_id
            )));
        }
        Ok(())
    }
}

/// Read a JSON Lines manifest; blank lines are ignored.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", lineno + 1),
        })?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Write a JSON Lines manifest, one record per line.
pub fn save_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record).expect("manifest record serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// How to draw frame-index sequences from a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Every valid start, for uniform random draws during training.
    TrainRandom,
    /// Greedy non-overlapping packing from frame 0, for evaluation.
    EvalNonOverlap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub length: usize,
    pub interval: usize,
    pub mode: SampleMode,
}

impl SamplerConfig {
    pub fn eval(length: usize, interval: usize) -> Self {
        SamplerConfig {
            length,
            interval,
            mode: SampleMode::EvalNonOverlap,
        }
    }

    pub fn train(length: usize, interval: usize) -> Self {
        SamplerConfig {
            length,
            interval,
            mode: SampleMode::TrainRandom,
        }
    }

    /// Number of frames covered by one sequence: (length-1)*interval + 1.
    pub fn span(&self) -> usize {
        (self.length - 1) * self.interval + 1
    }
}

/// Enumerate sequences over a video of `frame_count` frames. A sequence
/// starting at `s` covers indices `s, s+interval, ...` (`length` of them).
///
/// Evaluation mode packs greedily from 0 with stride equal to the span, so
/// returned sequences cover pairwise disjoint index ranges. Training mode
/// returns every valid start; callers draw uniformly from it. Videos shorter
/// than one span yield an empty list.
pub fn sample_sequences(frame_count: usize, config: &SamplerConfig) -> Vec<Vec<usize>> {
    let span = config.span();
    if frame_count < span {
        return Vec::new();
    }
    let stride = match config.mode {
        SampleMode::EvalNonOverlap => span,
        SampleMode::TrainRandom => 1,
    };
    (0..=frame_count - span)
        .step_by(stride)
        .map(|s| (0..config.length).map(|i| s + i * config.interval).collect())
        .collect()
}

/// Path of frame `index` inside a frame directory.
pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:06}.ppm"))
}

/// Count consecutive `frame_%06d.ppm` files starting from index 0.
pub fn count_frames(dir: &Path) -> Result<usize> {
    if !dir.is_dir() {
        return Err(Error::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory"),
        });
    }
    let mut n = 0;
    while frame_path(dir, n).is_file() {
        n += 1;
    }
    Ok(n)
}

/// Bilinear resize of one channel plane with half-pixel centers.
pub(crate) fn resize_plane(src: &[f64], h_in: usize, w_in: usize, h_out: usize, w_out: usize) -> Vec<f64> {
    if h_in == h_out && w_in == w_out {
        return src.to_vec();
    }
    let ys = bilinear_axis(h_out, h_in);
    let xs = bilinear_axis(w_out, w_in);
    let mut out = Vec::with_capacity(h_out * w_out);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w_in + x0] + fx * (src[y0 * w_in + x1] - src[y0 * w_in + x0]);
            let bot = src[y1 * w_in + x0] + fx * (src[y1 * w_in + x1] - src[y1 * w_in + x0]);
            out.push(top + fy * (bot - top));
        }
    }
    out
}

/// Decode one frame file into a `[3,size,size]` tensor in [0,1]: 8-bit values
/// are scaled, the frame is center-cropped to a square, then resized.
pub fn load_frame<T: Element>(path: &Path, size: usize) -> Result<Tensor<T>> {
    let (w, h, rgb) = netpbm::read_ppm(path)?;
    let side = w.min(h);
    let x_off = (w - side) / 2;
    let y_off = (h - side) / 2;
    let mut planes = Vec::with_capacity(3 * size * size);
    for ch in 0..3 {
        let mut plane = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let idx = ((y + y_off) * w + (x + x_off)) * 3 + ch;
                plane.push(rgb[idx] as f64 / 255.0);
            }
        }
        let resized = resize_plane(&plane, side, side, size, size);
        planes.extend(resized.into_iter().map(num::<T>));
    }
    Tensor::from_vec(planes, &[3, size, size])
}

/// Load the frames at `indices` from a directory into a `[T,3,size,size]` clip.
pub fn load_frames<T: Element>(dir: &Path, indices: &[usize], size: usize) -> Result<Tensor<T>> {
    let frames: Vec<Tensor<T>> = indices
        .iter()
        .map(|&i| load_frame(&frame_path(dir, i), size))
        .collect::<Result<_>>()?;
    Tensor::stack_axis0(&frames)
}

/// Load every frame of a video once; callers assemble clips from slices.
pub fn load_all_frames<T: Element>(dir: &Path, size: usize) -> Result<Vec<Tensor<T>>> {
    let n = count_frames(dir)?;
    (0..n).map(|i| load_frame(&frame_path(dir, i), size)).collect()
}

/// Append a `(step,loss)` curve to a CSV file with a header row.
pub fn write_loss_csv(path: &Path, curve: &[(u64, f64)]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "step,loss").expect("in-memory write");
    for (step, loss) in curve {
        writeln!(out, "{step},{loss}").expect("in-memory write");
    }
    fs::write(path, out).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_eval() -> SamplerConfig {
        SamplerConfig::eval(4, 3)
    }

    #[test]
    fn ten_frames_yield_one_sequence() {
        assert_eq!(sample_sequences(10, &default_eval()), vec![vec![0, 3, 6, 9]]);
    }

    #[test]
    fn nine_frames_yield_nothing() {
        assert!(sample_sequences(9, &default_eval()).is_empty());
    }

    #[test]
    fn twenty_frames_yield_two_disjoint_sequences() {
        // Greedy stride-10 enumeration: starts 0 and 10.
        assert_eq!(
            sample_sequences(20, &default_eval()),
            vec![vec![0, 3, 6, 9], vec![10, 13, 16, 19]]
        );
    }

    #[test]
    fn eval_sequences_are_disjoint_ordered_and_in_range() {
        for n in [10usize, 25, 47, 100] {
            let seqs = sample_sequences(n, &default_eval());
            let mut last_end = None;
            for seq in &seqs {
                assert!(seq.iter().all(|&i| i < n));
                if let Some(prev) = last_end {
                    assert!(seq[0] > prev, "ranges overlap at {n} frames");
                }
                last_end = Some(*seq.last().expect("non-empty sequence"));
            }
        }
    }

    #[test]
    fn train_mode_lists_every_valid_start() {
        let seqs = sample_sequences(12, &SamplerConfig::train(4, 3));
        let starts: Vec<usize> = seqs.iter().map(|s| s[0]).collect();
        assert_eq!(starts, vec![0, 1, 2]);
    }

    #[test]
    fn batch_accounting_matches_stated_protocol() {
        // 16 sequences of 4 frames each = 64 images per gradient update.
        let config = SamplerConfig::train(4, 3);
        let images_per_update = 16 * config.length;
        assert_eq!(images_per_update, 64);
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let records = vec![
            ManifestRecord {
                video_id: "vid0".into(),
                frames_dir: "vid0".into(),
                label: Label::Live,
                split: Split::Train,
                landmarks: Some(vec![[0.2, 0.2], [0.8, 0.2], [0.5, 0.9]]),
                target_kind: TargetKind::PositionMap,
                depth_dir: None,
            },
            ManifestRecord {
                video_id: "vid1".into(),
                frames_dir: "vid1".into(),
                label: Label::Spoof,
                split: Split::Test,
                landmarks: None,
                target_kind: TargetKind::BinaryMask,
                depth_dir: None,
            },
        ];
        save_manifest(&path, &records).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].video_id, "vid0");
        assert_eq!(loaded[1].label, Label::Spoof);
        // Parse -> serialize -> parse is a fixed point.
        let path2 = dir.path().join("manifest2.jsonl");
        save_manifest(&path2, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn live_position_map_without_landmarks_is_invalid() {
        let record = ManifestRecord {
            video_id: "bad".into(),
            frames_dir: "bad".into(),
            label: Label::Live,
            split: Split::Train,
            landmarks: None,
            target_kind: TargetKind::PositionMap,
            depth_dir: None,
        };
        assert!(record.validate().is_err());
    }

    #[test]
    fn load_frame_scales_and_centers() {
        let dir = tempfile::tempdir().unwrap();
        // Solid mid-gray square frame: tensor must be constant 128/255.
        let p = dir.path().join("frame_000000.ppm");
        netpbm::write_ppm(&p, 8, 8, &[128u8; 8 * 8 * 3]).unwrap();
        let t: Tensor<f64> = load_frame(&p, 8).unwrap();
        for &v in t.data() {
            assert!((v - 128.0 / 255.0).abs() < 1e-12);
        }

        // Non-square 12x8: crop takes the centered 8-wide window [2, 10).
        // A marker at x=0 lands outside the crop, one at x=4 at cropped x=2.
        let mut rgb = vec![0u8; 12 * 8 * 3];
        rgb[(0 * 12 + 0) * 3] = 255;
        rgb[(1 * 12 + 4) * 3] = 200;
        let p2 = dir.path().join("frame_000001.ppm");
        netpbm::write_ppm(&p2, 12, 8, &rgb).unwrap();
        let t2: Tensor<f64> = load_frame(&p2, 8).unwrap();
        let red = &t2.data()[..64];
        assert!(red[0] == 0.0, "marker outside crop must vanish");
        assert!((red[8 + 2] - 200.0 / 255.0).abs() < 1e-12, "marker at cropped x=2");
    }

    #[test]
    fn load_frame_resize_matches_bilinear_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let (w, h) = (16usize, 16usize);
        let mut rgb = vec![0u8; w * h * 3];
        for y in 0..h {
            for x in 0..w {
                let v = (x * 16 + y) as u8;
                for c in 0..3 {
                    rgb[(y * w + x) * 3 + c] = v;
                }
            }
        }
        let p = dir.path().join("frame_000000.ppm");
        netpbm::write_ppm(&p, w, h, &rgb).unwrap();
        let t: Tensor<f64> = load_frame(&p, 8).unwrap();
        // Direct bilinear evaluation at probe pixels.
        for &(oy, ox) in &[(0usize, 0usize), (3, 5), (7, 7), (4, 0), (2, 6)] {
            let sy = (oy as f64 + 0.5) * 2.0 - 0.5;
            let sx = (ox as f64 + 0.5) * 2.0 - 0.5;
            let (y0, x0) = (sy.floor().max(0.0) as usize, sx.floor().max(0.0) as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - sy.floor(), sx - sx.floor());
            let v = |yy: usize, xx: usize| rgb[(yy * w + xx) * 3] as f64 / 255.0;
            let expect = v(y0, x0) * (1.0 - fy) * (1.0 - fx)
                + v(y0, x1) * (1.0 - fy) * fx
                + v(y1, x0) * fy * (1.0 - fx)
                + v(y1, x1) * fy * fx;
            let got = t.data()[oy * 8 + ox];
            assert!((got - expect).abs() < 1e-12, "({oy},{ox}): {got} vs {expect}");
        }
    }

    #[test]
    fn missing_frame_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_frames::<f64>(dir.path(), &[0, 3], 8).unwrap_err();
        assert!(err.to_string().contains("frame_000000.ppm"), "{err}");
    }
}
