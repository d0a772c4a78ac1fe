//! Synthetic face-like clip generator for desk-scale training and testing.
//!
//! Live clips contain a bright soft-edged ellipse on a dark background with a
//! small sinusoidal translation and a brightness flicker inside the motion
//! passband, plus a ring of contour landmarks. Spoof clips reuse the same
//! ellipse either perfectly static (print analogue) or with per-frame noise
//! and a fixed grating overlay (replay analogue). Everything is a pure
//! function of the seed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{frame_path, netpbm, save_manifest, Label, ManifestRecord, Split};
use crate::error::{Error, Result};
use crate::supervision::TargetKind;

pub const SYNTH_FRAME_SIZE: usize = 256;
pub const SYNTH_FRAMES_PER_CLIP: usize = 12;
const SYNTH_FPS: f64 = 30.0;
/// Flicker/translation frequency (Hz); inside the default magnification band.
const MOTION_HZ: f64 = 1.0;
/// Phase offset keeping the flicker strictly positive over a short clip, so
/// that no live frame coincides with its static print counterpart.
const MOTION_PHASE: f64 = 0.35;

struct ClipGeometry {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    bg: f64,
    bg_slope: f64,
    brightness: f64,
}

fn draw_geometry(rng: &mut ChaCha8Rng) -> ClipGeometry {
    ClipGeometry {
        cx: 0.42 + rng.gen::<f64>() * 0.16,
        cy: 0.42 + rng.gen::<f64>() * 0.16,
        rx: 0.16 + rng.gen::<f64>() * 0.06,
        ry: 0.22 + rng.gen::<f64>() * 0.08,
        bg: 0.10 + rng.gen::<f64>() * 0.08,
        bg_slope: rng.gen::<f64>() * 0.06,
        brightness: 0.62 + rng.gen::<f64>() * 0.10,
    }
}

/// Soft ellipse coverage in [0,1]; 1 well inside, 0 outside, linear ramp at
/// the rim so the edge is a few pixels wide.
fn coverage(geom: &ClipGeometry, x: f64, y: f64, dx: f64, dy: f64) -> f64 {
    let nx = (x - geom.cx - dx) / geom.rx;
    let ny = (y - geom.cy - dy) / geom.ry;
    let d = nx * nx + ny * ny;
    ((1.0 - d) / 0.15).clamp(0.0, 1.0)
}

enum ClipKind {
    Live,
    SpoofPrint,
    SpoofReplay,
}

fn render_clip(
    dir: &Path,
    kind: &ClipKind,
    geom: &ClipGeometry,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let s = SYNTH_FRAME_SIZE;
    let omega = 2.0 * std::f64::consts::PI * MOTION_HZ / SYNTH_FPS;

    // Print clips render one frame and repeat it bit-for-bit.
    let mut static_frame: Option<Vec<u8>> = None;

    for fi in 0..SYNTH_FRAMES_PER_CLIP {
        if let (ClipKind::SpoofPrint, Some(frame)) = (&kind, &static_frame) {
            netpbm::write_ppm(&frame_path(dir, fi), s, s, frame)?;
            continue;
        }
        let phase = omega * fi as f64 + MOTION_PHASE;
        let (dx, dy, flicker) = match kind {
            ClipKind::Live => (
                (1.5 / s as f64) * phase.sin(),
                (0.8 / s as f64) * phase.cos(),
                1.0 + 0.12 * phase.sin(),
            ),
            ClipKind::SpoofPrint | ClipKind::SpoofReplay => (0.0, 0.0, 1.0),
        };
        let mut rgb = Vec::with_capacity(s * s * 3);
        for py in 0..s {
            let y = (py as f64 + 0.5) / s as f64;
            for px in 0..s {
                let x = (px as f64 + 0.5) / s as f64;
                let mut v = geom.bg + geom.bg_slope * y
                    + geom.brightness * flicker * coverage(geom, x, y, dx, dy);
                if matches!(kind, ClipKind::SpoofReplay) {
                    let grating = 0.05
                        * (2.0 * std::f64::consts::PI * (0.35 * px as f64 + 0.18 * py as f64)
                            / 4.0)
                            .sin();
                    let noise = (rng.gen::<f64>() - 0.5) * 0.12;
                    v += grating + noise;
                }
                let q = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                // Gray clip: identical channels keep files small to diff.
                rgb.extend_from_slice(&[q, q, q]);
            }
        }
        if matches!(kind, ClipKind::SpoofPrint) {
            static_frame = Some(rgb.clone());
        }
        netpbm::write_ppm(&frame_path(dir, fi), s, s, &rgb)?;
    }
    Ok(())
}

/// Landmark ring: a polygon inscribed in the ellipse contour.
fn landmark_ring(geom: &ClipGeometry) -> Vec<[f64; 2]> {
    let n = 16;
    (0..n)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            [
                (geom.cx + geom.rx * theta.cos()).clamp(0.0, 1.0),
                (geom.cy + geom.ry * theta.sin()).clamp(0.0, 1.0),
            ]
        })
        .collect()
}

fn split_for(index: usize) -> Split {
    // 3:1:1 rotation per class.
    match index % 5 {
        0 | 1 | 2 => Split::Train,
        3 => Split::Dev,
        _ => Split::Test,
    }
}

/// Generate `n_live` live and `n_spoof` spoof clips under `out_dir` and write
/// `manifest.jsonl` there. Returns the manifest path. Deterministic per seed:
/// the same seed produces bit-identical frame files.
pub fn synth_dataset(seed: u64, n_live: usize, n_spoof: usize, out_dir: &Path) -> Result<PathBuf> {
    if n_live < 1 || n_spoof < 1 {
        return Err(Error::InvalidConfig(
            "synth_dataset needs at least one clip per class".into(),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();

    for i in 0..n_live {
        let video_id = format!("live_{i:03}");
        let geom = draw_geometry(&mut rng);
        let dir = out_dir.join(&video_id);
        render_clip(&dir, &ClipKind::Live, &geom, &mut rng)?;
        records.push(ManifestRecord {
            video_id: video_id.clone(),
            frames_dir: dir,
            label: Label::Live,
            split: split_for(i),
            landmarks: Some(landmark_ring(&geom)),
            target_kind: TargetKind::PositionMap,
            depth_dir: None,
        });
    }
    for i in 0..n_spoof {
        let video_id = format!("spoof_{i:03}");
        let geom = draw_geometry(&mut rng);
        let kind = if i % 2 == 0 {
            ClipKind::SpoofPrint
        } else {
            ClipKind::SpoofReplay
        };
        let dir = out_dir.join(&video_id);
        render_clip(&dir, &kind, &geom, &mut rng)?;
        records.push(ManifestRecord {
            video_id: video_id.clone(),
            frames_dir: dir,
            label: Label::Spoof,
            split: split_for(i),
            landmarks: None,
            target_kind: TargetKind::PositionMap,
            depth_dir: None,
        });
    }

    let manifest_path = out_dir.join("manifest.jsonl");
    save_manifest(&manifest_path, &records)?;
    Ok(manifest_path)
}
