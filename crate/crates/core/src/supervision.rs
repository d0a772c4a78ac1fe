//! Training targets: the face position map rasterized from contour landmarks,
//! the constant binary-mask alternative, and externally produced depth maps.
//!
//! A position map marks every pixel whose center lies inside the closed
//! landmark polygon with 1 on live videos; spoof videos get an all-zero map
//! (pixels outside the face are zero either way, and a spoofed face carries
//! no live region). Fill uses the even-odd rule on pixel centers; points that
//! fall exactly on a polygon edge count as inside.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{netpbm, resize_plane, Label};
use crate::error::{Error, Result};
use crate::tensor::{num, Element, Tensor};

/// What a target map represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    PositionMap,
    BinaryMask,
    DepthMap,
}

/// Ordered landmark points plus the indices forming the closed outer contour.
#[derive(Debug, Clone)]
pub struct LandmarkSet {
    /// (x, y) in normalized [0,1] image coordinates.
    pub points: Vec<[f64; 2]>,
    /// Identifier of the landmark convention the points follow.
    pub scheme: String,
    /// Indices into `points` forming the closed outer contour, in ring order.
    pub contour: Vec<usize>,
}

impl LandmarkSet {
    /// A set whose points already are the contour ring, in order.
    pub fn from_contour(points: Vec<[f64; 2]>) -> Self {
        let contour = (0..points.len()).collect();
        LandmarkSet {
            points,
            scheme: "contour-ring".into(),
            contour,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.contour.len() < 3 {
            return Err(Error::InvalidLandmarks(format!(
                "contour needs at least 3 points, got {}",
                self.contour.len()
            )));
        }
        for &idx in &self.contour {
            let Some(p) = self.points.get(idx) else {
                return Err(Error::InvalidLandmarks(format!(
                    "contour index {idx} out of range for {} points",
                    self.points.len()
                )));
            };
            if !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]) {
                return Err(Error::InvalidLandmarks(format!(
                    "point {idx} = ({}, {}) outside [0,1]",
                    p[0], p[1]
                )));
            }
        }
        Ok(())
    }

    fn ring(&self) -> Vec<[f64; 2]> {
        self.contour.iter().map(|&i| self.points[i]).collect()
    }
}

/// A supervision map at the prediction resolution.
#[derive(Debug, Clone)]
pub struct TargetMap {
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub kind: TargetKind,
}

impl TargetMap {
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|&v| num::<T>(v)).collect();
        Tensor::from_vec(data, &[self.height, self.width]).expect("target map shape")
    }

    /// Mirror the map around its vertical axis (for flip augmentation).
    pub fn flip_horizontal(&self) -> TargetMap {
        let mut values = vec![0.0; self.values.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                values[y * self.width + x] = self.values[y * self.width + (self.width - 1 - x)];
            }
        }
        TargetMap {
            values,
            ..self.clone()
        }
    }
}

/// True when `p` lies exactly on the segment from `a` to `b`.
fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if cross != 0.0 {
        return false;
    }
    let dot = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
    let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
    dot >= 0.0 && dot <= len2
}

/// Even-odd point-in-polygon test with a +x ray; edge points count as inside.
pub fn point_in_polygon(p: [f64; 2], ring: &[[f64; 2]]) -> bool {
    let n = ring.len();
    for i in 0..n {
        if on_segment(p, ring[i], ring[(i + 1) % n]) {
            return true;
        }
    }
    let mut inside = false;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x_cross = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Rasterize the face position map at `(height, width)`. Live maps are 1
/// inside the contour polygon and 0 elsewhere; spoof maps are all zero.
pub fn rasterize_position_map(
    landmarks: &LandmarkSet,
    label: Label,
    size: (usize, usize),
) -> Result<TargetMap> {
    landmarks.validate()?;
    let (height, width) = size;
    if height < 4 || width < 4 {
        return Err(Error::InvalidConfig(format!(
            "target map size {height}x{width} below minimum 4x4"
        )));
    }
    let mut values = vec![0.0; height * width];
    if label == Label::Live {
        let ring = landmarks.ring();
        for y in 0..height {
            let py = (y as f64 + 0.5) / height as f64;
            for x in 0..width {
                let px = (x as f64 + 0.5) / width as f64;
                if point_in_polygon([px, py], &ring) {
                    values[y * width + x] = 1.0;
                }
            }
        }
    }
    Ok(TargetMap {
        values,
        height,
        width,
        kind: TargetKind::PositionMap,
    })
}

/// Constant all-1 (live) or all-0 (spoof) mask.
pub fn make_binary_mask(label: Label, size: (usize, usize)) -> TargetMap {
    let (height, width) = size;
    let fill = match label {
        Label::Live => 1.0,
        Label::Spoof => 0.0,
    };
    TargetMap {
        values: vec![fill; height * width],
        height,
        width,
        kind: TargetKind::BinaryMask,
    }
}

/// Load an 8-bit grayscale PGM depth map, rescale to [0,1], and resize to
/// `size` bilinearly.
pub fn load_depth_map(path: &Path, size: (usize, usize)) -> Result<TargetMap> {
    let (w, h, gray) = netpbm::read_pgm(path)?;
    let plane: Vec<f64> = gray.iter().map(|&v| v as f64 / 255.0).collect();
    let (height, width) = size;
    let values = resize_plane(&plane, h, w, height, width);
    Ok(TargetMap {
        values,
        height,
        width,
        kind: TargetKind::DepthMap,
    })
}
