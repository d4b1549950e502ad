//! Side-camera perception: a color-segmentation pipeline over rendered images and an
//! analytic oracle producing the same measurements straight from the geometry.
//!
//! Image coordinates are continuous pixel units: column `u` grows to the right (world
//! `y`), row `v` grows downward (world `-z`). Pixel `(c, r)` covers `[c, c+1) x [r, r+1)`.

mod raster;
mod rect;

use serde::{Deserialize, Serialize};

use crate::scene::{CameraConfig, SceneConfig};
use crate::sim::SimState;

pub use raster::{largest_component, render, render_pose, render_scene, Pixel, RasterImage};
pub use rect::{min_area_rect, refine_rect, Degenerate, RotatedRect};

/// Where the peg bottom sits relative to the hole centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnHole {
    Left,
    On,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObservation {
    /// Centre of the fitted peg rectangle, `(u, v)` in pixels.
    pub peg_center: (f64, f64),
    /// Column of the rectangle's bottom-right corner.
    pub peg_bottom_edge_y: f64,
    /// Column of the midpoint of the rectangle's bottom side.
    pub peg_bottom_center_y: f64,
    /// Degrees, positive when the top leans left.
    pub peg_tilt: f64,
    /// Length of the rectangle's long side in pixels.
    pub peg_length: f64,
    pub hole_center_y: f64,
    pub hole_width: f64,
    pub peg_on_hole: OnHole,
    pub peg_valid: bool,
    pub hole_valid: bool,
}

impl SceneObservation {
    pub fn invalid() -> Self {
        Self {
            peg_center: (f64::NAN, f64::NAN),
            peg_bottom_edge_y: f64::NAN,
            peg_bottom_center_y: f64::NAN,
            peg_tilt: f64::NAN,
            peg_length: f64::NAN,
            hole_center_y: f64::NAN,
            hole_width: f64::NAN,
            peg_on_hole: OnHole::On,
            peg_valid: false,
            hole_valid: false,
        }
    }

    pub fn valid(&self) -> bool {
        self.peg_valid && self.hole_valid
    }
}

/// Maps world `(y, z)` to continuous pixel coordinates.
pub fn world_to_pixel(camera: &CameraConfig, y: f64, z: f64) -> (f64, f64) {
    (
        (y - camera.origin_y) * camera.scale,
        (camera.origin_z - z) * camera.scale,
    )
}

/// Fraction of the hole width used as the on-hole dead band on each side.
const DEAD_BAND_FRACTION: f64 = 0.25;

fn classify(bottom_center: f64, hole_center: f64, hole_width: f64) -> OnHole {
    let band = DEAD_BAND_FRACTION * hole_width;
    if bottom_center < hole_center - band {
        OnHole::Left
    } else if bottom_center > hole_center + band {
        OnHole::Right
    } else {
        OnHole::On
    }
}

/// Normalizes an axis angle in degrees to `(-90, 90]`.
pub fn normalize_tilt(deg: f64) -> f64 {
    let mut t = deg % 180.0;
    if t <= -90.0 {
        t += 180.0;
    } else if t > 90.0 {
        t -= 180.0;
    }
    t
}

/// Raster pipeline: segment, fit, measure.
pub fn observe(image: &RasterImage) -> SceneObservation {
    let mut obs = SceneObservation::invalid();
    let hole = largest_component(image, Pixel::Hole);
    if !hole.is_empty() {
        let (mut lo, mut hi) = (u32::MAX, 0u32);
        for &(c, _) in &hole {
            lo = lo.min(c);
            hi = hi.max(c);
        }
        obs.hole_center_y = 0.5 * (lo as f64 + hi as f64 + 1.0);
        obs.hole_width = (hi - lo + 1) as f64;
        obs.hole_valid = true;
    }
    let peg = largest_component(image, Pixel::Peg);
    let centers: Vec<(f64, f64)> = peg.iter().map(|&(c, r)| (c as f64 + 0.5, r as f64 + 0.5)).collect();
    if let Ok(rect) = min_area_rect(&centers) {
        // Pixel centres sit half a pixel inside the silhouette.
        let rect = refine_rect(&rect.expanded(0.5), &peg);
        fill_peg(&mut obs, rect.center, rect.corners(), rect.tilt_deg(), rect.long_side());
    }
    if obs.valid() {
        obs.peg_on_hole = classify(obs.peg_bottom_center_y, obs.hole_center_y, obs.hole_width);
    }
    obs
}

fn fill_peg(obs: &mut SceneObservation, center: (f64, f64), corners: [(f64, f64); 4], tilt: f64, length: f64) {
    let mut idx = [0usize, 1, 2, 3];
    // Lowest two corners in the image (largest v), ties broken by column.
    idx.sort_by(|&a, &b| corners[b].1.total_cmp(&corners[a].1).then(corners[a].0.total_cmp(&corners[b].0)));
    let (p, q) = (corners[idx[0]], corners[idx[1]]);
    obs.peg_center = center;
    obs.peg_bottom_edge_y = p.0.max(q.0);
    obs.peg_bottom_center_y = 0.5 * (p.0 + q.0);
    obs.peg_tilt = tilt;
    obs.peg_length = length;
    obs.peg_valid = true;
}

/// Analytic observation from the true peg polygon and hole geometry.
pub fn oracle_observe(state: &SimState, camera: &CameraConfig) -> SceneObservation {
    let mut obs = SceneObservation::invalid();
    let scene: &SceneConfig = &state.scene;
    let (hl, _) = world_to_pixel(camera, scene.hole_left(), 0.0);
    let (hr, _) = world_to_pixel(camera, scene.hole_right(), 0.0);
    obs.hole_center_y = 0.5 * (hl + hr);
    obs.hole_width = hr - hl;
    obs.hole_valid = true;
    let poly = state.peg_polygon().map(|p| world_to_pixel(camera, p.y, p.z));
    let center = (
        poly.iter().map(|p| p.0).sum::<f64>() / 4.0,
        poly.iter().map(|p| p.1).sum::<f64>() / 4.0,
    );
    let phi = state.peg_pose().phi.to_degrees();
    let length = scene.peg.height.max(scene.peg.width) * camera.scale;
    fill_peg(&mut obs, center, poly, normalize_tilt(phi), length);
    obs.peg_on_hole = classify(obs.peg_bottom_center_y, obs.hole_center_y, obs.hole_width);
    obs
}

/// Converts a pixel length to metres.
pub fn px_to_m(camera: &CameraConfig, px: f64) -> f64 {
    px / camera.scale
}
