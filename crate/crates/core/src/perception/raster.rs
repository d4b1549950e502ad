//! Rendering to a palette image and connected-component segmentation.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::scene::{ArmPose, CameraConfig, SceneConfig};
use crate::sim::{peg_polygon, SimState, WristDeflection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Pixel {
    Background = 0,
    Peg = 1,
    Hole = 2,
    Board = 3,
}

impl Pixel {
    fn rgb(self) -> [u8; 3] {
        match self {
            Pixel::Background => [235, 235, 235],
            Pixel::Peg => [0, 220, 220],
            Pixel::Hole => [210, 30, 30],
            Pixel::Board => [110, 110, 110],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub scale: f64,
    pub origin_y: f64,
    pub origin_z: f64,
    pub pixels: Vec<Pixel>,
}

impl RasterImage {
    pub fn get(&self, c: u32, r: u32) -> Pixel {
        self.pixels[(r * self.width + c) as usize]
    }

    pub fn count(&self, color: Pixel) -> usize {
        self.pixels.iter().filter(|&&p| p == color).count()
    }

    /// Fraction of pixels with identical class; 0 when the frames differ in size.
    pub fn similarity(&self, other: &RasterImage) -> f64 {
        if self.width != other.width || self.height != other.height {
            return 0.0;
        }
        let same = self.pixels.iter().zip(&other.pixels).filter(|(a, b)| a == b).count();
        same as f64 / self.pixels.len() as f64
    }

    pub fn to_png(&self) -> Result<Vec<u8>, png::EncodingError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header()?;
            let data: Vec<u8> = self.pixels.iter().flat_map(|p| p.rgb()).collect();
            w.write_image_data(&data)?;
        }
        Ok(out)
    }

    pub fn write_png(&self, path: &Path) -> std::io::Result<()> {
        let bytes = self.to_png().map_err(std::io::Error::other)?;
        std::fs::File::create(path)?.write_all(&bytes)
    }
}

fn column_range(camera: &CameraConfig, y0: f64, y1: f64) -> Option<(u32, u32)> {
    // Columns whose centres fall in [y0, y1].
    let a = ((y0 - camera.origin_y) * camera.scale - 0.5).ceil().max(0.0);
    let b = ((y1 - camera.origin_y) * camera.scale - 0.5).floor().min(camera.width as f64 - 1.0);
    (a <= b).then_some((a as u32, b as u32))
}

/// Renders the board, hole interior and (optionally) a peg polygon that occludes both.
pub fn render_scene(scene: &SceneConfig, peg: Option<&[Vec2; 4]>, camera: &CameraConfig) -> RasterImage {
    let (w, h) = (camera.width, camera.height);
    let mut pixels = vec![Pixel::Background; (w * h) as usize];
    let s = scene.board_surface_z;
    let bottom = scene.hole_bottom();
    let (hl, hr) = (scene.hole_left(), scene.hole_right());
    for r in 0..h {
        let z = camera.origin_z - (r as f64 + 0.5) / camera.scale;
        let row = &mut pixels[(r * w) as usize..((r + 1) * w) as usize];
        if z < s {
            row.fill(Pixel::Board);
            if z > bottom {
                // Open interval: hole columns strictly between the walls.
                let a = ((hl - camera.origin_y) * camera.scale - 0.5).floor() + 1.0;
                let b = ((hr - camera.origin_y) * camera.scale - 0.5).ceil() - 1.0;
                let (a, b) = (a.max(0.0), b.min(w as f64 - 1.0));
                if a <= b {
                    row[a as usize..=b as usize].fill(Pixel::Hole);
                }
            }
        }
        if let Some(poly) = peg {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..4 {
                let p = poly[i];
                let q = poly[(i + 1) % 4];
                if (p.z - z) * (q.z - z) <= 0.0 && p.z != q.z {
                    let t = (z - p.z) / (q.z - p.z);
                    let y = p.y + t * (q.y - p.y);
                    lo = lo.min(y);
                    hi = hi.max(y);
                } else if p.z == z {
                    lo = lo.min(p.y);
                    hi = hi.max(p.y);
                }
            }
            if lo <= hi {
                if let Some((a, b)) = column_range(camera, lo, hi) {
                    row[a as usize..=b as usize].fill(Pixel::Peg);
                }
            }
        }
    }
    RasterImage {
        width: w,
        height: h,
        scale: camera.scale,
        origin_y: camera.origin_y,
        origin_z: camera.origin_z,
        pixels,
    }
}

pub fn render(state: &SimState, camera: &CameraConfig) -> RasterImage {
    let poly = state.peg_polygon();
    render_scene(&state.scene, Some(&poly), camera)
}

pub fn render_pose(scene: &SceneConfig, arm: ArmPose, defl: WristDeflection, camera: &CameraConfig) -> RasterImage {
    let poly = peg_polygon(arm, defl, &scene.peg);
    render_scene(scene, Some(&poly), camera)
}

/// Largest 4-connected region of `color` as `(column, row)` pairs. Ties go to the
/// region met first in row-major order.
pub fn largest_component(image: &RasterImage, color: Pixel) -> Vec<(u32, u32)> {
    let (w, h) = (image.width, image.height);
    let mut seen = vec![false; image.pixels.len()];
    let mut best: Vec<(u32, u32)> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..image.pixels.len() {
        if seen[start] || image.pixels[start] != color {
            continue;
        }
        let mut region = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (c, r) = ((i as u32) % w, (i as u32) / w);
            region.push((c, r));
            let mut visit = |j: usize| {
                if !seen[j] && image.pixels[j] == color {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - w as usize);
            }
            if r + 1 < h {
                visit(i + w as usize);
            }
        }
        if region.len() > best.len() {
            best = region;
        }
    }
    best.sort_by_key(|&(c, r)| (r, c));
    best
}
