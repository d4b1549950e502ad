//! Minimum-area enclosing rectangle by rotating calipers over the convex hull.

use thiserror::Error;

use super::normalize_tilt;
use crate::geometry::{convex_hull, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("point set is empty or collinear")]
pub struct Degenerate;

/// Rectangle in image coordinates (`u` right, `v` down).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedRect {
    pub center: (f64, f64),
    /// Side lengths along `axis` and along its perpendicular.
    pub size: (f64, f64),
    /// Unit direction of the first side.
    pub axis: (f64, f64),
}

/// Relative side difference under which a rectangle counts as square.
const SQUARE_TOLERANCE: f64 = 0.01;

impl RotatedRect {
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (cu, cv) = self.center;
        let (au, av) = self.axis;
        let (nu, nv) = (-av, au);
        let (ha, hb) = (0.5 * self.size.0, 0.5 * self.size.1);
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .map(|(s, t)| (cu + s * ha * au + t * hb * nu, cv + s * ha * av + t * hb * nv))
    }

    pub fn long_side(&self) -> f64 {
        self.size.0.max(self.size.1)
    }

    /// Grows every side outward by `d`.
    pub fn expanded(&self, d: f64) -> RotatedRect {
        RotatedRect {
            size: (self.size.0 + 2.0 * d, self.size.1 + 2.0 * d),
            ..*self
        }
    }

    /// Signed deviation of the long axis from image vertical, degrees in `(-90, 90]`,
    /// positive when the upper end leans left. Near-square rectangles report the axis
    /// closest to vertical.
    pub fn tilt_deg(&self) -> f64 {
        let axis_tilt = |(du, dv): (f64, f64)| {
            let up = -dv;
            normalize_tilt((-du).atan2(up).to_degrees())
        };
        let first = axis_tilt(self.axis);
        let second = axis_tilt((-self.axis.1, self.axis.0));
        let (a, b) = self.size;
        if (a - b).abs() <= SQUARE_TOLERANCE * a.max(b) {
            if first.abs() < second.abs() || (first.abs() == second.abs() && first > second) {
                first
            } else {
                second
            }
        } else if a > b {
            first
        } else {
            second
        }
    }
}

/// Smallest-area rectangle enclosing `points`. One side is always collinear with a
/// hull edge, so every edge orientation is tried.
pub fn min_area_rect(points: &[(f64, f64)]) -> Result<RotatedRect, Degenerate> {
    let pts: Vec<Vec2> = points.iter().map(|&(u, v)| Vec2::new(u, v)).collect();
    let hull = convex_hull(&pts);
    if hull.len() < 3 {
        return Err(Degenerate);
    }
    let n = hull.len();
    let mut best: Option<(f64, RotatedRect)> = None;
    for i in 0..n {
        let e = (hull[(i + 1) % n] - hull[i]).normalized();
        let p = e.perp();
        let (mut e0, mut e1, mut p0, mut p1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &h in &hull {
            let a = h.dot(e);
            let b = h.dot(p);
            e0 = e0.min(a);
            e1 = e1.max(a);
            p0 = p0.min(b);
            p1 = p1.max(b);
        }
        let area = (e1 - e0) * (p1 - p0);
        if best.as_ref().is_none_or(|(a, _)| area < a * (1.0 - 1e-12)) {
            let c = e * (0.5 * (e0 + e1)) + p * (0.5 * (p0 + p1));
            best = Some((
                area,
                RotatedRect {
                    center: (c.y, c.z),
                    size: (e1 - e0, p1 - p0),
                    axis: (e.y, e.z),
                },
            ));
        }
    }
    Ok(best.expect("hull has edges").1)
}

/// Boundary transitions this close to two sides at once are left out of the refinement.
const CORNER_MARGIN: f64 = 2.0;
/// Orientations searched around the contour rectangle, degrees either way.
const REFINE_SPAN_DEG: f64 = 2.0;
const REFINE_STEP_DEG: f64 = 0.002;

type Point = (f64, f64);

/// Sharpens a rectangle fitted to the pixel contour of a centre-sampled rectangle.
///
/// Each boundary transition pairs a region pixel centre (inside the true shape) with a
/// neighbouring centre outside it, so the side it belongs to must pass between the two.
/// Orientations near the contour fit are scanned for those consistent with every
/// transition; the middle of that set is returned, with each side halfway between its
/// bounding centres. Without any consistent orientation the input comes back unchanged.
pub fn refine_rect(rect: &RotatedRect, region: &[(u32, u32)]) -> RotatedRect {
    let set: std::collections::HashSet<(u32, u32)> = region.iter().copied().collect();
    let (cu, cv) = rect.center;
    let (ha, hb) = (0.5 * rect.size.0, 0.5 * rect.size.1);
    let theta0 = rect.axis.1.atan2(rect.axis.0);
    let (s0, c0) = theta0.sin_cos();
    let local = |(u, v): (f64, f64)| {
        let (du, dv) = (u - cu, v - cv);
        (du * c0 + dv * s0, -du * s0 + dv * c0)
    };
    // (side, inside centre, outside centre), positions relative to the rectangle centre.
    let mut pairs: Vec<(usize, Point, Point)> = Vec::new();
    for &(c, r) in region {
        let p_in = (c as f64 + 0.5, r as f64 + 0.5);
        for (dc, dr) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (nc, nr) = (c as i64 + dc, r as i64 + dr);
            if nc >= 0 && nr >= 0 && set.contains(&(nc as u32, nr as u32)) {
                continue;
            }
            let p_out = (p_in.0 + dc as f64, p_in.1 + dr as f64);
            let (s, t) = local(p_in);
            let (ga, gb) = (ha - s.abs(), hb - t.abs());
            if ga < CORNER_MARGIN && gb < CORNER_MARGIN {
                continue;
            }
            let k = if ga < gb {
                usize::from(s < 0.0)
            } else {
                2 + usize::from(t < 0.0)
            };
            pairs.push((k, (p_in.0 - cu, p_in.1 - cv), (p_out.0 - cu, p_out.1 - cv)));
        }
    }
    // Outward distance of a point from the centre for side `k` at orientation `theta`.
    let outward = |theta: f64, k: usize, (du, dv): (f64, f64)| {
        let (sn, cs) = theta.sin_cos();
        match k {
            0 => du * cs + dv * sn,
            1 => -(du * cs + dv * sn),
            2 => -du * sn + dv * cs,
            _ => du * sn - dv * cs,
        }
    };
    // For each side: furthest inside centre and nearest outside centre.
    let bounds = |theta: f64| {
        let mut b = [(f64::NEG_INFINITY, f64::INFINITY); 4];
        for &(k, p_in, p_out) in &pairs {
            b[k].0 = b[k].0.max(outward(theta, k, p_in));
            b[k].1 = b[k].1.min(outward(theta, k, p_out));
        }
        b
    };
    let feasible = |b: &[(f64, f64); 4]| b.iter().all(|&(lo, hi)| lo.is_finite() && hi.is_finite() && lo <= hi);
    let n = (REFINE_SPAN_DEG / REFINE_STEP_DEG).round() as i64;
    let mut first = None;
    let mut last = None;
    for i in -n..=n {
        let theta = theta0 + (i as f64 * REFINE_STEP_DEG).to_radians();
        if feasible(&bounds(theta)) {
            first.get_or_insert(theta);
            last = Some(theta);
        }
    }
    let (Some(a), Some(b)) = (first, last) else {
        return *rect;
    };
    let theta = 0.5 * (a + b);
    let bd = bounds(theta);
    if !feasible(&bd) {
        return *rect;
    }
    let off = bd.map(|(lo, hi)| 0.5 * (lo + hi));
    let (sn, cs) = theta.sin_cos();
    let (mu, mv) = (0.5 * (off[0] - off[1]), 0.5 * (off[2] - off[3]));
    RotatedRect {
        center: (cu + mu * cs - mv * sn, cv + mu * sn + mv * cs),
        size: (off[0] + off[1], off[2] + off[3]),
        axis: (cs, sn),
    }
}
