//! Board geometry: three axis-aligned blocks around a rectangular hole.

use serde::{Deserialize, Serialize};

use super::{Contact, ContactFeature, ContactMode};
use crate::geometry::{segment_distance, strictly_inside, Vec2};
use crate::scene::SceneConfig;

/// How far the blocks reach sideways and downward from the hole. Large enough that
/// the peg can never get past them.
pub const BLOCK_EXTENT: f64 = 1.0;

/// Side overlaps thinner than this count as touching, so a peg flush against a wall
/// is not mistaken for one resting on top of it.
pub const LATERAL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoardFace {
    TopLeft,
    TopRight,
    LeftWall,
    RightWall,
    HoleBottom,
}

impl BoardFace {
    pub const ALL: [BoardFace; 5] = [
        BoardFace::TopLeft,
        BoardFace::TopRight,
        BoardFace::LeftWall,
        BoardFace::RightWall,
        BoardFace::HoleBottom,
    ];
}

/// Convex board corners at the hole mouth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoardCorner {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub y0: f64,
    pub y1: f64,
    pub z0: f64,
    pub z1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGeom {
    pub face: BoardFace,
    pub a: Vec2,
    pub b: Vec2,
    /// Outward normal, pointing away from the material.
    pub normal: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Board {
    pub blocks: [Block; 3],
    pub faces: [FaceGeom; 5],
    pub corners: [(BoardCorner, Vec2); 2],
}

impl Board {
    pub fn new(scene: &SceneConfig) -> Self {
        let s = scene.board_surface_z;
        let l = scene.hole_left();
        let r = scene.hole_right();
        let b = scene.hole_bottom();
        let far_l = scene.hole_center_y - BLOCK_EXTENT;
        let far_r = scene.hole_center_y + BLOCK_EXTENT;
        let deep = s - BLOCK_EXTENT;
        let up = Vec2::new(0.0, 1.0);
        Self {
            blocks: [
                Block { y0: far_l, y1: l, z0: deep, z1: s },
                Block { y0: r, y1: far_r, z0: deep, z1: s },
                Block { y0: l, y1: r, z0: deep, z1: b },
            ],
            faces: [
                FaceGeom {
                    face: BoardFace::TopLeft,
                    a: Vec2::new(far_l, s),
                    b: Vec2::new(l, s),
                    normal: up,
                },
                FaceGeom {
                    face: BoardFace::TopRight,
                    a: Vec2::new(r, s),
                    b: Vec2::new(far_r, s),
                    normal: up,
                },
                FaceGeom {
                    face: BoardFace::LeftWall,
                    a: Vec2::new(l, b),
                    b: Vec2::new(l, s),
                    normal: Vec2::new(1.0, 0.0),
                },
                FaceGeom {
                    face: BoardFace::RightWall,
                    a: Vec2::new(r, b),
                    b: Vec2::new(r, s),
                    normal: Vec2::new(-1.0, 0.0),
                },
                FaceGeom {
                    face: BoardFace::HoleBottom,
                    a: Vec2::new(l, b),
                    b: Vec2::new(r, b),
                    normal: up,
                },
            ],
            corners: [
                (BoardCorner::Left, Vec2::new(l, s)),
                (BoardCorner::Right, Vec2::new(r, s)),
            ],
        }
    }

    pub fn face(&self, face: BoardFace) -> &FaceGeom {
        &self.faces[face as usize]
    }

    pub fn corner(&self, corner: BoardCorner) -> Vec2 {
        self.corners[corner as usize].1
    }

    /// True when `p` is strictly inside board material.
    pub fn contains(&self, p: Vec2) -> bool {
        self.blocks
            .iter()
            .any(|b| p.y > b.y0 && p.y < b.y1 && p.z > b.z0 && p.z < b.z1)
    }

    /// Smallest upward shift of `poly` that removes all overlap with the board, or
    /// negative infinity when no block lies beneath it.
    pub fn lift(&self, poly: &[Vec2; 4]) -> f64 {
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in poly {
            ymin = ymin.min(v.y);
            ymax = ymax.max(v.y);
        }
        let mut best = f64::NEG_INFINITY;
        for b in &self.blocks {
            if ymax <= b.y0 + LATERAL_EPS || ymin >= b.y1 - LATERAL_EPS {
                continue;
            }
            best = best.max(b.z1 - strip_min_z(poly, b.y0, b.y1));
        }
        best
    }
}

/// Lowest point of a convex polygon within the vertical strip `[y0, y1]`.
fn strip_min_z(poly: &[Vec2; 4], y0: f64, y1: f64) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..4 {
        let a = poly[i];
        let b = poly[(i + 1) % 4];
        if a.y >= y0 && a.y <= y1 {
            m = m.min(a.z);
        }
        for edge_y in [y0, y1] {
            if (a.y - edge_y) * (b.y - edge_y) < 0.0 {
                let t = (edge_y - a.y) / (b.y - a.y);
                m = m.min(a.z + t * (b.z - a.z));
            }
        }
    }
    m
}

fn contact(feature: ContactFeature, point: Vec2, normal: Vec2, penetration: f64) -> Contact {
    Contact {
        feature,
        point,
        normal,
        penetration,
        normal_force: 0.0,
        tangential_force: 0.0,
        mode: ContactMode::Sticking,
    }
}

/// Every peg-vertex/board-face and board-corner/peg-edge pair closer than `band`,
/// plus any overlapping pair. `poly` is the counterclockwise peg rectangle.
pub fn contact_query(poly: &[Vec2; 4], board: &Board, band: f64) -> Vec<Contact> {
    let mut out = Vec::new();
    for (vi, &v) in poly.iter().enumerate() {
        let inside = board.contains(v);
        let mut deepest: Option<(f64, &FaceGeom)> = None;
        for f in &board.faces {
            let (dist, t) = segment_distance(v, f.a, f.b);
            let gap = (v - f.a).dot(f.normal);
            if inside {
                if gap <= 0.0 && deepest.is_none_or(|(d, _)| dist < d) {
                    deepest = Some((dist, f));
                }
            } else if gap >= 0.0 && gap <= band && dist <= band + 1e-12 && (0.0..=1.0).contains(&t) {
                out.push(contact(
                    ContactFeature::VertexFace { vertex: vi as u8, face: f.face },
                    v,
                    f.normal,
                    -gap,
                ));
            }
        }
        if let Some((dist, f)) = deepest {
            out.push(contact(
                ContactFeature::VertexFace { vertex: vi as u8, face: f.face },
                v,
                f.normal,
                dist,
            ));
        }
    }
    for &(corner, c) in &board.corners {
        let inside = strictly_inside(poly, c);
        let mut best: Option<(f64, usize, f64)> = None;
        for e in 0..4 {
            let a = poly[e];
            let b = poly[(e + 1) % 4];
            let len = (b - a).norm();
            let (dist, t) = segment_distance(c, a, b);
            if inside {
                if best.is_none_or(|(d, _, _)| dist < d) {
                    best = Some((dist, e, t));
                }
                continue;
            }
            let end_slack = band / len;
            if dist <= band && t > end_slack && t < 1.0 - end_slack {
                best = match best {
                    Some((d, _, _)) if d <= dist => best,
                    _ => Some((dist, e, t)),
                };
            }
        }
        if let Some((dist, e, _)) = best {
            let a = poly[e];
            let b = poly[(e + 1) % 4];
            let d = b - a;
            let outward = Vec2::new(d.z, -d.y).normalized();
            out.push(contact(
                ContactFeature::CornerEdge { corner, edge: e as u8 },
                c,
                -outward,
                if inside { dist } else { -dist },
            ));
        }
    }
    out
}
