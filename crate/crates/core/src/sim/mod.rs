//! Quasi-static arm + soft wrist + rigid peg simulation.
//!
//! The wrist has two passive springs: vertical compression `dz` and roll `dtheta`.
//! Every state is a force balance between those springs and the board contacts,
//! with Coulomb friction acting on contacts carried over from the previous step.

mod board;
mod motion;
mod solver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::scene::{ArmPose, PegSpec, SceneConfig, SimParams, WristParams};

pub use board::{contact_query, Board, BoardCorner, BoardFace, BLOCK_EXTENT};
pub use motion::MotionStatus;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WristDeflection {
    /// Compression, positive when the spring is squeezed and the peg is pushed up.
    pub dz: f64,
    pub dtheta: f64,
}

impl WristDeflection {
    pub const ZERO: WristDeflection = WristDeflection { dz: 0.0, dtheta: 0.0 };

    pub fn energy(&self, wrist: &WristParams) -> f64 {
        0.5 * wrist.k_z * self.dz * self.dz + 0.5 * wrist.k_theta * self.dtheta * self.dtheta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactMode {
    Sticking,
    Sliding,
}

/// Which pair of features touch. Peg vertices are numbered counterclockwise from the
/// bottom-left corner; peg edge `k` runs from vertex `k` to vertex `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactFeature {
    VertexFace { vertex: u8, face: BoardFace },
    CornerEdge { corner: BoardCorner, edge: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub feature: ContactFeature,
    pub point: Vec2,
    /// Unit direction of the normal force acting on the peg.
    pub normal: Vec2,
    /// Positive when the bodies overlap.
    pub penetration: f64,
    pub normal_force: f64,
    /// Signed along the tangent `(normal.z, -normal.y)`.
    pub tangential_force: f64,
    pub mode: ContactMode,
}

impl Contact {
    pub fn tangent(&self) -> Vec2 {
        Vec2::new(self.normal.z, -self.normal.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub arm: ArmPose,
    pub deflection: WristDeflection,
    pub contacts: Vec<Contact>,
    pub scene: SceneConfig,
}

impl SimState {
    /// Undeflected state at `arm`; the caller is responsible for it being collision free.
    pub fn at_rest(arm: ArmPose, scene: SceneConfig) -> Self {
        Self {
            arm,
            deflection: WristDeflection::ZERO,
            contacts: Vec::new(),
            scene,
        }
    }

    pub fn peg_pose(&self) -> PegPose {
        PegPose::new(self.arm, self.deflection, &self.scene.peg)
    }

    pub fn peg_polygon(&self) -> [Vec2; 4] {
        peg_polygon(self.arm, self.deflection, &self.scene.peg)
    }

    /// Midpoint of the peg's bottom edge.
    pub fn peg_tip(&self) -> Vec2 {
        self.peg_pose().to_world(Vec2::new(0.0, -self.scene.peg.height))
    }

    /// Depth of the peg tip below the board surface (positive once inside the hole).
    pub fn insertion_depth(&self) -> f64 {
        self.scene.board_surface_z - self.peg_tip().z
    }

    pub fn total_normal_force(&self) -> f64 {
        self.contacts.iter().map(|c| c.normal_force).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("equilibrium solver did not converge: {0}")]
    NoConvergence(String),
}

/// Rigid placement of the peg frame: origin at the wrist pivot (top centre of the
/// peg), rotated by `phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PegPose {
    pub pivot: Vec2,
    pub phi: f64,
}

impl PegPose {
    pub fn new(arm: ArmPose, defl: WristDeflection, peg: &PegSpec) -> Self {
        Self {
            pivot: undeflected_pivot(arm, peg.height) + Vec2::new(0.0, defl.dz),
            phi: arm.theta + peg.grasp_angle + defl.dtheta,
        }
    }

    pub fn to_world(&self, local: Vec2) -> Vec2 {
        self.pivot + local.rotated(self.phi)
    }

    pub fn to_local(&self, world: Vec2) -> Vec2 {
        (world - self.pivot).rotated(-self.phi)
    }
}

/// Wrist pivot for zero deflection: the tool point sits at the nominal peg tip.
pub(crate) fn undeflected_pivot(arm: ArmPose, height: f64) -> Vec2 {
    Vec2::new(arm.y, arm.z) + Vec2::new(0.0, height).rotated(arm.theta)
}

/// Peg corners in peg coordinates, counterclockwise from bottom-left.
pub(crate) fn peg_local_vertices(peg: &PegSpec) -> [Vec2; 4] {
    let hw = 0.5 * peg.width;
    let h = peg.height;
    [
        Vec2::new(-hw, -h),
        Vec2::new(hw, -h),
        Vec2::new(hw, 0.0),
        Vec2::new(-hw, 0.0),
    ]
}

/// World-frame peg rectangle, counterclockwise from the bottom-left corner.
pub fn peg_polygon(arm: ArmPose, defl: WristDeflection, peg: &PegSpec) -> [Vec2; 4] {
    let pose = PegPose::new(arm, defl, peg);
    peg_local_vertices(peg).map(|v| pose.to_world(v))
}

/// Scene, wrist and solver settings bundled for the simulation entry points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Simulator {
    pub scene: SceneConfig,
    pub wrist: WristParams,
    pub params: SimParams,
    pub board: Board,
}

impl Simulator {
    pub fn new(scene: SceneConfig, wrist: WristParams, params: SimParams) -> Self {
        Self {
            scene,
            wrist,
            params,
            board: Board::new(&scene),
        }
    }

    pub fn contacts_of(&self, arm: ArmPose, defl: WristDeflection) -> Vec<Contact> {
        let poly = peg_polygon(arm, defl, &self.scene.peg);
        contact_query(&poly, &self.board, self.params.detection_band)
    }

    /// Places the arm at `arm` and settles the wrist from rest.
    pub fn settle(&self, arm: ArmPose) -> Result<SimState, SimError> {
        let rest = SimState::at_rest(arm, self.scene);
        let (deflection, contacts) = self.resolve_equilibrium(arm, &rest)?;
        Ok(SimState {
            arm,
            deflection,
            contacts,
            scene: self.scene,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{default_scenario_file, PegShape};

    fn peg() -> PegSpec {
        PegSpec {
            shape: PegShape::Circular,
            width: 0.03,
            height: 0.06,
            grasp_angle: 0.0,
        }
    }

    #[test]
    fn identity_pose_gives_axis_aligned_rectangle() {
        let poly = peg_polygon(ArmPose::new(0.01, 0.02, 0.0), WristDeflection::ZERO, &peg());
        assert!((poly[0].y - (0.01 - 0.015)).abs() < 1e-15);
        assert!((poly[0].z - 0.02).abs() < 1e-15);
        assert!((poly[2].y - (0.01 + 0.015)).abs() < 1e-15);
        assert!((poly[2].z - 0.08).abs() < 1e-15);
        assert!(((poly[0].y + poly[1].y) * 0.5 - 0.01).abs() < 1e-15);
    }

    #[test]
    fn grasp_angle_rotates_polygon_exactly() {
        let g = 5f64.to_radians();
        let mut p = peg();
        p.grasp_angle = g;
        let poly = peg_polygon(ArmPose::new(0.0, 0.0, 0.0), WristDeflection::ZERO, &p);
        let bottom = poly[1] - poly[0];
        assert!((bottom.z.atan2(bottom.y) - g).abs() < 1e-12);
    }

    #[test]
    fn arm_and_deflection_rotations_cancel() {
        let defl = WristDeflection {
            dz: 0.0,
            dtheta: -2f64.to_radians(),
        };
        let poly = peg_polygon(ArmPose::new(0.0, 0.0, 2f64.to_radians()), defl, &peg());
        let bottom = poly[1] - poly[0];
        assert!(bottom.z.abs() < 1e-15);
        let side = poly[2] - poly[1];
        assert!(side.y.abs() < 1e-15);
    }

    #[test]
    fn compression_lifts_the_peg() {
        let a = ArmPose::new(0.0, 0.0, 0.0);
        let defl = WristDeflection { dz: 0.003, dtheta: 0.0 };
        let poly = peg_polygon(a, defl, &peg());
        assert!((poly[0].z - 0.003).abs() < 1e-15);
    }

    #[test]
    fn tip_depth_reads_surface_offset() {
        let s = default_scenario_file();
        let state = SimState::at_rest(ArmPose::new(0.0, -0.004, 0.0), s.scene);
        assert!((state.insertion_depth() - 0.004).abs() < 1e-15);
    }
}
