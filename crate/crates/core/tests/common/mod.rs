//! Oracles and fixtures shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use softpeg::geometry::Vec2;
use softpeg::scene::{default_scenario_file, ArmPose, SceneConfig};
use softpeg::sim::{peg_polygon, SimState, WristDeflection};

/// Small deterministic generator so sampled cases are fixed.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn unit(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, a: f64, b: f64) -> f64 {
        a + (b - a) * self.unit()
    }
}

/// Board blocks as (y0, y1, z0, z1); they reach far down and sideways.
pub fn blocks(scene: &SceneConfig) -> [(f64, f64, f64, f64); 3] {
    let far = 10.0;
    let s = scene.board_surface_z;
    let b = s - scene.hole_depth;
    let l = scene.hole_center_y - 0.5 * scene.hole_width;
    let r = scene.hole_center_y + 0.5 * scene.hole_width;
    [(-far, l, -far, s), (r, far, -far, s), (l, r, -far, b)]
}

/// Separating axis test between a convex quad and an axis-aligned box; touching does
/// not count as overlap.
pub fn overlaps(poly: &[Vec2; 4], bx: (f64, f64, f64, f64)) -> bool {
    let corners = [
        Vec2::new(bx.0, bx.2),
        Vec2::new(bx.1, bx.2),
        Vec2::new(bx.1, bx.3),
        Vec2::new(bx.0, bx.3),
    ];
    let mut axes = vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
    for i in 0..4 {
        let e = poly[(i + 1) % 4] - poly[i];
        axes.push(Vec2::new(-e.z, e.y));
    }
    for a in axes {
        let proj = |pts: &[Vec2]| {
            pts.iter()
                .map(|p| p.dot(a))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (p0, p1) = proj(poly);
        let (q0, q1) = proj(&corners);
        let slack = 1e-12 * a.norm();
        if p1 <= q0 + slack || q1 <= p0 + slack {
            return false;
        }
    }
    true
}

/// Penetration depth of a convex quad into an axis-aligned box: the smallest overlap
/// of their projections over all separating-axis candidates (zero when apart).
pub fn penetration(poly: &[Vec2; 4], bx: (f64, f64, f64, f64)) -> f64 {
    let corners = [
        Vec2::new(bx.0, bx.2),
        Vec2::new(bx.1, bx.2),
        Vec2::new(bx.1, bx.3),
        Vec2::new(bx.0, bx.3),
    ];
    let mut axes = vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
    for i in 0..4 {
        let e = poly[(i + 1) % 4] - poly[i];
        axes.push(Vec2::new(-e.z, e.y).normalized());
    }
    axes.iter()
        .map(|&a| {
            let span = |pts: &[Vec2]| {
                pts.iter()
                    .map(|p| p.dot(a))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
            };
            let (p0, p1) = span(poly);
            let (q0, q1) = span(&corners);
            (p1.min(q1) - p0.max(q0)).max(0.0)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn board_penetration(scene: &SceneConfig, poly: &[Vec2; 4]) -> f64 {
    blocks(scene).iter().map(|&b| penetration(poly, b)).fold(0.0, f64::max)
}

pub fn board_overlap(scene: &SceneConfig, poly: &[Vec2; 4]) -> bool {
    blocks(scene).iter().any(|&b| overlaps(poly, b))
}

/// Smallest non-negative compression that clears the board at roll `dth`.
pub fn oracle_dz(scene: &SceneConfig, arm: ArmPose, dth: f64) -> f64 {
    let at = |dz: f64| peg_polygon(arm, WristDeflection { dz, dtheta: dth }, &scene.peg);
    if !board_overlap(scene, &at(0.0)) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 0.2);
    if board_overlap(scene, &at(hi)) {
        return f64::INFINITY;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if board_overlap(scene, &at(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Minimum spring energy over a roll grid, each roll with its exact clearing compression.
pub fn oracle_energy(scene: &SceneConfig, arm: ArmPose, k_z: f64, k_theta: f64) -> f64 {
    let step = 1e-4;
    let n = 3000;
    (-n..=n)
        .map(|i| {
            let dth = i as f64 * step;
            let dz = oracle_dz(scene, arm, dth);
            0.5 * k_z * dz * dz + 0.5 * k_theta * dth * dth
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn random_contact_config(rng: &mut Lcg) -> (SceneConfig, ArmPose) {
    let mut scene = default_scenario_file().scene;
    scene.peg.grasp_angle = rng.range(-5.0, 5.0).to_radians();
    scene.friction_coefficient = rng.range(0.3, 1.5);
    let arm = ArmPose::new(rng.range(-0.03, 0.03), rng.range(-0.006, 0.001), 0.0);
    (scene, arm)
}

pub fn random_state(rng: &mut Lcg) -> SimState {
    let mut scene = default_scenario_file().scene;
    scene.peg.grasp_angle = rng.range(-5.0, 5.0).to_radians();
    scene.hole_center_y = rng.range(-0.02, 0.02);
    let arm = ArmPose::new(rng.range(-0.04, 0.04), rng.range(-0.012, 0.02), 0.0);
    let mut s = SimState::at_rest(arm, scene);
    s.deflection = WristDeflection {
        dz: rng.range(0.0, 0.004),
        dtheta: rng.range(-0.1, 0.1),
    };
    s
}

/// Angle of the best bounding box found by scanning orientations in 0.05 degree steps.
pub fn brute_force_rect(points: &[(f64, f64)]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..1800 {
        let a = (k as f64 * 0.05).to_radians();
        let (s, c) = a.sin_cos();
        let (mut e0, mut e1, mut p0, mut p1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(u, v) in points {
            let e = u * c + v * s;
            let p = -u * s + v * c;
            e0 = e0.min(e);
            e1 = e1.max(e);
            p0 = p0.min(p);
            p1 = p1.max(p);
        }
        let area = (e1 - e0) * (p1 - p0);
        if area < best.0 {
            best = (area, k as f64 * 0.05);
        }
    }
    best
}

/// Distance between two box orientations, which repeat every 90 degrees.
pub fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(90.0);
    d.min(90.0 - d)
}

/// One scripted reply: HTTP status and body.
pub type Reply = (u16, String);

/// Body and authorization header of one received request.
pub type Seen = (String, Option<String>);

pub struct MockServer {
    pub url: String,
    /// Bodies and authorization headers of every request received.
    pub seen: Arc<Mutex<Vec<Seen>>>,
}

/// Serves the scripted replies in order, then keeps answering with the last one.
pub fn serve(script: Vec<Reply>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/plan", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap_or(0),
                        "authorization" => auth = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push((String::from_utf8(body).unwrap(), auth));
            let (status, reply) = script[i.min(script.len() - 1)].clone();
            let head = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                reply.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    MockServer { url, seen }
}

