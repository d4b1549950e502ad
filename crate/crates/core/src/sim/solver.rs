//! Quasi-static equilibrium of the two wrist springs against the board.
//!
//! For a fixed roll deflection the peg can only translate vertically, and every board
//! block extends far downward, so the non-penetrating compressions form a half-line
//! `dz >= lift(dtheta)`. The compression subproblem is a convex piecewise quadratic
//! (spring plus friction dissipation) solved exactly; the roll is found by a guarded
//! pattern search that starts from the previous state and never crosses an energy
//! barrier, so the result follows the physical path rather than a global optimum.
//!
//! Friction uses the incremental maximum-dissipation form: every contact carried over
//! from the previous step costs `mu * N * |slip|`, where slip is the tangential
//! displacement of the touching material point since that step. The normal forces
//! `N` are updated by a fixed-point iteration until they agree with the contact
//! multipliers recovered from the final state.

use super::{
    contact_query, peg_local_vertices, peg_polygon, undeflected_pivot, Contact, ContactFeature, ContactMode,
    PegPose, SimError, SimState, Simulator, WristDeflection,
};
use crate::geometry::Vec2;
use crate::scene::ArmPose;

/// Largest roll change checked as a single segment for energy barriers.
const PATH_STEP: f64 = 5e-4;
const MAX_STEP: f64 = 0.016;
const FIRST_STEP: f64 = 1e-3;
const MIN_STEP: f64 = 1e-12;
const PROJECTION_STEP: f64 = 2e-4;
/// Roll grid for settling without contact history.
const GLOBAL_STEP: f64 = 5e-4;
/// Peg orientations beyond this are treated as unreachable.
const PHI_LIMIT: f64 = 1.3;
/// Tangential displacement below which an anchored contact counts as sticking.
const SLIP_EPS: f64 = 1e-9;
/// Overlap left over by the projection; well inside the contact detection band.
const PUSH_MARGIN: f64 = 1e-10;

/// A contact inherited from the previous state, pinned to a peg material point.
#[derive(Debug, Clone, Copy)]
struct Anchor {
    feature: ContactFeature,
    material: Vec2,
    prev_world: Vec2,
    tangent: Vec2,
    normal_force: f64,
}

#[derive(Debug, Clone, Copy)]
struct FrictionTerm {
    material: Vec2,
    prev_world: Vec2,
    tangent: Vec2,
    c: f64,
}

struct Problem<'a> {
    sim: &'a Simulator,
    pivot0: Vec2,
    base_phi: f64,
    local: [Vec2; 4],
    terms: Vec<FrictionTerm>,
}

impl Problem<'_> {
    fn polygon(&self, dth: f64) -> [Vec2; 4] {
        let (s, c) = (self.base_phi + dth).sin_cos();
        self.local.map(|m| self.pivot0 + m.rotated_sc(s, c))
    }

    fn lift(&self, dth: f64) -> f64 {
        self.sim.board.lift(&self.polygon(dth))
    }

    fn phi_ok(&self, dth: f64) -> bool {
        (self.base_phi + dth).abs() <= PHI_LIMIT
    }

    /// Total energy at `dth` with the optimal compression, and that compression.
    fn eval(&self, dth: f64) -> (f64, f64) {
        let lo = self.lift(dth);
        let (s, c) = (self.base_phi + dth).sin_cos();
        let mut lin = [(0.0, 0.0, 0.0); 16];
        let n = self.terms.len().min(lin.len());
        for (slot, t) in lin.iter_mut().zip(&self.terms) {
            let p = self.pivot0 + t.material.rotated_sc(s, c);
            *slot = ((p - t.prev_world).dot(t.tangent), t.tangent.z, t.c);
        }
        let kz = self.sim.wrist.k_z;
        let dz = minimize_piecewise(kz, lo, &lin[..n]);
        let mut e = 0.5 * kz * dz * dz + 0.5 * self.sim.wrist.k_theta * dth * dth;
        for &(a, b, c) in &lin[..n] {
            e += c * (a + b * dz).abs();
        }
        (e, dz)
    }

    /// Accepts a long move only when no point along it is above the starting energy.
    fn path_clear(&self, x: f64, fx: f64, y: f64) -> bool {
        let n = ((y - x).abs() / PATH_STEP).ceil() as usize;
        let slack = 1e-14 * fx.abs().max(1e-9);
        (1..n).all(|i| {
            let th = x + (y - x) * (i as f64 / n as f64);
            self.eval(th).0 <= fx + slack
        })
    }

    fn search(&self, start: f64) -> f64 {
        let mut x = start;
        let mut fx = self.eval(x).0;
        let mut step = FIRST_STEP;
        let mut dir = 1.0;
        while step > MIN_STEP {
            let mut moved = false;
            for d in [dir, -dir] {
                let y = x + d * step;
                if !self.phi_ok(y) {
                    continue;
                }
                let fy = self.eval(y).0;
                if fy < fx && self.path_clear(x, fx, y) {
                    x = y;
                    fx = fy;
                    dir = d;
                    moved = true;
                    step = (step * 2.0).min(MAX_STEP);
                    break;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        x
    }

    /// Best roll on a grid for a problem with no contact history. Rolls costing more
    /// spring energy than the unrolled optimum are never better, which bounds the scan.
    fn global_start(&self) -> Option<f64> {
        let e0 = self.eval(0.0).0;
        let reach = (2.0 * e0 / self.sim.wrist.k_theta).sqrt().min(2.0 * PHI_LIMIT);
        let n = (reach / GLOBAL_STEP).ceil() as i64;
        (-n..=n)
            .map(|i| i as f64 * GLOBAL_STEP)
            .filter(|&th| self.phi_ok(th))
            .map(|th| (self.eval(th).0, th))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, th)| th)
    }

    /// Pushes the previous deflection out of any overlap created by the arm step,
    /// moving along the contact normals (linearized) in the metric `dz^2 + (reach dtheta)^2`.
    /// A lateral wall can only be cleared by rolling, a surface only by compressing.
    fn project(&self, prev: WristDeflection, reach: f64, tol: f64) -> Option<f64> {
        let mut q = (prev.dz, prev.dtheta);
        if !self.phi_ok(q.1) {
            return self.scan(prev, reach, tol);
        }
        for _ in 0..8 {
            let mut poly = self.polygon(q.1);
            for v in &mut poly {
                v.z += q.0;
            }
            let pivot = self.pivot0 + Vec2::new(0.0, q.0);
            let rows: Vec<([f64; 2], f64)> = contact_query(&poly, &self.sim.board, 0.0)
                .into_iter()
                .filter(|c| c.penetration > PUSH_MARGIN)
                .map(|c| {
                    let r = c.point - pivot;
                    ([c.normal.z, c.normal.dot(r.perp()) / reach], c.penetration + PUSH_MARGIN)
                })
                .collect();
            if rows.is_empty() {
                return Some(q.1);
            }
            let u = min_norm_step(&rows)?;
            q = (q.0 + u[0], q.1 + u[1] / reach);
            if !self.phi_ok(q.1) {
                return self.scan(prev, reach, tol);
            }
        }
        (self.lift(q.1) - q.0 <= 1e-3).then_some(q.1).or_else(|| self.scan(prev, reach, tol))
    }

    /// Fallback: nearest orientation by a direct scan of lift versus sweep.
    fn scan(&self, prev: WristDeflection, reach: f64, tol: f64) -> Option<f64> {
        let start = prev.dtheta;
        let pen0 = self.lift(start) - prev.dz;
        if pen0 <= tol && self.phi_ok(start) {
            return Some(start);
        }
        let mut best = if self.phi_ok(start) {
            Some((pen0 * pen0, start))
        } else {
            None
        };
        let mut k = 1usize;
        loop {
            let delta = k as f64 * PROJECTION_STEP;
            let sweep = (reach * delta).powi(2);
            if best.is_some_and(|(c, _)| sweep >= c) || delta > 2.0 * PHI_LIMIT {
                break;
            }
            for th in [start + delta, start - delta] {
                if !self.phi_ok(th) {
                    continue;
                }
                let pen = (self.lift(th) - prev.dz).max(0.0);
                let cost = pen * pen + sweep;
                if best.is_none_or(|(c, _)| cost < c) {
                    best = Some((cost, th));
                }
            }
            k += 1;
        }
        best.map(|(_, th)| th)
    }
}

/// Smallest `u` with `g_i . u >= p_i` for every row, by active-set enumeration.
fn min_norm_step(rows: &[([f64; 2], f64)]) -> Option<[f64; 2]> {
    let ok = |u: [f64; 2]| {
        rows.iter()
            .all(|(g, p)| g[0] * u[0] + g[1] * u[1] >= p - 1e-12 * p.abs().max(1e-9))
    };
    let mut best: Option<[f64; 2]> = None;
    let mut consider = |u: [f64; 2]| {
        if u.iter().all(|x| x.is_finite()) && ok(u) {
            let n = u[0] * u[0] + u[1] * u[1];
            if best.is_none_or(|b| n < b[0] * b[0] + b[1] * b[1]) {
                best = Some(u);
            }
        }
    };
    for (g, p) in rows {
        let gg = g[0] * g[0] + g[1] * g[1];
        if gg > 0.0 {
            consider([g[0] * p / gg, g[1] * p / gg]);
        }
    }
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (a, pa) = rows[i];
            let (b, pb) = rows[j];
            let det = a[0] * b[1] - a[1] * b[0];
            if det.abs() > 1e-12 {
                consider([(pa * b[1] - a[1] * pb) / det, (a[0] * pb - pa * b[0]) / det]);
            }
        }
    }
    best
}

/// Minimizes `k/2 x^2 + sum c |a + b x|` over `x >= lo`.
fn minimize_piecewise(k: f64, lo: f64, terms: &[(f64, f64, f64)]) -> f64 {
    let active = terms.iter().filter(|t| t.2 > 0.0 && t.1.abs() > 1e-14);
    let mut cuts: Vec<f64> = active.clone().map(|&(a, b, _)| -a / b).filter(|&x| x > lo).collect();
    cuts.sort_by(f64::total_cmp);
    let g = |x: f64| {
        0.5 * k * x * x + terms.iter().map(|&(a, b, c)| c * (a + b * x).abs()).sum::<f64>()
    };
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(lo);
    bounds.extend(cuts);
    bounds.push(f64::INFINITY);
    let mut best = (f64::INFINITY, lo);
    for w in bounds.windows(2) {
        let (p, q) = (w[0], w[1]);
        let mid = match (p.is_finite(), q.is_finite()) {
            (true, true) => 0.5 * (p + q),
            (true, false) => p + 1.0,
            (false, true) => q - 1.0,
            (false, false) => 0.0,
        };
        let s: f64 = active.clone().map(|&(a, b, c)| c * b * (a + b * mid).signum()).sum();
        let x = (-s / k).clamp(p, q);
        for cand in [x, p] {
            if cand.is_finite() {
                let v = g(cand);
                if v < best.0 {
                    best = (v, cand);
                }
            }
        }
    }
    best.1
}

/// Bounded least squares by cyclic coordinate descent: `A x ≈ b`, `lo <= x <= hi`.
fn bounded_least_squares(cols: &[[f64; 2]], lo: &[f64], hi: &[f64], b: [f64; 2], tol: f64) -> (Vec<f64>, [f64; 2]) {
    let n = cols.len();
    let mut x: Vec<f64> = (0..n).map(|j| 0f64.clamp(lo[j], hi[j])).collect();
    let mut r = b;
    for (j, c) in cols.iter().enumerate() {
        r[0] -= c[0] * x[j];
        r[1] -= c[1] * x[j];
    }
    for _ in 0..20_000 {
        if r[0].abs().max(r[1].abs()) <= tol {
            break;
        }
        let mut moved = 0.0f64;
        for (j, c) in cols.iter().enumerate() {
            let aa = c[0] * c[0] + c[1] * c[1];
            if aa == 0.0 {
                continue;
            }
            let nx = (x[j] + (c[0] * r[0] + c[1] * r[1]) / aa).clamp(lo[j], hi[j]);
            let d = nx - x[j];
            if d != 0.0 {
                x[j] = nx;
                r[0] -= c[0] * d;
                r[1] -= c[1] * d;
                moved = moved.max(d.abs());
            }
        }
        if moved < 1e-15 {
            break;
        }
    }
    if r[0].abs().max(r[1].abs()) > tol && n <= EXACT_LSQ_LIMIT {
        let exact = exact_bounded_least_squares(cols, lo, hi, b);
        let norm = |r: [f64; 2]| r[0] * r[0] + r[1] * r[1];
        if norm(exact.1) < norm(r) {
            return exact;
        }
    }
    (x, r)
}

/// Largest problem handed to the exhaustive solver.
const EXACT_LSQ_LIMIT: usize = 12;

/// Exact bounded least squares for a two-row system. Some optimum has at most two
/// variables strictly inside their bounds, so every such active set is tried.
fn exact_bounded_least_squares(cols: &[[f64; 2]], lo: &[f64], hi: &[f64], b: [f64; 2]) -> (Vec<f64>, [f64; 2]) {
    let n = cols.len();
    let residual = |x: &[f64]| {
        let mut r = b;
        for (c, &v) in cols.iter().zip(x) {
            r[0] -= c[0] * v;
            r[1] -= c[1] * v;
        }
        r
    };
    let norm = |r: [f64; 2]| r[0] * r[0] + r[1] * r[1];
    let inside = |j: usize, v: f64| v.is_finite() && v >= lo[j] - 1e-12 && v <= hi[j] + 1e-12;
    let mut best: Option<(f64, Vec<f64>, [f64; 2])> = None;
    let mut free_sets: Vec<Vec<usize>> = vec![vec![]];
    for i in 0..n {
        free_sets.push(vec![i]);
        for j in i + 1..n {
            free_sets.push(vec![i, j]);
        }
    }
    for free in &free_sets {
        // Fixed variables sit at a finite bound; enumerate the choices.
        let fixed: Vec<usize> = (0..n).filter(|j| !free.contains(j)).collect();
        let choices: Vec<Vec<f64>> = fixed
            .iter()
            .map(|&j| [lo[j], hi[j]].into_iter().filter(|v| v.is_finite()).collect::<Vec<_>>())
            .collect();
        if choices.iter().any(Vec::is_empty) {
            continue;
        }
        let combos: usize = choices.iter().map(Vec::len).product();
        for k in 0..combos {
            let mut x = vec![0.0; n];
            let mut rest = k;
            for (&j, ch) in fixed.iter().zip(&choices) {
                x[j] = ch[rest % ch.len()];
                rest /= ch.len();
            }
            let r = residual(&x);
            let ok = match free.as_slice() {
                [] => true,
                &[i] => {
                    let c = cols[i];
                    let aa = c[0] * c[0] + c[1] * c[1];
                    aa > 0.0 && {
                        x[i] = (c[0] * r[0] + c[1] * r[1]) / aa;
                        inside(i, x[i])
                    }
                }
                &[i, j] => {
                    let (a, c) = (cols[i], cols[j]);
                    let det = a[0] * c[1] - a[1] * c[0];
                    det.abs() > 1e-18 && {
                        x[i] = (r[0] * c[1] - c[0] * r[1]) / det;
                        x[j] = (a[0] * r[1] - r[0] * a[1]) / det;
                        inside(i, x[i]) && inside(j, x[j])
                    }
                }
                _ => unreachable!(),
            };
            if !ok {
                continue;
            }
            for &j in free {
                x[j] = x[j].clamp(lo[j], hi[j]);
            }
            let r = residual(&x);
            if best.as_ref().is_none_or(|(v, _, _)| norm(r) < *v) {
                best = Some((norm(r), x, r));
            }
        }
    }
    match best {
        Some((_, x, r)) => (x, r),
        None => {
            let x: Vec<f64> = (0..n).map(|j| 0f64.clamp(lo[j], hi[j])).collect();
            let r = residual(&x);
            (x, r)
        }
    }
}

struct Forces {
    contacts: Vec<Contact>,
    residual: f64,
}

impl Simulator {
    /// Wrist deflection and contact set for the arm at `arm`, continuing from `prev`.
    pub fn resolve_equilibrium(
        &self,
        arm: ArmPose,
        prev: &SimState,
    ) -> Result<(WristDeflection, Vec<Contact>), SimError> {
        let peg = &self.scene.peg;
        let p = &self.params;
        let pivot0 = undeflected_pivot(arm, peg.height);
        let base_phi = arm.theta + peg.grasp_angle;
        let local = peg_local_vertices(peg);

        if prev.contacts.is_empty() {
            let rest = peg_polygon(arm, WristDeflection::ZERO, peg);
            if self.board.lift(&rest) < -p.detection_band {
                return Ok((WristDeflection::ZERO, Vec::new()));
            }
        }

        let prev_pose = prev.peg_pose();
        let anchors: Vec<Anchor> = prev
            .contacts
            .iter()
            .filter(|c| c.normal_force > 0.0)
            .map(|c| {
                let material = match c.feature {
                    ContactFeature::VertexFace { vertex, .. } => local[vertex as usize],
                    ContactFeature::CornerEdge { .. } => prev_pose.to_local(c.point),
                };
                Anchor {
                    feature: c.feature,
                    material,
                    prev_world: prev_pose.to_world(material),
                    tangent: c.tangent(),
                    normal_force: c.normal_force,
                }
            })
            .collect();

        let mu = self.scene.friction_coefficient;
        let reach = (0.25 * peg.width * peg.width + peg.height * peg.height).sqrt();
        let mut normal: Vec<f64> = anchors.iter().map(|a| a.normal_force).collect();
        let mut damping = 1.0;
        let mut last_delta: Vec<f64> = vec![0.0; anchors.len()];
        let mut start = None;
        let mut fallback: Option<(f64, WristDeflection, Vec<Contact>)> = None;

        for _ in 0..p.max_iters.max(1) {
            let problem = Problem {
                sim: self,
                pivot0,
                base_phi,
                local,
                terms: anchors
                    .iter()
                    .zip(&normal)
                    .map(|(a, &n)| FrictionTerm {
                        material: a.material,
                        prev_world: a.prev_world,
                        tangent: a.tangent,
                        c: mu * n.max(0.0),
                    })
                    .collect(),
            };
            let th0 = match start {
                Some(th) => th,
                None => {
                    let th = problem
                        .project(prev.deflection, reach, p.tol_pen)
                        .ok_or_else(|| SimError::NoConvergence("no reachable orientation".into()))?;
                    start = Some(th);
                    th
                }
            };
            let mut dth = problem.search(th0);
            if anchors.is_empty() {
                // Nothing to follow: take the lowest basin, not just the nearest one.
                if let Some(g) = problem.global_start() {
                    let alt = problem.search(g);
                    if problem.eval(alt).0 < problem.eval(dth).0 {
                        dth = alt;
                    }
                }
            }
            let (_, dz) = problem.eval(dth);
            let defl = WristDeflection { dz, dtheta: dth };

            let forces = self.recover_forces(arm, defl, &anchors, &normal);
            let new_normal: Vec<f64> = anchors
                .iter()
                .map(|a| {
                    forces
                        .contacts
                        .iter()
                        .find(|c| c.feature == a.feature)
                        .map_or(0.0, |c| c.normal_force)
                })
                .collect();
            let mut worst = 0.0f64;
            let mut flipped = false;
            for (i, (&n_new, &n_old)) in new_normal.iter().zip(&normal).enumerate() {
                let d = n_new - n_old;
                worst = worst.max(mu * d.abs());
                flipped |= d * last_delta[i] < 0.0;
                last_delta[i] = d;
            }
            // Halve the step while the normals oscillate, regrow it while they drift.
            damping = if flipped {
                (damping * 0.5f64).max(0.05)
            } else {
                (damping * 1.5f64).min(1.0)
            };
            let admissible = forces.residual <= p.tol_f
                && forces
                    .contacts
                    .iter()
                    .all(|c| c.tangential_force.abs() <= mu * c.normal_force + p.tol_f);
            if admissible && fallback.as_ref().is_none_or(|(w, _, _)| worst < *w) {
                fallback = Some((worst, defl, forces.contacts.clone()));
            }
            if worst <= 0.5 * p.tol_f {
                if forces.residual > p.tol_f {
                    return Err(SimError::NoConvergence(format!(
                        "force residual {:.3e} N exceeds tolerance",
                        forces.residual
                    )));
                }
                if forces.contacts.is_empty() {
                    let rest = peg_polygon(arm, WristDeflection::ZERO, peg);
                    if self.board.lift(&rest) <= 0.0 {
                        return Ok((WristDeflection::ZERO, Vec::new()));
                    }
                }
                return Ok((defl, forces.contacts));
            }
            for (n, n_new) in normal.iter_mut().zip(new_normal) {
                *n += damping * (n_new - *n);
            }
        }
        // A cycling fixed point still visits equilibria whose friction lies inside the
        // cone; the least inconsistent one is kept rather than aborting the step.
        if let Some((worst, defl, contacts)) = fallback {
            log::debug!("friction fixed point cycling, keeping admissible iterate (mismatch {worst:.3e} N)");
            return Ok((defl, contacts));
        }
        Err(SimError::NoConvergence(format!(
            "friction fixed point did not settle in {} iterations",
            p.max_iters
        )))
    }

    /// Contact multipliers consistent with the spring wrench at `defl`.
    fn recover_forces(
        &self,
        arm: ArmPose,
        defl: WristDeflection,
        anchors: &[Anchor],
        normal: &[f64],
    ) -> Forces {
        let peg = &self.scene.peg;
        let mu = self.scene.friction_coefficient;
        let pose = PegPose::new(arm, defl, peg);
        let mut contacts = self.contacts_of(arm, defl);
        let h = peg.height;
        let target = [self.wrist.k_z * defl.dz, self.wrist.k_theta * defl.dtheta / h];

        // Each contact contributes a normal multiplier and possibly a friction unknown.
        let mut cols = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut owner = Vec::new();
        let mut b = target;
        let mut fixed_t = vec![None; contacts.len()];
        for (j, c) in contacts.iter().enumerate() {
            let r = c.point - pose.pivot;
            let n = c.normal;
            cols.push([n.z, r.cross(n) / h]);
            lo.push(0.0);
            hi.push(f64::INFINITY);
            owner.push((j, false));
            let Some(i) = anchors.iter().position(|a| a.feature == c.feature) else {
                continue;
            };
            let a = &anchors[i];
            let cap = mu * normal[i].max(0.0);
            if cap <= 0.0 {
                continue;
            }
            let slip = (pose.to_world(a.material) - a.prev_world).dot(a.tangent);
            let t = c.tangent();
            let col = [t.z, r.cross(t) / h];
            if slip.abs() > SLIP_EPS {
                let tf = -cap * slip.signum();
                b[0] -= col[0] * tf;
                b[1] -= col[1] * tf;
                fixed_t[j] = Some(tf);
            } else {
                cols.push(col);
                lo.push(-cap);
                hi.push(cap);
                owner.push((j, true));
            }
        }
        let (x, r) = bounded_least_squares(&cols, &lo, &hi, b, 1e-2 * self.params.tol_f);
        for (k, &(j, tangential)) in owner.iter().enumerate() {
            if tangential {
                contacts[j].tangential_force = x[k];
            } else {
                contacts[j].normal_force = x[k];
            }
        }
        for (j, tf) in fixed_t.into_iter().enumerate() {
            if let Some(tf) = tf {
                contacts[j].tangential_force = tf;
                contacts[j].mode = ContactMode::Sliding;
            }
        }
        Forces {
            contacts,
            residual: r[0].abs().max(r[1].abs()),
        }
    }
}
