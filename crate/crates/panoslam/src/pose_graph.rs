//! Nonlinear least squares over keyframe poses: relative-pose edges between
//! keyframes plus unary gravity-direction factors, solved with
//! Levenberg-Marquardt on dense 6Nx6N normal equations.
//!
//! State perturbation is body-frame for rotations and world-frame for
//! translations: `R <- R exp(dr)`, `t <- t + dt`. Jacobians are analytic and
//! checked against finite differences in the test suite.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{rotation_exp, rotation_log, skew, so3_right_jacobian_inv, Pose};

/// Default world-frame gravity direction (down).
pub const WORLD_GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

/// Relative-pose measurement between two nodes: `pose_to ~ pose_from * measured`.
/// Weights are a 6-vector of information values, rotation (rad^-2) first,
/// translation (m^-2) second.
#[derive(Clone, Copy, Debug)]
pub struct RelativePoseFactor {
    pub from: u32,
    pub to: u32,
    pub measured: Pose,
    pub weights: [f64; 6],
}

impl RelativePoseFactor {
    pub fn new(from: u32, to: u32, measured: Pose, rotation_weight: f64, translation_weight: f64) -> Self {
        RelativePoseFactor {
            from,
            to,
            measured,
            weights: [
                rotation_weight,
                rotation_weight,
                rotation_weight,
                translation_weight,
                translation_weight,
                translation_weight,
            ],
        }
    }
}

/// Unary factor tying a node's orientation to the gravity direction observed
/// in its body frame.
#[derive(Clone, Copy, Debug)]
pub struct GravityFactor {
    pub node: u32,
    /// Observed gravity (down) in the node body frame, unit norm.
    pub direction: Vector3<f64>,
    pub weight: f64,
}

impl GravityFactor {
    pub fn new(node: u32, direction: Vector3<f64>, weight: f64) -> Self {
        GravityFactor { node, direction: direction.normalize(), weight }
    }
}

/// A gauge-fixed pose-graph problem.
#[derive(Clone, Debug)]
pub struct GraphProblem {
    pub poses: BTreeMap<u32, Pose>,
    pub relative: Vec<RelativePoseFactor>,
    pub gravity: Vec<GravityFactor>,
    pub anchor: u32,
    pub world_gravity: Vector3<f64>,
}

impl GraphProblem {
    pub fn new(poses: BTreeMap<u32, Pose>, anchor: u32) -> Self {
        GraphProblem {
            poses,
            relative: Vec::new(),
            gravity: Vec::new(),
            anchor,
            world_gravity: WORLD_GRAVITY,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.poses.contains_key(&self.anchor) {
            return Err(Error::InvalidConfig(format!("anchor node {} missing", self.anchor)));
        }
        for f in &self.relative {
            if !self.poses.contains_key(&f.from) || !self.poses.contains_key(&f.to) {
                return Err(Error::InvalidConfig(format!(
                    "relative factor references missing node ({} -> {})",
                    f.from, f.to
                )));
            }
            if f.weights.iter().any(|&w| w <= 0.0) {
                return Err(Error::InvalidConfig("factor weights must be positive".into()));
            }
        }
        for f in &self.gravity {
            if !self.poses.contains_key(&f.node) {
                return Err(Error::InvalidConfig(format!("gravity factor references missing node {}", f.node)));
            }
        }
        Ok(())
    }
}

/// Unweighted relative residual and its raw ingredients.
fn relative_raw(factor: &RelativePoseFactor, from: &Pose, to: &Pose) -> (Vector3<f64>, Vector3<f64>) {
    let rm = factor.measured.rotation();
    let e = rm.inverse() * from.rotation().inverse() * to.rotation();
    let r_rot = rotation_log(&e);
    let v = from.rotation().inverse() * (to.translation() - from.translation());
    let r_trans = rm.inverse() * (v - factor.measured.translation());
    (r_rot, r_trans)
}

/// Weighted residual of a relative-pose factor:
/// `log(measured^-1 * pose_from^-1 * pose_to)`, per-component weighted by
/// the square root of the information values (rotation first).
pub fn residual_relative(factor: &RelativePoseFactor, poses: &BTreeMap<u32, Pose>) -> Vector6<f64> {
    let from = &poses[&factor.from];
    let to = &poses[&factor.to];
    let (r_rot, r_trans) = relative_raw(factor, from, to);
    Vector6::new(
        factor.weights[0].sqrt() * r_rot.x,
        factor.weights[1].sqrt() * r_rot.y,
        factor.weights[2].sqrt() * r_rot.z,
        factor.weights[3].sqrt() * r_trans.x,
        factor.weights[4].sqrt() * r_trans.y,
        factor.weights[5].sqrt() * r_trans.z,
    )
}

/// Weighted residual of a gravity factor:
/// `rotate(pose rotation, observed body gravity) - world gravity`.
pub fn residual_gravity(
    factor: &GravityFactor,
    poses: &BTreeMap<u32, Pose>,
    world_gravity: &Vector3<f64>,
) -> Vector3<f64> {
    let pose = &poses[&factor.node];
    (pose.rotation() * factor.direction - world_gravity) * factor.weight.sqrt()
}

/// Jacobians of the weighted relative residual with respect to the local
/// perturbations of the `from` and `to` nodes (each 6x6, [rot; trans]).
fn relative_jacobians(
    factor: &RelativePoseFactor,
    from: &Pose,
    to: &Pose,
) -> (nalgebra::Matrix6<f64>, nalgebra::Matrix6<f64>) {
    let (r_rot, _) = relative_raw(factor, from, to);
    let rm_t = factor.measured.rotation().inverse().to_rotation_matrix().into_inner();
    let rf_t = from.rotation().inverse().to_rotation_matrix().into_inner();
    let v = rf_t * (to.translation() - from.translation());

    let jr_inv = so3_right_jacobian_inv(&r_rot);
    // Left Jacobian inverse: Jl^{-1}(phi) = Jr^{-1}(-phi).
    let jl_inv = so3_right_jacobian_inv(&(-r_rot));

    let mut j_from = nalgebra::Matrix6::<f64>::zeros();
    let mut j_to = nalgebra::Matrix6::<f64>::zeros();

    // Rotation rows.
    let d_rot_to = jr_inv;
    let d_rot_from = -jl_inv * rm_t;
    // Translation rows.
    let d_trans_to_dt = rm_t * rf_t;
    let d_trans_from_dt = -rm_t * rf_t;
    let d_trans_from_dr = rm_t * skew(&v);

    j_to.fixed_view_mut::<3, 3>(0, 0).copy_from(&d_rot_to);
    j_to.fixed_view_mut::<3, 3>(3, 3).copy_from(&d_trans_to_dt);
    j_from.fixed_view_mut::<3, 3>(0, 0).copy_from(&d_rot_from);
    j_from.fixed_view_mut::<3, 3>(3, 0).copy_from(&d_trans_from_dr);
    j_from.fixed_view_mut::<3, 3>(3, 3).copy_from(&d_trans_from_dt);

    // Row weighting.
    for (row, w) in factor.weights.iter().enumerate() {
        let s = w.sqrt();
        for col in 0..6 {
            j_from[(row, col)] *= s;
            j_to[(row, col)] *= s;
        }
    }
    (j_from, j_to)
}

/// Jacobian of the weighted gravity residual with respect to the node's
/// local rotation perturbation (3x3; translation columns are zero).
fn gravity_jacobian(factor: &GravityFactor, pose: &Pose) -> Matrix3<f64> {
    let r = pose.rotation_matrix();
    -r * skew(&factor.direction) * factor.weight.sqrt()
}

/// Result of an optimization run.
#[derive(Clone, Debug)]
pub struct Optimized {
    pub poses: BTreeMap<u32, Pose>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step (starting with the initial cost).
    pub cost_history: Vec<f64>,
}

pub fn total_cost(problem: &GraphProblem, poses: &BTreeMap<u32, Pose>) -> f64 {
    let mut cost = 0.0;
    for f in &problem.relative {
        cost += residual_relative(f, poses).norm_squared();
    }
    for f in &problem.gravity {
        cost += residual_gravity(f, poses, &problem.world_gravity).norm_squared();
    }
    cost
}

/// Levenberg-Marquardt with multiplicative damping (init 1e-4, x10 on
/// reject, /10 on accept). The anchor node is held fixed; accepted steps
/// never increase the cost; iteration stops when the relative cost change
/// drops below `tolerance` or the iteration cap is reached.
pub fn optimize(problem: &GraphProblem, max_iterations: usize, tolerance: f64) -> Result<Optimized> {
    problem.validate()?;
    let free: Vec<u32> = problem.poses.keys().copied().filter(|&id| id != problem.anchor).collect();
    let slot: BTreeMap<u32, usize> = free.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let dim = free.len() * 6;

    let mut poses = problem.poses.clone();
    let mut cost = total_cost(problem, &poses);
    if !cost.is_finite() {
        return Err(Error::NumericalFailure("initial pose-graph cost is non-finite".into()));
    }
    let mut history = vec![cost];
    if dim == 0 {
        return Ok(Optimized { poses, cost, iterations: 0, converged: true, cost_history: history });
    }

    let mut lambda = 1e-4;
    let mut converged = cost < 1e-16;
    let mut iterations = 0;

    for _ in 0..max_iterations {
        if converged {
            break;
        }
        // Assemble normal equations at the current estimate.
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for f in &problem.relative {
            let from = poses[&f.from];
            let to = poses[&f.to];
            let r = residual_relative(f, &poses);
            let (j_from, j_to) = relative_jacobians(f, &from, &to);
            let blocks: [(Option<usize>, nalgebra::Matrix6<f64>); 2] = [
                (slot.get(&f.from).copied(), j_from),
                (slot.get(&f.to).copied(), j_to),
            ];
            for (sa, ja) in blocks.iter().filter_map(|(s, j)| s.map(|s| (s, j))) {
                g.rows_mut(sa * 6, 6).axpy(-1.0, &(ja.transpose() * r), 1.0);
                for (sb, jb) in blocks.iter().filter_map(|(s, j)| s.map(|s| (s, j))) {
                    let block = ja.transpose() * jb;
                    let mut view = h.view_mut((sa * 6, sb * 6), (6, 6));
                    view += block;
                }
            }
        }
        for f in &problem.gravity {
            let Some(&s) = slot.get(&f.node) else { continue };
            let pose = poses[&f.node];
            let r = residual_gravity(f, &poses, &problem.world_gravity);
            let j = gravity_jacobian(f, &pose); // rotation columns only
            let mut view_h = h.view_mut((s * 6, s * 6), (3, 3));
            view_h += j.transpose() * j;
            g.rows_mut(s * 6, 3).axpy(-1.0, &(j.transpose() * r), 1.0);
        }

        // Damped solve; grow lambda until a step is accepted.
        let mut accepted = false;
        for _try in 0..12 {
            let mut damped = h.clone();
            for k in 0..dim {
                let d = h[(k, k)].max(1e-12);
                damped[(k, k)] = h[(k, k)] + lambda * d;
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&g);
            if !step.iter().all(|v| v.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            // Candidate update.
            let mut candidate = poses.clone();
            for (&id, &s) in &slot {
                let dr = Vector3::new(step[s * 6], step[s * 6 + 1], step[s * 6 + 2]);
                let dt = Vector3::new(step[s * 6 + 3], step[s * 6 + 4], step[s * 6 + 5]);
                let p = candidate[&id];
                candidate.insert(id, Pose::new(p.rotation() * rotation_exp(&dr), p.translation() + dt));
            }
            let new_cost = total_cost(problem, &candidate);
            if new_cost.is_finite() && new_cost < cost {
                let relative_drop = (cost - new_cost) / cost.max(1e-300);
                poses = candidate;
                cost = new_cost;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if relative_drop < tolerance || cost < 1e-16 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        iterations += 1;
        if !accepted {
            // Damping saturated: no descent direction left at this scale.
            converged = true;
        }
    }

    Ok(Optimized { poses, cost, iterations, converged, cost_history: history })
}

pub mod g2o {
    //! Plain-text pose-graph interchange (VERTEX_SE3:QUAT / EDGE_SE3:QUAT
    //! records with upper-triangular information matrices) for cross-tool
    //! validation. The edge information matrix is written as the diagonal of
    //! this crate's per-component weights in (x y z qx qy qz) order, and
    //! only the diagonal is kept on import.

    use std::collections::BTreeMap;
    use std::io::{BufRead, BufReader, Read, Write};

    use nalgebra::{Quaternion, UnitQuaternion, Vector3};

    use super::{GraphProblem, RelativePoseFactor};
    use crate::error::{Error, Result};
    use crate::geometry::Pose;

    pub fn write<W: Write>(problem: &GraphProblem, w: &mut W) -> Result<()> {
        for (&id, pose) in &problem.poses {
            let t = pose.translation();
            let q = pose.rotation().coords; // (x, y, z, w)
            writeln!(w, "VERTEX_SE3:QUAT {id} {} {} {} {} {} {} {}", t.x, t.y, t.z, q.x, q.y, q.z, q.w)?;
        }
        for f in &problem.relative {
            let t = f.measured.translation();
            let q = f.measured.rotation().coords;
            write!(w, "EDGE_SE3:QUAT {} {} {} {} {} {} {} {} {}", f.from, f.to, t.x, t.y, t.z, q.x, q.y, q.z, q.w)?;
            // Upper triangle of diag(trans_w, rot_w) in g2o ordering.
            let diag = [f.weights[3], f.weights[4], f.weights[5], f.weights[0], f.weights[1], f.weights[2]];
            for i in 0..6 {
                for j in i..6 {
                    let v = if i == j { diag[i] } else { 0.0 };
                    write!(w, " {v}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R, path: &str) -> Result<GraphProblem> {
        let reader = BufReader::new(r);
        let mut poses = BTreeMap::new();
        let mut relative = Vec::new();
        let mut offset: u64 = 0;
        let err = |offset: u64, m: String| Error::Parse { path: path.into(), offset, message: m };
        for line in reader.lines() {
            let line = line?;
            let len = line.len() as u64 + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.first().copied() {
                Some("VERTEX_SE3:QUAT") => {
                    if fields.len() != 9 {
                        return Err(err(offset, format!("vertex needs 9 fields, got {}", fields.len())));
                    }
                    let mut v = [0f64; 8];
                    for (k, f) in fields[1..].iter().enumerate() {
                        v[k] = f.parse().map_err(|e| err(offset, format!("field '{f}': {e}")))?;
                    }
                    let q = UnitQuaternion::from_quaternion(Quaternion::new(v[7], v[4], v[5], v[6]));
                    poses.insert(v[0] as u32, Pose::new(q, Vector3::new(v[1], v[2], v[3])));
                }
                Some("EDGE_SE3:QUAT") => {
                    if fields.len() != 10 + 21 {
                        return Err(err(offset, format!("edge needs 31 fields, got {}", fields.len())));
                    }
                    let mut v = [0f64; 30];
                    for (k, f) in fields[1..].iter().enumerate() {
                        v[k] = f.parse().map_err(|e| err(offset, format!("field '{f}': {e}")))?;
                    }
                    let q = UnitQuaternion::from_quaternion(Quaternion::new(v[8], v[5], v[6], v[7]));
                    let measured = Pose::new(q, Vector3::new(v[2], v[3], v[4]));
                    // Diagonal positions of the upper-triangular packing.
                    let diag = [v[9], v[15], v[20], v[24], v[27], v[29]];
                    relative.push(RelativePoseFactor {
                        from: v[0] as u32,
                        to: v[1] as u32,
                        measured,
                        weights: [diag[3], diag[4], diag[5], diag[0], diag[1], diag[2]],
                    });
                }
                _ => {} // tolerate FIX and other records
            }
            offset += len;
        }
        if poses.is_empty() {
            return Err(err(0, "no VERTEX_SE3:QUAT records".into()));
        }
        let anchor = *poses.keys().next().unwrap();
        let mut problem = GraphProblem::new(poses, anchor);
        problem.relative = relative;
        Ok(problem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_pose(rng: &mut impl Rng, rot_scale: f64, trans_scale: f64) -> Pose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let dir = if axis.norm() > 1e-9 { axis.normalize() } else { Vector3::x() };
        Pose::from_parts(
            dir * rng.random_range(0.0..rot_scale),
            Vector3::new(
                rng.random_range(-trans_scale..trans_scale),
                rng.random_range(-trans_scale..trans_scale),
                rng.random_range(-trans_scale..trans_scale),
            ),
        )
    }

    #[test]
    fn consistent_measurement_gives_zero_residual() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let a = random_pose(&mut rng, 2.0, 5.0);
        let measured = random_pose(&mut rng, 1.0, 2.0);
        let b = a.compose(&measured);
        let mut poses = BTreeMap::new();
        poses.insert(0, a);
        poses.insert(1, b);
        let f = RelativePoseFactor::new(0, 1, measured, 1.0, 1.0);
        assert!(residual_relative(&f, &poses).norm() < 1e-12);
    }

    #[test]
    fn translation_offset_appears_in_residual() {
        let measured = Pose::identity();
        let mut poses = BTreeMap::new();
        poses.insert(0, Pose::identity());
        poses.insert(1, Pose::from_translation(Vector3::new(1.0, 0.0, 0.0)));
        let f = RelativePoseFactor::new(0, 1, measured, 1.0, 1.0);
        let r = residual_relative(&f, &poses);
        assert_relative_eq!(r[3], 1.0, epsilon = 1e-12);
        assert!(r.rows(0, 3).norm() < 1e-12);
    }

    #[test]
    fn random_consistent_chain_has_tiny_residuals() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut poses = BTreeMap::new();
        let mut factors = Vec::new();
        let mut current = Pose::identity();
        poses.insert(0u32, current);
        for k in 1..30u32 {
            let m = random_pose(&mut rng, 0.8, 2.0);
            current = current.compose(&m);
            poses.insert(k, current);
            factors.push(RelativePoseFactor::new(k - 1, k, m, 100.0, 25.0));
        }
        for f in &factors {
            assert!(residual_relative(f, &poses).norm() < 1e-9);
        }
    }

    #[test]
    fn gravity_residual_cases() {
        let mut poses = BTreeMap::new();
        poses.insert(0u32, Pose::identity());
        // Upright node observing straight down.
        let f = GravityFactor::new(0, Vector3::new(0.0, 0.0, -1.0), 1.0);
        assert!(residual_gravity(&f, &poses, &WORLD_GRAVITY).norm() < 1e-12);

        // Pitched node with a co-rotated (consistent) observation.
        let pitch = Pose::from_parts(Vector3::new(0.0, 10.0f64.to_radians(), 0.0), Vector3::zeros());
        poses.insert(1u32, pitch);
        let obs = pitch.rotation().inverse() * WORLD_GRAVITY;
        let f = GravityFactor::new(1, obs, 1.0);
        assert!(residual_gravity(&f, &poses, &WORLD_GRAVITY).norm() < 1e-12);

        // 5 degrees of pitch error: chord length 2 sin(2.5 deg).
        let err = Pose::from_parts(Vector3::new(0.0, 5.0f64.to_radians(), 0.0), Vector3::zeros());
        poses.insert(2u32, pitch.compose(&err));
        let f = GravityFactor::new(2, obs, 1.0);
        let r = residual_gravity(&f, &poses, &WORLD_GRAVITY);
        assert_relative_eq!(r.norm(), 2.0 * (2.5f64.to_radians()).sin(), epsilon = 1e-9);
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..100 {
            let from = random_pose(&mut rng, 1.5, 4.0);
            let to = random_pose(&mut rng, 1.5, 4.0);
            let measured = random_pose(&mut rng, 1.0, 2.0);
            let f = RelativePoseFactor::new(
                0,
                1,
                measured,
                rng.random_range(0.5..100.0),
                rng.random_range(0.5..100.0),
            );
            let (j_from, j_to) = relative_jacobians(&f, &from, &to);

            let eval = |from: &Pose, to: &Pose| {
                let mut poses = BTreeMap::new();
                poses.insert(0u32, *from);
                poses.insert(1u32, *to);
                residual_relative(&f, &poses)
            };
            let perturb = |p: &Pose, k: usize, eps: f64| -> Pose {
                let mut dr = Vector3::zeros();
                let mut dt = Vector3::zeros();
                if k < 3 {
                    dr[k] = eps;
                } else {
                    dt[k - 3] = eps;
                }
                Pose::new(p.rotation() * rotation_exp(&dr), p.translation() + dt)
            };
            for k in 0..6 {
                let fd_from =
                    (eval(&perturb(&from, k, h), &to) - eval(&perturb(&from, k, -h), &to)) / (2.0 * h);
                let fd_to =
                    (eval(&from, &perturb(&to, k, h)) - eval(&from, &perturb(&to, k, -h))) / (2.0 * h);
                let col_from = j_from.column(k).clone_owned();
                let col_to = j_to.column(k).clone_owned();
                let scale = col_from.norm().max(fd_from.norm()).max(1.0);
                assert!(
                    (col_from - &fd_from).norm() / scale < 1e-5,
                    "from col {k}: {col_from:?} vs {fd_from:?}"
                );
                let scale = col_to.norm().max(fd_to.norm()).max(1.0);
                assert!(
                    (col_to - &fd_to).norm() / scale < 1e-5,
                    "to col {k}: {col_to:?} vs {fd_to:?}"
                );
            }

            // Gravity factor Jacobian.
            let node = random_pose(&mut rng, 1.5, 4.0);
            let g = GravityFactor::new(
                0,
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0f64),
                )
                .normalize(),
                rng.random_range(0.5..50.0),
            );
            let jg = gravity_jacobian(&g, &node);
            let eval_g = |p: &Pose| {
                let mut poses = BTreeMap::new();
                poses.insert(0u32, *p);
                residual_gravity(&g, &poses, &WORLD_GRAVITY)
            };
            for k in 0..3 {
                let fd = (eval_g(&perturb(&node, k, h)) - eval_g(&perturb(&node, k, -h))) / (2.0 * h);
                let col = jg.column(k).clone_owned();
                let scale = col.norm().max(fd.norm()).max(1.0);
                assert!((col - &fd).norm() / scale < 1e-5, "gravity col {k}");
            }
        }
    }

    #[test]
    fn consistent_chain_needs_no_iterations() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut poses = BTreeMap::new();
        let mut problem_poses = BTreeMap::new();
        let mut current = Pose::identity();
        poses.insert(0u32, current);
        problem_poses.insert(0u32, current);
        let mut problem = GraphProblem::new(BTreeMap::new(), 0);
        for k in 1..10u32 {
            let m = random_pose(&mut rng, 0.5, 2.0);
            current = current.compose(&m);
            problem_poses.insert(k, current);
            problem.relative.push(RelativePoseFactor::new(k - 1, k, m, 100.0, 25.0));
        }
        problem.poses = problem_poses;
        let out = optimize(&problem, 50, 1e-9).unwrap();
        assert!(out.cost < 1e-12, "cost {}", out.cost);
        assert!(out.converged);
    }

    /// Build the noisy-circle benchmark: ground truth on a circle, noisy
    /// odometry, one loop-closure edge.
    fn circle_benchmark(
        nodes: usize,
        seed: u64,
    ) -> (Vec<Pose>, GraphProblem) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let radius = 10.0;
        let step = std::f64::consts::TAU / nodes as f64;
        let truth: Vec<Pose> = (0..nodes)
            .map(|k| {
                let a = k as f64 * step;
                Pose::from_parts(
                    Vector3::new(0.0, 0.0, a + std::f64::consts::FRAC_PI_2),
                    Vector3::new(radius * a.cos(), radius * a.sin(), 0.0),
                )
            })
            .collect();
        // Systematic yaw drift plus random jitter: the classic failure mode
        // a loop closure corrects.
        let noise = |rng: &mut ChaCha12Rng| {
            Pose::from_parts(
                Vector3::new(
                    rng.random_range(-0.005..0.005),
                    rng.random_range(-0.005..0.005),
                    0.025 + rng.random_range(-0.01..0.01),
                ),
                Vector3::new(
                    0.03 + rng.random_range(-0.04..0.04),
                    rng.random_range(-0.04..0.04),
                    rng.random_range(-0.02..0.02),
                ),
            )
        };
        // Odometry estimate: chain the noisy measurements.
        let mut measurements = Vec::new();
        for k in 0..nodes - 1 {
            let m = truth[k].inverse().compose(&truth[k + 1]).compose(&noise(&mut rng));
            measurements.push(m);
        }
        let mut odometry = vec![truth[0]];
        for m in &measurements {
            let last = *odometry.last().unwrap();
            odometry.push(last.compose(m));
        }
        let mut poses = BTreeMap::new();
        for (k, p) in odometry.iter().enumerate() {
            poses.insert(k as u32, *p);
        }
        let mut problem = GraphProblem::new(poses, 0);
        for (k, m) in measurements.iter().enumerate() {
            problem.relative.push(RelativePoseFactor::new(k as u32, k as u32 + 1, *m, 100.0, 25.0));
        }
        // Loop closure from the last node back to the start: a direct
        // re-registration, much less noisy than chained odometry, and
        // weighted accordingly.
        let loop_m = truth[nodes - 1].inverse().compose(&truth[0]).compose(&Pose::from_parts(
            Vector3::new(0.001, -0.001, 0.002),
            Vector3::new(0.01, -0.01, 0.005),
        ));
        problem.relative.push(RelativePoseFactor::new(nodes as u32 - 1, 0, loop_m, 1e4, 2.5e3));
        (truth, problem)
    }

    fn position_rmse(poses: &BTreeMap<u32, Pose>, truth: &[Pose]) -> f64 {
        let n = truth.len() as f64;
        let ss: f64 = truth
            .iter()
            .enumerate()
            .map(|(k, t)| (poses[&(k as u32)].translation() - t.translation()).norm_squared())
            .sum();
        (ss / n).sqrt()
    }

    #[test]
    fn noisy_circle_improves_at_least_5x() {
        let (truth, problem) = circle_benchmark(20, 11);
        let before = position_rmse(&problem.poses, &truth);
        let out = optimize(&problem, 100, 1e-12).unwrap();
        let after = position_rmse(&out.poses, &truth);
        assert!(
            after * 5.0 <= before,
            "before {before:.4}, after {after:.4}"
        );
        // Accepted LM steps never increase the cost.
        for w in out.cost_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn gravity_factors_fix_pitch_drift() {
        // Straight 20-node chain along +x with a systematic 0.5 degree pitch
        // bias injected into every odometry edge.
        let nodes = 20usize;
        let bias = Pose::from_parts(Vector3::new(0.0, 0.5f64.to_radians(), 0.0), Vector3::zeros());
        let step = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let truth: Vec<Pose> = (0..nodes)
            .map(|k| Pose::from_translation(Vector3::new(k as f64, 0.0, 0.0)))
            .collect();
        let measurement = step.compose(&bias);
        let mut odometry = vec![truth[0]];
        for _ in 0..nodes - 1 {
            let last = *odometry.last().unwrap();
            odometry.push(last.compose(&measurement));
        }
        let pitch_of = |p: &Pose| {
            let fwd = p.rotation() * Vector3::x();
            (-fwd.z).asin()
        };
        let mean_pitch_err = |poses: &BTreeMap<u32, Pose>| {
            (0..nodes).map(|k| pitch_of(&poses[&(k as u32)]).abs()).sum::<f64>() / nodes as f64
        };

        let mut poses = BTreeMap::new();
        for (k, p) in odometry.iter().enumerate() {
            poses.insert(k as u32, *p);
        }
        let mut problem = GraphProblem::new(poses.clone(), 0);
        for k in 0..nodes - 1 {
            problem.relative.push(RelativePoseFactor::new(k as u32, k as u32 + 1, measurement, 100.0, 25.0));
        }
        let odo_only = optimize(&problem, 100, 1e-12).unwrap();
        let err_without = mean_pitch_err(&odo_only.poses);

        for k in 0..nodes {
            // True gravity observed in each body frame.
            problem.gravity.push(GravityFactor::new(k as u32, WORLD_GRAVITY, 10.0));
        }
        let with_gravity = optimize(&problem, 100, 1e-12).unwrap();
        let err_with = mean_pitch_err(&with_gravity.poses);
        assert!(
            err_with * 3.0 <= err_without,
            "pitch error with {err_with:.5} rad vs without {err_without:.5} rad"
        );
    }

    #[test]
    fn gauge_invariance_relative_factors() {
        let (_, problem) = circle_benchmark(12, 21);
        let out_a = optimize(&problem, 100, 1e-12).unwrap();
        // Rigidly transform all initial poses and re-anchor.
        let g = Pose::from_parts(Vector3::new(0.4, -0.3, 1.1), Vector3::new(5.0, -2.0, 3.0));
        let mut moved = problem.clone();
        for (_, p) in moved.poses.iter_mut() {
            *p = g.compose(p);
        }
        let out_b = optimize(&moved, 100, 1e-12).unwrap();
        for (&id, pb) in &out_b.poses {
            let expected = g.compose(&out_a.poses[&id]);
            assert!(pb.translation_distance_to(&expected) < 1e-6, "node {id}");
            assert!(pb.rotation_angle_to(&expected) < 1e-6, "node {id}");
        }
    }

    #[test]
    fn gauge_invariance_yaw_translation_with_gravity() {
        let (_, mut problem) = circle_benchmark(12, 22);
        for k in 0..12u32 {
            let r = problem.poses[&k].rotation();
            problem.gravity.push(GravityFactor::new(k, r.inverse() * WORLD_GRAVITY, 10.0));
        }
        let out_a = optimize(&problem, 100, 1e-12).unwrap();
        // Gravity pins roll and pitch; yaw plus translation stays free.
        let g = Pose::from_parts(Vector3::new(0.0, 0.0, 0.8), Vector3::new(-3.0, 7.0, 1.5));
        let mut moved = problem.clone();
        for (_, p) in moved.poses.iter_mut() {
            *p = g.compose(p);
        }
        let out_b = optimize(&moved, 100, 1e-12).unwrap();
        for (&id, pb) in &out_b.poses {
            let expected = g.compose(&out_a.poses[&id]);
            assert!(pb.translation_distance_to(&expected) < 1e-6, "node {id}");
            assert!(pb.rotation_angle_to(&expected) < 1e-6, "node {id}");
        }
    }

    #[test]
    fn g2o_round_trip() {
        let (_, problem) = circle_benchmark(8, 31);
        let mut buf = Vec::new();
        g2o::write(&problem, &mut buf).unwrap();
        let back = g2o::read(buf.as_slice(), "mem.g2o").unwrap();
        assert_eq!(back.poses.len(), problem.poses.len());
        assert_eq!(back.relative.len(), problem.relative.len());
        for (&id, p) in &problem.poses {
            assert!(back.poses[&id].translation_distance_to(p) < 1e-12);
            assert!(back.poses[&id].rotation_angle_to(p) < 1e-12);
        }
        for (a, b) in problem.relative.iter().zip(&back.relative) {
            assert_eq!((a.from, a.to), (b.from, b.to));
            assert_eq!(a.weights, b.weights);
            assert!(a.measured.translation_distance_to(&b.measured) < 1e-12);
        }
    }
}
