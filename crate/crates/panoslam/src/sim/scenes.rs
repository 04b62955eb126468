//! Canonical test scenes and scripted trajectories.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{Primitive, SceneModel, ScriptedTrajectory};
use crate::error::{Error, Result};
use crate::geometry::{rotation_exp, Pose};

pub const SCENE_NAMES: [&str; 5] =
    ["box-room", "l-corridor", "square-loop", "cylinder-forest", "corridor-transient-box"];

pub fn by_name(name: &str) -> Result<SceneModel> {
    match name {
        "box-room" => Ok(box_room()),
        "l-corridor" => Ok(l_corridor()),
        "square-loop" => Ok(square_loop_circuit()),
        "cylinder-forest" => Ok(cylinder_forest(7)),
        "corridor-transient-box" => Ok(corridor_with_transient_box(true)),
        _ => Err(Error::UnknownScene {
            name: name.to_string(),
            available: SCENE_NAMES.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

/// A cluttered rectangular room, interior 12 x 9 x 3.5 m.
pub fn box_room() -> SceneModel {
    let mut primitives = vec![Primitive::cuboid(
        Vector3::new(-6.0, -4.5, 0.0),
        Vector3::new(6.0, 4.5, 3.5),
        0.9,
    )];
    // Crates and a column break the planar symmetry.
    primitives.push(Primitive::cuboid(Vector3::new(2.0, 1.5, 0.0), Vector3::new(3.2, 2.7, 1.1), 0.7));
    primitives.push(Primitive::cuboid(Vector3::new(-4.0, -3.0, 0.0), Vector3::new(-3.0, -1.8, 0.8), 0.6));
    primitives.push(Primitive::cuboid(Vector3::new(-1.0, 3.0, 0.0), Vector3::new(0.0, 4.0, 2.2), 0.75));
    primitives.push(Primitive::cylinder(3.5, -2.5, 0.0, 3.5, 0.3, 0.8));
    primitives.push(Primitive::sphere(Vector3::new(-3.5, 2.5, 0.6), 0.6, 0.85));
    SceneModel::new(primitives)
}

/// Two corridor legs joined at a right angle.
pub fn l_corridor() -> SceneModel {
    let mut primitives = Vec::new();
    // Leg A along +x: interior [-2, 30] x [-2, 2] x [0, 3].
    // Leg B along +y from the end: interior [26, 30] x [-2, 30].
    let h = 3.0;
    let walls = [
        // leg A side walls
        Primitive::cuboid(Vector3::new(-2.0, -2.4, 0.0), Vector3::new(30.0, -2.0, h), 0.9),
        Primitive::cuboid(Vector3::new(-2.0, 2.0, 0.0), Vector3::new(26.0, 2.4, h), 0.9),
        // leg A end cap behind the start
        Primitive::cuboid(Vector3::new(-2.4, -2.4, 0.0), Vector3::new(-2.0, 2.4, h), 0.9),
        // leg B side walls
        Primitive::cuboid(Vector3::new(30.0, -2.4, 0.0), Vector3::new(30.4, 30.0, h), 0.9),
        Primitive::cuboid(Vector3::new(26.0, 2.0, 0.0), Vector3::new(26.4, 30.0, h), 0.9),
        // leg B end cap
        Primitive::cuboid(Vector3::new(26.0, 30.0, 0.0), Vector3::new(30.4, 30.4, h), 0.9),
        // floor and ceiling
        Primitive::cuboid(Vector3::new(-3.0, -3.0, -0.2), Vector3::new(31.0, 31.0, 0.0), 0.8),
        Primitive::cuboid(Vector3::new(-3.0, -3.0, h), Vector3::new(31.0, 31.0, h + 0.2), 0.8),
    ];
    primitives.extend_from_slice(&walls);
    // Door frames / cabinets pin the along-corridor direction.
    for k in 0..5 {
        let x = 2.0 + 5.5 * k as f64;
        primitives.push(Primitive::cuboid(
            Vector3::new(x, -2.0, 0.0),
            Vector3::new(x + 0.5, -1.6, 2.1),
            0.65,
        ));
        let x2 = 4.5 + 5.5 * k as f64;
        primitives.push(Primitive::cuboid(
            Vector3::new(x2, 1.6, 0.0),
            Vector3::new(x2 + 0.4, 2.0, 1.4),
            0.7,
        ));
    }
    for k in 0..5 {
        let y = 4.0 + 5.0 * k as f64;
        primitives.push(Primitive::cuboid(
            Vector3::new(26.0, y, 0.0),
            Vector3::new(26.4 + 0.4, y + 0.5, 2.0),
            0.65,
        ));
    }
    SceneModel::new(primitives)
}

/// Square corridor circuit: an 8 m wide ring between a 50 x 50 outer shell
/// and a 34 x 34 inner block, with pillars along both walls so every
/// viewpoint constrains all six degrees of freedom.
pub fn square_loop_circuit() -> SceneModel {
    let h = 4.0;
    let mut primitives = vec![
        // outer shell (hollow: rays hit its interior faces)
        Primitive::cuboid(Vector3::new(-25.0, -25.0, 0.0), Vector3::new(25.0, 25.0, h), 0.9),
        // inner block
        Primitive::cuboid(Vector3::new(-17.0, -17.0, 0.0), Vector3::new(17.0, 17.0, h), 0.85),
    ];
    // Pillars protruding from the walls every 8 m.
    let mut pillar = |x: f64, y: f64, into_x: f64, into_y: f64, refl: f64| {
        primitives.push(Primitive::cuboid(
            Vector3::new(x.min(x + into_x), y.min(y + into_y), 0.0),
            Vector3::new(x.max(x + into_x), y.max(y + into_y), 2.4),
            refl,
        ));
    };
    let mut k = 0;
    let step = 8.0;
    let mut s = -20.0;
    while s <= 20.0 {
        // outer walls, one pillar per side, alternating size
        let d = if k % 2 == 0 { 0.7 } else { 0.45 };
        pillar(-25.0, s, d, 0.8, 0.7);
        pillar(25.0 - d, s - 0.4, d, 0.8, 0.72);
        pillar(s, -25.0, 0.8, d, 0.74);
        pillar(s - 0.4, 25.0 - d, 0.8, d, 0.76);
        // inner walls
        let di = if k % 2 == 0 { 0.5 } else { 0.65 };
        pillar(17.0, s, di, 0.7, 0.68);
        pillar(-17.0 - di, s - 0.3, di, 0.7, 0.66);
        pillar(s, 17.0, 0.7, di, 0.64);
        pillar(s - 0.3, -17.0 - di, 0.7, di, 0.62);
        s += step;
        k += 1;
    }
    SceneModel::new(primitives)
}

/// Ground plane with seeded tree-trunk cylinders.
pub fn cylinder_forest(seed: u64) -> SceneModel {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut primitives = vec![Primitive::rect(
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(0.0, 0.0, 1.0),
        40.0,
        40.0,
        0.6,
    )];
    for _ in 0..60 {
        let x = rng.random_range(-20.0..20.0f64);
        let y = rng.random_range(-20.0..20.0f64);
        if x.abs() < 1.5 && y.abs() < 1.5 {
            continue; // keep the spawn point clear
        }
        let radius = rng.random_range(0.12..0.45);
        let height = rng.random_range(4.0..9.0);
        primitives.push(Primitive::cylinder(x, y, 0.0, height, radius, 0.55));
    }
    SceneModel::new(primitives)
}

/// Box-room corridor with an optional 1 x 1 x 1.6 m transient box in the
/// middle of the floor; used by the keyframe consistency check.
pub fn corridor_with_transient_box(with_box: bool) -> SceneModel {
    let mut scene = SceneModel::new(vec![
        Primitive::cuboid(Vector3::new(-8.0, -3.0, 0.0), Vector3::new(12.0, 3.0, 3.2), 0.9),
        Primitive::cuboid(Vector3::new(-7.0, -3.0, 0.0), Vector3::new(-6.4, -2.4, 2.0), 0.7),
        Primitive::cuboid(Vector3::new(9.0, 2.2, 0.0), Vector3::new(9.8, 3.0, 2.2), 0.7),
        Primitive::cylinder(-4.0, 2.2, 0.0, 3.2, 0.25, 0.75),
    ]);
    if with_box {
        scene.primitives.push(Primitive::cuboid(
            Vector3::new(4.0, -0.5, 0.0),
            Vector3::new(5.0, 0.5, 1.6),
            0.5,
        ));
    }
    scene
}

/// Hold one pose for `duration` seconds.
pub fn stationary(pose: Pose, duration: f64) -> ScriptedTrajectory {
    ScriptedTrajectory::new(vec![(0.0, pose), (duration, pose)]).expect("valid knots")
}

/// Rotate in place about `axis_rate` (rad/s), knotted so no segment exceeds
/// a quarter turn.
pub fn spin(pose: Pose, axis_rate: Vector3<f64>, duration: f64) -> ScriptedTrajectory {
    let rate = axis_rate.norm();
    let steps = ((rate * duration) / std::f64::consts::FRAC_PI_2).ceil().max(1.0) as usize;
    let dt = duration / steps as f64;
    let knots = (0..=steps)
        .map(|k| {
            let t = k as f64 * dt;
            let r = pose.rotation() * rotation_exp(&(axis_rate * t));
            (t, Pose::new(r, pose.translation()))
        })
        .collect();
    ScriptedTrajectory::new(knots).expect("valid knots")
}

/// Straight line from `start` to `end` at `speed`, heading along travel.
pub fn straight_line(start: Vector3<f64>, end: Vector3<f64>, speed: f64) -> ScriptedTrajectory {
    let delta = end - start;
    let heading = delta.y.atan2(delta.x);
    let pose = |p: Vector3<f64>| Pose::new(rotation_exp(&Vector3::new(0.0, 0.0, heading)), p);
    let duration = delta.norm() / speed;
    ScriptedTrajectory::new(vec![(0.0, pose(start)), (duration, pose(end))]).expect("valid knots")
}

/// Closed square circuit of side `side` centered on the origin at height `z`,
/// traversed counterclockwise at `speed` with turn-in-place corners. The
/// path starts and ends at the same pose.
pub fn square_loop(side: f64, speed: f64, corner_duration: f64, z: f64) -> ScriptedTrajectory {
    let half = side / 2.0;
    let corners =
        [(-half, -half), (half, -half), (half, half), (-half, half), (-half, -half)];
    let mut knots: Vec<(f64, Pose)> = Vec::new();
    let mut t = 0.0;
    let side_duration = side / speed;
    for k in 0..4 {
        let (x0, y0) = corners[k];
        let (x1, y1) = corners[k + 1];
        let heading = (y1 - y0).atan2(x1 - x0);
        let rot = rotation_exp(&Vector3::new(0.0, 0.0, heading));
        knots.push((t, Pose::new(rot, Vector3::new(x0, y0, z))));
        t += side_duration;
        knots.push((t, Pose::new(rot, Vector3::new(x1, y1, z))));
        // Turn in place toward the next side (or back to the start heading).
        t += corner_duration;
    }
    // Close the loop: final pose equals the initial pose.
    let first = knots[0].1;
    knots.push((t, first));
    ScriptedTrajectory::new(knots).expect("valid knots")
}

/// Straight hallway pass used by the no-revisit pipeline checks.
pub fn hallway_pass(length: f64, speed: f64, z: f64) -> ScriptedTrajectory {
    straight_line(Vector3::new(0.0, 0.0, z), Vector3::new(length, 0.0, z), speed)
}

/// Long straight corridor scene to go with [`hallway_pass`].
pub fn hallway_scene(length: f64) -> SceneModel {
    let h = 3.0;
    let mut primitives = vec![
        Primitive::cuboid(Vector3::new(-4.0, -3.4, 0.0), Vector3::new(length + 6.0, -3.0, h), 0.9),
        Primitive::cuboid(Vector3::new(-4.0, 3.0, 0.0), Vector3::new(length + 6.0, 3.4, h), 0.9),
        Primitive::cuboid(Vector3::new(-4.4, -3.4, 0.0), Vector3::new(-4.0, 3.4, h), 0.9),
        Primitive::cuboid(Vector3::new(length + 6.0, -3.4, 0.0), Vector3::new(length + 6.4, 3.4, h), 0.9),
        Primitive::cuboid(Vector3::new(-5.0, -4.0, -0.2), Vector3::new(length + 7.0, 4.0, 0.0), 0.8),
        Primitive::cuboid(Vector3::new(-5.0, -4.0, h), Vector3::new(length + 7.0, 4.0, h + 0.2), 0.8),
    ];
    let mut k = 0usize;
    let mut x = -2.0;
    while x < length + 5.0 {
        let d = if k % 2 == 0 { 0.6 } else { 0.35 };
        primitives.push(Primitive::cuboid(
            Vector3::new(x, -3.0, 0.0),
            Vector3::new(x + 0.5, -3.0 + d, 2.1),
            0.7,
        ));
        primitives.push(Primitive::cuboid(
            Vector3::new(x + 2.5, 3.0 - d, 0.0),
            Vector3::new(x + 3.0, 3.0, 1.6),
            0.68,
        ));
        x += 6.0;
        k += 1;
    }
    SceneModel::new(primitives)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn square_loop_closes_on_start() {
        let trajectory = square_loop(40.0, 2.0, 1.5, 1.2);
        let start = trajectory.query(trajectory.start_time());
        let end = trajectory.query(trajectory.end_time());
        assert_relative_eq!(start.translation(), end.translation(), epsilon = 1e-12);
        assert!(start.rotation_angle_to(&end) < 1e-12);
        // Path length: 4 sides of 40 m.
        assert_relative_eq!(trajectory.end_time(), 4.0 * 40.0 / 2.0 + 4.0 * 1.5, epsilon = 1e-9);
    }

    #[test]
    fn unknown_scene_lists_options() {
        match by_name("volcano") {
            Err(Error::UnknownScene { available, .. }) => {
                assert!(available.contains(&"box-room".to_string()));
            }
            other => panic!("expected UnknownScene, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_interpolates_linearly() {
        let trajectory = straight_line(Vector3::zeros(), Vector3::new(10.0, 0.0, 0.0), 2.0);
        let mid = trajectory.query(2.5);
        assert_relative_eq!(mid.translation(), Vector3::new(5.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(trajectory.velocity(2.5), Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn spin_trajectory_rate_is_constant() {
        let trajectory = spin(Pose::identity(), Vector3::new(0.0, 0.0, 1.5), 6.0);
        for &t in &[0.3, 2.0, 4.4] {
            assert_relative_eq!(
                trajectory.body_rate(t),
                Vector3::new(0.0, 0.0, 1.5),
                epsilon = 1e-9
            );
        }
    }
}
