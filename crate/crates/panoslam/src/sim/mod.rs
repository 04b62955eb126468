//! Ground-truth oracle: ray-casts analytic scenes along scripted
//! trajectories to produce sweeps with per-point timestamps, intensities,
//! range noise, dropout, and matching IMU streams.
//!
//! Everything is deterministic under a fixed seed: per-column RNG streams
//! are derived from (seed, sweep index, column), so results do not depend on
//! thread count or generation order.

pub mod scenes;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{rotation_log, Pose};
use crate::imu::ImuSample;
use crate::sweep::{Sweep, SweepPoint};

/// Gravity in the world frame.
pub const GRAVITY_W: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// Intensity falloff constant: intensity = reflectance / (1 + k r^2).
pub const INTENSITY_FALLOFF: f64 = 0.01;

#[derive(Clone, Copy, Debug)]
pub enum Shape {
    /// Finite rectangle: center, unit normal, two orthonormal in-plane axes
    /// and their half extents.
    Rect {
        center: Vector3<f64>,
        normal: Vector3<f64>,
        axis_u: Vector3<f64>,
        axis_v: Vector3<f64>,
        half_u: f64,
        half_v: f64,
    },
    /// Axis-aligned box; rays hit the nearest surface crossing, which is the
    /// exit face when the ray starts inside (rooms are hollow boxes).
    Cuboid { min: Vector3<f64>, max: Vector3<f64> },
    /// Vertical cylinder side surface (no caps).
    Cylinder { x: f64, y: f64, z_min: f64, z_max: f64, radius: f64 },
    Sphere { center: Vector3<f64>, radius: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct Primitive {
    pub shape: Shape,
    pub reflectance: f64,
}

impl Primitive {
    pub fn rect(center: Vector3<f64>, normal: Vector3<f64>, half_u: f64, half_v: f64, reflectance: f64) -> Self {
        let n = normal.normalize();
        let seed = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let axis_u = n.cross(&seed).normalize();
        let axis_v = n.cross(&axis_u);
        Primitive {
            shape: Shape::Rect { center, normal: n, axis_u, axis_v, half_u, half_v },
            reflectance,
        }
    }

    pub fn cuboid(min: Vector3<f64>, max: Vector3<f64>, reflectance: f64) -> Self {
        Primitive { shape: Shape::Cuboid { min, max }, reflectance }
    }

    pub fn cylinder(x: f64, y: f64, z_min: f64, z_max: f64, radius: f64, reflectance: f64) -> Self {
        Primitive { shape: Shape::Cylinder { x, y, z_min, z_max, radius }, reflectance }
    }

    pub fn sphere(center: Vector3<f64>, radius: f64, reflectance: f64) -> Self {
        Primitive { shape: Shape::Sphere { center, radius }, reflectance }
    }

    /// Nearest intersection distance along `dir` from `origin`, if any.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        const T_MIN: f64 = 1e-9;
        match self.shape {
            Shape::Rect { center, normal, axis_u, axis_v, half_u, half_v } => {
                let denom = dir.dot(&normal);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = (center - origin).dot(&normal) / denom;
                if t <= T_MIN {
                    return None;
                }
                let q = origin + dir * t - center;
                (q.dot(&axis_u).abs() <= half_u && q.dot(&axis_v).abs() <= half_v).then_some(t)
            }
            Shape::Cuboid { min, max } => {
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                for k in 0..3 {
                    if dir[k].abs() < 1e-12 {
                        if origin[k] < min[k] || origin[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (min[k] - origin[k]) / dir[k];
                    let t2 = (max[k] - origin[k]) / dir[k];
                    t_enter = t_enter.max(t1.min(t2));
                    t_exit = t_exit.min(t1.max(t2));
                }
                if t_enter > t_exit {
                    return None;
                }
                if t_enter > T_MIN {
                    Some(t_enter)
                } else if t_exit > T_MIN {
                    Some(t_exit)
                } else {
                    None
                }
            }
            Shape::Cylinder { x, y, z_min, z_max, radius } => {
                let ox = origin.x - x;
                let oy = origin.y - y;
                let a = dir.x * dir.x + dir.y * dir.y;
                if a < 1e-12 {
                    return None;
                }
                let b = 2.0 * (ox * dir.x + oy * dir.y);
                let c = ox * ox + oy * oy - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    if t > T_MIN {
                        let z = origin.z + dir.z * t;
                        if z >= z_min && z <= z_max {
                            return Some(t);
                        }
                    }
                }
                None
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let b = 2.0 * oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - 4.0 * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                for t in [(-b - sq) / 2.0, (-b + sq) / 2.0] {
                    if t > T_MIN {
                        return Some(t);
                    }
                }
                None
            }
        }
    }
}

/// An analytic scene: a list of primitives with per-primitive reflectance.
#[derive(Clone, Debug, Default)]
pub struct SceneModel {
    pub primitives: Vec<Primitive>,
}

impl SceneModel {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        SceneModel { primitives }
    }

    /// Nearest positive intersection along the ray, with its reflectance.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for p in &self.primitives {
            if let Some(t) = p.intersect(origin, dir) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, p.reflectance));
                }
            }
        }
        best
    }
}

/// Spinning range sensor: `beams` lasers over a symmetric vertical field of
/// view, swept through `columns` azimuth steps per revolution.
#[derive(Clone, Copy, Debug)]
pub struct SensorModel {
    pub beams: u32,
    pub columns: u32,
    pub vertical_fov: f64,
    pub rate: f64,
    pub max_range: f64,
    pub noise_sigma: f64,
    pub dropout: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            beams: 64,
            columns: 512,
            vertical_fov: 33.0f64.to_radians(),
            rate: 10.0,
            max_range: 120.0,
            noise_sigma: 0.0,
            dropout: 0.0,
        }
    }
}

impl SensorModel {
    pub fn period(&self) -> f64 {
        1.0 / self.rate
    }

    /// Beam/column ray direction in the sensor frame; aligned with the pixel
    /// centers of the matching sweep panorama.
    pub fn ray(&self, column: u32, beam: u32) -> Vector3<f64> {
        let azimuth = (column as f64 + 0.5) / self.columns as f64 * std::f64::consts::TAU
            - std::f64::consts::PI;
        let half = self.vertical_fov / 2.0;
        let elevation = half - (beam as f64 + 0.5) / self.beams as f64 * self.vertical_fov;
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        Vector3::new(ce * ca, ce * sa, se)
    }
}

/// Piecewise pose path: positions interpolate linearly and rotations follow
/// the geodesic within each segment, so velocity and body rate are exact
/// piecewise constants.
#[derive(Clone, Debug)]
pub struct ScriptedTrajectory {
    knots: Vec<(f64, Pose)>,
}

impl ScriptedTrajectory {
    pub fn new(knots: Vec<(f64, Pose)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidConfig("trajectory needs at least one knot".into()));
        }
        for pair in knots.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidConfig("trajectory knot times must increase".into()));
            }
            if pair[0].1.rotation_angle_to(&pair[1].1) > std::f64::consts::PI - 1e-6 {
                return Err(Error::InvalidConfig(
                    "rotation between consecutive knots must stay below pi".into(),
                ));
            }
        }
        Ok(ScriptedTrajectory { knots })
    }

    pub fn start_time(&self) -> f64 {
        self.knots[0].0
    }

    pub fn end_time(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    fn segment(&self, t: f64) -> usize {
        match self
            .knots
            .binary_search_by(|k| k.0.partial_cmp(&t).unwrap())
        {
            Ok(i) => i.min(self.knots.len().saturating_sub(2)),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.knots.len().saturating_sub(2)),
        }
    }

    /// Pose at time `t`, clamped to the scripted interval.
    pub fn query(&self, t: f64) -> Pose {
        if self.knots.len() == 1 || t <= self.start_time() {
            return self.knots[0].1;
        }
        if t >= self.end_time() {
            return self.knots[self.knots.len() - 1].1;
        }
        let i = self.segment(t);
        let (t0, a) = self.knots[i];
        let (t1, b) = self.knots[i + 1];
        let s = (t - t0) / (t1 - t0);
        let translation = a.translation() + (b.translation() - a.translation()) * s;
        let delta = rotation_log(&(a.rotation().inverse() * b.rotation()));
        let rotation = a.rotation() * crate::geometry::rotation_exp(&(delta * s));
        Pose::new(rotation, translation)
    }

    /// World-frame velocity (constant within a segment).
    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        if self.knots.len() == 1 || t < self.start_time() || t > self.end_time() {
            return Vector3::zeros();
        }
        let i = self.segment(t);
        let (t0, a) = self.knots[i];
        let (t1, b) = self.knots[i + 1];
        (b.translation() - a.translation()) / (t1 - t0)
    }

    /// Body-frame angular rate (constant within a segment).
    pub fn body_rate(&self, t: f64) -> Vector3<f64> {
        if self.knots.len() == 1 || t < self.start_time() || t > self.end_time() {
            return Vector3::zeros();
        }
        let i = self.segment(t);
        let (t0, a) = self.knots[i];
        let (t1, b) = self.knots[i + 1];
        rotation_log(&(a.rotation().inverse() * b.rotation())) / (t1 - t0)
    }

    /// World-frame linear acceleration; zero within the piecewise-linear
    /// segments this implementation scripts.
    pub fn acceleration(&self, _t: f64) -> Vector3<f64> {
        Vector3::zeros()
    }
}

fn mix64(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn column_rng(seed: u64, sweep_index: u64, column: u32) -> ChaCha12Rng {
    let mut bytes = [0u8; 32];
    let a = mix64(seed ^ 0xA076_1D64_78BD_642F);
    let b = mix64(a ^ sweep_index);
    let c = mix64(b ^ column as u64);
    let d = mix64(c ^ 0x589965CC75374CC3);
    bytes[0..8].copy_from_slice(&a.to_le_bytes());
    bytes[8..16].copy_from_slice(&b.to_le_bytes());
    bytes[16..24].copy_from_slice(&c.to_le_bytes());
    bytes[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha12Rng::from_seed(bytes)
}

/// Synthesize the sweep starting at `t_start`. Each column fires at its own
/// time from the true instantaneous pose, and point coordinates are expressed
/// in the sensor frame at that instant, so de-rotation is genuinely
/// exercised. Gaussian range noise and Bernoulli dropout come from a seeded
/// per-column generator.
pub fn synthesize_sweep(
    scene: &SceneModel,
    trajectory: &ScriptedTrajectory,
    sensor: &SensorModel,
    t_start: f64,
    seed: u64,
    sweep_index: u64,
) -> Sweep {
    let period = sensor.period();
    let columns = sensor.columns;
    let beams = sensor.beams;
    let normal = Normal::new(0.0, sensor.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let column_points: Vec<Vec<SweepPoint>> = (0..columns)
        .into_par_iter()
        .map(|j| {
            let t_j = t_start + j as f64 / columns as f64 * period;
            let pose = trajectory.query(t_j);
            let mut rng = column_rng(seed, sweep_index, j);
            let mut pts = Vec::with_capacity(beams as usize);
            for i in 0..beams {
                let dir_sensor = sensor.ray(j, i);
                let dir_world = pose.rotate_vector(&dir_sensor);
                let origin = pose.translation();
                let mut point = SweepPoint { position: [0.0; 3], intensity: 0.0, t: t_j };
                if let Some((range, reflectance)) = scene.raycast(&origin, &dir_world) {
                    if range < sensor.max_range {
                        let noisy = if sensor.noise_sigma > 0.0 {
                            range + normal.sample(&mut rng)
                        } else {
                            range
                        };
                        let dropped =
                            sensor.dropout > 0.0 && rng.random_range(0.0..1.0) < sensor.dropout;
                        if !dropped && noisy > 0.0 {
                            let p = dir_sensor * noisy;
                            let intensity =
                                reflectance / (1.0 + INTENSITY_FALLOFF * range * range);
                            point = SweepPoint {
                                position: [p.x as f32, p.y as f32, p.z as f32],
                                intensity: intensity as f32,
                                t: t_j,
                            };
                        }
                    }
                }
                pts.push(point);
            }
            pts
        })
        .collect();
    let points = column_points.into_iter().flatten().collect();
    Sweep {
        t_start,
        period,
        columns,
        beams,
        points,
        imu: crate::imu::ImuWindow::default(),
    }
}

/// IMU noise configuration (standard deviations per sample).
#[derive(Clone, Copy, Debug, Default)]
pub struct ImuNoise {
    pub gyro_sigma: f64,
    pub accel_sigma: f64,
}

/// Synthesize an IMU stream over [t0, t1]. Gyro samples report the mean body
/// rate over their sample interval (the zero-order-hold-consistent output),
/// so integrating them reproduces the scripted rotation exactly within
/// segments. Accelerometer samples report specific force: body-frame
/// (linear acceleration - gravity).
pub fn synthesize_imu(
    trajectory: &ScriptedTrajectory,
    rate: f64,
    noise: ImuNoise,
    t0: f64,
    t1: f64,
    seed: u64,
) -> Vec<ImuSample> {
    let dt = 1.0 / rate;
    let n = ((t1 - t0) / dt).ceil() as usize + 1;
    let mut rng = column_rng(seed ^ 0x5DEE_CE66_D1CE_4E5B, 0, 0);
    let gyro_noise = Normal::new(0.0, noise.gyro_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let accel_noise = Normal::new(0.0, noise.accel_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut samples = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = t0 + k as f64 * dt;
        let r_now = trajectory.query(t).rotation();
        let r_next = trajectory.query(t + dt).rotation();
        let mut omega = rotation_log(&(r_now.inverse() * r_next)) / dt;
        let mut accel =
            r_now.inverse() * (trajectory.acceleration(t) - GRAVITY_W);
        if noise.gyro_sigma > 0.0 {
            omega += Vector3::new(
                gyro_noise.sample(&mut rng),
                gyro_noise.sample(&mut rng),
                gyro_noise.sample(&mut rng),
            );
        }
        if noise.accel_sigma > 0.0 {
            accel += Vector3::new(
                accel_noise.sample(&mut rng),
                accel_noise.sample(&mut rng),
                accel_noise.sample(&mut rng),
            );
        }
        samples.push(ImuSample { t, angular_velocity: omega, acceleration: accel });
    }
    samples
}

/// Render the panorama a stationary sensor at `pose` would capture: one
/// noiseless sweep, projected, with intake-style smoothed normals. This is
/// what an incoming sweep looks like to the registration front end.
pub fn render_panorama(
    scene: &SceneModel,
    pose: &Pose,
    sensor: &SensorModel,
) -> crate::panorama::DepthPanorama {
    use crate::panorama::{smooth_normals_atrous, EdgeRule};
    let mut pano = render_keyframe_panorama(scene, pose, sensor);
    smooth_normals_atrous(&mut pano, 3, &EdgeRule::default());
    pano
}

/// Like [`render_panorama`] but with raw cross-product normals, the
/// steady state of a keyframe whose normals have been refreshed by fused
/// sweeps. Registration targets should look like this.
pub fn render_keyframe_panorama(
    scene: &SceneModel,
    pose: &Pose,
    sensor: &SensorModel,
) -> crate::panorama::DepthPanorama {
    use crate::panorama::{estimate_normals, DepthPanorama, EdgeRule, ProjectionModel};
    let sensor = SensorModel { noise_sigma: 0.0, dropout: 0.0, ..*sensor };
    let trajectory = scenes::stationary(*pose, 2.0 * sensor.period());
    let sweep = synthesize_sweep(scene, &trajectory, &sensor, 0.0, 0, 0);
    let model = ProjectionModel::sweep(sensor.columns as usize, sensor.beams as usize, sensor.vertical_fov)
        .expect("sensor shape is a valid model");
    let points: Vec<_> = sweep.returns().map(|(p, i, _)| (p, i)).collect();
    let mut pano = DepthPanorama::build(model, &points, sensor.max_range);
    estimate_normals(&mut pano, &EdgeRule::default());
    pano
}

/// Ground-truth pose of the sensor at each sweep reference time (end of
/// revolution) for every sweep starting in [t0, t1).
pub fn ground_truth_at_sweep_ends(
    trajectory: &ScriptedTrajectory,
    sensor: &SensorModel,
    t0: f64,
    sweep_count: usize,
) -> Vec<(f64, Pose)> {
    (0..sweep_count)
        .map(|k| {
            let t_ref = t0 + (k as f64 + 1.0) * sensor.period();
            (t_ref, trajectory.query(t_ref))
        })
        .collect()
}
