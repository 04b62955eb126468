//! Inertial support: gyro integration for intra-sweep de-rotation and a
//! complementary filter that tracks the accelerometer's up direction.
//!
//! Gyro samples are treated as the body rate held constant over the interval
//! starting at their timestamp (zero-order hold), integrated with the
//! per-interval exponential map. Only rotation is corrected; translation
//! within a 100 ms sweep is left alone.

use nalgebra::{UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::rotation_exp;

/// One inertial measurement. Angular velocity and linear acceleration are in
/// the body frame; acceleration includes the gravity reaction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub angular_velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// Smoothed unit direction of the accelerometer's gravity reaction (points
/// away from the earth) in the current body frame.
#[derive(Clone, Copy, Debug)]
pub struct GravityEstimate {
    direction: Vector3<f64>,
    confidence: f64,
}

impl GravityEstimate {
    pub fn new(direction: Vector3<f64>, confidence: f64) -> Self {
        let n = direction.norm();
        let direction = if n > 1e-12 { direction / n } else { Vector3::z() };
        GravityEstimate { direction, confidence }
    }

    /// Seed the filter from the first accelerometer reading.
    pub fn from_accelerometer(accel: &Vector3<f64>) -> Self {
        GravityEstimate::new(*accel, 0.0)
    }

    /// Up direction in the body frame (unit norm).
    pub fn direction(&self) -> Vector3<f64> {
        self.direction
    }

    /// Gravity direction (down) in the body frame.
    pub fn gravity_body(&self) -> Vector3<f64> {
        -self.direction
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

/// Complementary filter step: the gyro co-rotates the previous direction, the
/// accelerometer direction is blended in with gain `alpha`, and the result is
/// renormalized. A zero-norm accelerometer sample is skipped (gyro only).
pub fn gravity_update(
    state: &GravityEstimate,
    sample: &ImuSample,
    dt: f64,
    alpha: f64,
) -> GravityEstimate {
    debug_assert!(dt > 0.0);
    // A world-fixed direction expressed in the body frame evolves by the
    // inverse of the body rotation.
    let propagated = rotation_exp(&(-sample.angular_velocity * dt)) * state.direction;
    let accel_norm = sample.acceleration.norm();
    let blended = if accel_norm > 1e-9 {
        let measured = sample.acceleration / accel_norm;
        (1.0 - alpha) * propagated + alpha * measured
    } else {
        propagated
    };
    let confidence = (state.confidence * (1.0 - alpha) + alpha).min(1.0);
    GravityEstimate::new(blended, confidence)
}

/// Window of IMU samples with strictly increasing timestamps.
#[derive(Clone, Debug, Default)]
pub struct ImuWindow {
    samples: Vec<ImuSample>,
}

impl ImuWindow {
    pub fn new(samples: Vec<ImuSample>) -> Result<Self> {
        for pair in samples.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::InvalidConfig(format!(
                    "imu timestamps must be strictly increasing ({} then {})",
                    pair[0].t, pair[1].t
                )));
            }
        }
        Ok(ImuWindow { samples })
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Nominal sample period, the median of consecutive gaps.
    pub fn nominal_period(&self) -> f64 {
        if self.samples.len() < 2 {
            return 0.01;
        }
        let mut gaps: Vec<f64> =
            self.samples.windows(2).map(|p| p[1].t - p[0].t).collect();
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        gaps[gaps.len() / 2]
    }

    fn check_coverage(&self, t_from: f64, t_to: f64) -> Result<()> {
        let period = self.nominal_period();
        let missing = |reason: String| Error::MissingImuData { from: t_from, to: t_to, reason };
        if self.samples.is_empty() {
            return Err(missing("no samples".into()));
        }
        let first = self.samples.first().unwrap().t;
        let last = self.samples.last().unwrap().t;
        if t_from < first - period {
            return Err(missing(format!(
                "starts {:.4}s before the first sample (one period allowed)",
                first - t_from
            )));
        }
        if t_to > last + period {
            return Err(missing(format!(
                "ends {:.4}s after the last sample (one period allowed)",
                t_to - last
            )));
        }
        for pair in self.samples.windows(2) {
            let overlaps = pair[1].t > t_from && pair[0].t < t_to;
            if overlaps && pair[1].t - pair[0].t > 3.0 * period {
                return Err(missing(format!(
                    "gap of {:.4}s between samples at {:.4} and {:.4}",
                    pair[1].t - pair[0].t,
                    pair[0].t,
                    pair[1].t
                )));
            }
        }
        Ok(())
    }

    /// Rotation of the body between `t_from` and `t_to`: if `R_wb(t)` is the
    /// body orientation, the result `D` satisfies `R_wb(t_to) = R_wb(t_from) * D`.
    pub fn integrate_rotation(&self, t_from: f64, t_to: f64) -> Result<UnitQuaternion<f64>> {
        if t_to < t_from {
            return Ok(self.integrate_rotation(t_to, t_from)?.inverse());
        }
        self.check_coverage(t_from, t_to)?;
        Ok(self.integrate_unchecked(t_from, t_to))
    }

    fn rate_at(&self, t: f64) -> Vector3<f64> {
        // Zero-order hold: sample k applies on [t_k, t_{k+1}); clamped at the ends.
        match self.samples.binary_search_by(|s| s.t.partial_cmp(&t).unwrap()) {
            Ok(i) => self.samples[i].angular_velocity,
            Err(0) => self.samples[0].angular_velocity,
            Err(i) => self.samples[i - 1].angular_velocity,
        }
    }

    fn integrate_unchecked(&self, t_from: f64, t_to: f64) -> UnitQuaternion<f64> {
        let mut rotation = UnitQuaternion::identity();
        let mut t = t_from;
        // March over sample boundaries inside (t_from, t_to).
        let mut i = match self
            .samples
            .binary_search_by(|s| s.t.partial_cmp(&t_from).unwrap())
        {
            Ok(i) => i + 1,
            Err(i) => i,
        };
        while t < t_to {
            let boundary = if i < self.samples.len() { self.samples[i].t } else { f64::INFINITY };
            let step_end = boundary.min(t_to);
            let dt = step_end - t;
            if dt > 0.0 {
                let omega = self.rate_at(t);
                rotation *= rotation_exp(&(omega * dt));
            }
            t = step_end;
            i += 1;
        }
        rotation
    }

    /// Cumulative body rotations relative to `t_anchor` at each requested
    /// time, for batch de-rotation. Internal coverage is checked once.
    fn cumulative_to(&self, t_anchor: f64, times: &[f64]) -> Result<Vec<UnitQuaternion<f64>>> {
        let mut out = Vec::with_capacity(times.len());
        // times are expected sorted ascending; integrate incrementally.
        let mut acc = UnitQuaternion::identity();
        let mut t_prev = t_anchor;
        for &t in times {
            debug_assert!(t >= t_prev);
            acc *= self.integrate_unchecked(t_prev, t);
            out.push(acc);
            t_prev = t;
        }
        Ok(out)
    }
}

/// Rotate every point of a sweep into the body frame at `t_ref` using the
/// integrated gyro. `extrinsic` maps lidar-frame vectors into the IMU body
/// frame (identity when the frames coincide). Translation is not corrected.
pub fn derotate_sweep(
    points: &[(Vector3<f64>, f32, f64)],
    imu: &ImuWindow,
    t_ref: f64,
    extrinsic: &UnitQuaternion<f64>,
) -> Result<Vec<(Vector3<f64>, f32)>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let t_min = points.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let t_max = points.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    imu.check_coverage(t_min.min(t_ref), t_max.max(t_ref))?;

    // Sort unique timestamps ascending, then integrate once through them.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].2.partial_cmp(&points[b].2).unwrap());
    let times: Vec<f64> = order.iter().map(|&i| points[i].2).collect();
    let anchor = times[0].min(t_ref);
    let cumulative = imu.cumulative_to(anchor, &times)?;
    let to_ref = imu.integrate_unchecked(anchor, t_ref);

    let mut out = vec![(Vector3::zeros(), 0.0f32); points.len()];
    let ext_inv = extrinsic.inverse();
    for (rank, &i) in order.iter().enumerate() {
        let (p, intensity, _) = points[i];
        // body(t_ref) <- body(t_p): inverse of the t_ref->t_p delta.
        let delta = to_ref.inverse() * cumulative[rank];
        let rotated = ext_inv * (delta * (*extrinsic * p));
        out[i] = (rotated, intensity);
    }
    Ok(out)
}

/// Run the complementary filter over all samples newer than `t_after`.
/// Returns the updated state and the timestamp of the last consumed sample.
pub fn gravity_track(
    state: GravityEstimate,
    window: &ImuWindow,
    t_after: f64,
    alpha: f64,
) -> (GravityEstimate, f64) {
    let mut state = state;
    let mut t_prev = t_after;
    let period = window.nominal_period();
    for s in window.samples() {
        if s.t <= t_after {
            continue;
        }
        let dt = if t_prev > f64::NEG_INFINITY && s.t - t_prev < 3.0 * period && s.t > t_prev {
            s.t - t_prev
        } else {
            period
        };
        state = gravity_update(&state, s, dt, alpha);
        t_prev = s.t;
    }
    (state, t_prev)
}

pub mod csv {
    //! IMU log format: CSV with header `t,wx,wy,wz,ax,ay,az`, SI units.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::path::Path;

    use nalgebra::Vector3;

    use super::{ImuSample, ImuWindow};
    use crate::error::{Error, Result};

    pub const HEADER: &str = "t,wx,wy,wz,ax,ay,az";

    pub fn write<W: Write>(samples: &[ImuSample], w: &mut W) -> Result<()> {
        writeln!(w, "{HEADER}")?;
        for s in samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.t,
                s.angular_velocity.x,
                s.angular_velocity.y,
                s.angular_velocity.z,
                s.acceleration.x,
                s.acceleration.y,
                s.acceleration.z
            )?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R, path: &str) -> Result<ImuWindow> {
        let reader = BufReader::new(r);
        let mut samples = Vec::new();
        let mut offset: u64 = 0;
        let parse_err = |offset: u64, message: String| Error::Parse {
            path: path.to_string(),
            offset,
            message,
        };
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line_len = line.len() as u64 + 1;
            let trimmed = line.trim();
            if lineno == 0 {
                if trimmed != HEADER {
                    return Err(parse_err(0, format!("expected header '{HEADER}'")));
                }
                offset += line_len;
                continue;
            }
            if trimmed.is_empty() {
                offset += line_len;
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 7 {
                return Err(parse_err(offset, format!("expected 7 fields, got {}", fields.len())));
            }
            let mut v = [0f64; 7];
            for (k, f) in fields.iter().enumerate() {
                v[k] = f.trim().parse::<f64>().map_err(|e| {
                    parse_err(offset, format!("field {k} ('{f}'): {e}"))
                })?;
            }
            samples.push(ImuSample {
                t: v[0],
                angular_velocity: Vector3::new(v[1], v[2], v[3]),
                acceleration: Vector3::new(v[4], v[5], v[6]),
            });
            offset += line_len;
        }
        ImuWindow::new(samples)
    }

    pub fn read_path(path: &Path) -> Result<ImuWindow> {
        let file = std::fs::File::open(path)?;
        read(file, &path.display().to_string())
    }

    pub fn write_path(samples: &[ImuSample], path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write(samples, &mut file)
    }
}
