//! Trajectory comparison: timestamp association, optimal rigid alignment,
//! and the median / RMSE error report.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Timestamped pose sequence with strictly increasing timestamps.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, Pose)>) -> Result<Self> {
        for pair in samples.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidConfig(format!(
                    "trajectory timestamps must strictly increase ({} then {})",
                    pair[0].0, pair[1].0
                )));
            }
        }
        Ok(Trajectory { samples })
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total path length (sum of consecutive position deltas).
    pub fn path_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].1.translation() - w[0].1.translation()).norm())
            .sum()
    }
}

/// A matched sample pair (indices into the two trajectories).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Association {
    pub index_a: usize,
    pub index_b: usize,
}

/// Pair each sample of `a` with the nearest-in-time unused sample of `b`
/// within `max_dt`, greedily in increasing |dt|. Ties break on the earlier
/// `a` index, then the earlier `b` index.
pub fn associate(a: &Trajectory, b: &Trajectory, max_dt: f64) -> Vec<Association> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let bt: Vec<f64> = b.samples.iter().map(|s| s.0).collect();
    for (ia, &(ta, _)) in a.samples.iter().enumerate() {
        // Window of b samples within max_dt of ta.
        let start = bt.partition_point(|&t| t < ta - max_dt);
        for (ib, &tb) in bt.iter().enumerate().skip(start) {
            if tb > ta + max_dt {
                break;
            }
            candidates.push(((tb - ta).abs(), ia, ib));
        }
    }
    candidates.sort_by(|x, y| {
        x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2))
    });
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, ia, ib) in candidates {
        if !used_a[ia] && !used_b[ib] {
            used_a[ia] = true;
            used_b[ib] = true;
            out.push(Association { index_a: ia, index_b: ib });
        }
    }
    out.sort_by_key(|c| c.index_a);
    out
}

/// Closed-form least-squares rigid alignment (no scale) mapping the
/// positions of `a` onto `b` over the associated pairs.
pub fn align(a: &Trajectory, b: &Trajectory, pairs: &[Association]) -> Result<Pose> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateAlignment(format!(
            "need at least 3 correspondences, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mut centroid_a = Vector3::zeros();
    let mut centroid_b = Vector3::zeros();
    for p in pairs {
        centroid_a += a.samples[p.index_a].1.translation();
        centroid_b += b.samples[p.index_b].1.translation();
    }
    centroid_a /= n;
    centroid_b /= n;
    let mut cross = Matrix3::<f64>::zeros();
    let mut spread = 0.0;
    for p in pairs {
        let da = a.samples[p.index_a].1.translation() - centroid_a;
        let db = b.samples[p.index_b].1.translation() - centroid_b;
        cross += db * da.transpose();
        spread += da.norm_squared();
    }
    if spread < 1e-12 {
        return Err(Error::DegenerateAlignment("all source positions coincide".into()));
    }
    let svd = cross.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::NumericalFailure("SVD of alignment covariance failed".into()));
    };
    // Collinear point sets leave the rotation about the line unconstrained.
    let s = svd.singular_values;
    if s[1] < 1e-9 * s[0].max(1e-300) {
        return Err(Error::DegenerateAlignment("correspondence positions are collinear".into()));
    }
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = centroid_b - r * centroid_a;
    Ok(Pose::new(rotation, translation))
}

/// Alignment quality report: median and RMSE of per-pair position errors
/// after applying `alignment` to `a`, with the error series over time.
#[derive(Clone, Debug)]
pub struct AlignmentReport {
    pub alignment: Pose,
    pub correspondences: usize,
    pub median: f64,
    pub rmse: f64,
    /// (timestamp of the `a` sample, position error in meters).
    pub series: Vec<(f64, f64)>,
}

pub fn ate(
    a: &Trajectory,
    b: &Trajectory,
    pairs: &[Association],
    alignment: &Pose,
) -> Result<AlignmentReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let mut series = Vec::with_capacity(pairs.len());
    let mut errors = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (ta, pa) = a.samples[p.index_a];
        let (_, pb) = b.samples[p.index_b];
        let e = (alignment.transform_point(&pa.translation()) - pb.translation()).norm();
        series.push((ta, e));
        errors.push(e);
    }
    let mut sorted = errors.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    Ok(AlignmentReport {
        alignment: *alignment,
        correspondences: pairs.len(),
        median,
        rmse,
        series,
    })
}

/// Associate, align, and report in one call.
pub fn evaluate(a: &Trajectory, b: &Trajectory, max_dt: f64) -> Result<AlignmentReport> {
    let pairs = associate(a, b, max_dt);
    if pairs.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let alignment = align(a, b, &pairs)?;
    ate(a, b, &pairs, &alignment)
}

pub mod text {
    //! Trajectory text interchange: one sample per line,
    //! `t tx ty tz qx qy qz qw`, space separated.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::path::Path;

    use nalgebra::{Quaternion, UnitQuaternion, Vector3};

    use super::Trajectory;
    use crate::error::{Error, Result};
    use crate::geometry::Pose;

    pub fn write<W: Write>(trajectory: &Trajectory, w: &mut W) -> Result<()> {
        for &(t, pose) in trajectory.samples() {
            let p = pose.translation();
            let q = pose.rotation().coords;
            writeln!(w, "{t} {} {} {} {} {} {} {}", p.x, p.y, p.z, q.x, q.y, q.z, q.w)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R, path: &str) -> Result<Trajectory> {
        let reader = BufReader::new(r);
        let mut samples = Vec::new();
        let mut offset: u64 = 0;
        for line in reader.lines() {
            let line = line?;
            let len = line.len() as u64 + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                offset += len;
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(Error::Parse {
                    path: path.into(),
                    offset,
                    message: format!("expected 8 fields, got {}", fields.len()),
                });
            }
            let mut v = [0f64; 8];
            for (k, f) in fields.iter().enumerate() {
                v[k] = f.parse().map_err(|e| Error::Parse {
                    path: path.into(),
                    offset,
                    message: format!("field {k} ('{f}'): {e}"),
                })?;
            }
            let q = UnitQuaternion::from_quaternion(Quaternion::new(v[7], v[4], v[5], v[6]));
            samples.push((v[0], Pose::new(q, Vector3::new(v[1], v[2], v[3]))));
            offset += len;
        }
        Trajectory::new(samples)
    }

    pub fn read_path(path: &Path) -> Result<Trajectory> {
        read(std::fs::File::open(path)?, &path.display().to_string())
    }

    pub fn write_path(trajectory: &Trajectory, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write(trajectory, &mut w)
    }

    /// Error series export, CSV `t,err_m`.
    pub fn write_error_series<W: Write>(series: &[(f64, f64)], w: &mut W) -> Result<()> {
        writeln!(w, "t,err_m")?;
        for &(t, e) in series {
            writeln!(w, "{t},{e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn path_trajectory(times: &[f64], positions: &[Vector3<f64>]) -> Trajectory {
        let samples = times
            .iter()
            .zip(positions)
            .map(|(&t, &p)| (t, Pose::from_translation(p)))
            .collect();
        Trajectory::new(samples).unwrap()
    }

    fn wiggly(n: usize, dt: f64, t0: f64) -> Trajectory {
        let samples: Vec<(f64, Pose)> = (0..n)
            .map(|k| {
                let t = t0 + k as f64 * dt;
                let p = Vector3::new(t.sin() * 4.0, 0.5 * t, (0.3 * t).cos());
                (t, Pose::from_translation(p))
            })
            .collect();
        Trajectory::new(samples).unwrap()
    }

    #[test]
    fn identical_stamps_pair_fully() {
        let a = wiggly(50, 0.1, 0.0);
        let b = wiggly(50, 0.1, 0.0);
        let pairs = associate(&a, &b, 0.05);
        assert_eq!(pairs.len(), 50);
        for (k, p) in pairs.iter().enumerate() {
            assert_eq!(p.index_a, k);
            assert_eq!(p.index_b, k);
        }
    }

    #[test]
    fn offset_beyond_max_dt_pairs_nothing() {
        let a = wiggly(20, 0.1, 0.0);
        let b = wiggly(20, 0.1, 100.0);
        assert!(associate(&a, &b, 0.05).is_empty());
    }

    /// Brute-force re-derivation of the greedy-in-increasing-dt pairing:
    /// repeatedly scan every unused pair for the global minimum |dt|.
    fn greedy_oracle(a: &Trajectory, b: &Trajectory, max_dt: f64) -> Vec<Association> {
        let mut used_a = vec![false; a.len()];
        let mut used_b = vec![false; b.len()];
        let mut out = Vec::new();
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for ia in 0..a.len() {
                if used_a[ia] {
                    continue;
                }
                for ib in 0..b.len() {
                    if used_b[ib] {
                        continue;
                    }
                    let dt = (a.samples()[ia].0 - b.samples()[ib].0).abs();
                    if dt > max_dt {
                        continue;
                    }
                    let key = (dt, ia, ib);
                    if best.map_or(true, |(bd, bia, bib)| key < (bd, bia, bib)) {
                        best = Some(key);
                    }
                }
            }
            match best {
                Some((_, ia, ib)) => {
                    used_a[ia] = true;
                    used_b[ib] = true;
                    out.push(Association { index_a: ia, index_b: ib });
                }
                None => break,
            }
        }
        out.sort_by_key(|c| c.index_a);
        out
    }

    #[test]
    fn association_matches_bruteforce_on_jittered_stamps() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..50 {
            let na = rng.random_range(1..=20);
            let nb = rng.random_range(1..=20);
            let mut ta: Vec<f64> = (0..na)
                .map(|k| k as f64 * 0.1 + rng.random_range(-0.03..0.03))
                .collect();
            let mut tb: Vec<f64> = (0..nb)
                .map(|k| k as f64 * 0.1 + rng.random_range(-0.03..0.03))
                .collect();
            ta.sort_by(|x, y| x.partial_cmp(y).unwrap());
            tb.sort_by(|x, y| x.partial_cmp(y).unwrap());
            ta.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
            tb.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
            let pa: Vec<Vector3<f64>> = ta.iter().map(|&t| Vector3::new(t, 0.0, 0.0)).collect();
            let pb: Vec<Vector3<f64>> = tb.iter().map(|&t| Vector3::new(t, 1.0, 0.0)).collect();
            let a = path_trajectory(&ta, &pa);
            let b = path_trajectory(&tb, &pb);
            let got = associate(&a, &b, 0.05);
            let expected = greedy_oracle(&a, &b, 0.05);
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn align_identical_is_identity() {
        let a = wiggly(30, 0.1, 0.0);
        let pairs = associate(&a, &a, 0.01);
        let g = align(&a, &a, &pairs).unwrap();
        assert!(g.translation().norm() < 1e-12);
        assert!(g.rotation().angle() < 1e-12);
    }

    #[test]
    fn align_recovers_rigid_transform_exactly() {
        let a = wiggly(40, 0.1, 0.0);
        let g = Pose::from_parts(Vector3::new(0.3, -0.7, 1.2), Vector3::new(4.0, -2.0, 0.5));
        let b_samples: Vec<(f64, Pose)> = a
            .samples()
            .iter()
            .map(|&(t, p)| (t, g.compose(&p)))
            .collect();
        let b = Trajectory::new(b_samples).unwrap();
        let pairs = associate(&a, &b, 0.01);
        let got = align(&a, &b, &pairs).unwrap();
        assert!(got.translation_distance_to(&g) < 1e-9);
        assert!(got.rotation_angle_to(&g) < 1e-9);
        let report = ate(&a, &b, &pairs, &got).unwrap();
        assert!(report.rmse < 1e-9);
        assert!(report.median < 1e-9);
    }

    #[test]
    fn collinear_positions_are_degenerate() {
        let times: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let pos: Vec<Vector3<f64>> = (0..10).map(|k| Vector3::new(k as f64, 0.0, 0.0)).collect();
        let a = path_trajectory(&times, &pos);
        let pairs = associate(&a, &a, 0.01);
        assert!(matches!(align(&a, &a, &pairs), Err(Error::DegenerateAlignment(_))));
    }

    /// Iterative Gauss-Newton alignment oracle on noisy correspondences,
    /// left-multiplicative updates G <- exp(d) G.
    fn gauss_newton_align(a: &Trajectory, b: &Trajectory, pairs: &[Association]) -> Pose {
        use crate::geometry::{skew, Twist};
        let mut g = Pose::identity();
        for _ in 0..200 {
            let mut h = nalgebra::Matrix6::<f64>::zeros();
            let mut grad = nalgebra::Vector6::<f64>::zeros();
            for p in pairs {
                let pa = a.samples()[p.index_a].1.translation();
                let pb = b.samples()[p.index_b].1.translation();
                let x = g.transform_point(&pa);
                let r = x - pb;
                // d(exp(d) . x)/dd = [-skew(x) | I]
                let mut j = nalgebra::Matrix3x6::<f64>::zeros();
                j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&x)));
                j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
                h += j.transpose() * j;
                grad -= j.transpose() * r;
            }
            let Some(chol) = h.cholesky() else { break };
            let step = chol.solve(&grad);
            let delta = Twist::new(
                Vector3::new(step[0], step[1], step[2]),
                Vector3::new(step[3], step[4], step[5]),
            );
            g = Pose::exp(&delta).compose(&g);
            if delta.norm() < 1e-13 {
                break;
            }
        }
        g
    }

    #[test]
    fn align_matches_gauss_newton_oracle_on_noisy_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let a = wiggly(60, 0.1, 0.0);
        let g = Pose::from_parts(Vector3::new(-0.2, 0.5, 0.9), Vector3::new(1.0, 3.0, -2.0));
        let b_samples: Vec<(f64, Pose)> = a
            .samples()
            .iter()
            .map(|&(t, p)| {
                let noisy = g.transform_point(&p.translation())
                    + Vector3::new(
                        rng.random_range(-0.05..0.05),
                        rng.random_range(-0.05..0.05),
                        rng.random_range(-0.05..0.05),
                    );
                (t, Pose::from_translation(noisy))
            })
            .collect();
        let b = Trajectory::new(b_samples).unwrap();
        let pairs = associate(&a, &b, 0.01);
        let closed_form = align(&a, &b, &pairs).unwrap();
        let iterative = gauss_newton_align(&a, &b, &pairs);
        assert!(closed_form.translation_distance_to(&iterative) < 1e-6);
        assert!(closed_form.rotation_angle_to(&iterative) < 1e-6);
    }

    #[test]
    fn rmse_and_median_hand_example() {
        // Exactly two pairs with errors 3 and 4:
        // RMSE = sqrt((9 + 16) / 2) = 3.5355..., median = 3.5.
        let times = [0.0, 1.0];
        let pa = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(10.0, 0.0, 0.0)];
        let pbv = vec![Vector3::new(0.0, 0.0, 3.0), Vector3::new(10.0, 0.0, -4.0)];
        let a = path_trajectory(&times, &pa);
        let b = path_trajectory(&times, &pbv);
        let pairs = associate(&a, &b, 0.01);
        assert_eq!(pairs.len(), 2);
        let report = ate(&a, &b, &pairs, &Pose::identity()).unwrap();
        assert_relative_eq!(report.rmse, 3.5355339059327378, epsilon = 1e-12);
        assert_relative_eq!(report.median, 3.5, epsilon = 1e-12);

        // Empty correspondences are rejected.
        assert!(matches!(
            ate(&a, &b, &[], &Pose::identity()),
            Err(Error::EmptyCorrespondences)
        ));
    }

    #[test]
    fn ate_invariant_under_common_rigid_transform() {
        let a = wiggly(40, 0.1, 0.0);
        let b_samples: Vec<(f64, Pose)> = a
            .samples()
            .iter()
            .enumerate()
            .map(|(k, &(t, p))| {
                let off = Vector3::new(0.05 * (k as f64).sin(), 0.0, 0.03);
                (t, Pose::from_translation(p.translation() + off))
            })
            .collect();
        let b = Trajectory::new(b_samples).unwrap();
        let base = evaluate(&a, &b, 0.01).unwrap();
        let g = Pose::from_parts(Vector3::new(0.2, 0.4, -0.6), Vector3::new(10.0, -5.0, 2.0));
        let map = |t: &Trajectory| {
            Trajectory::new(t.samples().iter().map(|&(tt, p)| (tt, g.compose(&p))).collect())
                .unwrap()
        };
        let moved = evaluate(&map(&a), &map(&b), 0.01).unwrap();
        assert_relative_eq!(base.rmse, moved.rmse, epsilon = 1e-9);
        assert_relative_eq!(base.median, moved.median, epsilon = 1e-9);
    }

    #[test]
    fn rmse_dominates_mean_absolute_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.random_range(2..40);
            let errors: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
            let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
            let mean_abs = errors.iter().sum::<f64>() / n as f64;
            assert!(rmse >= mean_abs - 1e-12);
        }
    }

    #[test]
    fn alignment_is_a_local_minimum() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let a = wiggly(30, 0.1, 0.0);
        let g = Pose::from_parts(Vector3::new(0.1, -0.2, 0.3), Vector3::new(2.0, 1.0, -0.5));
        let b_samples: Vec<(f64, Pose)> = a
            .samples()
            .iter()
            .map(|&(t, p)| {
                let noisy = g.transform_point(&p.translation())
                    + Vector3::new(
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                    );
                (t, Pose::from_translation(noisy))
            })
            .collect();
        let b = Trajectory::new(b_samples).unwrap();
        let pairs = associate(&a, &b, 0.01);
        let best = align(&a, &b, &pairs).unwrap();
        let cost = |t: &Pose| -> f64 {
            pairs
                .iter()
                .map(|p| {
                    (t.transform_point(&a.samples()[p.index_a].1.translation())
                        - b.samples()[p.index_b].1.translation())
                    .norm_squared()
                })
                .sum()
        };
        let base = cost(&best);
        for _ in 0..100 {
            let twist = crate::geometry::Twist::new(
                Vector3::new(
                    rng.random_range(-1e-3..1e-3),
                    rng.random_range(-1e-3..1e-3),
                    rng.random_range(-1e-3..1e-3),
                ),
                Vector3::new(
                    rng.random_range(-1e-3..1e-3),
                    rng.random_range(-1e-3..1e-3),
                    rng.random_range(-1e-3..1e-3),
                ),
            );
            let perturbed = Pose::exp(&twist).compose(&best);
            assert!(cost(&perturbed) >= base - 1e-12);
        }
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let mut rng = ChaCha12Rng::seed_from_u64(51);
        let samples: Vec<(f64, Pose)> = (0..100)
            .map(|k| {
                let axis = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0f64),
                );
                let dir = if axis.norm() > 1e-9 { axis.normalize() } else { Vector3::x() };
                (
                    k as f64 * 0.1 + rng.random_range(0.0..0.01),
                    Pose::from_parts(
                        dir * rng.random_range(0.0..3.0),
                        Vector3::new(
                            rng.random_range(-100.0..100.0),
                            rng.random_range(-100.0..100.0),
                            rng.random_range(-10.0..10.0),
                        ),
                    ),
                )
            })
            .collect();
        let trajectory = Trajectory::new(samples).unwrap();
        let mut buf = Vec::new();
        text::write(&trajectory, &mut buf).unwrap();
        let back = text::read(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.len(), trajectory.len());
        for (x, y) in trajectory.samples().iter().zip(back.samples()) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1.translation(), y.1.translation());
            // Timestamps and positions round-trip exactly; the quaternion is
            // renormalized on construction, costing at most one ulp.
            assert!((x.1.rotation().coords - y.1.rotation().coords).norm() < 1e-15);
        }
    }
}
