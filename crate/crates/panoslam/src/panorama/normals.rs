//! Surface normal estimation from the depth grid and edge-aware smoothing.
//!
//! Raw normals come from the cross product of the vectors joining a pixel's
//! point to its +column and +row neighbors. They are noisy, so the mapper
//! smooths them with a dilated (a trous) B3-spline kernel whose taps are
//! suppressed across depth discontinuities.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::DepthPanorama;

/// Occlusion-edge rule shared by normal estimation, smoothing, and fusion
/// gating: two depths belong to different surfaces when they differ by more
/// than `base + relative * depth`.
#[derive(Clone, Copy, Debug)]
pub struct EdgeRule {
    pub base: f64,
    pub relative: f64,
}

impl Default for EdgeRule {
    fn default() -> Self {
        EdgeRule { base: 0.5, relative: 0.02 }
    }
}

impl EdgeRule {
    pub fn is_edge(&self, depth_center: f64, depth_neighbor: f64) -> bool {
        (depth_neighbor - depth_center).abs() > self.base + self.relative * depth_center
    }
}

/// B3-spline taps used by every smoothing pass.
const B3: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

fn raw_normal(pano: &DepthPanorama, r: usize, c: usize, rule: &EdgeRule) -> Option<Vector3<f64>> {
    let model = *pano.model();
    let (w, h) = (model.width(), model.height());
    let idx = r * w + c;
    let d = pano.depth_at(idx) as f64;
    if d <= 0.0 {
        return None;
    }
    // +column and +row neighbors; a dropped return one pixel over falls back
    // to the next pixel so sparse returns still get normals. An occlusion
    // edge (depth gap beyond the rule) invalidates instead.
    let probe = |dr_step: usize, dc_step: usize| -> Option<(usize, usize)> {
        for step in 1..=2usize {
            let rr = r + dr_step * step;
            if rr >= h {
                return None;
            }
            let cc = (c + dc_step * step) % w; // azimuth wraps
            let dn = pano.depth_at(rr * w + cc) as f64;
            if dn > 0.0 {
                if rule.is_edge(d, dn) {
                    return None;
                }
                return Some((rr, cc));
            }
        }
        None
    };
    let (r_right, c_right) = probe(0, 1)?;
    let (r_down, c_down) = probe(1, 0)?;
    let p = model.center_direction(r, c) * d;
    let pr = model.center_direction(r_right, c_right)
        * pano.depth_at(r_right * w + c_right) as f64;
    let pd = model.center_direction(r_down, c_down) * pano.depth_at(r_down * w + c_down) as f64;
    let n = (pr - p).cross(&(pd - p));
    let norm = n.norm();
    if norm < 1e-12 {
        return None;
    }
    let mut n = n / norm;
    // Orient toward the sensor: normal . viewing ray <= 0.
    if n.dot(&model.center_direction(r, c)) > 0.0 {
        n = -n;
    }
    Some(n)
}

/// Estimate a normal for every pixel of the panorama. Pixels missing a valid
/// neighbor, or separated from one by an occlusion edge, get no normal.
pub fn estimate_normals(pano: &mut DepthPanorama, rule: &EdgeRule) {
    let w = pano.model().width();
    let plane: Vec<[f32; 3]> = (0..pano.model().pixel_count())
        .into_par_iter()
        .map(|idx| {
            match raw_normal(pano, idx / w, idx % w, rule) {
                Some(n) => [n.x as f32, n.y as f32, n.z as f32],
                None => [0.0; 3],
            }
        })
        .collect();
    *pano.normal_plane_mut() = plane;
}

/// Re-estimate raw normals around the given touched pixels (after a fusion
/// update); neighbors whose normal reads a touched depth are included.
/// Deliberately skips smoothing: the per-sweep refresh restores detail.
///
/// `min_weight` guards against re-noising: a raw cross product over
/// once-measured depth is far noisier than the smoothed field it would
/// replace, so pixels refresh only after enough samples have been averaged
/// into them (weight at or above the threshold). Pass 0 to refresh
/// unconditionally.
pub fn refresh_normals(pano: &mut DepthPanorama, touched: &[usize], rule: &EdgeRule, min_weight: u8) {
    let w = pano.model().width();
    let mut affected: Vec<usize> = Vec::with_capacity(touched.len() * 3);
    for &idx in touched {
        let (r, c) = (idx / w, idx % w);
        affected.push(idx);
        affected.push(r * w + (c + w - 1) % w); // pixel whose +column neighbor is idx
        if r > 0 {
            affected.push((r - 1) * w + c); // pixel whose +row neighbor is idx
        }
    }
    affected.sort_unstable();
    affected.dedup();
    affected.retain(|&idx| pano.weight_at(idx) >= min_weight || !pano.is_valid(idx));
    let updates: Vec<(usize, Option<Vector3<f64>>)> = affected
        .par_iter()
        .map(|&idx| (idx, raw_normal(pano, idx / w, idx % w, rule)))
        .collect();
    for (idx, n) in updates {
        pano.set_normal(idx, n);
    }
}

/// Edge-aware multi-pass smoothing of the normal field. Pass `k` uses tap
/// spacing `2^k` (dilations 1, 2, 4 for the default three passes). Output
/// normals are renormalized; contributions across a depth edge are dropped,
/// so surfaces on either side of a discontinuity do not mix.
pub fn smooth_normals_atrous(pano: &mut DepthPanorama, passes: usize, rule: &EdgeRule) {
    let model = *pano.model();
    let (w, h) = (model.width(), model.height());
    for pass in 0..passes {
        let dilation = 1usize << pass;
        let depth = pano.depth_plane().to_vec();
        let normals = pano.normal_plane().to_vec();
        let smoothed: Vec<[f32; 3]> = (0..w * h)
            .into_par_iter()
            .map(|idx| {
                let current = normals[idx];
                if current == [0.0; 3] {
                    return current;
                }
                let (r, c) = (idx / w, idx % w);
                let d_center = depth[idx] as f64;
                let mut acc = Vector3::zeros();
                for (ti, &wr) in B3.iter().enumerate() {
                    let rr = r as isize + (ti as isize - 2) * dilation as isize;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    for (tj, &wc) in B3.iter().enumerate() {
                        let cc = (c as isize + (tj as isize - 2) * dilation as isize)
                            .rem_euclid(w as isize);
                        let nidx = rr as usize * w + cc as usize;
                        let n = normals[nidx];
                        if n == [0.0; 3] {
                            continue;
                        }
                        let dn = depth[nidx] as f64;
                        if dn <= 0.0 || rule.is_edge(d_center, dn) {
                            continue;
                        }
                        acc += wr * wc * Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64);
                    }
                }
                let norm = acc.norm();
                if norm < 1e-9 {
                    return current;
                }
                let mut n = acc / norm;
                if n.dot(&model.center_direction(r, c)) > 0.0 {
                    n = -n;
                }
                [n.x as f32, n.y as f32, n.z as f32]
            })
            .collect();
        *pano.normal_plane_mut() = smoothed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panorama::ProjectionModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
    }

    /// Range to the plane with unit normal `n` through point `p0`, or None.
    fn plane_range(dir: &Vector3<f64>, n: &Vector3<f64>, p0: &Vector3<f64>) -> Option<f64> {
        let denom = dir.dot(n);
        if denom.abs() < 1e-9 {
            return None;
        }
        let t = p0.dot(n) / denom;
        (t > 0.0).then_some(t)
    }

    #[test]
    fn wall_normals_match_plane_normal_after_smoothing() {
        let model = ProjectionModel::new(256, 64, -0.4, 0.4).unwrap();
        let n_true = Vector3::new(-1.0, 0.0, 0.0);
        let mut pano = DepthPanorama::from_range_fn(model, |dir| {
            plane_range(dir, &n_true, &Vector3::new(5.0, 0.0, 0.0))
                .filter(|&t| t < 40.0)
                .map(|t| (t, 0.8))
        });
        let rule = EdgeRule::default();
        estimate_normals(&mut pano, &rule);
        smooth_normals_atrous(&mut pano, 3, &rule);
        let mut checked = 0;
        for idx in 0..model.pixel_count() {
            if let Some(n) = pano.normal_at(idx) {
                assert!(angle_deg(&n, &n_true) < 2.0, "pixel {idx}: {n:?}");
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn missing_neighbor_invalidates_normal() {
        let model = ProjectionModel::new(32, 16, -0.5, 0.5).unwrap();
        let mut pano = DepthPanorama::new_empty(model);
        pano.set_sample(pano.index(4, 4), 5.0, 0.5, 1);
        pano.set_sample(pano.index(4, 5), 5.0, 0.5, 1);
        // +row neighbor of (4,4) missing
        estimate_normals(&mut pano, &EdgeRule::default());
        assert!(pano.normal_at(pano.index(4, 4)).is_none());
    }

    #[test]
    fn sphere_normals_antiparallel_to_rays() {
        let model = ProjectionModel::new(256, 64, -0.6, 0.6).unwrap();
        let mut pano = DepthPanorama::from_range_fn(model, |_| Some((5.0, 0.9)));
        let rule = EdgeRule::default();
        estimate_normals(&mut pano, &rule);
        for idx in 0..model.pixel_count() {
            if let Some(n) = pano.normal_at(idx) {
                let ray = model.center_direction(idx / 256, idx % 256);
                assert!(angle_deg(&n, &(-ray)) < 2.0);
                assert!(n.dot(&ray) <= 0.0);
            }
        }
    }

    #[test]
    fn smoothing_is_idempotent_on_constant_field() {
        // Forward-facing patch so the constant normal satisfies the
        // toward-sensor orientation at every filled pixel.
        let model = ProjectionModel::new(64, 32, -0.5, 0.5).unwrap();
        let n = Vector3::new(-1.0, 0.0, 0.0);
        let mut pano =
            DepthPanorama::from_range_fn(model, |dir| (dir.x > 0.3).then_some((5.0, 0.9)));
        for idx in 0..model.pixel_count() {
            if pano.is_valid(idx) {
                pano.set_normal(idx, Some(n));
            }
        }
        smooth_normals_atrous(&mut pano, 3, &EdgeRule::default());
        let mut checked = 0;
        for idx in 0..model.pixel_count() {
            let Some(got) = pano.normal_at(idx) else { continue };
            assert!((got - n).norm() < 1e-6);
            assert!((got.norm() - 1.0).abs() < 1e-6);
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn smoothing_does_not_mix_across_depth_step() {
        // Front half: wall at x = 3. A 45-degree tilted plane ~20 m out takes
        // over on the +azimuth side, with a large range step at the seam.
        let model = ProjectionModel::new(256, 64, -0.3, 0.3).unwrap();
        let n_a = Vector3::new(-1.0, 0.0, 0.0);
        let n_b = Vector3::new(-1.0, -1.0, 0.0).normalize();
        let p_b = Vector3::new(20.0, 0.0, 0.0);
        let mut pano = DepthPanorama::from_range_fn(model, |dir| {
            let az = dir.y.atan2(dir.x);
            if !(-1.0..1.0).contains(&az) {
                return None;
            }
            if az < 0.0 {
                plane_range(dir, &n_a, &Vector3::new(3.0, 0.0, 0.0)).map(|t| (t, 0.8))
            } else {
                plane_range(dir, &n_b, &p_b).map(|t| (t, 0.8))
            }
        });
        let rule = EdgeRule::default();
        estimate_normals(&mut pano, &rule);
        smooth_normals_atrous(&mut pano, 3, &rule);
        for idx in 0..model.pixel_count() {
            let Some(n) = pano.normal_at(idx) else { continue };
            let dir = model.center_direction(idx / 256, idx % 256);
            let az = dir.y.atan2(dir.x);
            let expected = if az < 0.0 { n_a } else { n_b };
            assert!(
                angle_deg(&n, &expected) < 1.0,
                "az {az:.3}: {n:?} vs {expected:?}"
            );
        }
    }

    #[test]
    fn smoothing_halves_noise_on_plane_normals() {
        let model = ProjectionModel::new(256, 64, -0.4, 0.4).unwrap();
        let n_true = Vector3::new(-1.0, 0.0, 0.0);
        let mut pano = DepthPanorama::from_range_fn(model, |dir| {
            let az = dir.y.atan2(dir.x);
            if !(-0.7..0.7).contains(&az) {
                return None;
            }
            plane_range(dir, &n_true, &Vector3::new(5.0, 0.0, 0.0)).map(|t| (t, 0.8))
        });
        // Perturb the true normal with sigma = 15 degree tilts, fixed seed.
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let sigma = 15.0f64.to_radians();
        for idx in 0..model.pixel_count() {
            if !pano.is_valid(idx) {
                continue;
            }
            let tangent_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let tilt: f64 = {
                // Box-Muller
                let u1: f64 = rng.random_range(1e-12..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            };
            let t1 = Vector3::new(0.0, 1.0, 0.0);
            let t2 = Vector3::new(0.0, 0.0, 1.0);
            let axis = t1 * tangent_angle.cos() + t2 * tangent_angle.sin();
            let rot = crate::geometry::rotation_exp(&(axis * tilt));
            pano.set_normal(idx, Some(rot * n_true));
        }
        let before: Vec<f64> = (0..model.pixel_count())
            .filter_map(|i| pano.normal_at(i).map(|n| angle_deg(&n, &n_true)))
            .collect();
        let mean_before = before.iter().sum::<f64>() / before.len() as f64;
        smooth_normals_atrous(&mut pano, 3, &EdgeRule::default());
        let after: Vec<f64> = (0..model.pixel_count())
            .filter_map(|i| pano.normal_at(i).map(|n| angle_deg(&n, &n_true)))
            .collect();
        let mean_after = after.iter().sum::<f64>() / after.len() as f64;
        assert!(
            mean_after * 2.0 < mean_before,
            "before {mean_before:.2} deg, after {mean_after:.2} deg"
        );
        // Smoothing never produces non-unit normals.
        for i in 0..model.pixel_count() {
            if let Some(n) = pano.normal_at(i) {
                assert!((n.norm() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn refresh_recomputes_touched_neighborhood() {
        let model = ProjectionModel::new(64, 32, -0.4, 0.4).unwrap();
        let mut pano = DepthPanorama::from_range_fn(model, |dir| {
            plane_range(dir, &Vector3::new(-1.0, 0.0, 0.0), &Vector3::new(5.0, 0.0, 0.0))
                .filter(|&t| t < 40.0)
                .map(|t| (t, 0.8))
        });
        let rule = EdgeRule::default();
        estimate_normals(&mut pano, &rule);
        let idx = pano.index(16, 32);
        let before = pano.normal_at(idx).unwrap();
        // Nudge the depth and refresh; the raw normal must change accordingly.
        let d = pano.depth_at(idx);
        pano.set_sample(idx, d + 0.05, 0.8, 2);
        refresh_normals(&mut pano, &[idx], &rule, 0);
        let after = pano.normal_at(idx).unwrap();
        assert!((before - after).norm() > 1e-4);
        assert!((after.norm() - 1.0).abs() < 1e-6);
    }
}
