//! Keyframe update: Omega-gated saturating weighted averaging of sweep data
//! into the current keyframe, and the mutual consistency check run when
//! switching keyframes.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::geometry::Pose;
use crate::panorama::{refresh_normals, DepthPanorama, EdgeRule};
use crate::registration::SimilarityFilter;

/// The per-pixel averaging rule: the sample count saturates at `cap`, and the
/// stored value moves to `(w * old + new) / (w + 1)` with `w` the capped
/// count before the update.
pub fn weighted_update(old: f32, count: u8, new: f32, cap: u8) -> (f32, u8) {
    let w = count.min(cap) as f32;
    let fused = (w * old + new) / (w + 1.0);
    (fused, (count + 1).min(cap))
}

/// Fuse one registered sweep into the keyframe panorama. `transform` maps
/// sweep-frame points into the keyframe frame (the registration result).
///
/// Two passes: keyframe pixels with data project into the sweep and average
/// in the corresponding sweep measurement when the similarity filter passes;
/// empty keyframe pixels covered by the sweep initialize at weight 1 (nearest
/// range wins deterministically). Normals around touched pixels re-estimate
/// from the raw depth afterward, restoring detail lost to sweep smoothing.
///
/// Returns the touched pixel indices.
pub fn fuse_sweep(
    keyframe: &mut DepthPanorama,
    sweep: &DepthPanorama,
    transform: &Pose,
    filter: &SimilarityFilter,
    weight_cap: u8,
    rule: &EdgeRule,
) -> Vec<usize> {
    let kf_model = *keyframe.model();
    let sweep_model = *sweep.model();
    let into_sweep = transform.inverse();

    // Pass 1: refresh pixels that already hold data.
    struct Update {
        index: usize,
        depth: f32,
        intensity: f32,
        weight: u8,
    }
    let updates: Vec<Update> = (0..kf_model.pixel_count())
        .into_par_iter()
        .filter_map(|idx| {
            let count = keyframe.weight_at(idx);
            if count == 0 {
                return None;
            }
            let x_kf = keyframe.point_at(idx)?;
            let n_kf = keyframe.normal_at(idx)?;
            let in_sweep = into_sweep.transform_point(&x_kf);
            let (row, col, _) = sweep_model.project(&in_sweep).ok()?;
            let (r, c) = sweep_model.pixel_of(row, col);
            let sweep_idx = r * sweep_model.width() + c;
            let p_sweep = sweep.point_at(sweep_idx)?;
            let n_sweep = sweep.normal_at(sweep_idx)?;
            let z = transform.transform_point(&p_sweep);
            if !filter.passes_distance((z - x_kf).norm()) {
                return None;
            }
            let n_rot = transform.rotate_vector(&n_sweep);
            if !filter.passes_angle(n_rot.dot(&n_kf)) {
                return None;
            }
            let (depth, weight) = weighted_update(keyframe.depth_at(idx), count, z.norm() as f32, weight_cap);
            let (intensity, _) =
                weighted_update(keyframe.intensity_at(idx), count, sweep.intensity_at(sweep_idx), weight_cap);
            Some(Update { index: idx, depth, intensity, weight })
        })
        .collect();

    let mut touched = Vec::with_capacity(updates.len());
    for u in &updates {
        keyframe.set_sample(u.index, u.depth, u.intensity, u.weight);
        touched.push(u.index);
    }

    // Pass 2: initialize empty keyframe pixels the sweep can see.
    struct Init {
        index: usize,
        range: f64,
        point: Vector3<f64>,
        intensity: f32,
    }
    let inits: Vec<Init> = (0..sweep_model.pixel_count())
        .into_par_iter()
        .filter_map(|sweep_idx| {
            if !sweep.is_valid(sweep_idx) {
                return None;
            }
            let p_sweep = sweep.point_at(sweep_idx)?;
            let z = transform.transform_point(&p_sweep);
            let (row, col, range) = kf_model.project(&z).ok()?;
            let (r, c) = kf_model.pixel_of(row, col);
            let index = r * kf_model.width() + c;
            if keyframe.weight_at(index) != 0 {
                return None;
            }
            Some(Init { index, range, point: z, intensity: sweep.intensity_at(sweep_idx) })
        })
        .collect();
    // Deterministic z-buffer: nearest range, ties to the lexicographically
    // smaller point. Applied sequentially so input order cannot matter.
    let mut best: std::collections::BTreeMap<usize, &Init> = std::collections::BTreeMap::new();
    for init in &inits {
        let key = (init.range, init.point.x, init.point.y, init.point.z, init.intensity);
        match best.get(&init.index) {
            Some(cur)
                if (cur.range, cur.point.x, cur.point.y, cur.point.z, cur.intensity) <= key => {}
            _ => {
                best.insert(init.index, init);
            }
        }
    }
    for (idx, init) in best {
        keyframe.set_sample(idx, init.range as f32, init.intensity, 1);
        touched.push(idx);
    }

    touched.sort_unstable();
    touched.dedup();
    // Raw refresh only for pixels whose depth has been averaged enough to
    // be trusted; younger pixels keep their smoothed normals.
    refresh_normals(keyframe, &touched, rule, weight_cap.div_ceil(2));
    touched
}

/// Invalidate pixels of `incoming` whose stored surface another keyframe
/// confidently sees through: the other keyframe's ray through the point
/// measures more than the similarity distance beyond it, with a fusion
/// weight of at least half the cap. Poses are world poses from the
/// optimized graph. Returns the number of invalidated pixels.
pub fn consistency_check_on_switch(
    incoming: &mut DepthPanorama,
    incoming_pose: &Pose,
    others: &[(&DepthPanorama, Pose)],
    filter: &SimilarityFilter,
    weight_cap: u8,
    rule: &EdgeRule,
) -> usize {
    let model = *incoming.model();
    let min_weight = weight_cap.div_ceil(2);
    let margin = filter.max_distance();
    // "Confidently" sees through: the witnessing pixel and its valid
    // 4-neighborhood must all measure past the point, which suppresses the
    // false hits pixel quantization produces along occlusion silhouettes.
    let sees_through = |pano: &DepthPanorama, r: usize, c: usize, range: f64| -> bool {
        let (w, h) = (pano.model().width(), pano.model().height());
        let idx = r * w + c;
        if pano.weight_at(idx) < min_weight {
            return false;
        }
        let mut neighborhood = vec![idx, r * w + (c + 1) % w, r * w + (c + w - 1) % w];
        if r > 0 {
            neighborhood.push((r - 1) * w + c);
        }
        if r + 1 < h {
            neighborhood.push((r + 1) * w + c);
        }
        neighborhood.into_iter().all(|n| {
            let d = pano.depth_at(n) as f64;
            d <= 0.0 || d > range + margin
        })
    };
    let contradicted: Vec<usize> = (0..model.pixel_count())
        .into_par_iter()
        .filter(|&idx| {
            let Some(x) = incoming.point_at(idx) else { return false };
            let world = incoming_pose.transform_point(&x);
            for (pano, pose) in others {
                let y = pose.inverse().transform_point(&world);
                let Ok((row, col, range)) = pano.model().project(&y) else { continue };
                let (r, c) = pano.model().pixel_of(row, col);
                if sees_through(pano, r, c, range) {
                    return true;
                }
            }
            false
        })
        .collect();
    for &idx in &contradicted {
        incoming.invalidate(idx);
    }
    refresh_normals(incoming, &contradicted, rule, 0);
    contradicted.len()
}
