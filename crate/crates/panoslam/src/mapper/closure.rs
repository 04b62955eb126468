//! Loop-closure search: nearest-keyframe candidates from the pose graph, a
//! coarse grid search over planar offsets and yaw, full-resolution ICP
//! refinement, and the strong/weak classification rule.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::Error;
use crate::geometry::{rotation_exp, Pose};
use crate::panorama::DepthPanorama;
use crate::registration::{icp_point_to_plane, IcpConfig, RegistrationResult, SimilarityFilter};

/// Lattice of candidate transforms evaluated by the coarse search: planar
/// offsets and yaw around the drift-uncorrected prior. The default spans
/// +-2 m at 0.5 m and +-40 degrees at 10 degrees: 9 x 9 x 9 = 729 poses.
#[derive(Clone, Copy, Debug)]
pub struct GridSearchSpec {
    pub xy_extent: f64,
    pub xy_step: f64,
    pub yaw_extent: f64,
    pub yaw_step: f64,
    /// Downsampling factor for the low-resolution alignment checks.
    pub downsample: usize,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        GridSearchSpec {
            xy_extent: 2.0,
            xy_step: 0.5,
            yaw_extent: 40.0f64.to_radians(),
            yaw_step: 10.0f64.to_radians(),
            downsample: 4,
        }
    }
}

impl GridSearchSpec {
    fn axis(extent: f64, step: f64) -> Vec<f64> {
        let n = (extent / step).round() as i64;
        (-n..=n).map(|k| k as f64 * step).collect()
    }

    /// All lattice offsets in a fixed, documented order (yaw outer, then y,
    /// then x), so ties resolve deterministically.
    pub fn offsets(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for yaw in Self::axis(self.yaw_extent, self.yaw_step) {
            for y in Self::axis(self.xy_extent, self.xy_step) {
                for x in Self::axis(self.xy_extent, self.xy_step) {
                    out.push((x, y, yaw));
                }
            }
        }
        out
    }

    pub fn pose_count(&self) -> usize {
        let per_axis = |extent: f64, step: f64| 2 * (extent / step).round() as usize + 1;
        per_axis(self.xy_extent, self.xy_step).pow(2) * per_axis(self.yaw_extent, self.yaw_step)
    }
}

/// Apply a lattice offset to the prior: yaw rotates about the sweep's own
/// position (not the candidate origin), then the planar shift is added.
pub fn offset_pose(prior: &Pose, dx: f64, dy: f64, dyaw: f64) -> Pose {
    let p = prior.translation();
    let rot = rotation_exp(&Vector3::new(0.0, 0.0, dyaw));
    let shift = p - rot * p + Vector3::new(dx, dy, 0.0);
    Pose::new(rot, shift).compose(prior)
}

/// Evaluate every lattice pose with low-resolution projective alignment
/// checks. The score of a pose is the fraction of valid low-res sweep pixels
/// whose projective pair passes the similarity filter under that pose.
/// Returns the best seed and its score.
pub fn grid_search_alignment(
    sweep_lowres: &DepthPanorama,
    candidate_lowres: &DepthPanorama,
    prior: &Pose,
    spec: &GridSearchSpec,
    filter: &SimilarityFilter,
) -> (Pose, f64) {
    // Lean caches, gathered once for all lattice poses.
    let source: Vec<(Vector3<f64>, Vector3<f64>)> = (0..sweep_lowres.model().pixel_count())
        .filter_map(|idx| {
            let p = sweep_lowres.point_at(idx)?;
            let n = sweep_lowres.normal_at(idx)?;
            Some((p, n))
        })
        .collect();
    let valid = sweep_lowres.depth_valid_count().max(1);
    let model = *candidate_lowres.model();
    let target: Vec<Option<(Vector3<f64>, Vector3<f64>)>> = (0..model.pixel_count())
        .map(|idx| {
            Some((candidate_lowres.point_at(idx)?, candidate_lowres.normal_at(idx)?))
        })
        .collect();

    let offsets = spec.offsets();
    let scores: Vec<f64> = offsets
        .par_iter()
        .map(|&(dx, dy, dyaw)| {
            let t = offset_pose(prior, dx, dy, dyaw);
            let mut passing = 0usize;
            for &(p, n) in &source {
                let x = t.transform_point(&p);
                let Ok((row, col, _)) = model.project(&x) else { continue };
                let (r, c) = model.pixel_of(row, col);
                let Some((pt, nt)) = target[r * model.width() + c] else { continue };
                if !filter.passes_distance((x - pt).norm()) {
                    continue;
                }
                if !filter.passes_angle(t.rotate_vector(&n).dot(&nt)) {
                    continue;
                }
                passing += 1;
            }
            passing as f64 / valid as f64
        })
        .collect();

    let mut best = 0usize;
    for k in 1..scores.len() {
        if scores[k] > scores[best] {
            best = k;
        }
    }
    let (dx, dy, dyaw) = offsets[best];
    (offset_pose(prior, dx, dy, dyaw), scores[best])
}

/// Outcome of re-registering against an old keyframe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClosureClass {
    Strong,
    Weak,
    Reject,
}

/// The strong/weak rule: a closure is strong when its quality clears the
/// keyframe-creation threshold, weak when it clears 75% of it.
pub fn classify_closure(quality: f64, threshold: f64) -> ClosureClass {
    if quality >= threshold {
        ClosureClass::Strong
    } else if quality >= 0.75 * threshold {
        ClosureClass::Weak
    } else {
        ClosureClass::Reject
    }
}

/// A classified closure attempt.
#[derive(Clone, Copy, Debug)]
pub struct ClosureAttempt {
    pub class: ClosureClass,
    pub registration: RegistrationResult,
    pub grid_score: f64,
}

/// Grid search then full-resolution ICP against one candidate keyframe.
/// `prior` is the drift-uncorrected pose of the sweep in the candidate
/// frame. Registration failures (too little overlap, degenerate geometry)
/// classify as Reject.
pub fn attempt_closure(
    sweep: &DepthPanorama,
    candidate: &DepthPanorama,
    prior: &Pose,
    spec: &GridSearchSpec,
    icp: &IcpConfig,
    threshold: f64,
) -> crate::error::Result<ClosureAttempt> {
    let sweep_lr = sweep.downsample(spec.downsample)?;
    let cand_lr = candidate.downsample(spec.downsample)?;
    let (seed, grid_score) = grid_search_alignment(&sweep_lr, &cand_lr, prior, spec, &icp.filter);
    match icp_point_to_plane(sweep, candidate, &seed, icp) {
        Ok(registration) => Ok(ClosureAttempt {
            class: classify_closure(registration.quality, threshold),
            registration,
            grid_score,
        }),
        Err(Error::DegenerateGeometry { last_estimate, .. }) => Ok(ClosureAttempt {
            class: ClosureClass::Reject,
            registration: RegistrationResult {
                pose: *last_estimate,
                inliers: 0,
                valid_count: 0,
                quality: 0.0,
                iterations: 0,
                residual: f64::INFINITY,
                converged: false,
            },
            grid_score,
        }),
        Err(Error::IllConditioned { .. }) => Ok(ClosureAttempt {
            class: ClosureClass::Reject,
            registration: RegistrationResult {
                pose: *prior,
                inliers: 0,
                valid_count: 0,
                quality: 0.0,
                iterations: 0,
                residual: f64::INFINITY,
                converged: false,
            },
            grid_score,
        }),
        Err(e) => Err(e),
    }
}
