//! The top-level SLAM pipeline: de-rotate and project each sweep, register
//! it to the current keyframe, fuse it in, decide whether to keep the
//! keyframe, search for strong/weak loop closures when quality drops, and
//! re-optimize the gravity-anchored pose graph whenever edges are added.

mod archive;
mod closure;
mod fusion;

pub use archive::{load_map, save_map};
pub use closure::{
    attempt_closure, classify_closure, grid_search_alignment, offset_pose, ClosureAttempt,
    ClosureClass, GridSearchSpec,
};
pub use fusion::{consistency_check_on_switch, fuse_sweep, weighted_update};

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::UnitQuaternion;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::imu::{derotate_sweep, gravity_track, GravityEstimate};
use crate::panorama::{
    estimate_normals, smooth_normals_atrous, DepthPanorama, EdgeRule, ProjectionModel, WEIGHT_CAP,
};
use crate::pose_graph::{self, GraphProblem, GravityFactor, RelativePoseFactor};
use crate::registration::{icp_point_to_plane, IcpConfig, RegistrationResult, SimilarityFilter};
use crate::sweep::Sweep;

/// Seed for the next registration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MotionPrior {
    /// Start from the previous pose (default).
    #[default]
    ZeroVelocity,
    /// Extrapolate the previous inter-sweep motion.
    ZeroAcceleration,
}

impl MotionPrior {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero-velocity" => Ok(MotionPrior::ZeroVelocity),
            "zero-acceleration" => Ok(MotionPrior::ZeroAcceleration),
            _ => Err(Error::InvalidConfig(format!(
                "unknown motion prior '{s}' (expected zero-velocity or zero-acceleration)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MotionPrior::ZeroVelocity => "zero-velocity",
            MotionPrior::ZeroAcceleration => "zero-acceleration",
        }
    }
}

/// Pipeline configuration. The two parameters the paper exposes per
/// deployment are `quality_threshold` and `motion_prior`; the rest are
/// documented defaults.
#[derive(Clone, Debug)]
pub struct MapperConfig {
    /// Registration quality below which a new keyframe is sought.
    pub quality_threshold: f64,
    pub motion_prior: MotionPrior,
    pub filter: SimilarityFilter,
    /// Saturation point of the fusion sample counter.
    pub weight_cap: u8,
    /// Candidate search radius around the current pose estimate.
    pub closure_radius: f64,
    pub max_closure_candidates: usize,
    /// Candidates closer than this many graph hops to the current keyframe
    /// are skipped (the recent trail is not a loop).
    pub min_closure_hops: usize,
    pub grid: GridSearchSpec,
    pub keyframe_model: ProjectionModel,
    pub icp: IcpConfig,
    pub max_range: f64,
    /// Vertical field of view assumed for incoming sweep panoramas.
    pub sweep_vertical_fov: f64,
    /// Complementary filter gain per sample.
    pub gravity_alpha: f64,
    /// Lidar-to-IMU extrinsic rotation (identity when frames coincide).
    pub imu_extrinsic: UnitQuaternion<f64>,
    pub edge_rule: EdgeRule,
    pub smoothing_passes: usize,
    pub odometry_rotation_weight: f64,
    pub odometry_translation_weight: f64,
    pub gravity_weight: f64,
    pub optimizer_max_iterations: usize,
    pub optimizer_tolerance: f64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig {
            quality_threshold: 0.6,
            motion_prior: MotionPrior::ZeroVelocity,
            filter: SimilarityFilter::default(),
            weight_cap: WEIGHT_CAP,
            closure_radius: 15.0,
            max_closure_candidates: 3,
            min_closure_hops: 4,
            grid: GridSearchSpec::default(),
            keyframe_model: ProjectionModel::keyframe_low(),
            icp: IcpConfig::default(),
            max_range: 150.0,
            sweep_vertical_fov: 33.0f64.to_radians(),
            gravity_alpha: 0.02,
            imu_extrinsic: UnitQuaternion::identity(),
            edge_rule: EdgeRule::default(),
            smoothing_passes: 3,
            odometry_rotation_weight: 100.0,
            odometry_translation_weight: 25.0,
            gravity_weight: 10.0,
            optimizer_max_iterations: 50,
            optimizer_tolerance: 1e-9,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.quality_threshold && self.quality_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "quality threshold must be in (0, 1), got {}",
                self.quality_threshold
            )));
        }
        if self.weight_cap < 1 {
            return Err(Error::InvalidConfig("weight cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Odometry,
    StrongClosure,
    WeakClosure,
}

impl EdgeKind {
    pub fn name(&self) -> &'static str {
        match self {
            EdgeKind::Odometry => "odometry",
            EdgeKind::StrongClosure => "strong",
            EdgeKind::WeakClosure => "weak",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "odometry" => Ok(EdgeKind::Odometry),
            "strong" => Ok(EdgeKind::StrongClosure),
            "weak" => Ok(EdgeKind::WeakClosure),
            _ => Err(Error::InvalidConfig(format!("unknown edge kind '{s}'"))),
        }
    }
}

/// Relative-pose edge of the map graph: `world_to = world_from * relative`.
#[derive(Clone, Copy, Debug)]
pub struct MapEdge {
    pub from: u32,
    pub to: u32,
    pub relative: Pose,
    pub kind: EdgeKind,
}

/// A pose-graph node: panoramic depth image, world pose, and the gravity
/// direction observed when it was created. The panorama may be evicted to
/// the backing store and reloaded on demand.
#[derive(Clone, Debug)]
pub struct Keyframe {
    pub id: u32,
    pub world_pose: Pose,
    pub gravity: GravityEstimate,
    pub created_at: f64,
    panorama: Option<DepthPanorama>,
}

impl Keyframe {
    pub fn panorama(&self) -> Option<&DepthPanorama> {
        self.panorama.as_ref()
    }

    pub fn is_resident(&self) -> bool {
        self.panorama.is_some()
    }
}

/// Keyframes plus relative-pose edges: the global map.
#[derive(Clone, Debug, Default)]
pub struct MapGraph {
    keyframes: BTreeMap<u32, Keyframe>,
    edges: Vec<MapEdge>,
    current: u32,
    /// Sensor pose expressed in the current keyframe's frame.
    current_pose: Pose,
}

impl MapGraph {
    pub fn keyframes(&self) -> impl Iterator<Item = &Keyframe> {
        self.keyframes.values()
    }

    pub fn keyframe(&self, id: u32) -> Option<&Keyframe> {
        self.keyframes.get(&id)
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframes.len()
    }

    pub fn edges(&self) -> &[MapEdge] {
        &self.edges
    }

    pub fn current_keyframe(&self) -> u32 {
        self.current
    }

    pub fn current_pose_in_keyframe(&self) -> Pose {
        self.current_pose
    }

    pub fn current_world_pose(&self) -> Pose {
        self.keyframes[&self.current].world_pose.compose(&self.current_pose)
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    /// Graph hop distance from the current keyframe to every node.
    fn hops_from_current(&self) -> BTreeMap<u32, usize> {
        let mut dist = BTreeMap::new();
        if !self.keyframes.contains_key(&self.current) {
            return dist;
        }
        dist.insert(self.current, 0usize);
        let mut frontier = vec![self.current];
        while let Some(id) = frontier.pop() {
            let d = dist[&id];
            for e in &self.edges {
                let other = if e.from == id {
                    e.to
                } else if e.to == id {
                    e.from
                } else {
                    continue;
                };
                if !dist.contains_key(&other) || dist[&other] > d + 1 {
                    dist.insert(other, d + 1);
                    frontier.push(other);
                }
            }
        }
        dist
    }

    /// Keyframes whose world position lies within `radius` of the query
    /// pose, nearest first (ids break ties). The current keyframe and
    /// keyframes within `min_hops` graph hops of it are excluded: those are
    /// the trail just traveled, not loop closures.
    pub fn find_closure_candidates_filtered(
        &self,
        world: &Pose,
        radius: f64,
        min_hops: usize,
    ) -> Vec<u32> {
        let hops = self.hops_from_current();
        let mut found: Vec<(f64, u32)> = self
            .keyframes
            .values()
            .filter(|kf| hops.get(&kf.id).map_or(true, |&h| h >= min_hops))
            .filter_map(|kf| {
                let d = (kf.world_pose.translation() - world.translation()).norm();
                (d <= radius).then_some((d, kf.id))
            })
            .collect();
        found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        found.into_iter().map(|(_, id)| id).collect()
    }

    /// [`find_closure_candidates_filtered`] with the default hop exclusion
    /// (direct neighbors of the current keyframe).
    pub fn find_closure_candidates(&self, world: &Pose, radius: f64) -> Vec<u32> {
        self.find_closure_candidates_filtered(world, radius, 2)
    }

    fn connected(&self) -> bool {
        if self.keyframes.is_empty() {
            return true;
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![*self.keyframes.keys().next().unwrap()];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            for e in &self.edges {
                if e.from == id && !seen.contains(&e.to) {
                    stack.push(e.to);
                }
                if e.to == id && !seen.contains(&e.from) {
                    stack.push(e.from);
                }
            }
        }
        seen.len() == self.keyframes.len()
    }
}

/// What a sweep did to the map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SweepDecision {
    FirstKeyframe { id: u32 },
    Continue,
    /// Registration was degenerate; the pose was held by the motion prior.
    SkippedDegenerate,
    StrongClosure { to: u32 },
    NewKeyframe { id: u32, weak_closure_to: Option<u32> },
}

/// Per-sweep outcome report.
#[derive(Clone, Debug)]
pub struct SweepReport {
    pub t: f64,
    pub decision: SweepDecision,
    pub quality: f64,
    pub registration: Option<RegistrationResult>,
    pub world_pose: Pose,
    pub keyframe_count: usize,
    pub edge_count: usize,
    pub optimized: bool,
}

/// One trajectory record: the sweep pose is stored relative to its keyframe
/// so that later graph optimizations retroactively correct it.
#[derive(Clone, Copy, Debug)]
struct TrajectoryRecord {
    t: f64,
    keyframe: u32,
    pose_in_keyframe: Pose,
}

/// Pipeline owner: a map graph plus the gravity filter and trajectory log.
pub struct Mapper {
    config: MapperConfig,
    graph: MapGraph,
    gravity: Option<GravityEstimate>,
    gravity_clock: f64,
    records: Vec<TrajectoryRecord>,
    /// Last two sensor poses in the current keyframe frame, newest first;
    /// feeds the zero-acceleration prior. Reset on keyframe switches.
    recent: Vec<Pose>,
    next_id: u32,
    store_dir: Option<PathBuf>,
}

impl Mapper {
    pub fn new(config: MapperConfig) -> Result<Self> {
        config.validate()?;
        Ok(Mapper {
            config,
            graph: MapGraph::default(),
            gravity: None,
            gravity_clock: f64::NEG_INFINITY,
            records: Vec::new(),
            recent: Vec::new(),
            next_id: 0,
            store_dir: None,
        })
    }

    /// Enable disk-backed keyframe streaming: distant keyframes are written
    /// to `dir` and dropped from memory, then reloaded on demand.
    pub fn set_store_dir(&mut self, dir: PathBuf) -> Result<()> {
        std::fs::create_dir_all(&dir)?;
        self.store_dir = Some(dir);
        Ok(())
    }

    pub fn config(&self) -> &MapperConfig {
        &self.config
    }

    pub fn graph(&self) -> &MapGraph {
        &self.graph
    }

    /// Trajectory of every processed sweep under the current (optimized)
    /// keyframe poses.
    pub fn trajectory(&self) -> crate::eval::Trajectory {
        let samples = self
            .records
            .iter()
            .map(|r| {
                let world = self.graph.keyframes[&r.keyframe]
                    .world_pose
                    .compose(&r.pose_in_keyframe);
                (r.t, world)
            })
            .collect();
        crate::eval::Trajectory::new(samples).expect("sweep times increase")
    }

    pub fn gravity_estimate(&self) -> Option<&GravityEstimate> {
        self.gravity.as_ref()
    }

    fn track_gravity(&mut self, sweep: &Sweep) {
        if sweep.imu.is_empty() {
            return;
        }
        let state = match self.gravity {
            Some(g) => g,
            None => {
                let first = sweep.imu.samples()[0];
                GravityEstimate::from_accelerometer(&first.acceleration)
            }
        };
        let (state, clock) =
            gravity_track(state, &sweep.imu, self.gravity_clock, self.config.gravity_alpha);
        self.gravity = Some(state);
        if clock > self.gravity_clock {
            self.gravity_clock = clock;
        }
    }

    fn build_sweep_panorama(&self, sweep: &Sweep) -> Result<DepthPanorama> {
        let t_ref = sweep.t_end();
        let raw: Vec<_> = sweep.returns().collect();
        let points: Vec<(nalgebra::Vector3<f64>, f32)> = if sweep.imu.is_empty() {
            raw.iter().map(|&(p, i, _)| (p, i)).collect()
        } else {
            derotate_sweep(&raw, &sweep.imu, t_ref, &self.config.imu_extrinsic)?
        };
        let model = ProjectionModel::sweep(
            sweep.columns as usize,
            sweep.beams as usize,
            self.config.sweep_vertical_fov,
        )?;
        let mut pano = DepthPanorama::build(model, &points, self.config.max_range);
        estimate_normals(&mut pano, &self.config.edge_rule);
        smooth_normals_atrous(&mut pano, self.config.smoothing_passes, &self.config.edge_rule);
        Ok(pano)
    }

    /// Keyframe panorama: the sweep's range image re-projected into the
    /// (typically taller and denser) keyframe model, so the keyframe starts
    /// dense within the sweep's field of view. Normals start smoothed like
    /// any intake panorama; fusion refreshes them raw once enough samples
    /// have been averaged into a pixel, restoring detail as depth noise
    /// shrinks.
    fn build_keyframe_panorama(&self, sweep_pano: &DepthPanorama) -> DepthPanorama {
        let mut pano = sweep_pano.resample(self.config.keyframe_model, &self.config.edge_rule);
        estimate_normals(&mut pano, &self.config.edge_rule);
        smooth_normals_atrous(&mut pano, self.config.smoothing_passes, &self.config.edge_rule);
        pano
    }

    fn current_gravity(&self) -> GravityEstimate {
        self.gravity
            .unwrap_or_else(|| GravityEstimate::new(nalgebra::Vector3::z(), 0.0))
    }

    fn motion_prior(&self) -> Pose {
        match self.config.motion_prior {
            MotionPrior::ZeroVelocity => self.graph.current_pose,
            MotionPrior::ZeroAcceleration => {
                if self.recent.len() >= 2 {
                    let delta = self.recent[1].inverse().compose(&self.recent[0]);
                    self.recent[0].compose(&delta)
                } else {
                    self.graph.current_pose
                }
            }
        }
    }

    fn push_recent(&mut self, pose: Pose) {
        self.recent.insert(0, pose);
        self.recent.truncate(2);
    }

    fn ensure_loaded(&mut self, id: u32) -> Result<()> {
        let kf = self.graph.keyframes.get_mut(&id).ok_or_else(|| {
            Error::InvalidConfig(format!("keyframe {id} does not exist"))
        })?;
        if kf.panorama.is_some() {
            return Ok(());
        }
        let dir = self.store_dir.as_ref().ok_or_else(|| Error::Archive {
            keyframe: id,
            message: "keyframe evicted but no store directory configured".into(),
        })?;
        let path = dir.join(archive::panorama_file_name(id));
        let file = std::fs::File::open(&path).map_err(|e| Error::Archive {
            keyframe: id,
            message: format!("cannot open {}: {e}", path.display()),
        })?;
        let pano = crate::panorama::read_record(&mut std::io::BufReader::new(file), id)?;
        kf.panorama = Some(pano);
        Ok(())
    }

    /// Evict non-current keyframes more than twice the closure radius away
    /// from the current pose estimate. No-op without a store directory.
    pub fn evict_distant(&mut self) -> Result<usize> {
        let Some(dir) = self.store_dir.clone() else { return Ok(0) };
        if self.graph.is_empty() {
            return Ok(0);
        }
        let here = self.graph.current_world_pose().translation();
        let current = self.graph.current;
        let limit = 2.0 * self.config.closure_radius;
        let mut evicted = 0;
        let ids: Vec<u32> = self.graph.keyframes.keys().copied().collect();
        for id in ids {
            if id == current {
                continue;
            }
            let kf = &self.graph.keyframes[&id];
            if kf.panorama.is_none() {
                continue;
            }
            if (kf.world_pose.translation() - here).norm() <= limit {
                continue;
            }
            let path = dir.join(archive::panorama_file_name(id));
            let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
            crate::panorama::write_record(kf.panorama.as_ref().unwrap(), &mut file)?;
            self.graph.keyframes.get_mut(&id).unwrap().panorama = None;
            evicted += 1;
        }
        Ok(evicted)
    }

    fn create_keyframe(
        &mut self,
        sweep_pano: &DepthPanorama,
        created_at: f64,
        world_pose: Pose,
        edge_from: Option<(u32, Pose)>,
    ) -> Result<u32> {
        let id = self.next_id;
        self.next_id += 1;
        let panorama = self.build_keyframe_panorama(sweep_pano);
        self.graph.keyframes.insert(
            id,
            Keyframe {
                id,
                world_pose,
                gravity: self.current_gravity(),
                created_at,
                panorama: Some(panorama),
            },
        );
        if let Some((from, relative)) = edge_from {
            self.graph.edges.push(MapEdge { from, to: id, relative, kind: EdgeKind::Odometry });
        }
        self.graph.current = id;
        self.graph.current_pose = Pose::identity();
        self.recent.clear();
        self.push_recent(Pose::identity());
        Ok(id)
    }

    fn optimize_graph(&mut self) -> Result<()> {
        let anchor = *self.graph.keyframes.keys().next().expect("non-empty graph");
        let poses: BTreeMap<u32, Pose> =
            self.graph.keyframes.iter().map(|(&id, kf)| (id, kf.world_pose)).collect();
        let mut problem = GraphProblem::new(poses, anchor);
        for e in &self.graph.edges {
            problem.relative.push(RelativePoseFactor::new(
                e.from,
                e.to,
                e.relative,
                self.config.odometry_rotation_weight,
                self.config.odometry_translation_weight,
            ));
        }
        for kf in self.graph.keyframes.values() {
            if kf.gravity.confidence() > 0.05 {
                problem.gravity.push(GravityFactor::new(
                    kf.id,
                    kf.gravity.gravity_body(),
                    self.config.gravity_weight,
                ));
            }
        }
        let out = pose_graph::optimize(
            &problem,
            self.config.optimizer_max_iterations,
            self.config.optimizer_tolerance,
        )?;
        for (id, pose) in out.poses {
            if let Some(kf) = self.graph.keyframes.get_mut(&id) {
                kf.world_pose = pose;
            }
        }
        Ok(())
    }

    fn run_consistency_check(&mut self, incoming: u32) -> Result<usize> {
        let incoming_pose = self.graph.keyframes[&incoming].world_pose;
        let nearby: Vec<u32> = self
            .graph
            .keyframes
            .values()
            .filter(|kf| kf.id != incoming)
            .filter(|kf| {
                (kf.world_pose.translation() - incoming_pose.translation()).norm()
                    <= self.config.closure_radius
            })
            .map(|kf| kf.id)
            .collect();
        if nearby.is_empty() {
            return Ok(0);
        }
        for &id in &nearby {
            self.ensure_loaded(id)?;
        }
        self.ensure_loaded(incoming)?;
        // Take the incoming panorama out, check it against the others, put
        // it back.
        let mut pano = self.graph.keyframes.get_mut(&incoming).unwrap().panorama.take().unwrap();
        let others: Vec<(&DepthPanorama, Pose)> = nearby
            .iter()
            .map(|id| {
                let kf = &self.graph.keyframes[id];
                (kf.panorama.as_ref().unwrap(), kf.world_pose)
            })
            .collect();
        let n = consistency_check_on_switch(
            &mut pano,
            &incoming_pose,
            &others,
            &self.config.filter,
            self.config.weight_cap,
            &self.config.edge_rule,
        );
        self.graph.keyframes.get_mut(&incoming).unwrap().panorama = Some(pano);
        Ok(n)
    }

    /// Should the current keyframe continue, given this sweep's quality?
    pub fn decide_keyframe(quality: f64, threshold: f64) -> bool {
        quality >= threshold
    }

    /// Process one sweep through the full pipeline.
    pub fn process_sweep(&mut self, sweep: &Sweep) -> Result<SweepReport> {
        self.track_gravity(sweep);
        let t = sweep.t_end();
        let sweep_pano = self.build_sweep_panorama(sweep)?;

        if self.graph.is_empty() {
            let id = self.create_keyframe(&sweep_pano, t, Pose::identity(), None)?;
            self.records.push(TrajectoryRecord { t, keyframe: id, pose_in_keyframe: Pose::identity() });
            return Ok(SweepReport {
                t,
                decision: SweepDecision::FirstKeyframe { id },
                quality: 1.0,
                registration: None,
                world_pose: self.graph.current_world_pose(),
                keyframe_count: self.graph.keyframe_count(),
                edge_count: self.graph.edges.len(),
                optimized: false,
            });
        }
        let prior = self.motion_prior();
        let current_id = self.graph.current;
        self.ensure_loaded(current_id)?;

        let registration = {
            let kf = &self.graph.keyframes[&current_id];
            icp_point_to_plane(&sweep_pano, kf.panorama.as_ref().unwrap(), &prior, &self.config.icp)
        };
        let result = match registration {
            Ok(r) => r,
            Err(Error::DegenerateGeometry { .. }) | Err(Error::IllConditioned { .. }) => {
                // Hold the pose by the motion prior and move on.
                self.graph.current_pose = prior;
                self.push_recent(prior);
                self.records.push(TrajectoryRecord {
                    t,
                    keyframe: current_id,
                    pose_in_keyframe: prior,
                });
                return Ok(SweepReport {
                    t,
                    decision: SweepDecision::SkippedDegenerate,
                    quality: 0.0,
                    registration: None,
                    world_pose: self.graph.current_world_pose(),
                    keyframe_count: self.graph.keyframe_count(),
                    edge_count: self.graph.edges.len(),
                    optimized: false,
                });
            }
            Err(e) => return Err(e),
        };

        self.graph.current_pose = result.pose;
        self.push_recent(result.pose);

        // Fuse first, then decide.
        {
            let mut pano = self
                .graph
                .keyframes
                .get_mut(&current_id)
                .unwrap()
                .panorama
                .take()
                .unwrap();
            fuse_sweep(
                &mut pano,
                &sweep_pano,
                &result.pose,
                &self.config.filter,
                self.config.weight_cap,
                &self.config.edge_rule,
            );
            self.graph.keyframes.get_mut(&current_id).unwrap().panorama = Some(pano);
        }

        let mut optimized = false;
        let decision = if Self::decide_keyframe(result.quality, self.config.quality_threshold) {
            SweepDecision::Continue
        } else {
            // Quality dropped: look for loop closures before giving up on
            // the neighborhood.
            let world = self.graph.current_world_pose();
            let candidates = self
                .graph
                .find_closure_candidates_filtered(
                    &world,
                    self.config.closure_radius,
                    self.config.min_closure_hops,
                )
                .into_iter()
                .take(self.config.max_closure_candidates)
                .collect::<Vec<_>>();
            let mut strong: Option<(u32, ClosureAttempt)> = None;
            let mut best_weak: Option<(u32, ClosureAttempt)> = None;
            for id in candidates {
                self.ensure_loaded(id)?;
                let kf = &self.graph.keyframes[&id];
                let prior_in_candidate = kf.world_pose.inverse().compose(&world);
                let attempt = attempt_closure(
                    &sweep_pano,
                    kf.panorama.as_ref().unwrap(),
                    &prior_in_candidate,
                    &self.config.grid,
                    &self.config.icp,
                    self.config.quality_threshold,
                )?;
                match attempt.class {
                    ClosureClass::Strong => {
                        strong = Some((id, attempt));
                        break;
                    }
                    ClosureClass::Weak => {
                        if best_weak
                            .map_or(true, |(_, b)| attempt.registration.quality > b.registration.quality)
                        {
                            best_weak = Some((id, attempt));
                        }
                    }
                    ClosureClass::Reject => {}
                }
            }

            if let Some((to, attempt)) = strong {
                // Edge between the current keyframe and the re-found one,
                // then the old keyframe becomes current again.
                let relative = result.pose.compose(&attempt.registration.pose.inverse());
                self.graph.edges.push(MapEdge {
                    from: current_id,
                    to,
                    relative,
                    kind: EdgeKind::StrongClosure,
                });
                self.graph.current = to;
                self.graph.current_pose = attempt.registration.pose;
                self.recent.clear();
                self.push_recent(attempt.registration.pose);
                self.optimize_graph()?;
                optimized = true;
                self.run_consistency_check(to)?;
                SweepDecision::StrongClosure { to }
            } else {
                let weak_closure_to = if let Some((to, attempt)) = best_weak {
                    let relative = result.pose.compose(&attempt.registration.pose.inverse());
                    self.graph.edges.push(MapEdge {
                        from: current_id,
                        to,
                        relative,
                        kind: EdgeKind::WeakClosure,
                    });
                    Some(to)
                } else {
                    None
                };
                let world_pose = self.graph.keyframes[&current_id].world_pose.compose(&result.pose);
                let id =
                    self.create_keyframe(&sweep_pano, t, world_pose, Some((current_id, result.pose)))?;
                self.optimize_graph()?;
                optimized = true;
                self.run_consistency_check(id)?;
                SweepDecision::NewKeyframe { id, weak_closure_to }
            }
        };

        self.records.push(TrajectoryRecord {
            t,
            keyframe: self.graph.current,
            pose_in_keyframe: self.graph.current_pose,
        });
        debug_assert!(self.graph.connected());
        Ok(SweepReport {
            t,
            decision,
            quality: result.quality,
            registration: Some(result),
            world_pose: self.graph.current_world_pose(),
            keyframe_count: self.graph.keyframe_count(),
            edge_count: self.graph.edges.len(),
            optimized,
        })
    }
}
