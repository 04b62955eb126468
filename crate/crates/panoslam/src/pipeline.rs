//! End-to-end drivers behind the command-line entry points: run SLAM over a
//! sweep log, generate simulator datasets, evaluate trajectories, and export
//! maps. All outputs are deterministic for fixed inputs and configuration,
//! independent of thread count.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::eval::{self, Trajectory};
use crate::imu;
use crate::mapper::{EdgeKind, Mapper, MapperConfig, SweepDecision};
use crate::panorama::ProjectionModel;
use crate::sim::{self, scenes, ImuNoise, SceneModel, ScriptedTrajectory, SensorModel};
use crate::sweep;

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "PANOSLAM_THREADS";

/// Keyframe resolution presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolution {
    High, // 2048 x 256
    Low,  // 1024 x 128
}

impl Resolution {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "2048x256" => Ok(Resolution::High),
            "1024x128" => Ok(Resolution::Low),
            _ => Err(Error::InvalidConfig(format!(
                "unknown resolution '{s}' (expected 2048x256 or 1024x128)"
            ))),
        }
    }

    pub fn model(&self) -> ProjectionModel {
        match self {
            Resolution::High => ProjectionModel::keyframe_high(),
            Resolution::Low => ProjectionModel::keyframe_low(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Resolution::High => "2048x256",
            Resolution::Low => "1024x128",
        }
    }
}

/// FullSLAM run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub sweeps: PathBuf,
    pub imu: PathBuf,
    pub output: PathBuf,
    pub mapper: MapperConfig,
    pub threads: Option<usize>,
    /// Deterministic reductions are always on; the flag is accepted for
    /// interface compatibility and recorded in the summary.
    pub deterministic: bool,
    /// Evict far-away keyframes to disk during the run.
    pub stream_keyframes: bool,
}

impl RunConfig {
    pub fn new(sweeps: PathBuf, imu: PathBuf, output: PathBuf) -> Self {
        RunConfig {
            sweeps,
            imu,
            output,
            mapper: MapperConfig::default(),
            threads: None,
            deterministic: true,
            stream_keyframes: false,
        }
    }
}

/// Per-sweep update durations and their summary statistics.
#[derive(Clone, Debug, Default)]
pub struct TimingReport {
    durations: Vec<f64>,
    timestamps: Vec<f64>,
}

impl TimingReport {
    pub fn push(&mut self, t: f64, seconds: f64) {
        self.timestamps.push(t);
        self.durations.push(seconds);
    }

    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn median(&self) -> f64 {
        self.percentile(50.0)
    }

    pub fn percentile(&self, p: f64) -> f64 {
        if self.durations.is_empty() {
            return 0.0;
        }
        let mut sorted = self.durations.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = (p / 100.0 * (sorted.len() - 1) as f64).round() as usize;
        sorted[rank.min(sorted.len() - 1)]
    }

    /// Fixed-bin histogram over the observed range.
    pub fn histogram(&self, bins: usize) -> Vec<(f64, usize)> {
        if self.durations.is_empty() || bins == 0 {
            return Vec::new();
        }
        let lo = self.durations.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.durations.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = ((hi - lo) / bins as f64).max(1e-9);
        let mut counts = vec![0usize; bins];
        for &d in &self.durations {
            let k = (((d - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(k, c)| (lo + (k as f64 + 0.5) * width, c))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "sweep,t,seconds")?;
        for (k, (&t, &d)) in self.timestamps.iter().zip(&self.durations).enumerate() {
            writeln!(w, "{k},{t},{d}")?;
        }
        Ok(())
    }

    pub fn write_histogram_csv<W: Write>(&self, w: &mut W, bins: usize) -> Result<()> {
        writeln!(w, "bin_center_s,count")?;
        for (center, count) in self.histogram(bins) {
            writeln!(w, "{center},{count}")?;
        }
        Ok(())
    }
}

/// What a SLAM run produced.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub sweeps_processed: usize,
    pub sweeps_skipped: usize,
    pub keyframes: usize,
    pub odometry_edges: usize,
    pub strong_closures: usize,
    pub weak_closures: usize,
    pub archive_bytes: u64,
    pub trajectory_path: PathBuf,
    pub map_dir: PathBuf,
    pub timing_path: PathBuf,
    pub timing: TimingReport,
    pub warnings: Vec<String>,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        use std::fmt::Write as _;
        let _ = writeln!(s, "sweeps processed: {}", self.sweeps_processed);
        let _ = writeln!(s, "sweeps skipped:   {}", self.sweeps_skipped);
        let _ = writeln!(s, "keyframes:        {}", self.keyframes);
        let _ = writeln!(s, "odometry edges:   {}", self.odometry_edges);
        let _ = writeln!(s, "strong closures:  {}", self.strong_closures);
        let _ = writeln!(s, "weak closures:    {}", self.weak_closures);
        let _ = writeln!(s, "archive size:     {} bytes", self.archive_bytes);
        if !self.timing.is_empty() {
            let _ = writeln!(
                s,
                "update time:      median {:.1} ms, p90 {:.1} ms, p99 {:.1} ms, max {:.1} ms",
                self.timing.median() * 1e3,
                self.timing.percentile(90.0) * 1e3,
                self.timing.percentile(99.0) * 1e3,
                self.timing.percentile(100.0) * 1e3,
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let count = threads.or_else(|| {
        std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok())
    });
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = count {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build thread pool: {e}")))
}

fn dir_size(dir: &Path) -> u64 {
    let mut total = 0;
    if let Ok(entries) = std::fs::read_dir(dir) {
        for entry in entries.flatten() {
            if let Ok(meta) = entry.metadata() {
                if meta.is_file() {
                    total += meta.len();
                }
            }
        }
    }
    total
}

/// Run the full pipeline over a sweep log + IMU log. Writes the trajectory
/// (every sweep pose under the final optimized keyframe poses), the map
/// archive, and the timing CSVs into the output directory.
pub fn run_slam(config: &RunConfig) -> Result<RunSummary> {
    let pool = thread_pool(config.threads)?;
    pool.install(|| run_slam_inner(config))
}

fn run_slam_inner(config: &RunConfig) -> Result<RunSummary> {
    std::fs::create_dir_all(&config.output)?;
    let trajectory_path = config.output.join("trajectory.txt");
    let map_dir = config.output.join("map");
    let timing_path = config.output.join("timing.csv");

    let window = imu::csv::read_path(&config.imu)?;
    let mut sweeps = sweep::read_log_path(&config.sweeps)?;
    sweep::attach_imu(&mut sweeps, &window);

    let mut warnings = Vec::new();
    let mut mapper = Mapper::new(config.mapper.clone())?;
    if config.stream_keyframes {
        mapper.set_store_dir(map_dir.clone())?;
    }

    let mut timing = TimingReport::default();
    let mut skipped = 0usize;
    for (k, s) in sweeps.iter().enumerate() {
        let start = Instant::now();
        let report = mapper.process_sweep(s)?;
        timing.push(report.t, start.elapsed().as_secs_f64());
        if report.decision == SweepDecision::SkippedDegenerate {
            skipped += 1;
            warnings.push(format!(
                "sweep {k} at t={:.3}: degenerate registration, pose held by motion prior",
                report.t
            ));
        }
        if config.stream_keyframes && k % 16 == 15 {
            mapper.evict_distant()?;
        }
    }

    if sweeps.is_empty() {
        warnings.push("sweep log is empty; wrote an empty trajectory".to_string());
    }

    eval::text::write_path(&mapper.trajectory(), &trajectory_path)?;
    let mut timing_file = std::io::BufWriter::new(std::fs::File::create(&timing_path)?);
    timing.write_csv(&mut timing_file)?;
    drop(timing_file);
    let mut hist_file =
        std::io::BufWriter::new(std::fs::File::create(config.output.join("timing_hist.csv"))?);
    timing.write_histogram_csv(&mut hist_file, 30)?;
    drop(hist_file);

    let mut archive_bytes = 0;
    if !mapper.graph().is_empty() {
        mapper.save_map(&map_dir)?;
        archive_bytes = dir_size(&map_dir);
    }

    let graph = mapper.graph();
    let count_kind = |kind: EdgeKind| graph.edges().iter().filter(|e| e.kind == kind).count();
    let summary = RunSummary {
        sweeps_processed: sweeps.len(),
        sweeps_skipped: skipped,
        keyframes: graph.keyframe_count(),
        odometry_edges: count_kind(EdgeKind::Odometry),
        strong_closures: count_kind(EdgeKind::StrongClosure),
        weak_closures: count_kind(EdgeKind::WeakClosure),
        archive_bytes,
        trajectory_path,
        map_dir,
        timing_path,
        timing,
        warnings,
    };
    std::fs::write(config.output.join("summary.txt"), summary.render())?;
    Ok(summary)
}

/// A parsed `sim generate` trajectory spec.
#[derive(Clone, Copy, Debug)]
pub enum TrajectorySpec {
    Stationary { duration: f64 },
    Line { length: f64, speed: f64 },
    Square { side: f64, speed: f64 },
}

impl TrajectorySpec {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::UnknownTrajectory(s.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "stationary" => {
                let duration: f64 = rest.parse().map_err(|_| bad())?;
                if duration <= 0.0 {
                    return Err(bad());
                }
                Ok(TrajectorySpec::Stationary { duration })
            }
            "line" => {
                let (l, v) = rest.split_once('x').ok_or_else(bad)?;
                let length: f64 = l.parse().map_err(|_| bad())?;
                let speed: f64 = v.parse().map_err(|_| bad())?;
                if length <= 0.0 || speed <= 0.0 {
                    return Err(bad());
                }
                Ok(TrajectorySpec::Line { length, speed })
            }
            "square" => {
                let (l, v) = rest.split_once('x').ok_or_else(bad)?;
                let side: f64 = l.parse().map_err(|_| bad())?;
                let speed: f64 = v.parse().map_err(|_| bad())?;
                if side <= 0.0 || speed <= 0.0 {
                    return Err(bad());
                }
                Ok(TrajectorySpec::Square { side, speed })
            }
            _ => Err(bad()),
        }
    }

    pub fn build(&self, z: f64) -> ScriptedTrajectory {
        match *self {
            TrajectorySpec::Stationary { duration } => scenes::stationary(
                crate::geometry::Pose::from_translation(Vector3::new(0.0, 0.0, z)),
                duration,
            ),
            TrajectorySpec::Line { length, speed } => scenes::straight_line(
                Vector3::new(0.0, 0.0, z),
                Vector3::new(length, 0.0, z),
                speed,
            ),
            TrajectorySpec::Square { side, speed } => scenes::square_loop(side, speed, 1.5, z),
        }
    }
}

/// Dataset generation configuration.
#[derive(Clone, Debug)]
pub struct GenerateConfig {
    pub scene: String,
    pub trajectory: TrajectorySpec,
    pub seed: u64,
    pub output: PathBuf,
    pub sensor: SensorModel,
    pub sensor_height: f64,
}

impl GenerateConfig {
    pub fn new(scene: &str, trajectory: TrajectorySpec, seed: u64, output: PathBuf) -> Self {
        GenerateConfig {
            scene: scene.to_string(),
            trajectory,
            seed,
            output,
            sensor: SensorModel::default(),
            sensor_height: 1.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub sweep_log: PathBuf,
    pub imu_log: PathBuf,
    pub ground_truth: PathBuf,
    pub sweep_count: usize,
}

/// Generate a dataset: sweep log, IMU CSV, and ground-truth trajectory
/// sampled at each sweep's reference time. Deterministic per seed.
pub fn generate_dataset(config: &GenerateConfig) -> Result<GeneratedDataset> {
    let scene = scenes::by_name(&config.scene)?;
    let trajectory = config.trajectory.build(config.sensor_height);
    generate_dataset_with(&scene, &trajectory, &config.sensor, config.seed, &config.output)
}

/// Dataset generation from explicit scene and trajectory objects.
pub fn generate_dataset_with(
    scene: &SceneModel,
    trajectory: &ScriptedTrajectory,
    sensor: &SensorModel,
    seed: u64,
    output: &Path,
) -> Result<GeneratedDataset> {
    std::fs::create_dir_all(output)?;
    let period = sensor.period();
    let duration = trajectory.end_time() - trajectory.start_time();
    let sweep_count = (duration / period).floor() as usize;
    let t0 = trajectory.start_time();

    let sweep_log = output.join("sweeps.bin");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&sweep_log)?);
    for k in 0..sweep_count {
        let s = sim::synthesize_sweep(scene, trajectory, sensor, t0 + k as f64 * period, seed, k as u64);
        sweep::write_sweep(&s, &mut log)?;
    }
    drop(log);

    let imu_log = output.join("imu.csv");
    let samples = sim::synthesize_imu(
        trajectory,
        100.0,
        ImuNoise::default(),
        t0 - 0.05,
        trajectory.end_time() + 0.05,
        seed,
    );
    imu::csv::write_path(&samples, &imu_log)?;

    let ground_truth = output.join("groundtruth.txt");
    let truth = sim::ground_truth_at_sweep_ends(trajectory, sensor, t0, sweep_count);
    eval::text::write_path(&Trajectory::new(truth)?, &ground_truth)?;

    Ok(GeneratedDataset { sweep_log, imu_log, ground_truth, sweep_count })
}

/// Evaluation driver: associate, align, report, and write the error series.
pub struct AteOutput {
    pub report: eval::AlignmentReport,
    pub series_path: Option<PathBuf>,
}

pub fn evaluate_ate(
    estimated: &Path,
    ground_truth: &Path,
    max_dt: f64,
    series_csv: Option<&Path>,
) -> Result<AteOutput> {
    let est = eval::text::read_path(estimated)?;
    let truth = eval::text::read_path(ground_truth)?;
    let report = eval::evaluate(&est, &truth, max_dt)?;
    let series_path = match series_csv {
        Some(path) => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            eval::text::write_error_series(&report.series, &mut w)?;
            Some(path.to_path_buf())
        }
        None => None,
    };
    Ok(AteOutput { report, series_path })
}

/// Map export formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    PointCloud,
    Trajectory,
    Graph,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "point-cloud" => Ok(ExportFormat::PointCloud),
            "trajectory" => Ok(ExportFormat::Trajectory),
            "graph" => Ok(ExportFormat::Graph),
            _ => Err(Error::InvalidConfig(format!(
                "unknown export format '{s}' (point-cloud, trajectory, graph)"
            ))),
        }
    }
}

/// Export a map archive. Point clouds unproject every valid keyframe pixel
/// through its optimized pose into one binary little-endian PLY; trajectory
/// emits the keyframe poses in the trajectory text format; graph emits the
/// pose-graph interchange text.
pub fn export_map(map_dir: &Path, format: ExportFormat, out: &Path) -> Result<u64> {
    let graph = crate::mapper::load_map(map_dir)?;
    match format {
        ExportFormat::PointCloud => {
            let mut points: Vec<([f32; 3], f32)> = Vec::new();
            for kf in graph.keyframes() {
                let pano = kf.panorama().expect("archive loads panoramas");
                for idx in 0..pano.model().pixel_count() {
                    if let Some(p) = pano.point_at(idx) {
                        let w = kf.world_pose.transform_point(&p);
                        points.push((
                            [w.x as f32, w.y as f32, w.z as f32],
                            pano.intensity_at(idx),
                        ));
                    }
                }
            }
            let mut file = std::io::BufWriter::new(std::fs::File::create(out)?);
            write!(
                file,
                "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty float intensity\nend_header\n",
                points.len()
            )?;
            for (p, i) in &points {
                for c in p {
                    file.write_all(&c.to_le_bytes())?;
                }
                file.write_all(&i.to_le_bytes())?;
            }
            Ok(points.len() as u64)
        }
        ExportFormat::Trajectory => {
            let samples: Vec<(f64, crate::geometry::Pose)> = graph
                .keyframes()
                .map(|kf| (kf.created_at, kf.world_pose))
                .collect();
            let trajectory = Trajectory::new(samples)?;
            eval::text::write_path(&trajectory, out)?;
            Ok(trajectory.len() as u64)
        }
        ExportFormat::Graph => {
            let poses: std::collections::BTreeMap<u32, crate::geometry::Pose> = graph
                .keyframes()
                .map(|kf| (kf.id, kf.world_pose))
                .collect();
            let anchor = poses.keys().next().copied().unwrap_or(0);
            let mut problem = crate::pose_graph::GraphProblem::new(poses, anchor);
            for e in graph.edges() {
                problem.relative.push(crate::pose_graph::RelativePoseFactor::new(
                    e.from, e.to, e.relative, 100.0, 25.0,
                ));
            }
            let mut file = std::io::BufWriter::new(std::fs::File::create(out)?);
            crate::pose_graph::g2o::write(&problem, &mut file)?;
            Ok(graph.keyframe_count() as u64)
        }
    }
}

/// Count of vertices in a binary PLY written by [`export_map`].
pub fn ply_vertex_count(path: &Path) -> Result<u64> {
    let data = std::fs::read(path)?;
    let header_end = data
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            offset: 0,
            message: "missing PLY end_header".into(),
        })?;
    let header = std::str::from_utf8(&data[..header_end]).map_err(|_| Error::Parse {
        path: path.display().to_string(),
        offset: 0,
        message: "non-UTF8 PLY header".into(),
    })?;
    for line in header.lines() {
        if let Some(rest) = line.strip_prefix("element vertex ") {
            return rest.parse().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                offset: 0,
                message: format!("vertex count: {e}"),
            });
        }
    }
    Err(Error::Parse {
        path: path.display().to_string(),
        offset: 0,
        message: "missing element vertex".into(),
    })
}

pub mod config_file {
    //! Declarative run configuration: a TOML file whose fields mirror the
    //! CLI flags. Flags override file values; both override defaults.

    use serde::Deserialize;
    use std::path::Path;

    use super::Resolution;
    use crate::error::{Error, Result};
    use crate::mapper::{MapperConfig, MotionPrior};
    use crate::registration::SimilarityFilter;

    #[derive(Debug, Default, Deserialize)]
    #[serde(deny_unknown_fields, rename_all = "kebab-case")]
    pub struct FileConfig {
        pub quality_threshold: Option<f64>,
        pub motion_prior: Option<String>,
        pub resolution: Option<String>,
        pub max_distance: Option<f64>,
        pub max_normal_angle_deg: Option<f64>,
        pub min_intensity: Option<f32>,
        pub closure_radius: Option<f64>,
        pub max_closure_candidates: Option<usize>,
        pub max_range: Option<f64>,
        pub gravity_alpha: Option<f64>,
        pub smoothing_passes: Option<usize>,
        pub threads: Option<usize>,
        pub deterministic: Option<bool>,
        pub stream_keyframes: Option<bool>,
    }

    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            offset: 0,
            message: e.to_string(),
        })
    }

    /// Fold file values into a mapper configuration.
    pub fn apply(file: &FileConfig, mapper: &mut MapperConfig) -> Result<()> {
        if let Some(q) = file.quality_threshold {
            mapper.quality_threshold = q;
        }
        if let Some(m) = &file.motion_prior {
            mapper.motion_prior = MotionPrior::parse(m)?;
        }
        if let Some(r) = &file.resolution {
            mapper.keyframe_model = Resolution::parse(r)?.model();
        }
        let d = file.max_distance.unwrap_or(mapper.filter.max_distance());
        let a = file
            .max_normal_angle_deg
            .map(|deg| deg.to_radians())
            .unwrap_or(mapper.filter.max_normal_angle());
        mapper.filter = SimilarityFilter::new(d, a)?;
        mapper.icp.filter = mapper.filter;
        if let Some(i) = file.min_intensity {
            mapper.icp.min_intensity = i;
        }
        if let Some(r) = file.closure_radius {
            mapper.closure_radius = r;
        }
        if let Some(n) = file.max_closure_candidates {
            mapper.max_closure_candidates = n;
        }
        if let Some(r) = file.max_range {
            mapper.max_range = r;
        }
        if let Some(g) = file.gravity_alpha {
            mapper.gravity_alpha = g;
        }
        if let Some(p) = file.smoothing_passes {
            mapper.smoothing_passes = p;
        }
        mapper.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_specs_parse() {
        assert!(matches!(
            TrajectorySpec::parse("stationary:10").unwrap(),
            TrajectorySpec::Stationary { .. }
        ));
        assert!(matches!(
            TrajectorySpec::parse("line:100x1.5").unwrap(),
            TrajectorySpec::Line { .. }
        ));
        assert!(matches!(
            TrajectorySpec::parse("square:40x2").unwrap(),
            TrajectorySpec::Square { .. }
        ));
        assert!(TrajectorySpec::parse("helix:3").is_err());
        assert!(TrajectorySpec::parse("line:0x2").is_err());
    }

    #[test]
    fn timing_percentiles() {
        let mut t = TimingReport::default();
        for k in 1..=100 {
            t.push(k as f64, k as f64 / 1000.0);
        }
        assert!((t.median() - 0.0505).abs() < 0.0015);
        assert!(t.percentile(100.0) >= 0.1 - 1e-12);
        let hist = t.histogram(10);
        assert_eq!(hist.len(), 10);
        assert_eq!(hist.iter().map(|(_, c)| c).sum::<usize>(), 100);
    }

    #[test]
    fn config_file_round_trip() {
        let text = r#"
quality-threshold = 0.5
motion-prior = "zero-acceleration"
resolution = "2048x256"
max-distance = 0.4
min-intensity = 0.02
"#;
        let file: config_file::FileConfig = toml::from_str(text).unwrap();
        let mut mapper = MapperConfig::default();
        config_file::apply(&file, &mut mapper).unwrap();
        assert_eq!(mapper.quality_threshold, 0.5);
        assert_eq!(mapper.motion_prior, crate::mapper::MotionPrior::ZeroAcceleration);
        assert_eq!(mapper.keyframe_model.width(), 2048);
        assert_eq!(mapper.filter.max_distance(), 0.4);
        assert_eq!(mapper.icp.min_intensity, 0.02);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let text = "qualityy-threshold = 0.5\n";
        assert!(toml::from_str::<config_file::FileConfig>(text).is_err());
    }

    #[test]
    fn resolution_presets() {
        assert_eq!(Resolution::parse("2048x256").unwrap().model().width(), 2048);
        assert_eq!(Resolution::parse("1024x128").unwrap().model().height(), 128);
        assert!(Resolution::parse("640x480").is_err());
    }
}
