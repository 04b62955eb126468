//! Map archive: a directory with a line-oriented text manifest (keyframe
//! ids, poses, gravity vectors, edges with kinds, current keyframe) plus one
//! binary panorama record per keyframe.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{EdgeKind, Keyframe, MapEdge, MapGraph, Mapper};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::imu::GravityEstimate;

pub const MANIFEST_NAME: &str = "manifest.txt";

pub(super) fn panorama_file_name(id: u32) -> String {
    format!("kf_{id:05}.pano")
}

fn pose_fields(pose: &Pose) -> String {
    let t = pose.translation();
    let q = pose.rotation().coords;
    format!("{} {} {} {} {} {} {}", t.x, t.y, t.z, q.x, q.y, q.z, q.w)
}

fn parse_pose(fields: &[&str]) -> Option<Pose> {
    if fields.len() != 7 {
        return None;
    }
    let mut v = [0f64; 7];
    for (k, f) in fields.iter().enumerate() {
        v[k] = f.parse().ok()?;
    }
    let q = UnitQuaternion::from_quaternion(Quaternion::new(v[6], v[3], v[4], v[5]));
    Some(Pose::new(q, Vector3::new(v[0], v[1], v[2])))
}

impl Mapper {
    /// Write the whole map (manifest plus panorama records) to `dir`.
    /// Evicted keyframes are reloaded first so the archive is complete.
    pub fn save_map(&mut self, dir: &Path) -> Result<()> {
        let ids: Vec<u32> = self.graph.keyframes.keys().copied().collect();
        for id in ids {
            self.ensure_loaded(id)?;
        }
        save_map(&self.graph, dir)
    }
}

pub fn save_map(graph: &MapGraph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join(MANIFEST_NAME))?);
    writeln!(manifest, "panoslam-map 1")?;
    writeln!(manifest, "current {}", graph.current)?;
    for kf in graph.keyframes.values() {
        let g = kf.gravity.direction();
        writeln!(
            manifest,
            "keyframe {} {} {} {} {} {} {}",
            kf.id,
            kf.created_at,
            pose_fields(&kf.world_pose),
            g.x,
            g.y,
            g.z,
            kf.gravity.confidence(),
        )?;
    }
    for e in &graph.edges {
        writeln!(manifest, "edge {} {} {} {}", e.from, e.to, pose_fields(&e.relative), e.kind.name())?;
    }
    for kf in graph.keyframes.values() {
        let pano = kf.panorama().ok_or_else(|| Error::Archive {
            keyframe: kf.id,
            message: "panorama not resident while saving".into(),
        })?;
        let path = dir.join(panorama_file_name(kf.id));
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        crate::panorama::write_record(pano, &mut file)?;
    }
    Ok(())
}

/// Load a map archive with every panorama resident.
pub fn load_map(dir: &Path) -> Result<MapGraph> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let file = std::fs::File::open(&manifest_path)?;
    let reader = BufReader::new(file);
    let path_str = manifest_path.display().to_string();
    let mut graph = MapGraph::default();
    let mut offset: u64 = 0;
    let mut seen_magic = false;
    let err = |offset: u64, m: String| Error::Parse { path: path_str.clone(), offset, message: m };
    for line in reader.lines() {
        let line = line?;
        let len = line.len() as u64 + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first().copied() {
            None => {}
            Some("panoslam-map") => {
                seen_magic = true;
            }
            Some("current") => {
                graph.current = fields
                    .get(1)
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| err(offset, "bad current record".into()))?;
            }
            Some("keyframe") => {
                if fields.len() != 14 {
                    return Err(err(offset, format!("keyframe record needs 14 fields, got {}", fields.len())));
                }
                let id: u32 = fields[1].parse().map_err(|e| err(offset, format!("id: {e}")))?;
                let created_at: f64 =
                    fields[2].parse().map_err(|e| err(offset, format!("time: {e}")))?;
                let pose = parse_pose(&fields[3..10])
                    .ok_or_else(|| err(offset, "bad keyframe pose".into()))?;
                let mut g = [0f64; 4];
                for (k, f) in fields[10..14].iter().enumerate() {
                    g[k] = f.parse().map_err(|e| err(offset, format!("gravity: {e}")))?;
                }
                graph.keyframes.insert(
                    id,
                    Keyframe {
                        id,
                        world_pose: pose,
                        gravity: GravityEstimate::new(Vector3::new(g[0], g[1], g[2]), g[3]),
                        created_at,
                        panorama: None,
                    },
                );
            }
            Some("edge") => {
                if fields.len() != 11 {
                    return Err(err(offset, format!("edge record needs 11 fields, got {}", fields.len())));
                }
                let from: u32 = fields[1].parse().map_err(|e| err(offset, format!("from: {e}")))?;
                let to: u32 = fields[2].parse().map_err(|e| err(offset, format!("to: {e}")))?;
                let relative = parse_pose(&fields[3..10])
                    .ok_or_else(|| err(offset, "bad edge pose".into()))?;
                let kind = EdgeKind::parse(fields[10]).map_err(|e| err(offset, e.to_string()))?;
                graph.edges.push(MapEdge { from, to, relative, kind });
            }
            Some(other) => {
                return Err(err(offset, format!("unknown record '{other}'")));
            }
        }
        offset += len;
    }
    if !seen_magic {
        return Err(err(0, "missing panoslam-map header".into()));
    }
    let ids: Vec<u32> = graph.keyframes.keys().copied().collect();
    for id in ids {
        let path = dir.join(panorama_file_name(id));
        let file = std::fs::File::open(&path).map_err(|e| Error::Archive {
            keyframe: id,
            message: format!("cannot open {}: {e}", path.display()),
        })?;
        let pano = crate::panorama::read_record(&mut BufReader::new(file), id)?;
        graph.keyframes.get_mut(&id).unwrap().panorama = Some(pano);
    }
    Ok(graph)
}
