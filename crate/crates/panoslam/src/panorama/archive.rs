//! Binary panorama records, the per-keyframe payload of the map archive.
//!
//! Layout, all little-endian:
//!   u32 width, u32 height,
//!   f64 elevation min, f64 elevation max,
//!   u64 valid pixel count,
//! then row-major planes: f32 depth (0 where invalid), f32 intensity,
//! 3 x f32 normal, u8 weight.

use std::io::{Read, Write};

use super::{DepthPanorama, ProjectionModel, INVALID_DEPTH};
use crate::error::{Error, Result};

pub fn write_record<W: Write>(pano: &DepthPanorama, w: &mut W) -> Result<()> {
    let model = pano.model();
    let (depth, intensity, normal, weight) = pano.raw_parts();
    w.write_all(&(model.width() as u32).to_le_bytes())?;
    w.write_all(&(model.height() as u32).to_le_bytes())?;
    w.write_all(&model.elevation_min().to_le_bytes())?;
    w.write_all(&model.elevation_max().to_le_bytes())?;
    let valid = depth.iter().filter(|&&d| d > 0.0).count() as u64;
    w.write_all(&valid.to_le_bytes())?;
    for &d in depth {
        let stored = if d > 0.0 { d } else { 0.0 };
        w.write_all(&stored.to_le_bytes())?;
    }
    for &i in intensity {
        w.write_all(&i.to_le_bytes())?;
    }
    for n in normal {
        for &c in n {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    w.write_all(weight)?;
    Ok(())
}

fn corrupt(keyframe: u32, message: impl Into<String>) -> Error {
    Error::Archive { keyframe, message: message.into() }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], keyframe: u32, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| corrupt(keyframe, format!("short read in {what}: {e}")))
}

/// Read one panorama record. `keyframe` labels integrity errors.
pub fn read_record<R: Read>(r: &mut R, keyframe: u32) -> Result<DepthPanorama> {
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    read_exact(r, &mut b4, keyframe, "width")?;
    let width = u32::from_le_bytes(b4) as usize;
    read_exact(r, &mut b4, keyframe, "height")?;
    let height = u32::from_le_bytes(b4) as usize;
    read_exact(r, &mut b8, keyframe, "elevation min")?;
    let elevation_min = f64::from_le_bytes(b8);
    read_exact(r, &mut b8, keyframe, "elevation max")?;
    let elevation_max = f64::from_le_bytes(b8);
    read_exact(r, &mut b8, keyframe, "valid count")?;
    let stored_valid = u64::from_le_bytes(b8);

    if width == 0 || height == 0 || width > 1 << 20 || height > 1 << 20 {
        return Err(corrupt(keyframe, format!("implausible dimensions {width}x{height}")));
    }
    if !(elevation_min < elevation_max) {
        return Err(corrupt(keyframe, "empty elevation range"));
    }
    let n = width * height;

    let mut depth = vec![0f32; n];
    for d in depth.iter_mut() {
        read_exact(r, &mut b4, keyframe, "depth plane")?;
        let v = f32::from_le_bytes(b4);
        *d = if v > 0.0 { v } else { INVALID_DEPTH };
    }
    let mut intensity = vec![0f32; n];
    for i in intensity.iter_mut() {
        read_exact(r, &mut b4, keyframe, "intensity plane")?;
        *i = f32::from_le_bytes(b4);
    }
    let mut normal = vec![[0f32; 3]; n];
    for nv in normal.iter_mut() {
        for c in nv.iter_mut() {
            read_exact(r, &mut b4, keyframe, "normal plane")?;
            *c = f32::from_le_bytes(b4);
        }
    }
    let mut weight = vec![0u8; n];
    read_exact(r, &mut weight, keyframe, "weight plane")?;

    let valid = depth.iter().filter(|&&d| d > 0.0).count() as u64;
    if valid != stored_valid {
        return Err(corrupt(
            keyframe,
            format!("valid count mismatch: header {stored_valid}, planes {valid}"),
        ));
    }
    for idx in 0..n {
        if (weight[idx] == 0) != (depth[idx] <= 0.0) {
            return Err(corrupt(keyframe, format!("weight/depth disagreement at pixel {idx}")));
        }
    }
    let model = ProjectionModel::new_unchecked(width, height, elevation_min, elevation_max);
    Ok(DepthPanorama::from_raw_parts(model, depth, intensity, normal, weight))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn record_round_trips() {
        let model = ProjectionModel::new(64, 32, -0.4, 0.4).unwrap();
        let mut pano = DepthPanorama::from_range_fn(model, |dir| {
            (dir.x > 0.2).then(|| (4.0 / dir.x, 0.5))
        });
        pano.set_normal(pano.index(3, 7), Some(Vector3::new(0.0, 0.0, -1.0)));
        let mut buf = Vec::new();
        write_record(&pano, &mut buf).unwrap();
        let back = read_record(&mut buf.as_slice(), 3).unwrap();
        assert_eq!(back.model(), pano.model());
        for idx in 0..model.pixel_count() {
            assert_eq!(back.depth_at(idx) > 0.0, pano.is_valid(idx));
            if pano.is_valid(idx) {
                assert_eq!(back.depth_at(idx), pano.depth_at(idx));
            }
            assert_eq!(back.intensity_at(idx), pano.intensity_at(idx));
            assert_eq!(back.weight_at(idx), pano.weight_at(idx));
            assert_eq!(back.normal_at(idx), pano.normal_at(idx));
        }
    }

    #[test]
    fn corrupt_count_names_keyframe() {
        let model = ProjectionModel::new(8, 8, -0.4, 0.4).unwrap();
        let pano = DepthPanorama::from_range_fn(model, |_| Some((2.0, 0.5)));
        let mut buf = Vec::new();
        write_record(&pano, &mut buf).unwrap();
        buf[24] ^= 0x01; // flip a bit in the valid-count header
        match read_record(&mut buf.as_slice(), 42) {
            Err(Error::Archive { keyframe: 42, .. }) => {}
            other => panic!("expected archive error for keyframe 42, got {other:?}"),
        }
    }

    #[test]
    fn truncated_record_is_rejected() {
        let model = ProjectionModel::new(8, 8, -0.4, 0.4).unwrap();
        let pano = DepthPanorama::from_range_fn(model, |_| Some((2.0, 0.5)));
        let mut buf = Vec::new();
        write_record(&pano, &mut buf).unwrap();
        buf.truncate(buf.len() - 10);
        assert!(matches!(read_record(&mut buf.as_slice(), 7), Err(Error::Archive { keyframe: 7, .. })));
    }
}
