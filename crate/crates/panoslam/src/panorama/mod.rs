//! Panoramic depth images: spherical projection, panorama construction from
//! point sets, validity counting, and the resolution pyramid.
//!
//! A panorama is an equirectangular grid: azimuth maps linearly to columns
//! (wrapping at +-pi) and elevation linearly to rows (row 0 at the top of the
//! elevation range). Each pixel stores range, return intensity, a unit
//! surface normal, and a fusion sample count.

mod archive;
mod normals;

pub use archive::{read_record, write_record};
pub use normals::{estimate_normals, refresh_normals, smooth_normals_atrous, EdgeRule};

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Depth sentinel for pixels with no measurement. Serialized archives store
/// 0 instead; anything <= 0 is treated as invalid in memory.
pub const INVALID_DEPTH: f32 = -1.0;

/// Saturation point of the per-pixel fusion sample counter.
pub const WEIGHT_CAP: u8 = 10;

/// Equirectangular projection geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionModel {
    width: usize,
    height: usize,
    elevation_min: f64,
    elevation_max: f64,
}

impl ProjectionModel {
    pub fn new(width: usize, height: usize, elevation_min: f64, elevation_max: f64) -> Result<Self> {
        if width < 8 || height < 8 {
            return Err(Error::InvalidConfig(format!(
                "projection model must be at least 8x8, got {width}x{height}"
            )));
        }
        if !(elevation_min < elevation_max) {
            return Err(Error::InvalidConfig(format!(
                "elevation range [{elevation_min}, {elevation_max}] is empty"
            )));
        }
        Ok(ProjectionModel { width, height, elevation_min, elevation_max })
    }

    pub(crate) fn new_unchecked(
        width: usize,
        height: usize,
        elevation_min: f64,
        elevation_max: f64,
    ) -> Self {
        ProjectionModel { width, height, elevation_min, elevation_max }
    }

    /// High-resolution keyframe preset, 90 degrees of elevation about the horizon.
    pub fn keyframe_high() -> Self {
        ProjectionModel::new(2048, 256, -std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4)
            .expect("preset is valid")
    }

    /// Low-resolution keyframe preset.
    pub fn keyframe_low() -> Self {
        ProjectionModel::new(1024, 128, -std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4)
            .expect("preset is valid")
    }

    /// Shape of one spinning-sensor sweep: `columns` azimuth steps over the
    /// given symmetric vertical field of view.
    pub fn sweep(columns: usize, beams: usize, vertical_fov: f64) -> Result<Self> {
        ProjectionModel::new(columns, beams, -vertical_fov / 2.0, vertical_fov / 2.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn elevation_min(&self) -> f64 {
        self.elevation_min
    }

    pub fn elevation_max(&self) -> f64 {
        self.elevation_max
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Project a point into continuous (row, column, range) coordinates.
    /// Azimuth wraps; elevation outside the model range is an error.
    pub fn project(&self, x: &Vector3<f64>) -> Result<(f64, f64, f64)> {
        let range = x.norm();
        if range <= 0.0 {
            return Err(Error::NonPositiveRange(range));
        }
        let azimuth = x.y.atan2(x.x);
        let elevation = x.z.atan2((x.x * x.x + x.y * x.y).sqrt());
        if elevation < self.elevation_min || elevation > self.elevation_max {
            return Err(Error::ElevationOutOfBounds {
                elevation,
                min: self.elevation_min,
                max: self.elevation_max,
            });
        }
        let col = ((azimuth + std::f64::consts::PI) / std::f64::consts::TAU * self.width as f64)
            .rem_euclid(self.width as f64);
        let row = (self.elevation_max - elevation) / (self.elevation_max - self.elevation_min)
            * self.height as f64;
        Ok((row, col, range))
    }

    /// Inverse of [`project`](Self::project) for continuous coordinates.
    pub fn unproject(&self, row: f64, col: f64, range: f64) -> Result<Vector3<f64>> {
        if range <= 0.0 {
            return Err(Error::NonPositiveRange(range));
        }
        if !(0.0..=self.height as f64).contains(&row) || !(0.0..=self.width as f64).contains(&col) {
            return Err(Error::PixelOutOfBounds {
                row,
                col,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.direction(row, col) * range)
    }

    /// Unit viewing ray through continuous image coordinates.
    pub fn direction(&self, row: f64, col: f64) -> Vector3<f64> {
        let azimuth = col / self.width as f64 * std::f64::consts::TAU - std::f64::consts::PI;
        let elevation = self.elevation_max
            - row / self.height as f64 * (self.elevation_max - self.elevation_min);
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        Vector3::new(ce * ca, ce * sa, se)
    }

    /// Unit viewing ray through the center of pixel (r, c).
    pub fn center_direction(&self, r: usize, c: usize) -> Vector3<f64> {
        self.direction(r as f64 + 0.5, c as f64 + 0.5)
    }

    /// Integer pixel containing the continuous coordinates, clamped to the grid.
    pub fn pixel_of(&self, row: f64, col: f64) -> (usize, usize) {
        let r = (row.floor() as isize).clamp(0, self.height as isize - 1) as usize;
        let c = (col.floor() as isize).rem_euclid(self.width as isize) as usize;
        (r, c)
    }
}

/// Per-pixel validity (valid range and enough received light) with its count.
#[derive(Clone, Debug)]
pub struct ValidityMask {
    valid: Vec<bool>,
    count: usize,
}

impl ValidityMask {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.valid[idx]
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }
}

/// The map primitive: a spherical-projection grid of depth, intensity,
/// unit normals, and fusion weights.
#[derive(Clone, Debug)]
pub struct DepthPanorama {
    model: ProjectionModel,
    depth: Vec<f32>,
    intensity: Vec<f32>,
    normal: Vec<[f32; 3]>,
    weight: Vec<u8>,
}

impl DepthPanorama {
    pub fn new_empty(model: ProjectionModel) -> Self {
        let n = model.pixel_count();
        DepthPanorama {
            model,
            depth: vec![INVALID_DEPTH; n],
            intensity: vec![0.0; n],
            normal: vec![[0.0; 3]; n],
            weight: vec![0; n],
        }
    }

    /// Project a point set into a fresh panorama. When several points land on
    /// one pixel the nearest range wins; exact range ties break to the
    /// lexicographically smaller point so the result is independent of input
    /// order. Points outside the elevation range or beyond `max_range` are
    /// dropped.
    pub fn build(
        model: ProjectionModel,
        points: &[(Vector3<f64>, f32)],
        max_range: f64,
    ) -> DepthPanorama {
        let mut pano = DepthPanorama::new_empty(model);
        // best[(pixel)] = (range, point, intensity) under the deterministic order
        let mut best: Vec<Option<(f64, Vector3<f64>, f32)>> = vec![None; model.pixel_count()];
        for &(p, intensity) in points {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                continue;
            }
            let (row, col, range) = match model.project(&p) {
                Ok(v) => v,
                Err(_) => continue,
            };
            if range >= max_range {
                continue;
            }
            let (r, c) = model.pixel_of(row, col);
            let idx = r * model.width + c;
            let candidate = (range, p, intensity);
            let replace = match &best[idx] {
                None => true,
                Some(cur) => zbuffer_less(&candidate, cur),
            };
            if replace {
                best[idx] = Some(candidate);
            }
        }
        for (idx, slot) in best.into_iter().enumerate() {
            if let Some((range, _, intensity)) = slot {
                pano.depth[idx] = range as f32;
                pano.intensity[idx] = intensity;
                pano.weight[idx] = 1;
            }
        }
        pano
    }

    pub fn model(&self) -> &ProjectionModel {
        &self.model
    }

    pub fn index(&self, r: usize, c: usize) -> usize {
        r * self.model.width + c
    }

    pub fn depth_at(&self, idx: usize) -> f32 {
        self.depth[idx]
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.depth[idx] > 0.0
    }

    pub fn intensity_at(&self, idx: usize) -> f32 {
        self.intensity[idx]
    }

    pub fn normal_at(&self, idx: usize) -> Option<Vector3<f64>> {
        let n = self.normal[idx];
        if n == [0.0; 3] {
            None
        } else {
            Some(Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64))
        }
    }

    pub fn weight_at(&self, idx: usize) -> u8 {
        self.weight[idx]
    }

    /// 3D point of pixel `idx` in the panorama frame, through the pixel center.
    pub fn point_at(&self, idx: usize) -> Option<Vector3<f64>> {
        let d = self.depth[idx];
        if d <= 0.0 {
            return None;
        }
        let (r, c) = (idx / self.model.width, idx % self.model.width);
        Some(self.model.center_direction(r, c) * d as f64)
    }

    pub(crate) fn set_sample(&mut self, idx: usize, depth: f32, intensity: f32, weight: u8) {
        self.depth[idx] = depth;
        self.intensity[idx] = intensity;
        self.weight[idx] = weight;
    }

    pub(crate) fn set_normal(&mut self, idx: usize, n: Option<Vector3<f64>>) {
        self.normal[idx] = match n {
            Some(v) => [v.x as f32, v.y as f32, v.z as f32],
            None => [0.0; 3],
        };
    }

    pub(crate) fn invalidate(&mut self, idx: usize) {
        self.depth[idx] = INVALID_DEPTH;
        self.intensity[idx] = 0.0;
        self.normal[idx] = [0.0; 3];
        self.weight[idx] = 0;
    }

    #[cfg(test)]
    pub(crate) fn set_weight(&mut self, idx: usize, w: u8) {
        self.weight[idx] = w;
    }

    /// Pixels whose range is valid and whose intensity clears the threshold.
    pub fn valid_count(&self, intensity_threshold: f32) -> ValidityMask {
        let mut valid = vec![false; self.depth.len()];
        let mut count = 0;
        for idx in 0..self.depth.len() {
            if self.depth[idx] > 0.0 && self.intensity[idx] > intensity_threshold {
                valid[idx] = true;
                count += 1;
            }
        }
        ValidityMask { valid, count }
    }

    /// Number of pixels with a valid range, regardless of intensity.
    pub fn depth_valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }

    /// Reduce resolution by a power-of-two factor. Each output pixel takes the
    /// minimum valid depth of its source block (conservative under occlusion)
    /// along with that sample's intensity and normal; weights are summed and
    /// saturated.
    pub fn downsample(&self, factor: usize) -> Result<DepthPanorama> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(Error::NonDivisibleFactor {
                factor,
                width: self.model.width,
                height: self.model.height,
            });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        if self.model.width % factor != 0 || self.model.height % factor != 0 {
            return Err(Error::NonDivisibleFactor {
                factor,
                width: self.model.width,
                height: self.model.height,
            });
        }
        let model = ProjectionModel::new_unchecked(
            self.model.width / factor,
            self.model.height / factor,
            self.model.elevation_min,
            self.model.elevation_max,
        );
        let mut out = DepthPanorama::new_empty(model);
        for r in 0..model.height {
            for c in 0..model.width {
                let mut best: Option<(f32, usize)> = None;
                let mut weight_sum = 0u32;
                for dr in 0..factor {
                    for dc in 0..factor {
                        let idx = (r * factor + dr) * self.model.width + (c * factor + dc);
                        let d = self.depth[idx];
                        if d > 0.0 {
                            weight_sum += self.weight[idx] as u32;
                            if best.map_or(true, |(bd, _)| d < bd) {
                                best = Some((d, idx));
                            }
                        }
                    }
                }
                if let Some((d, src)) = best {
                    let idx = r * model.width + c;
                    out.depth[idx] = d;
                    out.intensity[idx] = self.intensity[src];
                    out.normal[idx] = self.normal[src];
                    out.weight[idx] = weight_sum.min(WEIGHT_CAP as u32) as u8;
                }
            }
        }
        Ok(out)
    }

    /// Resample this panorama's range image onto another projection model
    /// sharing the same origin (e.g. re-project a sweep into the denser,
    /// taller keyframe grid). Each output pixel takes an edge-aware bilinear
    /// interpolation of the source ranges along its center ray; taps across
    /// a depth discontinuity are dropped rather than blended. Output pixels
    /// outside the source elevation range, or with no valid taps, stay
    /// invalid. All filled pixels get weight 1; normals are not produced.
    pub fn resample(&self, model: ProjectionModel, rule: &EdgeRule) -> DepthPanorama {
        use rayon::prelude::*;
        let src_model = self.model;
        let filled: Vec<Option<(f32, f32)>> = (0..model.pixel_count())
            .into_par_iter()
            .map(|idx| {
                let (r, c) = (idx / model.width, idx % model.width);
                let dir = model.center_direction(r, c);
                let Ok((row_f, col_f, _)) = src_model.project(&dir) else {
                    return None;
                };
                // Tap lattice over source pixel centers.
                let rf = row_f - 0.5;
                let cf = col_f - 0.5;
                let r0 = rf.floor();
                let c0 = cf.floor();
                let wr = rf - r0;
                let wc = cf - c0;
                let mut taps: [(usize, f64); 4] = [(0, 0.0); 4];
                let mut n_taps = 0;
                for (dr, dc, w) in [
                    (0.0, 0.0, (1.0 - wr) * (1.0 - wc)),
                    (0.0, 1.0, (1.0 - wr) * wc),
                    (1.0, 0.0, wr * (1.0 - wc)),
                    (1.0, 1.0, wr * wc),
                ] {
                    let rr = r0 + dr;
                    if rr < 0.0 || rr >= src_model.height as f64 {
                        continue;
                    }
                    let cc = (c0 + dc).rem_euclid(src_model.width as f64);
                    let tap = rr as usize * src_model.width + cc as usize;
                    if self.depth[tap] > 0.0 && w > 0.0 {
                        taps[n_taps] = (tap, w);
                        n_taps += 1;
                    }
                }
                if n_taps == 0 {
                    return None;
                }
                // Anchor on the nearest tap; drop taps across an edge.
                let near = taps[..n_taps]
                    .iter()
                    .map(|&(t, _)| self.depth[t] as f64)
                    .fold(f64::INFINITY, f64::min);
                let mut depth_acc = 0.0;
                let mut int_acc = 0.0;
                let mut w_acc = 0.0;
                for &(t, w) in &taps[..n_taps] {
                    let d = self.depth[t] as f64;
                    if rule.is_edge(near, d) {
                        continue;
                    }
                    depth_acc += w * d;
                    int_acc += w * self.intensity[t] as f64;
                    w_acc += w;
                }
                if w_acc <= 0.0 {
                    return None;
                }
                Some(((depth_acc / w_acc) as f32, (int_acc / w_acc) as f32))
            })
            .collect();
        let mut out = DepthPanorama::new_empty(model);
        for (idx, slot) in filled.into_iter().enumerate() {
            if let Some((depth, intensity)) = slot {
                out.depth[idx] = depth;
                out.intensity[idx] = intensity;
                out.weight[idx] = 1;
            }
        }
        out
    }

    /// Fill a panorama by evaluating `f` on every pixel-center viewing ray.
    /// `f` returns (range, intensity) or None for a miss.
    pub fn from_range_fn(
        model: ProjectionModel,
        f: impl Fn(&Vector3<f64>) -> Option<(f64, f32)>,
    ) -> DepthPanorama {
        let mut pano = DepthPanorama::new_empty(model);
        for r in 0..model.height {
            for c in 0..model.width {
                if let Some((range, intensity)) = f(&model.center_direction(r, c)) {
                    if range > 0.0 {
                        let idx = r * model.width + c;
                        pano.depth[idx] = range as f32;
                        pano.intensity[idx] = intensity;
                        pano.weight[idx] = 1;
                    }
                }
            }
        }
        pano
    }

    pub(crate) fn depth_plane(&self) -> &[f32] {
        &self.depth
    }

    pub(crate) fn normal_plane_mut(&mut self) -> &mut Vec<[f32; 3]> {
        &mut self.normal
    }

    pub(crate) fn normal_plane(&self) -> &[[f32; 3]] {
        &self.normal
    }

    pub(crate) fn raw_parts(&self) -> (&[f32], &[f32], &[[f32; 3]], &[u8]) {
        (&self.depth, &self.intensity, &self.normal, &self.weight)
    }

    pub(crate) fn from_raw_parts(
        model: ProjectionModel,
        depth: Vec<f32>,
        intensity: Vec<f32>,
        normal: Vec<[f32; 3]>,
        weight: Vec<u8>,
    ) -> Self {
        DepthPanorama { model, depth, intensity, normal, weight }
    }
}

/// Deterministic z-buffer ordering: nearer range wins, exact ties break to
/// the lexicographically smaller point, then the smaller intensity.
fn zbuffer_less(a: &(f64, Vector3<f64>, f32), b: &(f64, Vector3<f64>, f32)) -> bool {
    let ka = (a.0, a.1.x, a.1.y, a.1.z, a.2);
    let kb = (b.0, b.1.x, b.1.y, b.1.z, b.2);
    ka < kb
}
