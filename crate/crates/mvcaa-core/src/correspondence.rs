//! Cross-view pixel correspondences.
//!
//! A correspondence map stores, per ordered view pair (i -> l) and per source
//! pixel, the target coordinate, a validity flag, and a payload used for
//! position encoding: a 2-vector displacement for panorama rigs or a signed
//! depth error (meters) for posed-depth rigs. Maps are built once per rig per
//! resolution and shared read-only afterwards.

use crate::camera::{
    intrinsics_from_fov, pixel_to_ray, project, ray_to_pixel, unproject, yaw_pose, Intrinsics, Pose,
};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RigKind {
    Panorama,
    PosedDepth,
}

/// Ordered set of cameras defining a multi-view generation problem.
#[derive(Clone, Debug)]
pub struct ViewRig {
    pub kind: RigKind,
    pub cameras: Vec<(Intrinsics, Pose)>,
}

impl ViewRig {
    pub fn n_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.len() < 2 {
            return Err(Error::Invalid("a rig needs at least 2 views".into()));
        }
        for (k, p) in &self.cameras {
            k.validate()?;
            p.validate()?;
        }
        if self.kind == RigKind::Panorama {
            for (_, p) in &self.cameras {
                let c = p.camera_center();
                if c.iter().any(|v| v.abs() > 1e-9) {
                    return Err(Error::Invalid("panorama rig views must share the camera center".into()));
                }
            }
        }
        Ok(())
    }
}

/// The canonical panorama rig: `n_views` cameras sharing a center, view i at
/// yaw `360 * i / n_views` degrees.
pub fn panorama_rig(n_views: usize, hfov_deg: f64, width: usize, height: usize) -> Result<ViewRig> {
    if n_views < 2 {
        return Err(Error::Invalid(format!("panorama rig needs >= 2 views, got {n_views}")));
    }
    let k = intrinsics_from_fov(hfov_deg, width, height)?;
    let cameras = (0..n_views)
        .map(|i| (k.clone(), yaw_pose(360.0 * i as f64 / n_views as f64)))
        .collect();
    Ok(ViewRig { kind: RigKind::Panorama, cameras })
}

/// Correspondences for one ordered view pair at one resolution.
#[derive(Clone, Debug)]
pub struct PairMap {
    pub src: usize,
    pub dst: usize,
    pub h: usize,
    pub w: usize,
    /// Target (x, y) per source pixel, row-major.
    pub coords: Vec<[f32; 2]>,
    /// Target is in front of the destination camera (coords are meaningful).
    pub in_front: Vec<bool>,
    /// In front and inside the destination image bounds.
    pub valid: Vec<bool>,
    /// 2 floats per pixel (panorama displacement) or 1 (signed depth error, m).
    pub payload: Vec<f32>,
    pub payload_dim: usize,
}

impl PairMap {
    fn identity(src: usize, h: usize, w: usize, payload_dim: usize) -> PairMap {
        let mut coords = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                coords.push([x as f32, y as f32]);
            }
        }
        PairMap {
            src,
            dst: src,
            h,
            w,
            coords,
            in_front: vec![true; h * w],
            valid: vec![true; h * w],
            payload: vec![0.0; h * w * payload_dim],
            payload_dim,
        }
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.valid.len() as f64
    }

    /// Bilinear interpolation of the coordinate grid at a fractional target
    /// position, clamped at the border. Returns `None` when the stencil
    /// touches a behind-camera cell.
    pub fn interp_coords(&self, x: f32, y: f32) -> Option<[f32; 2]> {
        let (h, w) = (self.h as i64, self.w as i64);
        let x0 = (x.floor() as i64).clamp(0, w - 1);
        let y0 = (y.floor() as i64).clamp(0, h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = (x as f64 - x0 as f64).clamp(0.0, 1.0);
        let fy = (y as f64 - y0 as f64).clamp(0.0, 1.0);
        let idx = |yy: i64, xx: i64| (yy * w + xx) as usize;
        let cells = [idx(y0, x0), idx(y0, x1), idx(y1, x0), idx(y1, x1)];
        if cells.iter().any(|&c| !self.in_front[c]) {
            return None;
        }
        let weights = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        let mut out = [0.0f64; 2];
        for (c, wgt) in cells.iter().zip(weights) {
            out[0] += self.coords[*c][0] as f64 * wgt;
            out[1] += self.coords[*c][1] as f64 * wgt;
        }
        Some([out[0] as f32, out[1] as f32])
    }
}

/// All ordered pairs (including self pairs) for one rig at one resolution.
#[derive(Clone, Debug)]
pub struct CorrespondenceMaps {
    pub kind: RigKind,
    pub n_views: usize,
    pub h: usize,
    pub w: usize,
    pub payload_dim: usize,
    /// Cameras rescaled to this resolution; the exact inverse mapping for
    /// neighborhood displacements comes from here.
    pub cams: Vec<(Intrinsics, Pose)>,
    pairs: Vec<PairMap>,
}

impl CorrespondenceMaps {
    pub fn pair(&self, src: usize, dst: usize) -> &PairMap {
        &self.pairs[src * self.n_views + dst]
    }

    pub fn pairs(&self) -> &[PairMap] {
        &self.pairs
    }

    #[cfg(test)]
    pub(crate) fn set_pairs_for_test(&mut self, pairs: Vec<PairMap>) {
        self.pairs = pairs;
    }

    /// Exact correspondence of a fractional source pixel for shared-center
    /// rigs: rotate the pixel ray into the destination view and project.
    pub fn map_point(&self, src: usize, dst: usize, x: f64, y: f64) -> Option<(f64, f64)> {
        if self.kind != RigKind::Panorama {
            return None;
        }
        let (ki, pi) = &self.cams[src];
        let (kl, pl) = &self.cams[dst];
        let d = pixel_to_ray(ki, x, y);
        let d_l = pl.rotate(pi.rotate_inv(d));
        let ((tx, ty), front) = ray_to_pixel(kl, d_l);
        front.then_some((tx, ty))
    }
}

const BOUNDS_EPS: f64 = 1e-6;

fn in_bounds(x: f64, y: f64, w: usize, h: usize) -> bool {
    x >= -BOUNDS_EPS && x <= (w - 1) as f64 + BOUNDS_EPS && y >= -BOUNDS_EPS && y <= (h - 1) as f64 + BOUNDS_EPS
}

fn clamp_coord(x: f64, max: usize) -> f32 {
    x.clamp(0.0, max as f64) as f32
}

/// Build panorama correspondences by rotating pixel rays between views that
/// share a camera center.
pub fn build_panorama_correspondences(rig: &ViewRig, h: usize, w: usize) -> Result<CorrespondenceMaps> {
    if rig.kind != RigKind::Panorama {
        return Err(Error::Invalid("panorama correspondences need a panorama rig".into()));
    }
    let n = rig.n_views();
    let cams: Vec<(Intrinsics, &Pose)> = rig
        .cameras
        .iter()
        .map(|(k, p)| (k.scaled_to(w, h), p))
        .collect();
    let mut pairs = Vec::with_capacity(n * n);
    for i in 0..n {
        for l in 0..n {
            if i == l {
                pairs.push(PairMap::identity(i, h, w, 2));
                continue;
            }
            let (ki, pi) = &cams[i];
            let (kl, pl) = &cams[l];
            let len = h * w;
            let mut coords = vec![[0.0f32; 2]; len];
            let mut in_front = vec![false; len];
            let mut valid = vec![false; len];
            let mut payload = vec![0.0f32; len * 2];
            for y in 0..h {
                for x in 0..w {
                    let s = y * w + x;
                    let d = pixel_to_ray(ki, x as f64, y as f64);
                    let d_world = pi.rotate_inv(d);
                    let d_l = pl.rotate(d_world);
                    let ((tx, ty), front) = ray_to_pixel(kl, d_l);
                    in_front[s] = front;
                    if front {
                        coords[s] = [tx as f32, ty as f32];
                        if in_bounds(tx, ty, w, h) {
                            valid[s] = true;
                            // the epsilon pad may leave a hair out of range
                            coords[s] = [clamp_coord(tx, w - 1), clamp_coord(ty, h - 1)];
                            // exact inverse for the displacement anchor
                            let back = pixel_to_ray(kl, tx, ty);
                            let back_world = pl.rotate_inv(back);
                            let d_i = pi.rotate(back_world);
                            let ((sx, sy), _) = ray_to_pixel(ki, d_i);
                            payload[s * 2] = (sx - x as f64) as f32;
                            payload[s * 2 + 1] = (sy - y as f64) as f32;
                        }
                    }
                }
            }
            pairs.push(PairMap { src: i, dst: l, h, w, coords, in_front, valid, payload, payload_dim: 2 });
        }
    }
    let cams = cams.into_iter().map(|(k, p)| (k, p.clone())).collect();
    Ok(CorrespondenceMaps { kind: RigKind::Panorama, n_views: n, h, w, payload_dim: 2, cams, pairs })
}

/// Build posed-depth correspondences by unprojecting with the source depth
/// and projecting into the target. Payload is the signed depth error
/// `projected_depth - bilinear(target_depth)` in meters.
pub fn build_depth_correspondences(rig: &ViewRig, depths: &[Tensor<f32>]) -> Result<CorrespondenceMaps> {
    if rig.kind != RigKind::PosedDepth {
        return Err(Error::Invalid("depth correspondences need a posed-depth rig".into()));
    }
    let n = rig.n_views();
    if depths.len() != n {
        return Err(Error::Invalid(format!("{n} views but {} depth maps", depths.len())));
    }
    let (h, w) = (depths[0].shape()[0], depths[0].shape()[1]);
    for d in depths {
        if d.shape() != [h, w] {
            return Err(Error::Invalid("depth maps must share one resolution".into()));
        }
    }
    let cams: Vec<(Intrinsics, &Pose)> = rig
        .cameras
        .iter()
        .map(|(k, p)| (k.scaled_to(w, h), p))
        .collect();
    let mut pairs = Vec::with_capacity(n * n);
    for i in 0..n {
        for l in 0..n {
            if i == l {
                pairs.push(PairMap::identity(i, h, w, 1));
                continue;
            }
            let (ki, pi) = &cams[i];
            let (kl, pl) = &cams[l];
            let len = h * w;
            let mut coords = vec![[0.0f32; 2]; len];
            let mut in_front = vec![false; len];
            let mut valid = vec![false; len];
            let mut payload = vec![0.0f32; len];
            let depth_i = depths[i].data();
            for y in 0..h {
                for x in 0..w {
                    let s = y * w + x;
                    let dep = depth_i[s] as f64;
                    if !(dep > 0.0) {
                        continue;
                    }
                    let xw = unproject(ki, pi, x as f64, y as f64, dep);
                    let ((tx, ty), d_proj, front) = project(kl, pl, xw);
                    in_front[s] = front;
                    if front {
                        coords[s] = [tx as f32, ty as f32];
                        if in_bounds(tx, ty, w, h) {
                            valid[s] = true;
                            coords[s] = [clamp_coord(tx, w - 1), clamp_coord(ty, h - 1)];
                            let d_tgt = bilinear_scalar(depths[l].data(), h, w, tx, ty);
                            payload[s] = (d_proj - d_tgt) as f32;
                        }
                    }
                }
            }
            pairs.push(PairMap { src: i, dst: l, h, w, coords, in_front, valid, payload, payload_dim: 1 });
        }
    }
    let cams = cams.into_iter().map(|(k, p)| (k, p.clone())).collect();
    Ok(CorrespondenceMaps { kind: RigKind::PosedDepth, n_views: n, h, w, payload_dim: 1, cams, pairs })
}

fn bilinear_scalar(data: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = (x.floor() as i64).clamp(0, w as i64 - 1);
    let y0 = (y.floor() as i64).clamp(0, h as i64 - 1);
    let x1 = (x0 + 1).min(w as i64 - 1);
    let y1 = (y0 + 1).min(h as i64 - 1);
    let fx = (x - x0 as f64).clamp(0.0, 1.0);
    let fy = (y - y0 as f64).clamp(0.0, 1.0);
    let at = |yy: i64, xx: i64| data[(yy as usize) * w + xx as usize] as f64;
    at(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + at(y0, x1) * fx * (1.0 - fy)
        + at(y1, x0) * (1.0 - fx) * fy
        + at(y1, x1) * fx * fy
}

/// Resample a map set to a uniformly scaled resolution. Coordinates and
/// 2-vector displacements rescale by `(new-1)/(old-1)`; validity and depth
/// errors resample nearest.
pub fn scale_to_feature_res(maps: &CorrespondenceMaps, h2: usize, w2: usize) -> Result<CorrespondenceMaps> {
    if h2 * maps.w != w2 * maps.h {
        return Err(Error::Invalid(format!(
            "non-uniform scale {}x{} -> {}x{}",
            maps.h, maps.w, h2, w2
        )));
    }
    if h2 == maps.h && w2 == maps.w {
        return Ok(maps.clone());
    }
    let sx = (w2 as f64 - 1.0) / (maps.w as f64 - 1.0);
    let sy = (h2 as f64 - 1.0) / (maps.h as f64 - 1.0);
    let pd = maps.payload_dim;
    let mut pairs = Vec::with_capacity(maps.pairs.len());
    for pm in &maps.pairs {
        let len = h2 * w2;
        let mut coords = vec![[0.0f32; 2]; len];
        let mut in_front = vec![false; len];
        let mut valid = vec![false; len];
        let mut payload = vec![0.0f32; len * pd];
        for y in 0..h2 {
            for x in 0..w2 {
                let s2 = y * w2 + x;
                // continuous source position plus its nearest grid cell
                let fx = x as f64 / sx;
                let fy = y as f64 / sy;
                let xs = (fx.round() as usize).min(maps.w - 1);
                let ys = (fy.round() as usize).min(maps.h - 1);
                let s = ys * maps.w + xs;
                in_front[s2] = pm.in_front[s];
                valid[s2] = pm.valid[s];
                // coordinates interpolate bilinearly where the stencil is
                // safe, falling back to the nearest cell
                let c = pm
                    .interp_coords(fx as f32, fy as f32)
                    .unwrap_or(pm.coords[s]);
                coords[s2] = if valid[s2] {
                    [clamp_coord(c[0] as f64 * sx, w2 - 1), clamp_coord(c[1] as f64 * sy, h2 - 1)]
                } else {
                    [(c[0] as f64 * sx) as f32, (c[1] as f64 * sy) as f32]
                };
                if pd == 2 {
                    payload[s2 * 2] = (pm.payload[s * 2] as f64 * sx) as f32;
                    payload[s2 * 2 + 1] = (pm.payload[s * 2 + 1] as f64 * sy) as f32;
                } else {
                    payload[s2] = pm.payload[s];
                }
            }
        }
        pairs.push(PairMap { src: pm.src, dst: pm.dst, h: h2, w: w2, coords, in_front, valid, payload, payload_dim: pd });
    }
    let cams = maps.cams.iter().map(|(k, p)| (k.scaled_to(w2, h2), p.clone())).collect();
    Ok(CorrespondenceMaps { kind: maps.kind, n_views: maps.n_views, h: h2, w: w2, payload_dim: pd, cams, pairs })
}

/// One attention candidate inside a K x K neighborhood.
#[derive(Clone, Debug)]
pub struct NeighborEntry {
    /// Fractional target coordinate `t* = t + (dx, dy)`.
    pub t: [f32; 2],
    /// Panorama: back-mapped displacement `s* - s` (2 values).
    /// Posed-depth: the signed depth error (1 value).
    pub payload: Vec<f32>,
    pub valid: bool,
}

#[derive(Clone, Debug)]
pub struct NeighborSet {
    pub entries: Vec<NeighborEntry>,
    pub k: usize,
}

/// K x K neighborhood around the correspondence of source pixel `s` for pair
/// (i -> l). K must be odd; K = 1 yields the single base correspondence.
pub fn neighborhood(maps: &CorrespondenceMaps, sx: usize, sy: usize, src: usize, dst: usize, k: usize) -> Result<NeighborSet> {
    if k % 2 == 0 || k == 0 {
        return Err(Error::Invalid(format!("neighborhood K must be odd and positive, got {k}")));
    }
    let fwd = maps.pair(src, dst);
    let s = sy * fwd.w + sx;
    let half = (k / 2) as i64;
    let pd = maps.payload_dim;
    let mut entries = Vec::with_capacity(k * k);
    if !fwd.valid[s] {
        for _ in 0..k * k {
            entries.push(NeighborEntry { t: [0.0, 0.0], payload: vec![0.0; pd], valid: false });
        }
        return Ok(NeighborSet { entries, k });
    }
    let base = fwd.coords[s];
    for dy in -half..=half {
        for dx in -half..=half {
            let tx = base[0] + dx as f32;
            let ty = base[1] + dy as f32;
            if !in_bounds(tx as f64, ty as f64, fwd.w, fwd.h) {
                entries.push(NeighborEntry { t: [tx, ty], payload: vec![0.0; pd], valid: false });
                continue;
            }
            let payload = if pd == 2 {
                // back-map t* through the exact inverse rotation + projection
                match maps.map_point(dst, src, tx as f64, ty as f64) {
                    Some((bx, by)) => vec![(bx - sx as f64) as f32, (by - sy as f64) as f32],
                    None => {
                        entries.push(NeighborEntry { t: [tx, ty], payload: vec![0.0; 2], valid: false });
                        continue;
                    }
                }
            } else {
                vec![fwd.payload[s]]
            };
            entries.push(NeighborEntry { t: [tx, ty], payload, valid: true });
        }
    }
    Ok(NeighborSet { entries, k })
}

// --- on-disk cache -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CacheCamera {
    intrinsics: Intrinsics,
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct CacheIndex {
    pairs: Vec<[usize; 2]>,
    resolution: [usize; 2],
    kind: RigKind,
    n_views: usize,
    payload_dim: usize,
    cameras: Vec<CacheCamera>,
}

/// Write per-pair MVT1 tensors (coords, valid, payload) plus a JSON index.
pub fn write_cache<P: AsRef<Path>>(dir: P, maps: &CorrespondenceMaps) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut pairs = Vec::new();
    for pm in &maps.pairs {
        pairs.push([pm.src, pm.dst]);
        let stem = format!("pair_{}_{}", pm.src, pm.dst);
        let len = pm.h * pm.w;
        let coords = Tensor::<f32>::from_vec(
            &[pm.h, pm.w, 2],
            pm.coords.iter().flat_map(|c| [c[0], c[1]]).collect(),
        );
        let valid = Tensor::<f32>::from_vec(&[pm.h, pm.w], pm.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect());
        let in_front =
            Tensor::<f32>::from_vec(&[pm.h, pm.w], pm.in_front.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect());
        debug_assert_eq!(pm.payload.len(), len * pm.payload_dim);
        let payload = Tensor::<f32>::from_vec(&[pm.h, pm.w, pm.payload_dim], pm.payload.clone());
        io::write_tensor(dir.join(format!("{stem}_coords.mvt")), &coords)?;
        io::write_tensor(dir.join(format!("{stem}_valid.mvt")), &valid)?;
        io::write_tensor(dir.join(format!("{stem}_infront.mvt")), &in_front)?;
        io::write_tensor(dir.join(format!("{stem}_payload.mvt")), &payload)?;
    }
    let cameras = maps
        .cams
        .iter()
        .map(|(k, p)| CacheCamera {
            intrinsics: k.clone(),
            rotation: [
                p.rotation[0][0], p.rotation[0][1], p.rotation[0][2],
                p.rotation[1][0], p.rotation[1][1], p.rotation[1][2],
                p.rotation[2][0], p.rotation[2][1], p.rotation[2][2],
            ],
            translation: p.translation,
        })
        .collect();
    let index = CacheIndex {
        pairs,
        resolution: [maps.h, maps.w],
        kind: maps.kind,
        n_views: maps.n_views,
        payload_dim: maps.payload_dim,
        cameras,
    };
    io::write_json(dir.join("index.json"), &index)
}

pub fn read_cache<P: AsRef<Path>>(dir: P) -> Result<CorrespondenceMaps> {
    let dir = dir.as_ref();
    let index: CacheIndex = io::read_json(dir.join("index.json"))?;
    let [h, w] = index.resolution;
    let mut pairs = Vec::with_capacity(index.pairs.len());
    for &[src, dst] in &index.pairs {
        let stem = format!("pair_{src}_{dst}");
        let coords: Tensor<f32> = io::read_tensor(dir.join(format!("{stem}_coords.mvt")))?;
        let valid: Tensor<f32> = io::read_tensor(dir.join(format!("{stem}_valid.mvt")))?;
        let in_front: Tensor<f32> = io::read_tensor(dir.join(format!("{stem}_infront.mvt")))?;
        let payload: Tensor<f32> = io::read_tensor(dir.join(format!("{stem}_payload.mvt")))?;
        if coords.shape() != [h, w, 2] || valid.shape() != [h, w] {
            return Err(Error::Data(format!("cache tensor shape mismatch for pair {src}->{dst}")));
        }
        pairs.push(PairMap {
            src,
            dst,
            h,
            w,
            coords: coords.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            in_front: in_front.data().iter().map(|&v| v > 0.5).collect(),
            valid: valid.data().iter().map(|&v| v > 0.5).collect(),
            payload: payload.data().to_vec(),
            payload_dim: index.payload_dim,
        });
    }
    let cams = index
        .cameras
        .iter()
        .map(|c| {
            let r = &c.rotation;
            (
                c.intrinsics.clone(),
                Pose {
                    rotation: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
                    translation: c.translation,
                },
            )
        })
        .collect();
    Ok(CorrespondenceMaps {
        kind: index.kind,
        n_views: index.n_views,
        h,
        w,
        payload_dim: index.payload_dim,
        cams,
        pairs,
    })
}

// --- rig file ----------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RigViewFile {
    Yawed { hfov_deg: f64, width: usize, height: usize, yaw_deg: f64 },
    Posed { intrinsics: Intrinsics, rotation: [f64; 9], translation: [f64; 3] },
}

#[derive(Serialize, Deserialize)]
struct RigFile {
    views: Vec<RigViewFile>,
}

pub fn write_rig<P: AsRef<Path>>(path: P, rig: &ViewRig, hfov_deg: Option<f64>) -> Result<()> {
    let views = rig
        .cameras
        .iter()
        .enumerate()
        .map(|(i, (k, p))| match (rig.kind, hfov_deg) {
            (RigKind::Panorama, Some(hfov)) => RigViewFile::Yawed {
                hfov_deg: hfov,
                width: k.width,
                height: k.height,
                yaw_deg: 360.0 * i as f64 / rig.cameras.len() as f64,
            },
            _ => RigViewFile::Posed {
                intrinsics: k.clone(),
                rotation: [
                    p.rotation[0][0], p.rotation[0][1], p.rotation[0][2],
                    p.rotation[1][0], p.rotation[1][1], p.rotation[1][2],
                    p.rotation[2][0], p.rotation[2][1], p.rotation[2][2],
                ],
                translation: p.translation,
            },
        })
        .collect();
    io::write_json(path, &RigFile { views })
}

pub fn read_rig<P: AsRef<Path>>(path: P) -> Result<ViewRig> {
    let file: RigFile = io::read_json(path)?;
    if file.views.is_empty() {
        return Err(Error::Data("rig file has no views".into()));
    }
    let all_yawed = file.views.iter().all(|v| matches!(v, RigViewFile::Yawed { .. }));
    let all_posed = file.views.iter().all(|v| matches!(v, RigViewFile::Posed { .. }));
    if !all_yawed && !all_posed {
        return Err(Error::Data("rig file mixes yawed and posed view entries".into()));
    }
    let mut cameras = Vec::with_capacity(file.views.len());
    for v in &file.views {
        match v {
            RigViewFile::Yawed { hfov_deg, width, height, yaw_deg } => {
                cameras.push((intrinsics_from_fov(*hfov_deg, *width, *height)?, yaw_pose(*yaw_deg)));
            }
            RigViewFile::Posed { intrinsics, rotation: r, translation } => {
                let pose = Pose {
                    rotation: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
                    translation: *translation,
                };
                cameras.push((intrinsics.clone(), pose));
            }
        }
    }
    let rig = ViewRig { kind: if all_yawed { RigKind::Panorama } else { RigKind::PosedDepth }, cameras };
    rig.validate()?;
    Ok(rig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn panorama_rig_angles() {
        let rig = panorama_rig(8, 90.0, 512, 512).unwrap();
        rig.validate().unwrap();
        assert_eq!(rig.n_views(), 8);
        assert!((rig.cameras[0].0.fx - 256.0).abs() < 1e-9);
        // view i sits at yaw 45 * i: compare rotation to yaw_pose directly
        for (i, (_, pose)) in rig.cameras.iter().enumerate() {
            let want = yaw_pose(45.0 * i as f64);
            for r in 0..3 {
                for c in 0..3 {
                    assert!((pose.rotation[r][c] - want.rotation[r][c]).abs() < 1e-12);
                }
            }
        }
        assert!(panorama_rig(1, 90.0, 64, 64).is_err());
    }

    /// Independent oracle: raw trig, no camera module.
    fn oracle_valid_fraction(yaw_delta_deg: f64, size: usize) -> f64 {
        let n = size as f64;
        let f = n / 2.0; // fx for 90 degree hfov
        let c = (n - 1.0) / 2.0;
        let (s, co) = yaw_delta_deg.to_radians().sin_cos();
        let mut valid = 0usize;
        for y in 0..size {
            for x in 0..size {
                // ray in source frame
                let dx = (x as f64 - c) / f;
                let dy = (y as f64 - c) / f;
                let dz = 1.0;
                // world ray (source at yaw 0 -> identity), then into target frame
                // target at yaw delta: d_t = R(delta) * d_world with R as in yaw_pose
                let tx = co * dx - s * dz;
                let tz = s * dx + co * dz;
                if tz <= 0.0 {
                    continue;
                }
                let px = c + f * tx / tz;
                let py = c + f * dy / tz;
                if px >= 0.0 && px <= n - 1.0 && py >= 0.0 && py <= n - 1.0 {
                    valid += 1;
                }
            }
        }
        valid as f64 / (size * size) as f64
    }

    #[test]
    fn adjacent_pair_valid_fraction() {
        let rig = panorama_rig(8, 90.0, 64, 64).unwrap();
        let maps = build_panorama_correspondences(&rig, 64, 64).unwrap();
        let frac = maps.pair(0, 1).valid_fraction();
        let oracle = oracle_valid_fraction(45.0, 64);
        assert!((frac - oracle).abs() < 1e-9, "builder {frac} vs oracle {oracle}");
        assert!((frac - 0.45).abs() < 0.05, "expected roughly 0.45, got {frac}");
    }

    #[test]
    fn self_pair_is_identity() {
        let rig = panorama_rig(8, 90.0, 16, 16).unwrap();
        let maps = build_panorama_correspondences(&rig, 16, 16).unwrap();
        let pm = maps.pair(3, 3);
        for y in 0..16 {
            for x in 0..16 {
                let s = y * 16 + x;
                assert!(pm.valid[s]);
                assert_eq!(pm.coords[s], [x as f32, y as f32]);
                assert_eq!(pm.payload[s * 2], 0.0);
            }
        }
    }

    #[test]
    fn opposite_views_have_no_overlap() {
        let rig = panorama_rig(8, 90.0, 32, 32).unwrap();
        let maps = build_panorama_correspondences(&rig, 32, 32).unwrap();
        assert_eq!(maps.pair(0, 4).valid.iter().filter(|&&v| v).count(), 0);
    }

    #[test]
    fn four_view_rig_has_boundary_only_overlap() {
        let rig = panorama_rig(4, 90.0, 64, 64).unwrap();
        let maps = build_panorama_correspondences(&rig, 64, 64).unwrap();
        let frac = maps.pair(0, 1).valid_fraction();
        assert!(frac < 0.02, "90-degree-apart views share only the frustum boundary, got {frac}");
    }

    #[test]
    fn panorama_symmetry_round_trip() {
        let rig = panorama_rig(8, 90.0, 64, 64).unwrap();
        let maps = build_panorama_correspondences(&rig, 64, 64).unwrap();
        let mut rng = Rng::new(77);
        let mut checked = 0;
        for _ in 0..10000 {
            let i = rng.below(8);
            let l = (i + 1) % 8;
            let x = rng.below(64);
            let y = rng.below(64);
            let fwd = maps.pair(i, l);
            let s = y * 64 + x;
            if !fwd.valid[s] {
                continue;
            }
            let t = fwd.coords[s];
            let (bx, by) = maps.map_point(l, i, t[0] as f64, t[1] as f64).unwrap();
            let dx = (bx - x as f64).abs();
            let dy = (by - y as f64).abs();
            assert!(dx < 1e-3 && dy < 1e-3, "round trip drift ({dx},{dy}) at view {i} pixel ({x},{y})");
            checked += 1;
        }
        assert!(checked > 3000, "too few valid samples: {checked}");
    }

    #[test]
    fn forward_backward_valid_counts_match() {
        let rig = panorama_rig(8, 90.0, 64, 64).unwrap();
        let maps = build_panorama_correspondences(&rig, 64, 64).unwrap();
        let a = maps.pair(2, 3).valid.iter().filter(|&&v| v).count() as f64;
        let b = maps.pair(3, 2).valid.iter().filter(|&&v| v).count() as f64;
        // within a +-2 row/col boundary band
        let band = 2.0 * 2.0 * 64.0;
        assert!((a - b).abs() <= band, "counts {a} vs {b}");
    }

    #[test]
    fn depth_identity_and_stereo() {
        let k = intrinsics_from_fov(90.0, 32, 32).unwrap();
        // identical poses: identity map, zero depth error
        let rig = ViewRig {
            kind: RigKind::PosedDepth,
            cameras: vec![(k.clone(), Pose::identity()), (k.clone(), Pose::identity())],
        };
        let depth = Tensor::<f32>::full(&[32, 32], 2.5);
        let maps = build_depth_correspondences(&rig, &[depth.clone(), depth.clone()]).unwrap();
        let pm = maps.pair(0, 1);
        for y in 0..32 {
            for x in 0..32 {
                let s = y * 32 + x;
                assert!(pm.valid[s]);
                assert!((pm.coords[s][0] - x as f32).abs() < 1e-4);
                assert!((pm.coords[s][1] - y as f32).abs() < 1e-4);
                assert!(pm.payload[s].abs() < 1e-5);
            }
        }

        // frontal plane at depth d, baseline b along x: t.x = s.x - fx b / d
        let b = 0.4;
        let d = 2.0;
        let rig2 = ViewRig {
            kind: RigKind::PosedDepth,
            cameras: vec![
                (k.clone(), Pose::identity()),
                (k.clone(), Pose { rotation: Pose::identity().rotation, translation: [-b, 0.0, 0.0] }),
            ],
        };
        let depth2 = Tensor::<f32>::full(&[32, 32], d as f32);
        let maps2 = build_depth_correspondences(&rig2, &[depth2.clone(), depth2]).unwrap();
        let pm2 = maps2.pair(0, 1);
        let disparity = (k.fx * b / d) as f32;
        for y in 0..32 {
            for x in 0..32 {
                let s = y * 32 + x;
                if !pm2.valid[s] {
                    continue;
                }
                assert!((pm2.coords[s][0] - (x as f32 - disparity)).abs() < 1e-3);
                assert!(pm2.payload[s].abs() < 1e-4, "planar scene has no depth error");
            }
        }
    }

    #[test]
    fn occluder_produces_positive_depth_gap() {
        let k = intrinsics_from_fov(90.0, 32, 32).unwrap();
        let b = 0.5;
        let rig = ViewRig {
            kind: RigKind::PosedDepth,
            cameras: vec![
                (k.clone(), Pose::identity()),
                (k, Pose { rotation: Pose::identity().rotation, translation: [-b, 0.0, 0.0] }),
            ],
        };
        // source sees the far plane everywhere; the target has a near
        // occluder over its left half
        let far = 3.0f32;
        let near = 1.0f32;
        let depth_src = Tensor::<f32>::full(&[32, 32], far);
        let depth_tgt = Tensor::<f32>::from_fn(&[32, 32], |i| if (i % 32) < 16 { near } else { far });
        let maps = build_depth_correspondences(&rig, &[depth_src, depth_tgt]).unwrap();
        let pm = maps.pair(0, 1);
        let mut gap_hits = 0;
        for y in 8..24 {
            for x in 0..32 {
                let s = y * 32 + x;
                if !pm.valid[s] {
                    continue;
                }
                let tx = pm.coords[s][0];
                if tx > 2.0 && tx < 13.0 {
                    // interior of the occluder in the target image
                    let gap = pm.payload[s];
                    assert!((gap - (far - near)).abs() < 1e-3, "gap {gap}");
                    assert!(gap > 0.0, "occlusion depth error must be positive");
                    gap_hits += 1;
                }
            }
        }
        assert!(gap_hits > 50, "oracle region too small: {gap_hits}");
    }

    #[test]
    fn scaling_maps() {
        let rig = panorama_rig(8, 90.0, 64, 64).unwrap();
        let maps = build_panorama_correspondences(&rig, 64, 64).unwrap();
        // identity scale: bitwise equal
        let same = scale_to_feature_res(&maps, 64, 64).unwrap();
        for (a, b) in maps.pairs().iter().zip(same.pairs()) {
            assert_eq!(a.coords, b.coords);
            assert_eq!(a.valid, b.valid);
            assert_eq!(a.payload, b.payload);
        }
        // halving multiplies coordinates by 31/63: exact on a constant map
        let constant = {
            let mut m = maps.clone();
            for pm in m.pairs.iter_mut() {
                for c in pm.coords.iter_mut() {
                    *c = [10.0, 20.0];
                }
                for v in pm.valid.iter_mut() {
                    *v = true;
                }
                for f in pm.in_front.iter_mut() {
                    *f = true;
                }
            }
            m
        };
        let sxy = 31.0f64 / 63.0;
        let halved = scale_to_feature_res(&constant, 32, 32).unwrap();
        let got = halved.pair(0, 1).coords[5 * 32 + 7];
        assert!((got[0] as f64 - 10.0 * sxy).abs() < 1e-6, "{got:?}");
        assert!((got[1] as f64 - 20.0 * sxy).abs() < 1e-6, "{got:?}");
        let half = scale_to_feature_res(&maps, 32, 32).unwrap();
        // non-uniform scale is rejected
        assert!(scale_to_feature_res(&maps, 32, 16).is_err());
        // rebuilding natively at 32x32 agrees within 0.1 px on valid interior pixels
        let native = build_panorama_correspondences(&rig, 32, 32).unwrap();
        let mut max_dev = 0.0f32;
        for (pm_s, pm_n) in half.pairs().iter().zip(native.pairs()) {
            for s in 0..32 * 32 {
                if !(pm_s.valid[s] && pm_n.valid[s]) {
                    continue;
                }
                let (x, y) = (s % 32, s / 32);
                if x < 2 || y < 2 || x > 29 || y > 29 {
                    continue;
                }
                let c_in_bounds = pm_n.coords[s][0] > 1.0
                    && pm_n.coords[s][0] < 30.0
                    && pm_n.coords[s][1] > 1.0
                    && pm_n.coords[s][1] < 30.0;
                if !c_in_bounds {
                    continue;
                }
                max_dev = max_dev.max((pm_s.coords[s][0] - pm_n.coords[s][0]).abs());
                max_dev = max_dev.max((pm_s.coords[s][1] - pm_n.coords[s][1]).abs());
            }
        }
        assert!(max_dev < 0.1, "scaled vs native deviation {max_dev}");
    }

    #[test]
    fn neighborhood_contracts() {
        let rig = panorama_rig(8, 90.0, 64, 64).unwrap();
        let maps = build_panorama_correspondences(&rig, 64, 64).unwrap();
        // find a valid interior pixel for pair (0,1) whose target is interior
        let pm = maps.pair(0, 1);
        let mut pick = None;
        for y in 8..56 {
            for x in 8..56 {
                let s = y * 64 + x;
                if pm.valid[s] && pm.coords[s][0] > 4.0 && pm.coords[s][0] < 59.0 && pm.coords[s][1] > 4.0 && pm.coords[s][1] < 59.0 {
                    pick = Some((x, y));
                    break;
                }
            }
            if pick.is_some() {
                break;
            }
        }
        let (x, y) = pick.expect("no interior valid pixel");
        // K = 1: single entry with near-zero displacement
        let k1 = neighborhood(&maps, x, y, 0, 1, 1).unwrap();
        assert_eq!(k1.entries.len(), 1);
        assert!(k1.entries[0].valid);
        assert!(k1.entries[0].payload[0].abs() < 1e-3 && k1.entries[0].payload[1].abs() < 1e-3);
        // K = 3: nine valid entries, center displacement ~0, neighbors within (0, 2] px
        let k3 = neighborhood(&maps, x, y, 0, 1, 3).unwrap();
        assert_eq!(k3.entries.len(), 9);
        assert!(k3.entries.iter().all(|e| e.valid));
        let center = &k3.entries[4];
        assert!(center.payload[0].abs() < 1e-3 && center.payload[1].abs() < 1e-3);
        for (idx, e) in k3.entries.iter().enumerate() {
            if idx == 4 {
                continue;
            }
            let mag = (e.payload[0].powi(2) + e.payload[1].powi(2)).sqrt();
            assert!(mag > 0.0 && mag <= 2.0 + 1e-3, "entry {idx} displacement {mag}");
        }
        // even K is rejected
        assert!(neighborhood(&maps, x, y, 0, 1, 2).is_err());
        // border: a target 0.4 px from the left edge loses the dx = -1 column
        let mut border_pick = None;
        for y in 8..56 {
            for x in 0..64 {
                let s = y * 64 + x;
                if pm.valid[s] && pm.coords[s][0] < 0.45 && pm.coords[s][0] > 0.3 && pm.coords[s][1] > 4.0 && pm.coords[s][1] < 59.0 {
                    border_pick = Some((x, y));
                    break;
                }
            }
        }
        if let Some((bx, by)) = border_pick {
            let kb = neighborhood(&maps, bx, by, 0, 1, 3).unwrap();
            let invalid = kb.entries.iter().filter(|e| !e.valid).count();
            assert_eq!(invalid, 3, "one 3-entry column leaves the image");
        }
    }

    #[test]
    fn depth_neighborhood_replicates_scalar() {
        let k = intrinsics_from_fov(90.0, 32, 32).unwrap();
        let rig = ViewRig {
            kind: RigKind::PosedDepth,
            cameras: vec![
                (k.clone(), Pose::identity()),
                (k, Pose { rotation: Pose::identity().rotation, translation: [-0.3, 0.0, 0.0] }),
            ],
        };
        let depth = Tensor::<f32>::full(&[32, 32], 2.0);
        let maps = build_depth_correspondences(&rig, &[depth.clone(), depth]).unwrap();
        let ns = neighborhood(&maps, 16, 16, 0, 1, 1).unwrap();
        assert_eq!(ns.entries.len(), 1);
        assert_eq!(ns.entries[0].payload.len(), 1);
    }

    #[test]
    fn cache_round_trip() {
        let rig = panorama_rig(4, 90.0, 16, 16).unwrap();
        let maps = build_panorama_correspondences(&rig, 16, 16).unwrap();
        let dir = std::env::temp_dir().join("mvcaa_corr_cache_test");
        let _ = std::fs::remove_dir_all(&dir);
        write_cache(&dir, &maps).unwrap();
        let back = read_cache(&dir).unwrap();
        assert_eq!(back.n_views, 4);
        assert_eq!(back.kind, RigKind::Panorama);
        for (a, b) in maps.pairs().iter().zip(back.pairs()) {
            assert_eq!(a.coords, b.coords);
            assert_eq!(a.valid, b.valid);
            assert_eq!(a.payload, b.payload);
        }
    }

    #[test]
    fn rig_file_round_trip() {
        let dir = std::env::temp_dir().join("mvcaa_rig_test");
        std::fs::create_dir_all(&dir).unwrap();
        let rig = panorama_rig(8, 90.0, 64, 64).unwrap();
        let path = dir.join("rig.json");
        write_rig(&path, &rig, Some(90.0)).unwrap();
        let back = read_rig(&path).unwrap();
        assert_eq!(back.kind, RigKind::Panorama);
        assert_eq!(back.n_views(), 8);
        for ((k1, p1), (k2, p2)) in rig.cameras.iter().zip(&back.cameras) {
            assert_eq!(k1, k2);
            for r in 0..3 {
                for c in 0..3 {
                    assert!((p1.rotation[r][c] - p2.rotation[r][c]).abs() < 1e-12);
                }
            }
        }
    }
}
