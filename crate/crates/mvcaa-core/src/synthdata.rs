//! Procedural scenes with exact multi-view ground truth.
//!
//! Panorama scenes are a low-order spherical-harmonic color field plus a few
//! soft-edged geodesic disks, periodic in longitude by construction. Depth
//! scenes are flat-shaded axis-aligned boxes inside a room, ray-cast along a
//! smooth camera trajectory, so cross-view color reprojection is exact
//! wherever depth agrees. Everything is a pure function of the seed.

use crate::camera::{
    add3, dot, intrinsics_from_fov, normalize, pixel_to_ray, scale3, yaw_pose, Equirect, Intrinsics, Pose, Vec3,
};
use crate::correspondence::{build_depth_correspondences, RigKind, ViewRig};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fixed palettes; the palette index doubles as the scene label signal.
pub const N_PALETTES: usize = 16;

fn palette_color(palette: usize, slot: usize) -> [f64; 3] {
    // deterministic hue table: distinct, saturated, mid-brightness
    let golden = 0.61803398875;
    let hue = ((palette as f64 * golden) + slot as f64 * 0.17) % 1.0;
    let sat = 0.55 + 0.35 * (((palette + 3 * slot) % 5) as f64 / 4.0);
    let val = 0.55 + 0.4 * (((palette * 7 + slot) % 4) as f64 / 3.0);
    hsv_to_rgb(hue, sat, val)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

// --- panorama scenes -----------------------------------------------------------

#[derive(Clone, Debug)]
pub struct PanoScene<S: Scalar> {
    pub equirect: Equirect<S>,
    pub label: usize,
    pub seed: u64,
}

/// First 8 real spherical harmonics (l = 0..2 without the final l=2 term).
fn sh_basis(d: Vec3) -> [f64; 8] {
    let (x, y, z) = (d[0], d[1], d[2]);
    [
        0.28209479,
        0.48860251 * y,
        0.48860251 * z,
        0.48860251 * x,
        1.09254843 * x * y,
        1.09254843 * y * z,
        0.31539157 * (3.0 * z * z - 1.0),
        1.09254843 * x * z,
    ]
}

fn texel_direction(x: usize, y: usize, h: usize, w: usize) -> Vec3 {
    let lon = ((x as f64 + 0.5) / w as f64 - 0.5) * 2.0 * std::f64::consts::PI;
    let lat = ((y as f64 + 0.5) / h as f64 - 0.5) * std::f64::consts::PI;
    [lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos()]
}

/// The smooth harmonic base of a panorama scene, periodic in longitude.
pub fn pano_base_field<S: Scalar>(seed: u64, h: usize, w: usize) -> Tensor<S> {
    let mut rng = Rng::stream(seed, "pano-sh", 0);
    let mut coeffs = [[0.0f64; 8]; 3];
    for ch in coeffs.iter_mut() {
        ch[0] = rng.normal() * 0.8;
        for c in ch.iter_mut().take(4).skip(1) {
            *c = rng.normal() * 0.4;
        }
        for c in ch.iter_mut().skip(4) {
            *c = rng.normal() * 0.22;
        }
    }
    Tensor::from_fn(&[h, w, 3], |i| {
        let c = i % 3;
        let x = (i / 3) % w;
        let y = i / (3 * w);
        let basis = sh_basis(texel_direction(x, y, h, w));
        let f: f64 = basis.iter().zip(&coeffs[c]).map(|(b, k)| b * k).sum();
        S::from_f64(0.5 + 0.35 * f.tanh())
    })
}

struct Disk {
    center: Vec3,
    radius: f64,
    edge: f64,
    color: [f64; 3],
}

/// Panorama scene: harmonic base + 3..6 soft disks from one palette.
/// The label is the palette bucket.
pub fn make_pano_scene<S: Scalar>(seed: u64) -> PanoScene<S> {
    make_pano_scene_sized(seed, 128)
}

pub fn make_pano_scene_sized<S: Scalar>(seed: u64, h: usize) -> PanoScene<S> {
    let w = 2 * h;
    let mut base = pano_base_field::<S>(seed, h, w);
    let mut trng = Rng::stream(seed, "pano-texture", 0);
    // fine texture with integer longitude frequencies (seam-continuous);
    // keeps the ground-truth overlap PSNR in a photo-like regime
    let kx = (24 + trng.below(14)) as f64;
    let ky = (12 + trng.below(7)) as f64;
    let ph1 = trng.uniform_in(0.0, std::f64::consts::TAU);
    let ph2 = trng.uniform_in(0.0, std::f64::consts::TAU);
    let tex_amp = 0.11;
    let mut rng = Rng::stream(seed, "pano-disks", 0);
    let palette = rng.below(N_PALETTES);
    let n_disks = 3 + rng.below(4);
    let disks: Vec<Disk> = (0..n_disks)
        .map(|_| {
            let lon = rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI);
            let lat = rng.uniform_in(-0.9, 0.9); // radians, keeps clear of poles
            let center = [lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos()];
            Disk {
                center,
                radius: rng.uniform_in(0.18, 0.42), // radians
                edge: 0.05,
                color: palette_color(palette, rng.below(8)),
            }
        })
        .collect();
    {
        let data = base.data_mut();
        for y in 0..h {
            for x in 0..w {
                let d = texel_direction(x, y, h, w);
                for disk in &disks {
                    let ang = dot(d, disk.center).clamp(-1.0, 1.0).acos();
                    let t = ((disk.radius - ang) / disk.edge).clamp(0.0, 1.0);
                    let alpha = t * t * (3.0 - 2.0 * t);
                    if alpha > 0.0 {
                        let idx = (y * w + x) * 3;
                        for c in 0..3 {
                            let cur = data[idx + c].to_f64();
                            data[idx + c] = S::from_f64(cur * (1.0 - alpha) + disk.color[c] * alpha);
                        }
                    }
                }
            }
        }
    }
    {
        let data = base.data_mut();
        for y in 0..h {
            let lat = ((y as f64 + 0.5) / h as f64 - 0.5) * std::f64::consts::PI;
            for x in 0..w {
                let lon = ((x as f64 + 0.5) / w as f64 - 0.5) * 2.0 * std::f64::consts::PI;
                let tex = 1.0 + tex_amp * (kx * lon + ph1).sin() * (ky * lat + ph2).sin();
                let idx = (y * w + x) * 3;
                for c in 0..3 {
                    let v = data[idx + c].to_f64() * tex;
                    data[idx + c] = S::from_f64(v.clamp(0.0, 1.0));
                }
            }
        }
    }
    PanoScene { equirect: Equirect::new(base).expect("w == 2h by construction"), label: palette, seed }
}

/// Perspective ground-truth crops of a panorama scene under a rig.
pub fn render_views<S: Scalar>(scene: &PanoScene<S>, rig: &ViewRig) -> Tensor<S> {
    let n = rig.n_views();
    let (k0, _) = &rig.cameras[0];
    let (h, w) = (k0.height, k0.width);
    let mut out = Tensor::zeros(&[n, h, w, 3]);
    let od = out.data_mut();
    for (vi, (k, pose)) in rig.cameras.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let d_cam = pixel_to_ray(k, x as f64, y as f64);
                let d_world = pose.rotate_inv(d_cam);
                let c = crate::camera::equirect_sample(&scene.equirect, d_world);
                let idx = ((vi * h + y) * w + x) * 3;
                for ch in 0..3 {
                    od[idx + ch] = S::from_f64(c[ch]);
                }
            }
        }
    }
    out
}

// --- depth scenes ----------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    fn contains(&self, p: Vec3, margin: f64) -> bool {
        (0..3).all(|a| p[a] > self.min[a] + margin && p[a] < self.max[a] - margin)
    }

    fn overlaps_point(&self, p: Vec3, margin: f64) -> bool {
        (0..3).all(|a| p[a] > self.min[a] - margin && p[a] < self.max[a] + margin)
    }

    /// First hit from outside: (t, face 0..6) with face = axis*2 + far-side.
    fn hit_outside(&self, o: Vec3, d: Vec3) -> Option<(f64, usize)> {
        let mut t_enter = f64::MIN;
        let mut t_exit = f64::MAX;
        let mut face = 0usize;
        for a in 0..3 {
            if d[a].abs() < 1e-12 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let t1 = (self.min[a] - o[a]) / d[a];
            let t2 = (self.max[a] - o[a]) / d[a];
            let (lo, hi, f) = if t1 < t2 { (t1, t2, a * 2) } else { (t2, t1, a * 2 + 1) };
            if lo > t_enter {
                t_enter = lo;
                face = f;
            }
            t_exit = t_exit.min(hi);
        }
        (t_enter < t_exit && t_enter > 1e-9).then_some((t_enter, face))
    }

    /// Exit hit from inside: (t, face).
    fn hit_inside(&self, o: Vec3, d: Vec3) -> (f64, usize) {
        let mut t_exit = f64::MAX;
        let mut face = 0usize;
        for a in 0..3 {
            if d[a].abs() < 1e-12 {
                continue;
            }
            let (bound, f) = if d[a] > 0.0 { (self.max[a], a * 2 + 1) } else { (self.min[a], a * 2) };
            let t = (bound - o[a]) / d[a];
            if t > 0.0 && t < t_exit {
                t_exit = t;
                face = f;
            }
        }
        (t_exit, face)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BoxGeometry {
    room: Aabb,
    room_colors: [[f64; 3]; 6],
    boxes: Vec<Aabb>,
    box_colors: Vec<[[f64; 3]; 6]>,
}

impl BoxGeometry {
    /// Nearest surface along a world ray starting inside the room.
    fn cast(&self, o: Vec3, d: Vec3) -> (f64, [f64; 3]) {
        let (mut t, face) = self.room.hit_inside(o, d);
        let mut color = self.room_colors[face];
        for (b, colors) in self.boxes.iter().zip(&self.box_colors) {
            if let Some((tb, f)) = b.hit_outside(o, d) {
                if tb < t {
                    t = tb;
                    color = colors[f];
                }
            }
        }
        (t, color)
    }
}

#[derive(Clone, Debug)]
pub struct DepthScene<S: Scalar> {
    pub seed: u64,
    pub label: usize,
    pub intrinsics: Intrinsics,
    /// Trajectory key samples: position and yaw per key frame.
    pub key_positions: Vec<Vec3>,
    pub key_yaws: Vec<f64>,
    pub frames_rgb: Vec<Tensor<S>>,
    pub frames_depth: Vec<Tensor<f32>>,
    geometry: BoxGeometry,
}

fn pose_from(position: Vec3, yaw_deg: f64) -> Pose {
    let r = yaw_pose(yaw_deg);
    let t = scale3(r.rotate(position), -1.0);
    Pose { rotation: r.rotation, translation: t }
}

impl<S: Scalar> DepthScene<S> {
    pub fn n_frames(&self) -> usize {
        self.key_positions.len()
    }

    /// Pose at a fractional trajectory parameter (keys at integers).
    pub fn pose_at(&self, u: f64) -> Pose {
        let max = (self.key_positions.len() - 1) as f64;
        let u = u.clamp(0.0, max);
        let k = (u.floor() as usize).min(self.key_positions.len() - 2);
        let f = u - k as f64;
        let p0 = self.key_positions[k];
        let p1 = self.key_positions[k + 1];
        let pos = [
            p0[0] + f * (p1[0] - p0[0]),
            p0[1] + f * (p1[1] - p0[1]),
            p0[2] + f * (p1[2] - p0[2]),
        ];
        let yaw = self.key_yaws[k] + f * (self.key_yaws[k + 1] - self.key_yaws[k]);
        pose_from(pos, yaw)
    }

    /// Flat-shaded render at an arbitrary trajectory parameter.
    pub fn render_at(&self, u: f64, size: usize) -> (Tensor<S>, Tensor<f32>, Pose) {
        let pose = self.pose_at(u);
        let (rgb, depth) = render_box_scene(&self.geometry, &self.intrinsics.scaled_to(size, size), &pose);
        (rgb, depth, pose)
    }

    /// Rig over the key frames.
    pub fn rig(&self) -> ViewRig {
        ViewRig {
            kind: RigKind::PosedDepth,
            cameras: (0..self.n_frames())
                .map(|k| (self.intrinsics.clone(), self.pose_at(k as f64)))
                .collect(),
        }
    }

    /// Rig and renders for the densification problem between keys k and k+1:
    /// the two keys plus `n_between` evenly spaced interior frames.
    pub fn interpolation_set(&self, k: usize, n_between: usize, size: usize) -> InterpolationSet<S> {
        let mut params = vec![k as f64];
        for j in 1..=n_between {
            params.push(k as f64 + j as f64 / (n_between + 1) as f64);
        }
        params.push((k + 1) as f64);
        let mut poses = Vec::new();
        let mut rgbs = Vec::new();
        let mut depths = Vec::new();
        for &u in &params {
            let (rgb, depth, pose) = self.render_at(u, size);
            poses.push(pose);
            rgbs.push(rgb);
            depths.push(depth);
        }
        let intr = self.intrinsics.scaled_to(size, size);
        let rig = ViewRig {
            kind: RigKind::PosedDepth,
            cameras: poses.iter().map(|p| (intr.clone(), p.clone())).collect(),
        };
        InterpolationSet { rig, rgbs, depths }
    }
}

pub struct InterpolationSet<S: Scalar> {
    pub rig: ViewRig,
    pub rgbs: Vec<Tensor<S>>,
    pub depths: Vec<Tensor<f32>>,
}

fn render_box_scene<S: Scalar>(geo: &BoxGeometry, k: &Intrinsics, pose: &Pose) -> (Tensor<S>, Tensor<f32>) {
    let (h, w) = (k.height, k.width);
    let mut rgb = Tensor::zeros(&[h, w, 3]);
    let mut depth = Tensor::<f32>::zeros(&[h, w]);
    let origin = pose.camera_center();
    let rd = rgb.data_mut();
    let dd = depth.data_mut();
    for y in 0..h {
        for x in 0..w {
            let d_cam = pixel_to_ray(k, x as f64, y as f64);
            let d_world = normalize(pose.rotate_inv(d_cam));
            let (t, color) = geo.cast(origin, d_world);
            let idx = (y * w + x) * 3;
            for c in 0..3 {
                rd[idx + c] = S::from_f64(color[c]);
            }
            // z-depth along the camera axis
            dd[y * w + x] = (t * d_cam[2]) as f32;
        }
    }
    (rgb, depth)
}

fn build_geometry(rng: &mut Rng, palette: usize, n_boxes: usize) -> BoxGeometry {
    let hx = rng.uniform_in(2.6, 3.4);
    let hz = rng.uniform_in(2.6, 3.4);
    let hy = 1.5;
    let room = Aabb { min: [-hx, -hy, -hz], max: [hx, hy, hz] };
    let mut room_colors = [[0.0; 3]; 6];
    for (f, c) in room_colors.iter_mut().enumerate() {
        *c = palette_color(palette, f);
    }
    let mut boxes = Vec::new();
    let mut box_colors = Vec::new();
    for b in 0..n_boxes {
        let sx = rng.uniform_in(0.25, 0.6);
        let sy = rng.uniform_in(0.4, 1.2);
        let sz = rng.uniform_in(0.25, 0.6);
        let cx = rng.uniform_in(-hx * 0.62, hx * 0.62);
        let cz = rng.uniform_in(-hz * 0.62, hz * 0.62);
        // resting on the floor (+y is down)
        boxes.push(Aabb { min: [cx - sx, hy - 2.0 * sy, cz - sz], max: [cx + sx, hy, cz + sz] });
        let mut colors = [[0.0; 3]; 6];
        for (f, c) in colors.iter_mut().enumerate() {
            *c = palette_color(palette, (b * 3 + f + 2) % 8);
        }
        box_colors.push(colors);
    }
    BoxGeometry { room, room_colors, boxes, box_colors }
}

fn trajectory_ok(geo: &BoxGeometry, positions: &[Vec3]) -> bool {
    positions
        .iter()
        .all(|&p| geo.room.contains(p, 0.7) && geo.boxes.iter().all(|b| !b.overlaps_point(p, 0.25)))
}

/// Mean consecutive-pair correspondence validity at a cheap resolution.
pub fn mean_consecutive_overlap<S: Scalar>(scene: &DepthScene<S>) -> f64 {
    let size = 24;
    let intr = scene.intrinsics.scaled_to(size, size);
    let mut poses = Vec::new();
    let mut depths = Vec::new();
    for k in 0..scene.n_frames() {
        let (_, d, p) = scene.render_at(k as f64, size);
        poses.push(p);
        depths.push(d);
    }
    let rig = ViewRig {
        kind: RigKind::PosedDepth,
        cameras: poses.iter().map(|p| (intr.clone(), p.clone())).collect(),
    };
    let maps = build_depth_correspondences(&rig, &depths).expect("depth maps from the generator");
    let mut acc = 0.0;
    let n = scene.n_frames();
    for k in 0..n - 1 {
        acc += maps.pair(k, k + 1).valid_fraction();
    }
    acc / (n - 1) as f64
}

/// Key-frame spacing targets roughly 65% consecutive overlap; the motion
/// scale is tuned against the measured correspondence validity fraction.
pub fn make_depth_scene<S: Scalar>(seed: u64, n_frames: usize) -> Result<DepthScene<S>> {
    make_depth_scene_sized(seed, n_frames, 64)
}

pub fn make_depth_scene_sized<S: Scalar>(seed: u64, n_frames: usize, size: usize) -> Result<DepthScene<S>> {
    if n_frames < 2 {
        return Err(Error::Invalid(format!("depth scene needs >= 2 frames, got {n_frames}")));
    }
    let intrinsics = intrinsics_from_fov(90.0, size, size)?;
    for attempt in 0..40u64 {
        let mut rng = Rng::stream(seed, "depth-scene", attempt);
        let palette = rng.below(N_PALETTES);
        let n_boxes = 1 + rng.below(4);
        let label = (n_boxes - 1) * 4 + palette % 4;
        let geometry = build_geometry(&mut rng, palette, n_boxes);
        // motion proposal, rescaled until the overlap lands in band
        let yaw0 = rng.uniform_in(0.0, 360.0);
        let base_yaw_step = rng.uniform_in(10.0, 18.0) * if rng.below(2) == 0 { 1.0 } else { -1.0 };
        let base_step = rng.uniform_in(0.25, 0.4);
        let start = [rng.uniform_in(-0.6, 0.6), rng.uniform_in(-0.15, 0.15), rng.uniform_in(-0.6, 0.6)];
        let wobble: Vec<(f64, f64)> = (0..n_frames)
            .map(|_| (rng.uniform_in(0.75, 1.25), rng.uniform_in(0.8, 1.2)))
            .collect();
        let mut scale = 1.0f64;
        for _tune in 0..7 {
            let mut positions = vec![start];
            let mut yaws = vec![yaw0];
            for f in 1..n_frames {
                let yaw = yaws[f - 1] + base_yaw_step * scale * wobble[f].0;
                let heading = yaw.to_radians();
                let step = base_step * scale * wobble[f].1;
                let prev = positions[f - 1];
                let next = add3(prev, [heading.sin() * step, 0.0, heading.cos() * step]);
                positions.push(next);
                yaws.push(yaw);
            }
            if !trajectory_ok(&geometry, &positions) {
                break;
            }
            let mut scene = DepthScene {
                seed,
                label,
                intrinsics: intrinsics.clone(),
                key_positions: positions,
                key_yaws: yaws,
                frames_rgb: Vec::new(),
                frames_depth: Vec::new(),
                geometry: geometry.clone(),
            };
            let overlap = mean_consecutive_overlap(&scene);
            if overlap < 0.55 {
                scale *= 0.72;
                continue;
            }
            if overlap > 0.75 {
                scale *= 1.3;
                continue;
            }
            // render the key frames at full resolution
            for k in 0..n_frames {
                let (rgb, depth, _) = scene.render_at(k as f64, size);
                scene.frames_rgb.push(rgb);
                scene.frames_depth.push(depth);
            }
            return Ok(scene);
        }
    }
    Err(Error::Invalid(format!(
        "could not place a trajectory for seed {seed} within the retry budget"
    )))
}

// --- dataset directories ------------------------------------------------------------

#[derive(Serialize, Deserialize, Clone)]
pub struct DatasetIndex {
    pub task: String,
    pub seeds: Vec<u64>,
    pub split: SplitIndex,
    pub n_frames: Option<usize>,
    pub view_size: usize,
    pub pano_height: Option<usize>,
}

#[derive(Serialize, Deserialize, Clone)]
pub struct SplitIndex {
    pub train: Vec<u64>,
    pub heldout: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    label: usize,
}

#[derive(Serialize, Deserialize)]
struct PosesFile {
    intrinsics: Intrinsics,
    frames: Vec<PoseEntry>,
}

#[derive(Serialize, Deserialize)]
struct PoseEntry {
    u: f64,
    rotation: [f64; 9],
    translation: [f64; 3],
}

pub fn write_pano_dataset<S: Scalar, P: AsRef<Path>>(
    root: P,
    seeds: &[u64],
    n_heldout: usize,
    pano_height: usize,
    view_size: usize,
) -> Result<DatasetIndex> {
    let root = root.as_ref();
    std::fs::create_dir_all(root)?;
    for &seed in seeds {
        let scene = make_pano_scene_sized::<S>(seed, pano_height);
        let dir = root.join("scenes").join(seed.to_string());
        std::fs::create_dir_all(&dir)?;
        io::write_ppm(dir.join("pano.ppm"), &scene.equirect.pixels)?;
        io::write_json(dir.join("label.json"), &LabelFile { label: scene.label })?;
    }
    let (train, heldout) = seeds.split_at(seeds.len().saturating_sub(n_heldout));
    let index = DatasetIndex {
        task: "pano".into(),
        seeds: seeds.to_vec(),
        split: SplitIndex { train: train.to_vec(), heldout: heldout.to_vec() },
        n_frames: None,
        view_size,
        pano_height: Some(pano_height),
    };
    io::write_json(root.join("index.json"), &index)?;
    Ok(index)
}

pub fn write_depth_dataset<S: Scalar, P: AsRef<Path>>(
    root: P,
    seeds: &[u64],
    n_heldout: usize,
    n_frames: usize,
    view_size: usize,
) -> Result<DatasetIndex> {
    let root = root.as_ref();
    std::fs::create_dir_all(root)?;
    for &seed in seeds {
        let scene = make_depth_scene_sized::<S>(seed, n_frames, view_size)?;
        let dir = root.join("scenes").join(seed.to_string());
        std::fs::create_dir_all(dir.join("frames"))?;
        std::fs::create_dir_all(dir.join("depth"))?;
        let mut entries = Vec::new();
        for k in 0..n_frames {
            io::write_ppm(dir.join("frames").join(format!("{k}.ppm")), &scene.frames_rgb[k])?;
            io::write_tensor(dir.join("depth").join(format!("{k}.mvt")), &scene.frames_depth[k])?;
            let p = scene.pose_at(k as f64);
            entries.push(PoseEntry {
                u: k as f64,
                rotation: [
                    p.rotation[0][0], p.rotation[0][1], p.rotation[0][2],
                    p.rotation[1][0], p.rotation[1][1], p.rotation[1][2],
                    p.rotation[2][0], p.rotation[2][1], p.rotation[2][2],
                ],
                translation: p.translation,
            });
        }
        io::write_json(dir.join("poses.json"), &PosesFile { intrinsics: scene.intrinsics.clone(), frames: entries })?;
        io::write_json(dir.join("label.json"), &LabelFile { label: scene.label })?;
    }
    let (train, heldout) = seeds.split_at(seeds.len().saturating_sub(n_heldout));
    let index = DatasetIndex {
        task: "depth".into(),
        seeds: seeds.to_vec(),
        split: SplitIndex { train: train.to_vec(), heldout: heldout.to_vec() },
        n_frames: Some(n_frames),
        view_size,
        pano_height: None,
    };
    io::write_json(root.join("index.json"), &index)?;
    Ok(index)
}

pub fn read_dataset_index<P: AsRef<Path>>(root: P) -> Result<DatasetIndex> {
    io::read_json(root.as_ref().join("index.json"))
}

pub fn read_scene_label<P: AsRef<Path>>(scene_dir: P) -> Result<usize> {
    let f: LabelFile = io::read_json(scene_dir.as_ref().join("label.json"))?;
    Ok(f.label)
}
