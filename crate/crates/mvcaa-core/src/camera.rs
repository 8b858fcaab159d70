//! Pinhole and equirectangular projection math.
//!
//! Coordinate convention: right-handed, +z forward, +y down, +x right.
//! Yaw rotates +x toward +z; a camera at yaw θ looks along world longitude θ
//! with longitude defined as `atan2(x, z)`. Principal points sit at
//! `(size-1)/2` so integer pixels sample texel centers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Invalid(format!("focal lengths must be positive, got fx={} fy={}", self.fx, self.fy)));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 || self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(Error::Invalid("principal point outside the image".into()));
        }
        Ok(())
    }

    /// Rescale to a new resolution. Pixel corners stay aligned (the same
    /// `(size-1)/(size-1)` ratio used when rescaling correspondence maps),
    /// so maps built natively at a low resolution agree with rescaled ones.
    pub fn scaled_to(&self, width: usize, height: usize) -> Intrinsics {
        if width == self.width && height == self.height {
            return self.clone();
        }
        Intrinsics {
            width,
            height,
            fx: self.fx * (width as f64 - 1.0) / (self.width as f64 - 1.0),
            fy: self.fy * (height as f64 - 1.0) / (self.height as f64 - 1.0),
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }
}

/// Pinhole intrinsics from a horizontal field of view.
pub fn intrinsics_from_fov(hfov_deg: f64, width: usize, height: usize) -> Result<Intrinsics> {
    if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
        return Err(Error::Invalid(format!("hfov must be in (0, 180), got {hfov_deg}")));
    }
    let fx = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
    Ok(Intrinsics {
        width,
        height,
        fx,
        fy: fx,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
    })
}

/// World-to-camera rigid transform: `x_cam = R * x_world + t`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Pose {
        Pose { rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], translation: [0.0; 3] }
    }

    pub fn world_to_cam(&self, x: Vec3) -> Vec3 {
        add3(self.rotate(x), self.translation)
    }

    pub fn cam_to_world(&self, x: Vec3) -> Vec3 {
        self.rotate_inv(sub3(x, self.translation))
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn rotate_inv(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[1][0] * v[1] + r[2][0] * v[2],
            r[0][1] * v[0] + r[1][1] * v[1] + r[2][1] * v[2],
            r[0][2] * v[0] + r[1][2] * v[1] + r[2][2] * v[2],
        ]
    }

    pub fn camera_center(&self) -> Vec3 {
        self.rotate_inv(scale3(self.translation, -1.0))
    }

    /// Apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    rotation[i][j] += self.rotation[i][k] * other.rotation[k][j];
                }
            }
        }
        let t = add3(self.rotate(other.translation), self.translation);
        Pose { rotation, translation: t }
    }

    /// Checks R^T R = I and det(R) = +1 within 1e-6.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let mut v = 0.0;
                for k in 0..3 {
                    v += r[k][i] * r[k][j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                if (v - want).abs() > 1e-6 {
                    return Err(Error::Invalid("rotation is not orthonormal".into()));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!("rotation determinant {det} != 1")));
        }
        Ok(())
    }
}

/// Pure yaw about the vertical axis with zero translation.
pub fn yaw_pose(deg: f64) -> Pose {
    let (s, c) = deg.to_radians().sin_cos();
    Pose {
        rotation: [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]],
        translation: [0.0; 3],
    }
}

/// Ray through a pixel, unit length, z > 0, in the camera frame.
pub fn pixel_to_ray(k: &Intrinsics, x: f64, y: f64) -> Vec3 {
    normalize([(x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0])
}

/// Pixel hit by a camera-frame direction; `in_front` is `d.z > 0`.
pub fn ray_to_pixel(k: &Intrinsics, d: Vec3) -> ((f64, f64), bool) {
    let in_front = d[2] > 0.0;
    let px = k.cx + k.fx * d[0] / d[2];
    let py = k.cy + k.fy * d[1] / d[2];
    ((px, py), in_front)
}

/// Lift a pixel with a z-depth (meters) to a world point.
pub fn unproject(k: &Intrinsics, pose: &Pose, x: f64, y: f64, depth: f64) -> Vec3 {
    debug_assert!(depth > 0.0, "unproject wants positive depth, got {depth}");
    let d = pixel_to_ray(k, x, y);
    let cam = scale3(d, depth / d[2]);
    pose.cam_to_world(cam)
}

/// Project a world point: pixel, z-depth, and frustum-side flag.
pub fn project(k: &Intrinsics, pose: &Pose, x_world: Vec3) -> ((f64, f64), f64, bool) {
    let cam = pose.world_to_cam(x_world);
    let (px, in_front) = ray_to_pixel(k, cam);
    (px, cam[2], in_front)
}

/// Full-sphere image over longitude [-pi, pi) x latitude [-pi/2, pi/2].
#[derive(Clone, Debug)]
pub struct Equirect<S: Scalar> {
    pub pixels: Tensor<S>,
}

impl<S: Scalar> Equirect<S> {
    pub fn new(pixels: Tensor<S>) -> Result<Self> {
        let shape = pixels.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::Invalid(format!("equirect wants [h,w,3], got {shape:?}")));
        }
        if shape[1] != 2 * shape[0] {
            return Err(Error::Invalid(format!("equirect wants w == 2h, got {}x{}", shape[0], shape[1])));
        }
        Ok(Equirect { pixels })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }
}

/// Bilinear sample of a unit direction: horizontal wraparound, vertical clamp.
pub fn equirect_sample<S: Scalar>(pano: &Equirect<S>, d: Vec3) -> [f64; 3] {
    debug_assert!((norm(d) - 1.0).abs() < 1e-6, "equirect_sample wants a unit vector");
    let (h, w) = (pano.height(), pano.width());
    let lon = d[0].atan2(d[2]);
    let lat = d[1].clamp(-1.0, 1.0).asin();
    let u = (lon / (2.0 * std::f64::consts::PI) + 0.5) * w as f64 - 0.5;
    let v = (lat / std::f64::consts::PI + 0.5) * h as f64 - 0.5;
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let wrap = |x: i64| -> usize { (x.rem_euclid(w as i64)) as usize };
    let clampy = |y: i64| -> usize { y.clamp(0, h as i64 - 1) as usize };
    let (x0i, y0i) = (x0 as i64, y0 as i64);
    let px = pano.pixels.data();
    let at = |yy: usize, xx: usize, c: usize| px[(yy * w + xx) * 3 + c].to_f64();
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let v00 = at(clampy(y0i), wrap(x0i), c);
        let v01 = at(clampy(y0i), wrap(x0i + 1), c);
        let v10 = at(clampy(y0i + 1), wrap(x0i), c);
        let v11 = at(clampy(y0i + 1), wrap(x0i + 1), c);
        *o = v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) + v10 * (1.0 - fx) * fy + v11 * fx * fy;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn fov_to_focal() {
        let k = intrinsics_from_fov(90.0, 64, 64).unwrap();
        assert!((k.fx - 32.0).abs() < 1e-12);
        let k512 = intrinsics_from_fov(90.0, 512, 512).unwrap();
        assert!((k512.fx - 256.0).abs() < 1e-9);
        let k60 = intrinsics_from_fov(60.0, 64, 64).unwrap();
        assert!((k60.fx - 55.42562584220407).abs() < 1e-6, "fx {}", k60.fx);
        assert!(intrinsics_from_fov(0.0, 64, 64).is_err());
        assert!(intrinsics_from_fov(180.0, 64, 64).is_err());
    }

    #[test]
    fn pixel_ray_anchors() {
        let k = intrinsics_from_fov(90.0, 64, 64).unwrap();
        let center = pixel_to_ray(&k, k.cx, k.cy);
        assert!((center[0]).abs() < 1e-12 && (center[1]).abs() < 1e-12 && (center[2] - 1.0).abs() < 1e-12);
        let right = pixel_to_ray(&k, k.cx + k.fx, k.cy);
        let s = 1.0 / 2f64.sqrt();
        assert!((right[0] - s).abs() < 1e-12 && (right[2] - s).abs() < 1e-12);
        let down = pixel_to_ray(&k, k.cx, k.cy + k.fy);
        assert!((down[1] - s).abs() < 1e-12 && (down[2] - s).abs() < 1e-12);
    }

    #[test]
    fn ray_pixel_roundtrip() {
        let k = intrinsics_from_fov(90.0, 64, 64).unwrap();
        let ((px, py), front) = ray_to_pixel(&k, [0.0, 0.0, 1.0]);
        assert!(front && (px - k.cx).abs() < 1e-12 && (py - k.cy).abs() < 1e-12);
        let (_, behind) = ray_to_pixel(&k, [0.0, 0.0, -1.0]);
        assert!(!behind);
        let mut rng = Rng::new(11);
        for _ in 0..1000 {
            let x = rng.uniform_in(0.0, 63.0);
            let y = rng.uniform_in(0.0, 63.0);
            let d = pixel_to_ray(&k, x, y);
            let ((px, py), front) = ray_to_pixel(&k, d);
            assert!(front);
            assert!((px - x).abs() < 1e-6 && (py - y).abs() < 1e-6, "({x},{y}) -> ({px},{py})");
        }
    }

    #[test]
    fn yaw_group_behavior() {
        let p0 = yaw_pose(0.0);
        assert!(p0.validate().is_ok());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p0.rotation[i][j] - want).abs() < 1e-12);
            }
        }
        // eight 45-degree steps compose to the identity
        let step = yaw_pose(45.0);
        let mut acc = Pose::identity();
        for _ in 0..8 {
            acc = step.compose(&acc);
        }
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((acc.rotation[i][j] - want).abs() < 1e-6);
            }
        }
        // rotation moves (0,0,1) by exactly 45 degrees
        let moved = yaw_pose(45.0).rotate([0.0, 0.0, 1.0]);
        assert!((dot(moved, [0.0, 0.0, 1.0]) - 45f64.to_radians().cos()).abs() < 1e-12);
        // composition is addition of angles
        let a = yaw_pose(30.0).compose(&yaw_pose(25.0));
        let b = yaw_pose(55.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.rotation[i][j] - b.rotation[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unproject_project_roundtrip() {
        let k = intrinsics_from_fov(90.0, 64, 64).unwrap();
        let identity = Pose::identity();
        let x = unproject(&k, &identity, k.cx, k.cy, 2.0);
        assert!((x[0]).abs() < 1e-12 && (x[1]).abs() < 1e-12 && (x[2] - 2.0).abs() < 1e-12);

        let mut rng = Rng::new(3);
        for trial in 0..1000 {
            let pose = yaw_pose(rng.uniform_in(-180.0, 180.0));
            let pose = Pose {
                rotation: pose.rotation,
                translation: [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)],
            };
            let px = rng.uniform_in(0.0, 63.0);
            let py = rng.uniform_in(0.0, 63.0);
            let depth = rng.uniform_in(0.5, 10.0);
            let xw = unproject(&k, &pose, px, py, depth);
            let ((qx, qy), d, front) = project(&k, &pose, xw);
            assert!(front, "trial {trial}");
            assert!((qx - px).abs() < 1e-4 && (qy - py).abs() < 1e-4, "pixel drift {qx},{qy} vs {px},{py}");
            assert!((d - depth).abs() < 1e-6);
        }
    }

    #[test]
    fn stereo_disparity() {
        let k = intrinsics_from_fov(90.0, 64, 64).unwrap();
        let cam1 = Pose::identity();
        let b = 0.5;
        let d = 4.0;
        // camera 2 shifted by baseline b along +x: x_cam2 = x_world - (b,0,0)
        let cam2 = Pose { rotation: Pose::identity().rotation, translation: [-b, 0.0, 0.0] };
        let x = unproject(&k, &cam1, k.cx, k.cy, d);
        let ((px, _), _, front) = project(&k, &cam2, x);
        assert!(front);
        assert!((px - (k.cx - k.fx * b / d)).abs() < 1e-9, "px {px}");
    }

    #[test]
    fn equirect_anchors_and_seam() {
        // smooth panorama: color is a sinusoid of longitude
        let (h, w) = (32, 64);
        let img = Tensor::<f64>::from_fn(&[h, w, 3], |i| {
            let x = (i / 3) % w;
            let lon = (x as f64 + 0.5) / w as f64 * 2.0 * std::f64::consts::PI - std::f64::consts::PI;
            0.5 + 0.4 * lon.sin()
        });
        let pano = Equirect::new(img).unwrap();
        // constant direction anchor: (0,0,1) is longitude 0 at the equator
        let v = equirect_sample(&pano, [0.0, 0.0, 1.0]);
        assert!((v[0] - 0.5).abs() < 0.05, "{v:?}");
        // seam: longitudes pi-eps and -pi+eps converge
        for eps in [1e-2, 1e-3, 1e-4] {
            let lon_a = std::f64::consts::PI - eps;
            let lon_b = -std::f64::consts::PI + eps;
            let da = [lon_a.sin(), 0.0, lon_a.cos()];
            let db = [lon_b.sin(), 0.0, lon_b.cos()];
            let a = equirect_sample(&pano, da);
            let bb = equirect_sample(&pano, db);
            assert!((a[0] - bb[0]).abs() < 0.1 * eps / 1e-2 + 1e-6, "eps {eps}: {} vs {}", a[0], bb[0]);
        }
        let constant = Equirect::new(Tensor::<f64>::full(&[8, 16, 3], 0.7)).unwrap();
        let c = equirect_sample(&constant, normalize([0.3, -0.5, 0.8]));
        assert!((c[0] - 0.7).abs() < 1e-12 && (c[2] - 0.7).abs() < 1e-12);
    }
}
