//! Multi-view consistency metrics built on overlapping-region PSNR.
//!
//! For every ordered adjacent view pair, the target view is warped into the
//! source through the correspondence coordinates (both directions contribute)
//! and the squared error accumulates over valid pixels. For posed-depth maps
//! an optional gate drops pixels whose |depth error| exceeds a threshold.
//! PSNR is `10 log10(1/MSE)` for images in [0,1], MSE floored at 1e-10.

use crate::caa::bilinear_sample;
use crate::correspondence::{CorrespondenceMaps, RigKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::Serialize;

pub const PSNR_CAP_DB: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-10;

pub fn mse_to_db(mse: f64) -> f64 {
    10.0 * (1.0 / mse.max(MSE_FLOOR)).log10()
}

/// Plain PSNR between two same-shape images in [0,1], capped at 100 dB.
pub fn psnr<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "psnr shapes: {:?} vs {:?}", a.shape(), b.shape());
    let mut sse = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x.to_f64() - y.to_f64();
        sse += d * d;
    }
    mse_to_db(sse / a.numel() as f64)
}

/// Ordered adjacent pairs: ring neighbors for panoramas (loop closed),
/// consecutive frames for posed-depth rigs.
pub fn adjacent_pairs(kind: RigKind, n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    match kind {
        RigKind::Panorama => {
            for i in 0..n {
                pairs.push((i, (i + 1) % n));
                pairs.push(((i + 1) % n, i));
            }
        }
        RigKind::PosedDepth => {
            for i in 0..n - 1 {
                pairs.push((i, i + 1));
                pairs.push((i + 1, i));
            }
        }
    }
    pairs
}

fn pair_sse<S: Scalar>(
    views: &[Tensor<S>],
    maps: &CorrespondenceMaps,
    src: usize,
    dst: usize,
    depth_gate: Option<f64>,
) -> (f64, usize) {
    let pm = maps.pair(src, dst);
    let (h, w) = (pm.h, pm.w);
    let src_img = &views[src];
    let dst_img = &views[dst];
    let c = src_img.shape()[2];
    let mut sse = 0.0;
    let mut count = 0usize;
    for s in 0..h * w {
        if !pm.valid[s] {
            continue;
        }
        if let Some(gate) = depth_gate {
            if pm.payload_dim == 1 && (pm.payload[s] as f64).abs() > gate {
                continue;
            }
        }
        let t = pm.coords[s];
        let warped = bilinear_sample(dst_img, t[0], t[1]);
        for ch in 0..c {
            let d = src_img.data()[s * c + ch].to_f64() - warped[ch].to_f64();
            sse += d * d;
        }
        count += c;
    }
    (sse, count)
}

#[derive(Serialize, Clone, Debug)]
pub struct PairReport {
    pub pair: [usize; 2],
    pub db: f64,
    pub pixels: usize,
}

pub struct OverlapReport {
    pub db: f64,
    pub pairs: Vec<PairReport>,
}

/// Overlap PSNR pooled over all ordered adjacent pairs.
pub fn overlap_psnr_report<S: Scalar>(
    views: &[Tensor<S>],
    maps: &CorrespondenceMaps,
    depth_gate: Option<f64>,
) -> Result<OverlapReport> {
    let n = views.len();
    if n != maps.n_views {
        return Err(Error::Invalid(format!("{n} views but maps cover {}", maps.n_views)));
    }
    for v in views {
        let s = v.shape();
        if s.len() != 3 || s[0] != maps.h || s[1] != maps.w {
            return Err(Error::Invalid(format!(
                "views must be [{}, {}, c] to match the maps, got {s:?}",
                maps.h, maps.w
            )));
        }
    }
    let mut total_sse = 0.0;
    let mut total_count = 0usize;
    let mut pairs = Vec::new();
    for (i, l) in adjacent_pairs(maps.kind, n) {
        let (sse, count) = pair_sse(views, maps, i, l, depth_gate);
        total_sse += sse;
        total_count += count;
        let db = if count == 0 { f64::NAN } else { mse_to_db(sse / count as f64) };
        pairs.push(PairReport { pair: [i, l], db, pixels: count / views[0].shape()[2] });
    }
    if total_count == 0 {
        return Err(Error::Invalid("no valid overlap pixels between any adjacent pair (degenerate rig)".into()));
    }
    Ok(OverlapReport { db: mse_to_db(total_sse / total_count as f64), pairs })
}

pub fn overlap_psnr<S: Scalar>(
    views: &[Tensor<S>],
    maps: &CorrespondenceMaps,
    depth_gate: Option<f64>,
) -> Result<f64> {
    Ok(overlap_psnr_report(views, maps, depth_gate)?.db)
}

/// Ratio of generated overlap PSNR to ground-truth overlap PSNR.
/// Higher is better; 1.0 means the generated set is as consistent as real data.
pub fn consistency_ratio<S: Scalar>(
    gen_views: &[Tensor<S>],
    gt_views: &[Tensor<S>],
    maps: &CorrespondenceMaps,
    depth_gate: Option<f64>,
) -> Result<f64> {
    let gen = overlap_psnr(gen_views, maps, depth_gate)?;
    let gt = overlap_psnr(gt_views, maps, depth_gate)?;
    Ok(gen / gt)
}

/// Overlap PSNR restricted to the (last, first) pair: 360-degree loop closure.
pub fn seam_closure<S: Scalar>(views: &[Tensor<S>], maps: &CorrespondenceMaps) -> Result<f64> {
    let n = views.len();
    if n < 2 {
        return Err(Error::Invalid("seam closure needs at least two views".into()));
    }
    let (a, ca) = pair_sse(views, maps, n - 1, 0, None);
    let (b, cb) = pair_sse(views, maps, 0, n - 1, None);
    if ca + cb == 0 {
        return Err(Error::Invalid("no valid pixels between the last and first views".into()));
    }
    Ok(mse_to_db((a + b) / (ca + cb) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::{build_panorama_correspondences, panorama_rig};
    use crate::rng::Rng;
    use crate::synthdata::{make_pano_scene_sized, render_views};

    fn unstack<S: Scalar>(x: &Tensor<S>) -> Vec<Tensor<S>> {
        let s = x.shape();
        let per = s[1] * s[2] * s[3];
        (0..s[0])
            .map(|i| Tensor::from_vec(&s[1..], x.data()[i * per..(i + 1) * per].to_vec()))
            .collect()
    }

    #[test]
    fn psnr_anchors() {
        let a = Tensor::<f32>::full(&[4, 4, 3], 0.5);
        assert_eq!(psnr(&a, &a), 100.0, "identical images cap at 100 dB");
        let b = a.map(|v| v + 0.1);
        let db = psnr(&a, &b);
        assert!((db - 20.0).abs() < 1e-3, "uniform 0.1 offset is 20 dB, got {db}");
    }

    #[test]
    fn identical_views_hit_the_cap_and_ratio_one() {
        let rig = panorama_rig(8, 90.0, 32, 32).unwrap();
        let maps = build_panorama_correspondences(&rig, 32, 32).unwrap();
        let scene = make_pano_scene_sized::<f32>(3, 64);
        let crops = unstack(&render_views(&scene, &rig));
        // same set against itself: ratio exactly 1
        let ratio = consistency_ratio(&crops, &crops, &maps, None).unwrap();
        assert_eq!(ratio, 1.0);
        // views identical everywhere: capped PSNR
        let constant: Vec<Tensor<f32>> = (0..8).map(|_| Tensor::full(&[32, 32, 3], 0.3)).collect();
        assert_eq!(overlap_psnr(&constant, &maps, None).unwrap(), 100.0);
    }

    #[test]
    fn gt_renders_are_resampling_limited() {
        let rig = panorama_rig(8, 90.0, 64, 64).unwrap();
        let maps = build_panorama_correspondences(&rig, 64, 64).unwrap();
        let mut worst = f64::MAX;
        for seed in 0..5 {
            let scene = make_pano_scene_sized::<f32>(seed, 128);
            let crops = unstack(&render_views(&scene, &rig));
            let report = overlap_psnr_report(&crops, &maps, None).unwrap();
            worst = worst.min(report.db);
            let seam = seam_closure(&crops, &maps).unwrap();
            worst = worst.min(seam);
        }
        assert!(worst >= 35.0, "ground-truth overlap should be resampling-limited, got {worst}");
    }

    #[test]
    fn direction_symmetry() {
        // the metric pools both warp directions, so transposing the pair set
        // changes nothing; the residual one-directional bilinear asymmetry is
        // bounded on ground-truth data
        let rig = panorama_rig(8, 90.0, 64, 64).unwrap();
        let maps = build_panorama_correspondences(&rig, 64, 64).unwrap();
        for seed in [9u64, 10, 11] {
            let scene = make_pano_scene_sized::<f32>(seed, 128);
            let crops = unstack(&render_views(&scene, &rig));
            let (mut fwd_sse, mut fwd_n, mut bwd_sse, mut bwd_n) = (0.0, 0usize, 0.0, 0usize);
            for i in 0..8 {
                let l = (i + 1) % 8;
                let (sa, ca) = super::pair_sse(&crops, &maps, i, l, None);
                let (sb, cb) = super::pair_sse(&crops, &maps, l, i, None);
                fwd_sse += sa;
                fwd_n += ca;
                bwd_sse += sb;
                bwd_n += cb;
            }
            let pooled = overlap_psnr(&crops, &maps, None).unwrap();
            let transposed = mse_to_db((bwd_sse + fwd_sse) / (bwd_n + fwd_n) as f64);
            assert!((pooled - transposed).abs() < 1e-9, "direction-averaged metric is symmetric");
            let da = mse_to_db(fwd_sse / fwd_n as f64);
            let db = mse_to_db(bwd_sse / bwd_n as f64);
            assert!((da - db).abs() < 2.5, "seed {seed}: one-directional asymmetry {da} vs {db}");
        }
    }

    #[test]
    fn noise_strictly_degrades_overlap() {
        let rig = panorama_rig(8, 90.0, 32, 32).unwrap();
        let maps = build_panorama_correspondences(&rig, 32, 32).unwrap();
        let scene = make_pano_scene_sized::<f32>(4, 64);
        let crops = unstack(&render_views(&scene, &rig));
        let mut prev = overlap_psnr(&crops, &maps, None).unwrap();
        let mut rng = Rng::new(1);
        for sigma in [0.01, 0.05, 0.1] {
            let noised: Vec<Tensor<f32>> = crops
                .iter()
                .map(|v| {
                    Tensor::from_vec(
                        v.shape(),
                        v.data().iter().map(|x| x + (rng.normal() * sigma) as f32).collect(),
                    )
                })
                .collect();
            let db = overlap_psnr(&noised, &maps, None).unwrap();
            assert!(db < prev, "sigma {sigma}: {db} !< {prev}");
            prev = db;
        }
    }

    #[test]
    fn independent_noise_scores_far_below_gt() {
        let rig = panorama_rig(8, 90.0, 32, 32).unwrap();
        let maps = build_panorama_correspondences(&rig, 32, 32).unwrap();
        let scene = make_pano_scene_sized::<f32>(5, 64);
        let gt = unstack(&render_views(&scene, &rig));
        let mut rng = Rng::new(2);
        let gen: Vec<Tensor<f32>> = (0..8)
            .map(|_| rng.uniform_tensor(&[32, 32, 3], 0.0, 1.0))
            .collect();
        let ratio = consistency_ratio(&gen, &gt, &maps, None).unwrap();
        assert!(ratio < 0.5, "independent noise should score low, got {ratio}");
    }

    #[test]
    fn depth_gate_drops_occluded_pixels() {
        use crate::camera::{intrinsics_from_fov, Pose};
        use crate::correspondence::{build_depth_correspondences, RigKind, ViewRig};
        let k = intrinsics_from_fov(90.0, 32, 32).unwrap();
        let rig = ViewRig {
            kind: RigKind::PosedDepth,
            cameras: vec![
                (k.clone(), Pose::identity()),
                (k, Pose { rotation: Pose::identity().rotation, translation: [-0.5, 0.0, 0.0] }),
            ],
        };
        // a 1 m depth gap occluder on the left half of the target view
        let far = 3.0f32;
        let near = 2.0f32;
        let depth_src = Tensor::<f32>::full(&[32, 32], far);
        let depth_tgt = Tensor::<f32>::from_fn(&[32, 32], |i| if (i % 32) < 16 { near } else { far });
        let maps = build_depth_correspondences(&rig, &[depth_src, depth_tgt]).unwrap();
        let views = vec![Tensor::<f32>::full(&[32, 32, 3], 0.5), Tensor::<f32>::full(&[32, 32, 3], 0.5)];
        let open = overlap_psnr_report(&views, &maps, None).unwrap();
        let gated = overlap_psnr_report(&views, &maps, Some(0.5)).unwrap();
        let open_px: usize = open.pairs.iter().map(|p| p.pixels).sum();
        let gated_px: usize = gated.pairs.iter().map(|p| p.pixels).sum();
        assert!(gated_px < open_px, "gate must drop the occluder footprint: {gated_px} vs {open_px}");
        // the dropped count matches the pixels whose |payload| exceeds the gate
        let expected_drop: usize = maps
            .pairs()
            .iter()
            .filter(|pm| pm.src != pm.dst && (pm.src + 1 == pm.dst || pm.dst + 1 == pm.src))
            .map(|pm| {
                pm.valid
                    .iter()
                    .zip(&pm.payload)
                    .filter(|(v, p)| **v && p.abs() > 0.5)
                    .count()
            })
            .sum();
        assert_eq!(open_px - gated_px, expected_drop);
    }

    #[test]
    fn degenerate_rig_is_an_error() {
        let rig = panorama_rig(2, 90.0, 16, 16).unwrap(); // opposite views, no overlap
        let maps = build_panorama_correspondences(&rig, 16, 16).unwrap();
        let views = vec![Tensor::<f32>::zeros(&[16, 16, 3]), Tensor::<f32>::zeros(&[16, 16, 3])];
        assert!(overlap_psnr(&views, &maps, None).is_err());
    }
}
