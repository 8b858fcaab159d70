//! Browser playground for the geometry side of correspondence-aware
//! multi-view diffusion: synthetic panorama scenes rendered through the
//! eight-view rig, cross-view correspondence neighborhoods, and the
//! overlap-PSNR consistency metric under controlled degradation.
//!
//! Everything here is pure CPU math from the core crate; the page feeds
//! pixel buffers straight into canvases.

use mvcaa_core::caa::bilinear_sample;
use mvcaa_core::correspondence::{build_panorama_correspondences, neighborhood, panorama_rig, CorrespondenceMaps, ViewRig};
use mvcaa_core::metrics::{overlap_psnr, seam_closure};
use mvcaa_core::pipelines::{stitch_views, unstack_views};
use mvcaa_core::rng::Rng;
use mvcaa_core::synthdata::{make_pano_scene_sized, render_views};
use mvcaa_core::tensor::Tensor;
use wasm_bindgen::prelude::wasm_bindgen;

fn rgba_bytes(img: &Tensor<f32>) -> Vec<u8> {
    let s = img.shape();
    let (h, w) = (s[0], s[1]);
    let mut out = Vec::with_capacity(h * w * 4);
    for px in img.data().chunks_exact(3) {
        for c in px {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

fn mark_square(buf: &mut [u8], w: usize, h: usize, x: f32, y: f32, half: i64, color: [u8; 3]) {
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    for dy in -half..=half {
        for dx in -half..=half {
            // hollow square outline
            if dx.abs() != half && dy.abs() != half {
                continue;
            }
            let (px, py) = (cx + dx, cy + dy);
            if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                continue;
            }
            let idx = (py as usize * w + px as usize) * 4;
            buf[idx] = color[0];
            buf[idx + 1] = color[1];
            buf[idx + 2] = color[2];
        }
    }
}

/// A synthetic panorama scene with its eight-view rig: the source
/// equirectangular image, the rendered perspective crops, the stitched
/// reconstruction, and the consistency numbers for the ground truth.
#[wasm_bindgen]
pub struct PanoExplorer {
    pano: Tensor<f32>,
    crops: Tensor<f32>,
    stitched: Tensor<f32>,
    coverage: Tensor<f32>,
    views: Vec<Tensor<f32>>,
    maps: CorrespondenceMaps,
    label: usize,
}

#[wasm_bindgen]
impl PanoExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, view_size: usize) -> PanoExplorer {
        let view_size = view_size.clamp(16, 128);
        let scene = make_pano_scene_sized::<f32>(seed, 128);
        let rig = panorama_rig(8, 90.0, view_size, view_size).expect("canonical rig");
        let crops = render_views(&scene, &rig);
        let (stitched, coverage) = stitch_views(&crops, &rig, 128).expect("stitch");
        let maps = build_panorama_correspondences(&rig, view_size, view_size).expect("maps");
        let views = unstack_views(&crops);
        PanoExplorer {
            pano: scene.equirect.pixels,
            crops,
            stitched: stitched.pixels,
            coverage,
            views,
            maps,
            label: scene.label,
        }
    }

    pub fn pano_rgba(&self) -> Vec<u8> {
        rgba_bytes(&self.pano)
    }

    pub fn pano_width(&self) -> usize {
        self.pano.shape()[1]
    }

    pub fn pano_height(&self) -> usize {
        self.pano.shape()[0]
    }

    pub fn stitched_rgba(&self) -> Vec<u8> {
        rgba_bytes(&self.stitched)
    }

    pub fn view_size(&self) -> usize {
        self.crops.shape()[1]
    }

    pub fn crop_rgba(&self, view: usize) -> Vec<u8> {
        rgba_bytes(&self.views[view % 8])
    }

    pub fn metrics_json(&self) -> String {
        let overlap = overlap_psnr(&self.views, &self.maps, None).unwrap_or(f64::NAN);
        let seam = seam_closure(&self.views, &self.maps).unwrap_or(f64::NAN);
        // round trip over covered texels only; poles fall outside every view
        let mut sse = 0.0;
        let mut count = 0usize;
        for (i, cov) in self.coverage.data().iter().enumerate() {
            if *cov < 0.5 {
                continue;
            }
            for c in 0..3 {
                let d = (self.stitched.data()[i * 3 + c] - self.pano.data()[i * 3 + c]) as f64;
                sse += d * d;
            }
            count += 3;
        }
        let stitch_db = mvcaa_core::metrics::mse_to_db(sse / count.max(1) as f64);
        serde_json::json!({
            "label": self.label,
            "overlap_psnr_db": overlap,
            "seam_closure_db": seam,
            "stitch_round_trip_db": stitch_db,
        })
        .to_string()
    }
}

/// Cross-view correspondence explorer: pick a pixel in one view and see its
/// K x K attention neighborhood in the adjacent view, with the back-mapped
/// displacements that feed the position encoding.
#[wasm_bindgen]
pub struct CorrExplorer {
    rig: ViewRig,
    maps: CorrespondenceMaps,
    views: Vec<Tensor<f32>>,
    size: usize,
}

#[wasm_bindgen]
impl CorrExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, view_size: usize) -> CorrExplorer {
        let size = view_size.clamp(16, 128);
        let scene = make_pano_scene_sized::<f32>(seed, 128);
        let rig = panorama_rig(8, 90.0, size, size).expect("canonical rig");
        let crops = render_views(&scene, &rig);
        let maps = build_panorama_correspondences(&rig, size, size).expect("maps");
        CorrExplorer { rig, maps, views: unstack_views(&crops), size }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_views(&self) -> usize {
        self.rig.n_views()
    }

    /// Source view with the picked pixel marked.
    pub fn source_rgba(&self, view: usize, sx: usize, sy: usize) -> Vec<u8> {
        let v = view % 8;
        let mut buf = rgba_bytes(&self.views[v]);
        mark_square(&mut buf, self.size, self.size, sx as f32, sy as f32, 2, [255, 32, 32]);
        buf
    }

    /// Adjacent target view with the correspondence neighborhood marked.
    pub fn target_rgba(&self, view: usize, sx: usize, sy: usize, k: usize) -> Vec<u8> {
        let v = view % 8;
        let dst = (v + 1) % 8;
        let mut buf = rgba_bytes(&self.views[dst]);
        if let Ok(ns) = neighborhood(&self.maps, sx.min(self.size - 1), sy.min(self.size - 1), v, dst, k | 1) {
            for e in &ns.entries {
                if e.valid {
                    mark_square(&mut buf, self.size, self.size, e.t[0], e.t[1], 1, [64, 255, 64]);
                }
            }
        }
        buf
    }

    /// Neighborhood details: target coordinates, validity, displacements.
    pub fn info_json(&self, view: usize, sx: usize, sy: usize, k: usize) -> String {
        let v = view % 8;
        let dst = (v + 1) % 8;
        let sx = sx.min(self.size - 1);
        let sy = sy.min(self.size - 1);
        let pm = self.maps.pair(v, dst);
        let s = sy * self.size + sx;
        let entries = match neighborhood(&self.maps, sx, sy, v, dst, k | 1) {
            Ok(ns) => ns
                .entries
                .iter()
                .map(|e| {
                    serde_json::json!({
                        "t": [e.t[0], e.t[1]],
                        "valid": e.valid,
                        "displacement": e.payload,
                    })
                })
                .collect(),
            Err(_) => Vec::new(),
        };
        serde_json::json!({
            "source_view": v,
            "target_view": dst,
            "valid": pm.valid[s],
            "target": [pm.coords[s][0], pm.coords[s][1]],
            "entries": entries,
        })
        .to_string()
    }
}

/// Overlap-PSNR consistency of ground-truth views under growing independent
/// per-view noise: how the paper's metric responds as views disagree.
#[wasm_bindgen]
pub fn consistency_curve_json(seed: u64, view_size: usize, max_sigma: f64, steps: usize) -> String {
    let size = view_size.clamp(16, 96);
    let scene = make_pano_scene_sized::<f32>(seed, 128);
    let rig = panorama_rig(8, 90.0, size, size).expect("canonical rig");
    let crops = render_views(&scene, &rig);
    let maps = build_panorama_correspondences(&rig, size, size).expect("maps");
    let gt = unstack_views(&crops);
    let gt_db = overlap_psnr(&gt, &maps, None).unwrap_or(f64::NAN);
    let steps = steps.clamp(2, 32);
    let mut points = Vec::new();
    for i in 0..steps {
        let sigma = max_sigma * i as f64 / (steps - 1) as f64;
        let mut rng = Rng::stream(seed, "demo-noise", i as u64);
        let noised: Vec<Tensor<f32>> = gt
            .iter()
            .map(|v| {
                Tensor::from_vec(
                    v.shape(),
                    v.data().iter().map(|x| (*x as f64 + rng.normal() * sigma).clamp(0.0, 1.0) as f32).collect(),
                )
            })
            .collect();
        let db = overlap_psnr(&noised, &maps, None).unwrap_or(f64::NAN);
        points.push(serde_json::json!({"sigma": sigma, "overlap_db": db, "ratio": db / gt_db}));
    }
    serde_json::json!({"gt_db": gt_db, "points": points}).to_string()
}

/// Warp an adjacent view onto a chosen view through the correspondences:
/// the absolute error image visualizes what the overlap metric measures.
#[wasm_bindgen]
pub fn warp_error_rgba(seed: u64, view_size: usize, view: usize) -> Vec<u8> {
    let size = view_size.clamp(16, 128);
    let scene = make_pano_scene_sized::<f32>(seed, 128);
    let rig = panorama_rig(8, 90.0, size, size).expect("canonical rig");
    let crops = render_views(&scene, &rig);
    let maps = build_panorama_correspondences(&rig, size, size).expect("maps");
    let views = unstack_views(&crops);
    let v = view % 8;
    let dst = (v + 1) % 8;
    let pm = maps.pair(v, dst);
    let mut out = vec![0u8; size * size * 4];
    for s in 0..size * size {
        let idx = s * 4;
        out[idx + 3] = 255;
        if !pm.valid[s] {
            // dimmed source where no correspondence exists
            for c in 0..3 {
                out[idx + c] = (views[v].data()[s * 3 + c] * 60.0) as u8;
            }
            continue;
        }
        let t = pm.coords[s];
        let warped = bilinear_sample(&views[dst], t[0], t[1]);
        let mut err = 0.0f32;
        for c in 0..3 {
            err += (views[v].data()[s * 3 + c] - warped[c]).abs();
        }
        let heat = (err * 4.0 * 255.0).min(255.0) as u8;
        out[idx] = heat;
        out[idx + 1] = 24;
        out[idx + 2] = 255 - heat;
    }
    out
}
