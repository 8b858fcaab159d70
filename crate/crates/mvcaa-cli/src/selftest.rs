//! Built-in invariant suite: fast spot checks of the geometric round trips,
//! the zero-init contracts, the schedule, and thread determinism.

use crate::args::Args;
use mvcaa_core::caa::{caa_block, CaaBlockParams};
use mvcaa_core::camera::{intrinsics_from_fov, pixel_to_ray, project, ray_to_pixel, unproject, yaw_pose, Pose};
use mvcaa_core::correspondence::{build_panorama_correspondences, panorama_rig};
use mvcaa_core::diffusion::{ddim_step, q_sample, NoiseSchedule};
use mvcaa_core::error::{Error, Result};
use mvcaa_core::rng::Rng;
use mvcaa_core::tensor::Tensor;

struct Suite {
    failures: usize,
    json: bool,
    results: Vec<(String, bool)>,
}

impl Suite {
    fn check(&mut self, name: &str, ok: bool) {
        if !self.json {
            println!("[{}] {name}", if ok { "pass" } else { "FAIL" });
        }
        self.results.push((name.to_string(), ok));
        if !ok {
            self.failures += 1;
        }
    }
}

pub fn run(args: &Args) -> Result<()> {
    let mut suite = Suite { failures: 0, json: args.bool("json"), results: Vec::new() };
    let mut rng = Rng::new(args.u64_or("seed", 0)?);

    // pixel <-> ray round trip
    let k = intrinsics_from_fov(90.0, 64, 64)?;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = rng.uniform_in(0.0, 63.0);
        let y = rng.uniform_in(0.0, 63.0);
        let ((px, py), front) = ray_to_pixel(&k, pixel_to_ray(&k, x, y));
        if !front {
            worst = f64::MAX;
        }
        worst = worst.max((px - x).abs().max((py - y).abs()));
    }
    suite.check("pixel-ray round trip <= 1e-4 px", worst <= 1e-4);

    // unproject <-> project round trip under random poses
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let pose = Pose {
            rotation: yaw_pose(rng.uniform_in(-180.0, 180.0)).rotation,
            translation: [rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)],
        };
        let (x, y, d) = (rng.uniform_in(0.0, 63.0), rng.uniform_in(0.0, 63.0), rng.uniform_in(0.5, 8.0));
        let ((px, py), dp, front) = project(&k, &pose, unproject(&k, &pose, x, y, d));
        if !front {
            worst = f64::MAX;
        }
        worst = worst.max((px - x).abs().max((py - y).abs()).max((dp - d).abs() * 100.0));
    }
    suite.check("unproject-project round trip <= 1e-4", worst <= 1e-4);

    // panorama correspondence symmetry
    let rig = panorama_rig(8, 90.0, 64, 64)?;
    let maps = build_panorama_correspondences(&rig, 64, 64)?;
    let mut worst = 0.0f64;
    let mut hits = 0;
    while hits < 1000 {
        let i = rng.below(8);
        let l = (i + 1) % 8;
        let (x, y) = (rng.below(64), rng.below(64));
        let pm = maps.pair(i, l);
        let s = y * 64 + x;
        if !pm.valid[s] {
            continue;
        }
        let t = pm.coords[s];
        if let Some((bx, by)) = maps.map_point(l, i, t[0] as f64, t[1] as f64) {
            worst = worst.max((bx - x as f64).abs().max((by - y as f64).abs()));
        }
        hits += 1;
    }
    suite.check("panorama symmetry <= 1e-3 px", worst <= 1e-3);

    // zero-init CAA block is the identity
    let params = CaaBlockParams::<f32>::init(8, 16, &mut Rng::new(7));
    let two_view = mvcaa_core::correspondence::ViewRig {
        kind: mvcaa_core::correspondence::RigKind::Panorama,
        cameras: vec![
            (intrinsics_from_fov(90.0, 32, 32)?, yaw_pose(0.0)),
            (intrinsics_from_fov(90.0, 32, 32)?, yaw_pose(45.0)),
        ],
    };
    let two_maps = build_panorama_correspondences(&two_view, 32, 32)?;
    let f0: Tensor<f32> = rng.normal_tensor(&[32, 32, 8]);
    let f1: Tensor<f32> = rng.normal_tensor(&[32, 32, 8]);
    let out = caa_block(&[f0.clone(), f1.clone()], &two_maps, 3, &params)?;
    let drift = out[0]
        .data()
        .iter()
        .zip(f0.data())
        .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
    suite.check("zero-init CAA block is identity", drift <= 1e-6);

    // schedule monotone, q_sample inverted by a perfect DDIM jump
    let sched = NoiseSchedule::default_t1000();
    let monotone = sched.alpha_bar.windows(2).all(|w| w[1] < w[0]);
    suite.check("alpha-bar strictly decreasing", monotone);
    let z0: Tensor<f64> = rng.normal_tensor(&[16]);
    let eps: Tensor<f64> = rng.normal_tensor(&[16]);
    let z_t = q_sample(&z0, 600, &eps, &sched);
    let rec = ddim_step(&z_t, &eps, 600, -1, &sched, 0.0, None)?;
    let err = rec.data().iter().zip(z0.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    suite.check("perfect-noise DDIM jump recovers z0 <= 1e-5", err <= 1e-5);

    // thread-count independence of a conv forward + backward
    let bits = |threads: usize| {
        mvcaa_core::parallel::set_threads(threads);
        let mut rng = Rng::new(99);
        let x: Tensor<f32> = rng.normal_tensor(&[4, 16, 16, 8]);
        let w: Tensor<f32> = rng.normal_tensor(&[3, 3, 8, 8]);
        let b: Tensor<f32> = rng.normal_tensor(&[8]);
        let mut tape = mvcaa_core::autodiff::Tape::new();
        let xv = tape.leaf(x);
        let wv = tape.leaf(w);
        let bv = tape.leaf(b);
        let y = tape.conv2d(xv, wv, bv, 1, 1);
        let loss = tape.mean_all(y);
        let grads = tape.backward(loss);
        let out = (tape.value(y).clone(), grads.get(wv).unwrap().clone());
        mvcaa_core::parallel::set_threads(0);
        out
    };
    let (y1, g1) = bits(1);
    let (y4, g4) = bits(4);
    suite.check("results independent of --threads", y1 == y4 && g1 == g4);

    if suite.json {
        let entries: Vec<serde_json::Value> = suite
            .results
            .iter()
            .map(|(name, ok)| serde_json::json!({"check": name, "pass": ok}))
            .collect();
        println!("{}", serde_json::json!({ "checks": entries, "failures": suite.failures }));
    }
    if suite.failures > 0 {
        return Err(Error::NonFinite(format!("{} selftest checks failed", suite.failures)));
    }
    println!("selftest: all {} checks passed", suite.results.len());
    Ok(())
}
