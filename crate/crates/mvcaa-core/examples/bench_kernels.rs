use mvcaa_core::autodiff::{caa_backward, caa_forward, Tape};
use mvcaa_core::caa::{build_caa_plan, FreqEncodingConfig};
use mvcaa_core::correspondence::*;
use mvcaa_core::rng::Rng;
use mvcaa_core::tensor::Tensor;
use std::time::Instant;

fn main() {
    let rig = panorama_rig(8, 90.0, 64, 64).unwrap();
    let maps = build_panorama_correspondences(&rig, 64, 64).unwrap();
    let plan = build_caa_plan::<f32>(&maps, 3, &FreqEncodingConfig::default()).unwrap();
    println!("plan entries at 64x64: {}", plan.total_entries());
    let mut rng = Rng::new(1);
    let c = 16;
    let x: Tensor<f32> = rng.normal_tensor(&[8, 64, 64, c]);
    let wq: Tensor<f32> = rng.normal_tensor(&[c, c]).scale(0.2);
    let wk: Tensor<f32> = rng.normal_tensor(&[c, c]).scale(0.2);
    let wv: Tensor<f32> = rng.normal_tensor(&[c, c]).scale(0.2);
    let pw: Tensor<f32> = rng.normal_tensor(&[16, c]).scale(0.2);
    let pb: Tensor<f32> = rng.normal_tensor(&[c]).scale(0.1);
    let t0 = Instant::now();
    let iters = 10;
    let mut attn = Vec::new();
    let mut out = Tensor::zeros(&[1]);
    for _ in 0..iters {
        let (o, a) = caa_forward(&x, &wq, &wk, &wv, &pw, &pb, &plan);
        out = o;
        attn = a;
    }
    println!("caa fwd 64x64 c16: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / iters as f64);
    let dout: Tensor<f32> = rng.normal_tensor(&[8, 64, 64, c]);
    let t0 = Instant::now();
    for _ in 0..iters {
        let _ = caa_backward(&x, &wq, &wk, &wv, &pw, &pb, &plan, &attn, &dout);
    }
    println!("caa bwd 64x64 c16: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / iters as f64);
    let _ = out;

    // conv reference: level-0 conv 16->16 on 8 views
    let w: Tensor<f32> = rng.normal_tensor(&[3, 3, c, c]);
    let b: Tensor<f32> = rng.normal_tensor(&[c]);
    let t0 = Instant::now();
    for _ in 0..iters {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let wv2 = t.leaf(w.clone());
        let bv = t.leaf(b.clone());
        let y = t.conv2d(xv, wv2, bv, 1, 1);
        let loss = t.mean_all(y);
        let _g = t.backward(loss);
    }
    println!("conv3x3 fwd+bwd 8x64x64x16: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / iters as f64);
}
