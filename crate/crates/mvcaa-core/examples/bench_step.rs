use mvcaa_core::diffusion::NoiseSchedule;
use mvcaa_core::pipelines::*;
use mvcaa_core::unet::*;
use std::time::Instant;

fn main() {
    let ucfg = UNetConfig { base_channels: 16, prompt_vocab: 16, ..Default::default() };
    let sched = NoiseSchedule::default_t1000();
    let task = pano_task::<f32>(8, 64, &{ let mut c = ucfg.clone(); c.caa_enabled = true; c }).unwrap();
    let data = load_pano_data::<f32>(&[1, 2, 3, 4, 5, 6, 7, 8], 128, &task.rig);
    let samples = pano_stage1_samples(&data);

    // stage 1: a few steps
    let t0 = Instant::now();
    let steps = 6;
    let tcfg = TrainConfig { steps, batch: 8, lr: 3e-4, seed: 1, log_every: 100, ..TrainConfig::stage1_defaults() };
    let (base, _) = train_stage1(&samples, &ucfg, &tcfg, &sched, None).unwrap();
    println!("stage1 step: {:.3} s (batch 8 @64x64)", t0.elapsed().as_secs_f64() / steps as f64);

    // CAA training steps
    let t0 = Instant::now();
    let steps = 4;
    let tcfg2 = TrainConfig { steps, batch: 1, lr: 2e-4, seed: 2, log_every: 100, ..TrainConfig::added_block_defaults() };
    let (_caa_store, _) = train_panorama(&base, &task, &data, &ucfg, &tcfg2, &sched, None).unwrap();
    println!("caa step: {:.3} s (8 views @64x64)", t0.elapsed().as_secs_f64() / steps as f64);

    // sampling cost
    let mut cfg2 = ucfg.clone();
    cfg2.caa_enabled = true;
    let t0 = Instant::now();
    let sampler = mvcaa_core::diffusion::SamplerConfig { n_steps: 50, eta: 0.0, seed: 3 };
    let (_views, _pano) = generate_panorama(&_caa_store, &cfg2, &task, &[1; 8], 3, &sched, &sampler, 128).unwrap();
    println!("50-step 8-view sample: {:.2} s", t0.elapsed().as_secs_f64());
}
