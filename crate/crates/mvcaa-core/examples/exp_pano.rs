// Tuning harness for the panorama consistency experiment.
use mvcaa_core::diffusion::{NoiseSchedule, SamplerConfig};
use mvcaa_core::metrics;
use mvcaa_core::pipelines::*;
use mvcaa_core::synthdata::make_pano_scene_sized;
use mvcaa_core::unet::UNetConfig;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let get = |name: &str, default: usize| -> usize {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    };
    let n_train = get("--train-scenes", 64);
    let n_eval = get("--eval-scenes", 8);
    let s1_steps = get("--s1", 400);
    let caa_steps = get("--caa", 300);
    let ddim = get("--ddim", 50);
    let base_ch = get("--base", 16);

    let ucfg = UNetConfig { base_channels: base_ch, prompt_vocab: 16, ..Default::default() };
    let mut caa_cfg = ucfg.clone();
    caa_cfg.caa_enabled = true;
    let sched = NoiseSchedule::default_t1000();
    let task = pano_task::<f32>(8, 64, &caa_cfg).unwrap();

    let train_seeds: Vec<u64> = (0..n_train as u64).collect();
    let eval_seeds: Vec<u64> = (1000..1000 + n_eval as u64).collect();
    let t0 = Instant::now();
    let data = load_pano_data::<f32>(&train_seeds, 128, &task.rig);
    println!("data: {:.1}s", t0.elapsed().as_secs_f64());

    // stage 1
    let t0 = Instant::now();
    let samples = pano_stage1_samples(&data);
    let tcfg1 = TrainConfig { steps: s1_steps, batch: 8, lr: 3e-4, seed: 11, log_every: 100, ..TrainConfig::stage1_defaults() };
    let (base, stats1) = train_stage1(&samples, &ucfg, &tcfg1, &sched, None).unwrap();
    println!(
        "stage1 {} steps in {:.0}s, ema {:.4} -> {:.4}",
        s1_steps,
        t0.elapsed().as_secs_f64(),
        stats1.initial_ema,
        stats1.final_ema
    );

    // quick stage-1 sample sanity: statistics of two unconditioned samples
    {
        let sampler = SamplerConfig { n_steps: 50, eta: 0.0, seed: 5 };
        let (views, _) = generate_panorama(&base, &ucfg, &task, &[0; 8], 5, &sched, &sampler, 128).unwrap();
        let mean = views.data().iter().map(|v| *v as f64).sum::<f64>() / views.numel() as f64;
        let var = views.data().iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / views.numel() as f64;
        let clipped = views.data().iter().filter(|v| **v <= 0.001 || **v >= 0.999).count() as f64 / views.numel() as f64;
        println!("stage1 sample stats: mean {mean:.3} std {:.3} clipped {:.1}%", var.sqrt(), clipped * 100.0);
    }

    // CAA training
    let t0 = Instant::now();
    let tcfg2 = TrainConfig { steps: caa_steps, batch: 1, lr: 2e-4, seed: 12, log_every: 100, ..TrainConfig::added_block_defaults() };
    let (caa_store, stats2) = train_panorama(&base, &task, &data, &ucfg, &tcfg2, &sched, None).unwrap();
    println!(
        "caa {} steps in {:.0}s, ema {:.4} -> {:.4}",
        caa_steps,
        t0.elapsed().as_secs_f64(),
        stats2.initial_ema,
        stats2.final_ema
    );

    // evaluation on held-out scenes
    let t0 = Instant::now();
    let sampler = SamplerConfig { n_steps: ddim, eta: 0.0, seed: 0 };
    let mut gt_db_sum = 0.0;
    let mut gen_caa_sum = 0.0;
    let mut gen_base_sum = 0.0;
    let mut seam_caa_sum = 0.0;
    let mut seam_base_sum = 0.0;
    for (i, &seed) in eval_seeds.iter().enumerate() {
        let scene = make_pano_scene_sized::<f32>(seed, 128);
        let gt = unstack_views(&mvcaa_core::synthdata::render_views(&scene, &task.rig));
        gt_db_sum += metrics::overlap_psnr(&gt, &task.maps, None).unwrap();
        let prompts = vec![scene.label; 8];
        let (views_caa, _) = generate_panorama(&caa_store, &caa_cfg, &task, &prompts, 7000 + i as u64, &sched, &sampler, 128).unwrap();
        let v = unstack_views(&views_caa);
        gen_caa_sum += metrics::overlap_psnr(&v, &task.maps, None).unwrap();
        seam_caa_sum += metrics::seam_closure(&v, &task.maps).unwrap();
        let (views_base, _) = generate_panorama(&caa_store, &ucfg, &task, &prompts, 7000 + i as u64, &sched, &sampler, 128).unwrap();
        let v = unstack_views(&views_base);
        gen_base_sum += metrics::overlap_psnr(&v, &task.maps, None).unwrap();
        seam_base_sum += metrics::seam_closure(&v, &task.maps).unwrap();
    }
    let n = n_eval as f64;
    let (gt_db, caa_db, base_db) = (gt_db_sum / n, gen_caa_sum / n, gen_base_sum / n);
    println!("eval in {:.0}s", t0.elapsed().as_secs_f64());
    println!("gt overlap {gt_db:.2} dB | caa {caa_db:.2} dB (ratio {:.3}) | no-caa {base_db:.2} dB (ratio {:.3})", caa_db / gt_db, base_db / gt_db);
    println!("ratio gap: {:.3} (need >= 0.10)", (caa_db - base_db) / gt_db);
    println!("seam: caa {:.2} dB vs base {:.2} dB (gap {:.2}, need >= 2)", seam_caa_sum / n, seam_base_sum / n, (seam_caa_sum - seam_base_sum) / n);
}
