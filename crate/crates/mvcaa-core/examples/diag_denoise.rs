// Denoiser quality probe: z0-hat accuracy per noise level + trajectory stats.
use mvcaa_core::autodiff::Tape;
use mvcaa_core::diffusion::*;
use mvcaa_core::metrics::psnr;
use mvcaa_core::optim::ParamBinding;
use mvcaa_core::pipelines::*;
use mvcaa_core::rng::Rng;
use mvcaa_core::tensor::Tensor;
use mvcaa_core::unet::{ConditionBundle, UNetConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let get = |name: &str, default: usize| -> usize {
        args.iter().position(|a| a == name).and_then(|i| args.get(i + 1)).and_then(|v| v.parse().ok()).unwrap_or(default)
    };
    let s1 = get("--s1", 600);
    let lr_micro = get("--lr-micro", 300) as f64;
    let lr = lr_micro * 1e-6;
    let ucfg = UNetConfig { base_channels: 16, prompt_vocab: 16, ..Default::default() };
    let sched = NoiseSchedule::default_t1000();
    let task = pano_task::<f32>(8, 64, &ucfg).unwrap();
    let data = load_pano_data::<f32>(&(0..64u64).collect::<Vec<_>>(), 128, &task.rig);
    let samples = pano_stage1_samples(&data);
    let tcfg = TrainConfig { steps: s1, batch: 8, lr, seed: 11, log_every: 200, ..TrainConfig::stage1_defaults() };
    let (store, stats) = train_stage1(&samples, &ucfg, &tcfg, &sched, None).unwrap();
    println!("stage1 {} steps lr {lr}, ema {:.4} -> {:.4}", s1, stats.initial_ema, stats.final_ema);

    let model = Model { store: &store, cfg: &ucfg, plans: None };
    for &t in &[100usize, 300, 500, 800, 950] {
        let mut acc = 0.0;
        for i in 0..4 {
            let img = &samples[i * 7].image;
            let z0 = to_latent(img);
            let mut rng = Rng::stream(500, "diag", (t + i) as u64);
            let eps: Tensor<f32> = rng.normal_tensor(z0.shape());
            let z_t = q_sample(&z0, t, &eps, &sched);
            let mut tape = Tape::new();
            let mut binding = ParamBinding::new();
            let zv = tape.leaf(z_t.clone().reshaped(&[1, 64, 64, 3]));
            let cond = ConditionBundle::new(vec![t], vec![samples[i * 7].label]);
            let pred = model.predict(&mut tape, &mut binding, zv, &cond).unwrap();
            let eps_hat = tape.value(pred).clone().reshaped(&[64, 64, 3]);
            let z0_hat = predict_z0(&z_t, &eps_hat, t, &sched);
            let img_hat = from_latent(&z0_hat);
            acc += psnr(&img_hat, img);
        }
        println!("t={t}: z0-hat psnr {:.2} dB", acc / 4.0);
    }

    let sampler = SamplerConfig { n_steps: 50, eta: 0.0, seed: 5 };
    // end-to-end sampling through the stabilized path
    let cond = ConditionBundle::new(vec![0; 8], vec![2; 8]);
    let views = sample(&model, &cond, &[8, 64, 64, 3], &sched, &sampler).unwrap();
    let mean = views.data().iter().map(|v| *v as f64).sum::<f64>() / views.numel() as f64;
    let var = views.data().iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / views.numel() as f64;
    let clipped = views.data().iter().filter(|v| **v <= 0.001 || **v >= 0.999).count() as f64 / views.numel() as f64;
    println!("sample stats: mean {mean:.3} std {:.3} clipped {:.1}%", var.sqrt(), clipped * 100.0);
}
