//! Subcommand implementations.

use crate::args::Args;
use mvcaa_core::correspondence::{
    build_depth_correspondences, build_panorama_correspondences, panorama_rig, read_rig, write_cache, write_rig,
    RigKind,
};
use mvcaa_core::diffusion::{NoiseSchedule, SamplerConfig};
use mvcaa_core::error::{Error, Result};
use mvcaa_core::io;
use mvcaa_core::metrics;
use mvcaa_core::pipelines::{
    depth_scene_assets, depth_stage1_samples, generate_panorama, load_pano_data, outpaint_panorama,
    pano_stage1_samples, pano_task, read_views, stitch_views, train_panorama, train_stage1, train_stage2_depth,
    write_views, TrainConfig,
};
use mvcaa_core::scalar::Scalar;
use mvcaa_core::synthdata::{read_dataset_index, write_depth_dataset, write_pano_dataset, DatasetIndex};
use mvcaa_core::tensor::Tensor;
use mvcaa_core::unet::{load_checkpoint, UNetConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::{Path, PathBuf};

const USAGE: &str = "mvcaa — correspondence-aware multi-view diffusion at desk scale

usage: mvcaa <command> [flags]

commands:
  rig gen           --views N --hfov DEG --size PX --out rig.json
  corr build        --rig rig.json --res PX --out DIR [--depths DIR]
  data synth        --task pano|depth --scenes N --out DIR [--heldout M]
                    [--seed S] [--frames K] [--size PX] [--pano-height PX]
  train stage1      --data DIR --out DIR [--steps N] [--batch N] [--lr F]
                    [--seed S] [--base-channels N] [--levels N]
  train panorama    --data DIR --base CKPT --out DIR [--steps N] [--lr F]
                    [--seed S] [--image-cond]
  train stage2      --data DIR --base CKPT --out DIR [--steps N] [--lr F]
                    [--seed S] [--between N]
  sample pano       --ckpt CKPT --out DIR [--prompts 0,1,..] [--seed S]
                    [--steps N] [--size PX] [--pano-height PX] [--no-caa]
  sample outpaint   --ckpt CKPT --cond IMG.ppm --out DIR [--cond-view I]
                    [--prompts ..] [--seed S] [--steps N]
  sample densify    --ckpt CKPT --data DIR --scene-seed S --out DIR
                    [--pair K] [--between N] [--seed S] [--steps N] [--no-caa]
  eval consistency  --gen DIR --gt DIR --rig rig.json [--gate M] [--out FILE]
  stitch            --views DIR --rig rig.json --out PANO.ppm [--height PX]
  selftest

global flags: --seed S  --config FILE.json  --threads N  --f64  --json";

#[derive(Deserialize, Default)]
struct FileConfig {
    unet: Option<UNetConfig>,
    train: Option<TrainConfig>,
    sampler: Option<SamplerConfig>,
}

fn file_config(args: &Args) -> Result<FileConfig> {
    match args.flag("config") {
        None => Ok(FileConfig::default()),
        Some(path) => io::read_json(path),
    }
}

pub fn dispatch(argv: &[String]) -> Result<()> {
    let args = Args::parse(argv)?;
    if let Some(t) = args.flag("threads") {
        let n: usize = t.parse().map_err(|_| Error::Invalid(format!("--threads wants an integer, got {t}")))?;
        mvcaa_core::parallel::set_threads(n);
    }
    let words: Vec<&str> = args.words.iter().map(|s| s.as_str()).collect();
    match words.as_slice() {
        ["rig", "gen"] => rig_gen(&args),
        ["corr", "build"] => corr_build(&args),
        ["data", "synth"] => data_synth(&args),
        ["train", "stage1"] => with_scalar(&args, train_stage1_cmd::<f32>, train_stage1_cmd::<f64>),
        ["train", "panorama"] => with_scalar(&args, train_pano_cmd::<f32>, train_pano_cmd::<f64>),
        ["train", "stage2"] => with_scalar(&args, train_stage2_cmd::<f32>, train_stage2_cmd::<f64>),
        ["sample", "pano"] => with_scalar(&args, sample_pano_cmd::<f32>, sample_pano_cmd::<f64>),
        ["sample", "outpaint"] => with_scalar(&args, sample_outpaint_cmd::<f32>, sample_outpaint_cmd::<f64>),
        ["sample", "densify"] => with_scalar(&args, sample_densify_cmd::<f32>, sample_densify_cmd::<f64>),
        ["eval", "consistency"] => eval_consistency(&args),
        ["stitch"] => stitch_cmd(&args),
        ["selftest"] => crate::selftest::run(&args),
        [] => {
            println!("{USAGE}");
            Err(Error::Invalid("no command given".into()))
        }
        other => {
            println!("{USAGE}");
            Err(Error::Invalid(format!("unknown command: {}", other.join(" "))))
        }
    }
}

fn with_scalar(args: &Args, f32_cmd: impl Fn(&Args) -> Result<()>, f64_cmd: impl Fn(&Args) -> Result<()>) -> Result<()> {
    if args.bool("f64") {
        f64_cmd(args)
    } else {
        f32_cmd(args)
    }
}

fn out_dir(args: &Args) -> Result<PathBuf> {
    Ok(PathBuf::from(args.req("out")?))
}

fn write_manifest(dir: &Path, body: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::write_json(dir.join("manifest.json"), &body)
}

// --- rig / correspondences / data -------------------------------------------------

fn rig_gen(args: &Args) -> Result<()> {
    let views = args.usize_or("views", 8)?;
    let hfov = args.f64_or("hfov", 90.0)?;
    let size = args.usize_or("size", 64)?;
    let out = args.req("out")?;
    let rig = panorama_rig(views, hfov, size, size)?;
    write_rig(out, &rig, Some(hfov))?;
    if args.bool("json") {
        println!("{}", json!({"views": views, "hfov_deg": hfov, "size": size, "out": out}));
    } else {
        println!("wrote {views}-view {hfov} degree rig at {size}x{size} to {out}");
    }
    Ok(())
}

fn corr_build(args: &Args) -> Result<()> {
    let rig = read_rig(args.req("rig")?)?;
    let res = args.usize_or("res", rig.cameras[0].0.width)?;
    let out = out_dir(args)?;
    let maps = match rig.kind {
        RigKind::Panorama => build_panorama_correspondences(&rig, res, res)?,
        RigKind::PosedDepth => {
            let depth_dir = args.req("depths")?;
            let mut depths = Vec::new();
            for i in 0..rig.n_views() {
                depths.push(io::read_tensor::<f32, _>(Path::new(depth_dir).join(format!("{i}.mvt")))?);
            }
            build_depth_correspondences(&rig, &depths)?
        }
    };
    write_cache(&out, &maps)?;
    let valid: usize = maps.pairs().iter().map(|p| p.valid.iter().filter(|v| **v).count()).sum();
    if args.bool("json") {
        println!("{}", json!({"pairs": maps.pairs().len(), "resolution": [maps.h, maps.w], "valid_px": valid}));
    } else {
        println!("wrote {} pair maps at {}x{} ({} valid pixels) to {}", maps.pairs().len(), maps.h, maps.w, valid, out.display());
    }
    Ok(())
}

fn data_synth(args: &Args) -> Result<()> {
    let task = args.req("task")?;
    let n: usize = args.usize_or("scenes", 64)?;
    let heldout = args.usize_or("heldout", n / 8)?;
    let seed0 = args.u64_or("seed", 0)?;
    let out = out_dir(args)?;
    let size = args.usize_or("size", 64)?;
    let seeds: Vec<u64> = (0..n as u64).map(|i| seed0 + i).collect();
    let index = match task {
        "pano" => {
            let h = args.usize_or("pano-height", 128)?;
            write_pano_dataset::<f32, _>(&out, &seeds, heldout, h, size)?
        }
        "depth" => {
            let frames = args.usize_or("frames", 4)?;
            write_depth_dataset::<f32, _>(&out, &seeds, heldout, frames, size)?
        }
        other => return Err(Error::Invalid(format!("unknown task {other} (pano|depth)"))),
    };
    if args.bool("json") {
        println!("{}", serde_json::to_string(&json!({"task": index.task, "scenes": n, "heldout": heldout}))?);
    } else {
        println!("wrote {n} {task} scenes ({heldout} held out) to {}", out.display());
    }
    Ok(())
}

// --- training ----------------------------------------------------------------------

fn base_unet_config(args: &Args, file: &FileConfig, task: &str) -> Result<UNetConfig> {
    let mut cfg = file.unet.clone().unwrap_or_default();
    if file.unet.is_none() {
        if task == "depth" {
            cfg.depth_cond_enabled = true;
            cfg.in_channels = 4;
            cfg.caa_k = 1;
            cfg.caa_payload_dim = 1;
        }
    }
    if let Some(b) = args.flag("base-channels") {
        cfg.base_channels = b.parse().map_err(|_| Error::Invalid("--base-channels wants an integer".into()))?;
    }
    if let Some(l) = args.flag("levels") {
        cfg.levels = l.parse().map_err(|_| Error::Invalid("--levels wants an integer".into()))?;
    }
    Ok(cfg)
}

fn train_config(args: &Args, file: &FileConfig, defaults: TrainConfig) -> Result<TrainConfig> {
    let mut t = file.train.clone().unwrap_or(defaults);
    t.steps = args.usize_or("steps", t.steps)?;
    t.batch = args.usize_or("batch", t.batch)?;
    t.lr = args.f64_or("lr", t.lr)?;
    t.seed = args.u64_or("seed", t.seed)?;
    Ok(t)
}

fn load_index(args: &Args) -> Result<(PathBuf, DatasetIndex)> {
    let data = PathBuf::from(args.req("data")?);
    let index = read_dataset_index(&data)?;
    Ok((data, index))
}

fn train_stage1_cmd<S: Scalar>(args: &Args) -> Result<()> {
    let (data_path, index) = load_index(args)?;
    let file = file_config(args)?;
    let ucfg = base_unet_config(args, &file, &index.task)?;
    let tcfg = train_config(args, &file, TrainConfig::stage1_defaults())?;
    let sched = NoiseSchedule::default_t1000();
    let out = out_dir(args)?;
    let samples = match index.task.as_str() {
        "pano" => {
            let rig = panorama_rig(8, 90.0, index.view_size, index.view_size)?;
            let data = load_pano_data::<S>(&index.split.train, index.pano_height.unwrap_or(128), &rig);
            pano_stage1_samples(&data)
        }
        "depth" => {
            let n_frames = index.n_frames.unwrap_or(4);
            let mut assets = Vec::new();
            for &seed in &index.split.train {
                assets.push(depth_scene_assets::<S>(seed, n_frames, index.view_size, 4, &ucfg)?);
            }
            depth_stage1_samples(&assets)
        }
        other => return Err(Error::Data(format!("unknown dataset task {other}"))),
    };
    let (_store, stats) = train_stage1(&samples, &ucfg, &tcfg, &sched, Some(&out))?;
    write_manifest(
        &out,
        json!({"command": "train stage1", "data": data_path, "unet": ucfg, "train": tcfg, "task": index.task}),
    )?;
    println!(
        "stage1 done: {} steps, ema loss {:.4} -> {:.4} (checkpoint in {}/ckpt)",
        tcfg.steps,
        stats.initial_ema,
        stats.final_ema,
        out.display()
    );
    Ok(())
}

fn train_pano_cmd<S: Scalar>(args: &Args) -> Result<()> {
    let (data_path, index) = load_index(args)?;
    let file = file_config(args)?;
    let (base, manifest) = load_checkpoint::<S, _>(Path::new(args.req("base")?).join("ckpt"))?;
    let mut ucfg = file.unet.clone().unwrap_or(manifest.config.clone());
    ucfg.caa_enabled = true;
    ucfg.image_cond_enabled = args.bool("image-cond") || ucfg.image_cond_enabled;
    let tcfg = train_config(args, &file, TrainConfig::added_block_defaults())?;
    let sched = NoiseSchedule::default_t1000();
    let out = out_dir(args)?;
    let task = pano_task::<S>(8, index.view_size, &ucfg)?;
    let data = mvcaa_core::pipelines::pano_data_from_index::<S>(&index, &task.rig, true)?;
    let (_store, stats) = train_panorama(&base, &task, &data, &ucfg, &tcfg, &sched, Some(&out))?;
    write_manifest(
        &out,
        json!({"command": "train panorama", "data": data_path, "base": args.req("base")?, "unet": ucfg, "train": tcfg}),
    )?;
    println!(
        "panorama training done: {} steps, ema loss {:.4} -> {:.4} (checkpoint in {}/ckpt)",
        tcfg.steps,
        stats.initial_ema,
        stats.final_ema,
        out.display()
    );
    Ok(())
}

fn train_stage2_cmd<S: Scalar>(args: &Args) -> Result<()> {
    let (data_path, index) = load_index(args)?;
    if index.task != "depth" {
        return Err(Error::Invalid("train stage2 runs on a depth dataset".into()));
    }
    let file = file_config(args)?;
    let (base, manifest) = load_checkpoint::<S, _>(Path::new(args.req("base")?).join("ckpt"))?;
    let mut ucfg = file.unet.clone().unwrap_or(manifest.config.clone());
    ucfg.caa_enabled = true;
    ucfg.image_cond_enabled = true;
    let tcfg = train_config(args, &file, TrainConfig::added_block_defaults())?;
    let n_between = args.usize_or("between", 4)?;
    let sched = NoiseSchedule::default_t1000();
    let out = out_dir(args)?;
    let n_frames = index.n_frames.unwrap_or(4);
    let mut assets = Vec::new();
    for &seed in &index.split.train {
        assets.push(depth_scene_assets::<S>(seed, n_frames, index.view_size, n_between, &ucfg)?);
    }
    let (_store, stats) = train_stage2_depth(&base, &assets, &ucfg, &tcfg, &sched, Some(&out))?;
    write_manifest(
        &out,
        json!({"command": "train stage2", "data": data_path, "base": args.req("base")?, "unet": ucfg, "train": tcfg, "between": n_between}),
    )?;
    println!(
        "stage2 training done: {} steps, ema loss {:.4} -> {:.4} (checkpoint in {}/ckpt)",
        tcfg.steps,
        stats.initial_ema,
        stats.final_ema,
        out.display()
    );
    Ok(())
}

// --- sampling ----------------------------------------------------------------------

fn sampler_config(args: &Args, file: &FileConfig) -> Result<SamplerConfig> {
    let mut s = file.sampler.clone().unwrap_or_default();
    s.n_steps = args.usize_or("steps", s.n_steps)?;
    s.seed = args.u64_or("seed", s.seed)?;
    s.eta = args.f64_or("eta", s.eta)?;
    Ok(s)
}

fn sample_pano_cmd<S: Scalar>(args: &Args) -> Result<()> {
    let file = file_config(args)?;
    let (store, manifest) = load_checkpoint::<S, _>(Path::new(args.req("ckpt")?).join("ckpt"))?;
    let mut cfg = manifest.config.clone();
    if args.bool("no-caa") {
        cfg.caa_enabled = false;
    }
    let size = args.usize_or("size", 64)?;
    let pano_height = args.usize_or("pano-height", 128)?;
    let task = pano_task::<S>(8, size, &cfg)?;
    let prompts = args.usize_list("prompts")?.unwrap_or_else(|| vec![0; 8]);
    if prompts.len() != 8 {
        return Err(Error::Invalid(format!("need 8 prompt ids, got {}", prompts.len())));
    }
    let seed = args.u64_or("seed", 0)?;
    let sampler = sampler_config(args, &file)?;
    let sched = NoiseSchedule::default_t1000();
    let out = out_dir(args)?;
    let (views, pano) = generate_panorama(&store, &cfg, &task, &prompts, seed, &sched, &sampler, pano_height)?;
    write_views(&out, &views)?;
    io::write_ppm(out.join("stitched.ppm"), &pano.pixels)?;
    let seam = metrics::seam_closure(&mvcaa_core::pipelines::unstack_views(&views), &task.maps)?;
    write_manifest(
        &out,
        json!({"command": "sample pano", "ckpt": args.req("ckpt")?, "prompts": prompts, "seed": seed, "sampler": sampler, "caa": cfg.caa_enabled}),
    )?;
    if args.bool("json") {
        println!("{}", json!({"out": out, "seam_db": seam}));
    } else {
        println!("sampled 8 views (seam closure {seam:.2} dB) into {}", out.display());
    }
    Ok(())
}

fn sample_outpaint_cmd<S: Scalar>(args: &Args) -> Result<()> {
    let file = file_config(args)?;
    let (store, manifest) = load_checkpoint::<S, _>(Path::new(args.req("ckpt")?).join("ckpt"))?;
    let cfg = manifest.config.clone();
    let size = args.usize_or("size", 64)?;
    let task = pano_task::<S>(8, size, &cfg)?;
    let cond: Tensor<S> = io::read_ppm(args.req("cond")?)?;
    let cond_view = args.usize_or("cond-view", 0)?;
    let prompts = args.usize_list("prompts")?.unwrap_or_else(|| vec![0; 8]);
    let seed = args.u64_or("seed", 0)?;
    let sampler = sampler_config(args, &file)?;
    let sched = NoiseSchedule::default_t1000();
    let out = out_dir(args)?;
    let views = outpaint_panorama(&store, &cfg, &task, &cond, cond_view, &prompts, seed, &sched, &sampler)?;
    write_views(&out, &views)?;
    let rec = metrics::psnr(&mvcaa_core::pipelines::unstack_views(&views)[cond_view], &cond);
    write_manifest(
        &out,
        json!({"command": "sample outpaint", "ckpt": args.req("ckpt")?, "cond_view": cond_view, "seed": seed}),
    )?;
    println!("outpainted 8 views (condition reconstruction {rec:.2} dB) into {}", out.display());
    Ok(())
}

fn sample_densify_cmd<S: Scalar>(args: &Args) -> Result<()> {
    let file = file_config(args)?;
    let (store, manifest) = load_checkpoint::<S, _>(Path::new(args.req("ckpt")?).join("ckpt"))?;
    let mut cfg = manifest.config.clone();
    if args.bool("no-caa") {
        cfg.caa_enabled = false;
    }
    let (_data_path, index) = load_index(args)?;
    let scene_seed = args.u64_or("scene-seed", index.split.heldout.first().copied().unwrap_or(0))?;
    let n_frames = index.n_frames.unwrap_or(4);
    let n_between = args.usize_or("between", 4)?;
    let pair = args.usize_or("pair", 0)?;
    if pair + 1 >= n_frames {
        return Err(Error::Invalid(format!("pair {pair} out of range for {n_frames} key frames")));
    }
    let scene = mvcaa_core::synthdata::make_depth_scene_sized::<S>(scene_seed, n_frames, index.view_size)?;
    let iset = scene.interpolation_set(pair, n_between, index.view_size);
    let n = iset.rig.n_views();
    let (h, w) = (index.view_size, index.view_size);
    let mut depths_m = Tensor::<S>::zeros(&[n, h, w]);
    for (i, d) in iset.depths.iter().enumerate() {
        for (o, v) in depths_m.data_mut()[i * h * w..(i + 1) * h * w].iter_mut().zip(d.data()) {
            *o = S::from_f64(*v as f64);
        }
    }
    let seed = args.u64_or("seed", 0)?;
    let sampler = sampler_config(args, &file)?;
    let sched = NoiseSchedule::default_t1000();
    let out = out_dir(args)?;
    let views = mvcaa_core::pipelines::densify_keyframes(
        &store,
        &cfg,
        &iset.rig,
        &depths_m,
        (&iset.rgbs[0], iset.rgbs.last().unwrap()),
        scene.label,
        seed,
        &sched,
        &sampler,
    )?;
    write_views(&out, &views)?;
    write_manifest(
        &out,
        json!({"command": "sample densify", "ckpt": args.req("ckpt")?, "scene_seed": scene_seed, "pair": pair, "between": n_between, "seed": seed}),
    )?;
    println!("densified key pair {pair} of scene {scene_seed} into {}", out.display());
    Ok(())
}

// --- evaluation / stitching ----------------------------------------------------------

#[derive(Serialize)]
struct EvalOutput {
    overlap_psnr_gen: f64,
    overlap_psnr_gt: f64,
    ratio: f64,
    seam_db: f64,
    pairs: Vec<metrics::PairReport>,
}

fn eval_consistency(args: &Args) -> Result<()> {
    let rig = read_rig(args.req("rig")?)?;
    let n = rig.n_views();
    let gen: Vec<Tensor<f32>> = read_views(args.req("gen")?, n)?;
    let gt: Vec<Tensor<f32>> = read_views(args.req("gt")?, n)?;
    let (h, w) = (gen[0].shape()[0], gen[0].shape()[1]);
    let maps = match rig.kind {
        RigKind::Panorama => build_panorama_correspondences(&rig, h, w)?,
        RigKind::PosedDepth => {
            let depth_dir = args.req("depths")?;
            let mut depths = Vec::new();
            for i in 0..n {
                depths.push(io::read_tensor::<f32, _>(Path::new(depth_dir).join(format!("{i}.mvt")))?);
            }
            build_depth_correspondences(&rig, &depths)?
        }
    };
    let gate = args.flag("gate").map(|g| g.parse::<f64>()).transpose().map_err(|_| Error::Invalid("--gate wants a number".into()))?;
    let gen_report = metrics::overlap_psnr_report(&gen, &maps, gate)?;
    let gt_report = metrics::overlap_psnr_report(&gt, &maps, gate)?;
    let seam = metrics::seam_closure(&gen, &maps)?;
    let outp = EvalOutput {
        overlap_psnr_gen: gen_report.db,
        overlap_psnr_gt: gt_report.db,
        ratio: gen_report.db / gt_report.db,
        seam_db: seam,
        pairs: gen_report.pairs,
    };
    let text = serde_json::to_string_pretty(&outp)?;
    if let Some(path) = args.flag("out") {
        std::fs::write(path, text.as_bytes())?;
    }
    if args.bool("json") {
        println!("{}", serde_json::to_string(&outp)?);
    } else {
        println!(
            "overlap PSNR gen {:.2} dB / gt {:.2} dB  ratio {:.3}  seam {:.2} dB",
            outp.overlap_psnr_gen, outp.overlap_psnr_gt, outp.ratio, outp.seam_db
        );
    }
    Ok(())
}

fn stitch_cmd(args: &Args) -> Result<()> {
    let rig = read_rig(args.req("rig")?)?;
    let views: Vec<Tensor<f32>> = read_views(args.req("views")?, rig.n_views())?;
    let height = args.usize_or("height", 128)?;
    let s = views[0].shape().to_vec();
    let mut stacked = Tensor::<f32>::zeros(&[views.len(), s[0], s[1], 3]);
    let per = s[0] * s[1] * 3;
    for (i, v) in views.iter().enumerate() {
        stacked.data_mut()[i * per..(i + 1) * per].copy_from_slice(v.data());
    }
    let (pano, _) = stitch_views(&stacked, &rig, height)?;
    io::write_ppm(args.req("out")?, &pano.pixels)?;
    println!("stitched {} views into {}", views.len(), args.req("out")?);
    Ok(())
}
