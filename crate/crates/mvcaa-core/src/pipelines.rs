//! Training recipes and the generation modes composed from them.
//!
//! Stage 1 trains the base UNet on single views. The added-block stages
//! freeze the base and train only the inserted parameters (CAA blocks, plus
//! condition convolutions when image conditioning is on): the panorama stage
//! on 8-crop groups, the depth stage on a 1:1 mix of generation and
//! interpolation groups. Every run is a pure function of (seed, config,
//! dataset seeds).

use crate::correspondence::{build_depth_correspondences, build_panorama_correspondences, panorama_rig, CorrespondenceMaps, ViewRig};
use crate::diffusion::{loss_multiview_graph, sample, Model, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics;
use crate::optim::{Adam, ParamBinding, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::synthdata::{make_depth_scene_sized, make_pano_scene_sized, render_views, DatasetIndex, DepthScene};
use crate::tensor::Tensor;
use crate::unet::{
    build_plan_cache, init_unet_params, insert_caa_params, insert_cond_params, select_trainable, unet_forward,
    ConditionBundle, PlanCache, TrainStage, UNetConfig,
};
use crate::autodiff::Tape;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl TrainConfig {
    /// Paper-faithful defaults: stage 1 fine-tuning lr.
    pub fn stage1_defaults() -> TrainConfig {
        TrainConfig { steps: 2000, batch: 4, lr: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed: 0, log_every: 50 }
    }

    /// Added-block training lr for the panorama and depth stages.
    pub fn added_block_defaults() -> TrainConfig {
        TrainConfig { steps: 2000, batch: 1, lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed: 0, log_every: 50 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainStats {
    pub initial_ema: f64,
    pub final_ema: f64,
    pub log: Vec<LogEntry>,
}

fn write_log<P: AsRef<Path>>(path: P, log: &[LogEntry]) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    for e in log {
        writeln!(f, "{}", serde_json::to_string(e)?)?;
    }
    Ok(())
}

fn ema_track(stats: &mut (f64, f64, usize), loss: f64) {
    // (ema, initial accumulator, count)
    let (ema, init, n) = stats;
    if *n == 0 {
        *ema = loss;
    } else {
        *ema = 0.95 * *ema + 0.05 * loss;
    }
    if *n < 20 {
        *init += loss;
    }
    *n += 1;
}

// --- stage 1 -------------------------------------------------------------------

/// One single-view training sample.
pub struct Stage1Sample<S: Scalar> {
    pub image: Tensor<S>,
    pub label: usize,
    pub depth_m: Option<Tensor<S>>,
}

/// Train the base UNet with per-sample noise levels; no CAA blocks exist.
pub fn train_stage1<S: Scalar>(
    samples: &[Stage1Sample<S>],
    ucfg: &UNetConfig,
    tcfg: &TrainConfig,
    sched: &NoiseSchedule,
    out_dir: Option<&Path>,
) -> Result<(ParamStore<S>, TrainStats)> {
    if samples.is_empty() {
        return Err(Error::Invalid("stage 1 needs a non-empty dataset".into()));
    }
    let mut cfg = ucfg.clone();
    cfg.caa_enabled = false;
    cfg.image_cond_enabled = false;
    cfg.validate()?;
    let mut store = init_unet_params::<S>(&cfg, tcfg.seed)?;
    select_trainable(&mut store, TrainStage::Stage1);
    let mut adam = Adam::new(tcfg.lr, (tcfg.beta1, tcfg.beta2), tcfg.eps);
    let s0 = samples[0].image.shape().to_vec();
    let (h, w) = (s0[0], s0[1]);
    let mut log = Vec::new();
    let mut ema = (0.0, 0.0, 0usize);
    for step in 0..tcfg.steps {
        let mut batch_rng = Rng::stream(tcfg.seed, "stage1-batch", step as u64);
        let mut t_rng = Rng::stream(tcfg.seed, "stage1-t", step as u64);
        let mut eps_rng = Rng::stream(tcfg.seed, "stage1-eps", step as u64);
        let b = tcfg.batch;
        let mut z0 = Tensor::zeros(&[b, h, w, 3]);
        let mut ts = Vec::with_capacity(b);
        let mut prompts = Vec::with_capacity(b);
        let mut depth = cfg.depth_cond_enabled.then(|| Tensor::<S>::zeros(&[b, h, w]));
        for bi in 0..b {
            let idx = batch_rng.below(samples.len());
            let sm = &samples[idx];
            let per = h * w * 3;
            z0.data_mut()[bi * per..(bi + 1) * per].copy_from_slice(sm.image.data());
            ts.push(t_rng.below(sched.len()));
            prompts.push(sm.label);
            if let Some(d) = depth.as_mut() {
                let dm = sm
                    .depth_m
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("depth conditioning enabled but sample has no depth".into()))?;
                d.data_mut()[bi * h * w..(bi + 1) * h * w].copy_from_slice(dm.data());
            }
        }
        let eps: Tensor<S> = eps_rng.normal_tensor(&[b, h, w, 3]);
        let z_t = crate::diffusion::q_sample_views(&crate::diffusion::to_latent(&z0), &ts, &eps, sched);

        let mut tape = Tape::new();
        let mut binding = ParamBinding::new();
        let zv = tape.leaf(z_t);
        let mut cond = ConditionBundle::new(ts, prompts);
        if let Some(d) = depth {
            cond = cond.with_depth_meters(&d);
        }
        let pred = unet_forward(&mut tape, &mut binding, &store, zv, &cond, None, &cfg)?;
        let ev = tape.leaf(eps);
        let diff = tape.sub(ev, pred);
        let sq = tape.square(diff);
        let loss_var = tape.mean_all(sq);
        let loss = tape.value(loss_var).item().to_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("stage 1 loss at step {step}")));
        }
        let mut grads = tape.backward(loss_var);
        store.zero_grads();
        binding.accumulate(&mut grads, &mut store);
        adam.step(&mut store)?;
        ema_track(&mut ema, loss);
        if step % tcfg.log_every == 0 || step + 1 == tcfg.steps {
            log.push(LogEntry { step, loss, lr: tcfg.lr });
        }
    }
    let stats = TrainStats { initial_ema: ema.1 / 20f64.min(ema.2 as f64), final_ema: ema.0, log };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        crate::unet::save_checkpoint(dir.join("ckpt"), &store, &cfg, TrainStage::Stage1.as_str(), tcfg.steps as u64)?;
        write_log(dir.join("train_log.jsonl"), &stats.log)?;
    }
    Ok((store, stats))
}

// --- added-block training --------------------------------------------------------

/// One multi-view training group (a scene's views plus its conditioning).
pub struct MultiviewGroup<S: Scalar> {
    pub z0: Tensor<S>,
    pub prompts: Vec<usize>,
    pub depth_m: Option<Tensor<S>>,
    pub cond_images: Option<Tensor<S>>,
    pub plans: Arc<PlanCache<S>>,
}

/// Freeze the base, insert the added blocks if missing, and train them with
/// the shared-noise-level multi-view loss.
pub fn train_added_blocks<S: Scalar>(
    store: &mut ParamStore<S>,
    ucfg: &UNetConfig,
    tcfg: &TrainConfig,
    stage: TrainStage,
    sched: &NoiseSchedule,
    mut next_group: impl FnMut(usize, &mut Rng) -> Result<MultiviewGroup<S>>,
    out_dir: Option<&Path>,
) -> Result<TrainStats> {
    if stage == TrainStage::Stage1 {
        return Err(Error::Invalid("train_added_blocks trains the inserted parameters, not stage 1".into()));
    }
    ucfg.validate()?;
    if !store.contains("caa.mid.wq") {
        insert_caa_params(store, ucfg, tcfg.seed ^ 0x5eed);
    }
    if ucfg.image_cond_enabled && !store.contains("cond.mid.w") {
        insert_cond_params(store, ucfg);
    }
    select_trainable(store, stage);
    let mut adam = Adam::new(tcfg.lr, (tcfg.beta1, tcfg.beta2), tcfg.eps);
    let mut log = Vec::new();
    let mut ema = (0.0, 0.0, 0usize);
    for step in 0..tcfg.steps {
        let mut group_rng = Rng::stream(tcfg.seed, "mv-group", step as u64);
        let group = next_group(step, &mut group_rng)?;
        let n = group.z0.shape()[0];
        let mut t_rng = Rng::stream(tcfg.seed, "mv-t", step as u64);
        let mut eps_rng = Rng::stream(tcfg.seed, "mv-eps", step as u64);
        let t = t_rng.below(sched.len());
        let eps: Tensor<S> = eps_rng.normal_tensor(group.z0.shape());
        let mut cond = ConditionBundle::new(vec![t; n], group.prompts.clone());
        if let Some(d) = &group.depth_m {
            cond = cond.with_depth_meters(d);
        }
        if let Some(c) = &group.cond_images {
            cond = cond.with_cond_images(c.clone());
        }
        let mut tape = Tape::new();
        let mut binding = ParamBinding::new();
        let model = Model { store, cfg: ucfg, plans: Some(&group.plans) };
        let z0_latent = crate::diffusion::to_latent(&group.z0);
        let loss_var = loss_multiview_graph(&mut tape, &mut binding, &model, &z0_latent, t, &eps, cond, sched)?;
        let loss = tape.value(loss_var).item().to_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("multi-view loss at step {step}")));
        }
        let mut grads = tape.backward(loss_var);
        store.zero_grads();
        binding.accumulate(&mut grads, store);
        adam.step(store)?;
        ema_track(&mut ema, loss);
        if step % tcfg.log_every == 0 || step + 1 == tcfg.steps {
            log.push(LogEntry { step, loss, lr: tcfg.lr });
        }
    }
    let stats = TrainStats { initial_ema: ema.1 / 20f64.min(ema.2 as f64), final_ema: ema.0, log };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        crate::unet::save_checkpoint(dir.join("ckpt"), store, ucfg, stage.as_str(), tcfg.steps as u64)?;
        write_log(dir.join("train_log.jsonl"), &stats.log)?;
    }
    Ok(stats)
}

// --- panorama task ---------------------------------------------------------------

/// Everything fixed about the panorama problem: the rig, its maps at image
/// resolution, and the CAA plan cache.
pub struct PanoTask<S: Scalar> {
    pub rig: ViewRig,
    pub maps: CorrespondenceMaps,
    pub plans: Arc<PlanCache<S>>,
    pub view_size: usize,
}

pub fn pano_task<S: Scalar>(n_views: usize, view_size: usize, ucfg: &UNetConfig) -> Result<PanoTask<S>> {
    let rig = panorama_rig(n_views, 90.0, view_size, view_size)?;
    let maps = build_panorama_correspondences(&rig, view_size, view_size)?;
    let plans = Arc::new(build_plan_cache::<S>(&maps, ucfg, view_size, view_size)?);
    Ok(PanoTask { rig, maps, plans, view_size })
}

/// In-memory panorama training set: per-scene crops and labels.
pub struct PanoData<S: Scalar> {
    pub crops: Vec<Tensor<S>>,
    pub labels: Vec<usize>,
}

pub fn load_pano_data<S: Scalar>(seeds: &[u64], pano_height: usize, rig: &ViewRig) -> PanoData<S> {
    let mut crops = Vec::with_capacity(seeds.len());
    let mut labels = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let scene = make_pano_scene_sized::<S>(seed, pano_height);
        crops.push(render_views(&scene, rig));
        labels.push(scene.label);
    }
    PanoData { crops, labels }
}

pub fn pano_stage1_samples<S: Scalar>(data: &PanoData<S>) -> Vec<Stage1Sample<S>> {
    let mut out = Vec::new();
    for (crop, &label) in data.crops.iter().zip(&data.labels) {
        let s = crop.shape();
        let per = s[1] * s[2] * s[3];
        for v in 0..s[0] {
            out.push(Stage1Sample {
                image: Tensor::from_vec(&s[1..], crop.data()[v * per..(v + 1) * per].to_vec()),
                label,
                depth_m: None,
            });
        }
    }
    out
}

/// Train only the CAA blocks (plus condition convolutions when enabled) on
/// 8-view panorama groups. With image conditioning on, generation groups and
/// single-view-conditioned outpainting groups alternate 1:1.
pub fn train_panorama<S: Scalar>(
    base: &ParamStore<S>,
    task: &PanoTask<S>,
    data: &PanoData<S>,
    ucfg: &UNetConfig,
    tcfg: &TrainConfig,
    sched: &NoiseSchedule,
    out_dir: Option<&Path>,
) -> Result<(ParamStore<S>, TrainStats)> {
    let mut cfg = ucfg.clone();
    cfg.caa_enabled = true;
    let mut store = base.clone();
    let n_views = task.rig.n_views();
    let view_px = task.view_size * task.view_size;
    let stats = train_added_blocks(
        &mut store,
        &cfg,
        tcfg,
        TrainStage::Panorama,
        sched,
        |step, rng| {
            let idx = rng.below(data.crops.len());
            let z0 = data.crops[idx].clone();
            let prompts = vec![data.labels[idx]; n_views];
            let cond_images = cfg.image_cond_enabled.then(|| {
                let mut c = Tensor::<S>::zeros(&[n_views, task.view_size, task.view_size, 4]);
                // alternate: pure generation groups and one-view-conditioned
                // outpainting groups
                if step % 2 == 1 {
                    let cv = rng.below(n_views);
                    let cd = c.data_mut();
                    for p in 0..view_px {
                        for ch in 0..3 {
                            cd[((cv * view_px) + p) * 4 + ch] = z0.data()[(cv * view_px + p) * 3 + ch];
                        }
                        cd[((cv * view_px) + p) * 4 + 3] = S::ONE;
                    }
                }
                c
            });
            Ok(MultiviewGroup {
                z0,
                prompts,
                depth_m: None,
                cond_images,
                plans: task.plans.clone(),
            })
        },
        out_dir,
    )?;
    Ok((store, stats))
}

/// Simultaneous denoising of all panorama views plus the stitched result.
pub fn generate_panorama<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &UNetConfig,
    task: &PanoTask<S>,
    prompt_ids: &[usize],
    seed: u64,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
    pano_height: usize,
) -> Result<(Tensor<S>, crate::camera::Equirect<S>)> {
    let n = task.rig.n_views();
    if prompt_ids.len() != n {
        return Err(Error::Invalid(format!("{} prompts for {n} views", prompt_ids.len())));
    }
    let mut cond = ConditionBundle::new(vec![0; n], prompt_ids.to_vec());
    if cfg.image_cond_enabled {
        cond = cond.with_cond_images(Tensor::zeros(&[n, task.view_size, task.view_size, 4]));
    }
    let model = Model { store, cfg, plans: cfg.caa_enabled.then_some(task.plans.as_ref()) };
    let sampler = SamplerConfig { seed, ..sampler.clone() };
    let views = sample(&model, &cond, &[n, task.view_size, task.view_size, 3], sched, &sampler)?;
    let (pano, _) = stitch_views(&views, &task.rig, pano_height)?;
    Ok((views, pano))
}

/// Extrapolate a full panorama from one perspective image: the condition
/// branch carries the image with a mask of ones, targets a black image with
/// a mask of zeros, and all latents restart from noise.
pub fn outpaint_panorama<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &UNetConfig,
    task: &PanoTask<S>,
    cond_image: &Tensor<S>,
    cond_view: usize,
    prompt_ids: &[usize],
    seed: u64,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
) -> Result<Tensor<S>> {
    if !cfg.image_cond_enabled {
        return Err(Error::Invalid("outpainting needs an image-conditioned checkpoint".into()));
    }
    let n = task.rig.n_views();
    if cond_view >= n {
        return Err(Error::Invalid(format!("condition view {cond_view} out of {n}")));
    }
    let (h, w) = (task.view_size, task.view_size);
    if cond_image.shape() != [h, w, 3] {
        return Err(Error::Invalid(format!("condition image wants [{h},{w},3], got {:?}", cond_image.shape())));
    }
    let mut cond_images = Tensor::<S>::zeros(&[n, h, w, 4]);
    {
        let cd = cond_images.data_mut();
        for p in 0..h * w {
            for ch in 0..3 {
                cd[(cond_view * h * w + p) * 4 + ch] = cond_image.data()[p * 3 + ch];
            }
            cd[(cond_view * h * w + p) * 4 + 3] = S::ONE;
        }
    }
    let cond = ConditionBundle::new(vec![0; n], prompt_ids.to_vec()).with_cond_images(cond_images);
    let model = Model { store, cfg, plans: cfg.caa_enabled.then_some(task.plans.as_ref()) };
    let sampler = SamplerConfig { seed, ..sampler.clone() };
    sample(&model, &cond, &[n, h, w, 3], sched, &sampler)
}

// --- stitching --------------------------------------------------------------------

/// Blend perspective views into an equirectangular panorama with weights
/// proportional to the cosine of the angular distance to each view axis.
/// Returns the panorama and the per-texel coverage mask.
pub fn stitch_views<S: Scalar>(
    views: &Tensor<S>,
    rig: &ViewRig,
    out_height: usize,
) -> Result<(crate::camera::Equirect<S>, Tensor<f32>)> {
    let s = views.shape();
    if s.len() != 4 || s[0] != rig.n_views() {
        return Err(Error::Invalid(format!("views {s:?} do not match the rig")));
    }
    let (h, w) = (s[1], s[2]);
    let out_w = 2 * out_height;
    let mut pano = Tensor::<S>::zeros(&[out_height, out_w, 3]);
    let mut coverage = Tensor::<f32>::zeros(&[out_height, out_w]);
    let axes: Vec<crate::camera::Vec3> = rig.cameras.iter().map(|(_, p)| p.rotate_inv([0.0, 0.0, 1.0])).collect();
    let per = h * w * 3;
    let pd = pano.data_mut();
    let cd = coverage.data_mut();
    for y in 0..out_height {
        let lat = ((y as f64 + 0.5) / out_height as f64 - 0.5) * std::f64::consts::PI;
        for x in 0..out_w {
            let lon = ((x as f64 + 0.5) / out_w as f64 - 0.5) * 2.0 * std::f64::consts::PI;
            let dir = [lat.cos() * lon.sin(), lat.sin(), lat.cos() * lon.cos()];
            let mut acc = [0.0f64; 3];
            let mut total = 0.0f64;
            for (vi, (k, pose)) in rig.cameras.iter().enumerate() {
                let d_cam = pose.rotate(dir);
                let ((px, py), front) = crate::camera::ray_to_pixel(k, d_cam);
                if !front || px < 0.0 || px > (w - 1) as f64 || py < 0.0 || py > (h - 1) as f64 {
                    continue;
                }
                let weight = crate::camera::dot(dir, axes[vi]).max(1e-6);
                let view = &views.data()[vi * per..(vi + 1) * per];
                let sampled = bilinear_rgb(view, h, w, px, py);
                for c in 0..3 {
                    acc[c] += weight * sampled[c];
                }
                total += weight;
            }
            if total > 0.0 {
                let idx = (y * out_w + x) * 3;
                for c in 0..3 {
                    pd[idx + c] = S::from_f64(acc[c] / total);
                }
                cd[y * out_w + x] = 1.0;
            }
        }
    }
    Ok((crate::camera::Equirect::new(pano)?, coverage))
}

fn bilinear_rgb<S: Scalar>(data: &[S], h: usize, w: usize, x: f64, y: f64) -> [f64; 3] {
    let x0 = (x.floor() as i64).clamp(0, w as i64 - 1);
    let y0 = (y.floor() as i64).clamp(0, h as i64 - 1);
    let x1 = (x0 + 1).min(w as i64 - 1);
    let y1 = (y0 + 1).min(h as i64 - 1);
    let fx = (x - x0 as f64).clamp(0.0, 1.0);
    let fy = (y - y0 as f64).clamp(0.0, 1.0);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let at = |yy: i64, xx: i64| data[((yy as usize) * w + xx as usize) * 3 + c].to_f64();
        *o = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
            + at(y0, x1) * fx * (1.0 - fy)
            + at(y1, x0) * (1.0 - fx) * fy
            + at(y1, x1) * fx * fy;
    }
    out
}

/// PSNR of stitch(render(pano)) against the source panorama over covered texels.
pub fn stitch_round_trip_db<S: Scalar>(scene_pano: &crate::camera::Equirect<S>, rig: &ViewRig) -> Result<f64> {
    let scene = crate::synthdata::PanoScene { equirect: scene_pano.clone(), label: 0, seed: 0 };
    let crops = render_views(&scene, rig);
    let (stitched, coverage) = stitch_views(&crops, rig, scene_pano.height())?;
    let mut sse = 0.0;
    let mut count = 0usize;
    let w = scene_pano.width();
    for (i, cov) in coverage.data().iter().enumerate() {
        if *cov < 0.5 {
            continue;
        }
        for c in 0..3 {
            let d = stitched.pixels.data()[i * 3 + c].to_f64() - scene_pano.pixels.data()[i * 3 + c].to_f64();
            sse += d * d;
        }
        count += 3;
    }
    let _ = w;
    if count == 0 {
        return Err(Error::Invalid("stitch covered no texels".into()));
    }
    Ok(metrics::mse_to_db(sse / count as f64))
}

// --- depth task --------------------------------------------------------------------

/// Per-scene assets for the depth-to-image task.
pub struct DepthSceneAssets<S: Scalar> {
    pub scene: DepthScene<S>,
    /// Key-frame group: stacked views, depths in meters, plans.
    pub gen_z0: Tensor<S>,
    pub gen_depth_m: Tensor<S>,
    pub gen_plans: Arc<PlanCache<S>>,
    /// Interpolation group between a fixed key pair.
    pub interp_pair: usize,
    pub interp_z0: Tensor<S>,
    pub interp_depth_m: Tensor<S>,
    pub interp_plans: Arc<PlanCache<S>>,
}

fn stack_frames<S: Scalar>(frames: &[Tensor<S>]) -> Tensor<S> {
    let s = frames[0].shape().to_vec();
    let mut out = Tensor::zeros(&[frames.len(), s[0], s[1], s[2]]);
    let per = s[0] * s[1] * s[2];
    for (i, f) in frames.iter().enumerate() {
        out.data_mut()[i * per..(i + 1) * per].copy_from_slice(f.data());
    }
    out
}

fn stack_depths<S: Scalar>(depths: &[Tensor<f32>]) -> Tensor<S> {
    let s = depths[0].shape().to_vec();
    let mut out = Tensor::zeros(&[depths.len(), s[0], s[1]]);
    let per = s[0] * s[1];
    for (i, d) in depths.iter().enumerate() {
        for (o, v) in out.data_mut()[i * per..(i + 1) * per].iter_mut().zip(d.data()) {
            *o = S::from_f64(*v as f64);
        }
    }
    out
}

pub fn depth_scene_assets<S: Scalar>(
    seed: u64,
    n_frames: usize,
    view_size: usize,
    n_between: usize,
    ucfg: &UNetConfig,
) -> Result<DepthSceneAssets<S>> {
    let scene = make_depth_scene_sized::<S>(seed, n_frames, view_size)?;
    let rig = scene.rig();
    let maps = build_depth_correspondences(&rig, &scene.frames_depth)?;
    let gen_plans = Arc::new(build_plan_cache::<S>(&maps, ucfg, view_size, view_size)?);
    let gen_z0 = stack_frames(&scene.frames_rgb);
    let gen_depth_m = stack_depths::<S>(&scene.frames_depth);
    // one fixed key pair per scene keeps the per-scene plan footprint small
    let interp_pair = (seed as usize) % (n_frames - 1);
    let iset = scene.interpolation_set(interp_pair, n_between, view_size);
    let imaps = build_depth_correspondences(&iset.rig, &iset.depths)?;
    let interp_plans = Arc::new(build_plan_cache::<S>(&imaps, ucfg, view_size, view_size)?);
    let interp_z0 = stack_frames(&iset.rgbs);
    let interp_depth_m = stack_depths::<S>(&iset.depths);
    Ok(DepthSceneAssets {
        scene,
        gen_z0,
        gen_depth_m,
        gen_plans,
        interp_pair,
        interp_z0,
        interp_depth_m,
        interp_plans,
    })
}

pub fn depth_stage1_samples<S: Scalar>(assets: &[DepthSceneAssets<S>]) -> Vec<Stage1Sample<S>> {
    let mut out = Vec::new();
    for a in assets {
        for (rgb, depth) in a.scene.frames_rgb.iter().zip(&a.scene.frames_depth) {
            out.push(Stage1Sample {
                image: rgb.clone(),
                label: a.scene.label,
                depth_m: Some(Tensor::from_vec(
                    depth.shape(),
                    depth.data().iter().map(|&v| S::from_f64(v as f64)).collect(),
                )),
            });
        }
    }
    out
}

/// Stage 2 of the depth task: insert CAA (K=1) and the condition convs, and
/// train them on generation and interpolation groups mixed 1:1.
pub fn train_stage2_depth<S: Scalar>(
    base: &ParamStore<S>,
    assets: &[DepthSceneAssets<S>],
    ucfg: &UNetConfig,
    tcfg: &TrainConfig,
    sched: &NoiseSchedule,
    out_dir: Option<&Path>,
) -> Result<(ParamStore<S>, TrainStats)> {
    let mut cfg = ucfg.clone();
    cfg.caa_enabled = true;
    cfg.image_cond_enabled = true;
    let mut store = base.clone();
    let stats = train_added_blocks(
        &mut store,
        &cfg,
        tcfg,
        TrainStage::Stage2Depth,
        sched,
        |step, rng| {
            let a = &assets[rng.below(assets.len())];
            if step % 2 == 0 {
                // generation group: all branches unconditioned (black + zeros)
                let n = a.gen_z0.shape()[0];
                let (h, w) = (a.gen_z0.shape()[1], a.gen_z0.shape()[2]);
                Ok(MultiviewGroup {
                    z0: a.gen_z0.clone(),
                    prompts: vec![a.scene.label; n],
                    depth_m: Some(a.gen_depth_m.clone()),
                    cond_images: Some(Tensor::zeros(&[n, h, w, 4])),
                    plans: a.gen_plans.clone(),
                })
            } else {
                // interpolation group: first and last frames are conditions
                let n = a.interp_z0.shape()[0];
                let (h, w) = (a.interp_z0.shape()[1], a.interp_z0.shape()[2]);
                let mut cond_images = Tensor::<S>::zeros(&[n, h, w, 4]);
                for &view in &[0, n - 1] {
                    let cd = cond_images.data_mut();
                    for p in 0..h * w {
                        for ch in 0..3 {
                            cd[(view * h * w + p) * 4 + ch] = a.interp_z0.data()[(view * h * w + p) * 3 + ch];
                        }
                        cd[(view * h * w + p) * 4 + 3] = S::ONE;
                    }
                }
                Ok(MultiviewGroup {
                    z0: a.interp_z0.clone(),
                    prompts: vec![a.scene.label; n],
                    depth_m: Some(a.interp_depth_m.clone()),
                    cond_images: Some(cond_images),
                    plans: a.interp_plans.clone(),
                })
            }
        },
        out_dir,
    )?;
    Ok((store, stats))
}

/// Generate the frames between two key images given depths and poses for the
/// in-between cameras. Returns all branches: [key0, between.., key1].
#[allow(clippy::too_many_arguments)]
pub fn densify_keyframes<S: Scalar>(
    store: &ParamStore<S>,
    cfg: &UNetConfig,
    rig: &ViewRig,
    depths_m: &Tensor<S>,
    key_images: (&Tensor<S>, &Tensor<S>),
    label: usize,
    seed: u64,
    sched: &NoiseSchedule,
    sampler: &SamplerConfig,
) -> Result<Tensor<S>> {
    if !cfg.image_cond_enabled || !cfg.depth_cond_enabled {
        return Err(Error::Invalid("densification needs a depth- and image-conditioned checkpoint".into()));
    }
    let n = rig.n_views();
    let s = depths_m.shape();
    if s.len() != 3 || s[0] != n {
        return Err(Error::Invalid(format!("depths want [{n},h,w], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let depths_f32: Vec<Tensor<f32>> = (0..n)
        .map(|i| {
            Tensor::from_vec(
                &[h, w],
                depths_m.data()[i * h * w..(i + 1) * h * w].iter().map(|v| v.to_f64() as f32).collect(),
            )
        })
        .collect();
    let maps = build_depth_correspondences(rig, &depths_f32)?;
    let plans = build_plan_cache::<S>(&maps, cfg, h, w)?;
    let mut cond_images = Tensor::<S>::zeros(&[n, h, w, 4]);
    for (view, img) in [(0usize, key_images.0), (n - 1, key_images.1)] {
        if img.shape() != [h, w, 3] {
            return Err(Error::Invalid(format!("key image wants [{h},{w},3], got {:?}", img.shape())));
        }
        let cd = cond_images.data_mut();
        for p in 0..h * w {
            for ch in 0..3 {
                cd[(view * h * w + p) * 4 + ch] = img.data()[p * 3 + ch];
            }
            cd[(view * h * w + p) * 4 + 3] = S::ONE;
        }
    }
    let cond = ConditionBundle::new(vec![0; n], vec![label; n])
        .with_depth_meters(depths_m)
        .with_cond_images(cond_images);
    let model = Model { store, cfg, plans: cfg.caa_enabled.then_some(&plans) };
    let sampler = SamplerConfig { seed, ..sampler.clone() };
    sample(&model, &cond, &[n, h, w, 3], sched, &sampler)
}

// --- dataset loading ---------------------------------------------------------------

/// Panorama training data regenerated from the seeds recorded in an index.
pub fn pano_data_from_index<S: Scalar>(index: &DatasetIndex, rig: &ViewRig, split_train: bool) -> Result<PanoData<S>> {
    let height = index
        .pano_height
        .ok_or_else(|| Error::Data("index has no pano_height; not a panorama dataset".into()))?;
    let seeds = if split_train { &index.split.train } else { &index.split.heldout };
    Ok(load_pano_data(seeds, height, rig))
}

pub fn unstack_views<S: Scalar>(x: &Tensor<S>) -> Vec<Tensor<S>> {
    let s = x.shape();
    let per = s[1] * s[2] * s[3];
    (0..s[0])
        .map(|i| Tensor::from_vec(&s[1..], x.data()[i * per..(i + 1) * per].to_vec()))
        .collect()
}

/// Write sampled views as PPMs plus an MVT1 float stack.
pub fn write_views<S: Scalar, P: AsRef<Path>>(dir: P, views: &Tensor<S>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    io::write_tensor(dir.join("views.mvt"), views)?;
    for (i, v) in unstack_views(views).iter().enumerate() {
        io::write_ppm(dir.join(format!("view_{i}.ppm")), v)?;
    }
    Ok(())
}

pub fn read_views<S: Scalar, P: AsRef<Path>>(dir: P, n: usize) -> Result<Vec<Tensor<S>>> {
    let dir = dir.as_ref();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(io::read_ppm(dir.join(format!("view_{i}.ppm")))?);
    }
    Ok(out)
}
