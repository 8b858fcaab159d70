//! Weight-sharing multi-branch denoising UNet with CAA insertion points.
//!
//! One parameter set is evaluated on N views held in the leading tensor
//! dimension; without CAA the branches never interact. With CAA enabled, a
//! correspondence-aware attention block follows each ResNet block (down
//! levels, bottleneck, up levels). Conditioning: sinusoidal timestep
//! embedding through a 2-layer MLP added per block; a learned per-view label
//! embedding injected by single-token cross-attention at the bottleneck; an
//! optional depth input channel (1/(1+d)); and an optional per-block
//! RGB+mask condition image injected by zero-initialized strided
//! convolutions on the down path and bottleneck.

use crate::autodiff::{Tape, Var};
use crate::caa::{build_caa_plan, caa_block_tape, fan_in_uniform, CaaBlockParams, CaaPlan, CaaVars, FreqEncodingConfig};
use crate::correspondence::{scale_to_feature_res, CorrespondenceMaps};
use crate::error::{Error, Result};
use crate::io;
use crate::optim::{ParamBinding, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub time_embed_dim: usize,
    pub prompt_vocab: usize,
    pub prompt_embed_dim: usize,
    pub caa_enabled: bool,
    pub caa_k: usize,
    pub caa_n_freqs: usize,
    /// 2 for panorama displacements, 1 for depth errors.
    pub caa_payload_dim: usize,
    pub image_cond_enabled: bool,
    pub depth_cond_enabled: bool,
    pub norm_groups: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 3,
            base_channels: 32,
            levels: 3,
            time_embed_dim: 64,
            prompt_vocab: 64,
            prompt_embed_dim: 64,
            caa_enabled: false,
            caa_k: 3,
            caa_n_freqs: 4,
            caa_payload_dim: 2,
            image_cond_enabled: false,
            depth_cond_enabled: false,
            norm_groups: 8,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::Invalid("unet needs at least 2 levels".into()));
        }
        if self.base_channels % self.norm_groups != 0 {
            return Err(Error::Invalid(format!(
                "base_channels {} must divide into {} norm groups",
                self.base_channels, self.norm_groups
            )));
        }
        if self.caa_k % 2 == 0 {
            return Err(Error::Invalid(format!("caa_k must be odd, got {}", self.caa_k)));
        }
        let want_in = 3 + usize::from(self.depth_cond_enabled);
        if self.in_channels != want_in {
            return Err(Error::Invalid(format!(
                "in_channels {} inconsistent with depth_cond_enabled={} (want {want_in})",
                self.in_channels, self.depth_cond_enabled
            )));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::Invalid("time_embed_dim must be even".into()));
        }
        Ok(())
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn enc_dim(&self) -> usize {
        FreqEncodingConfig { n_freqs: self.caa_n_freqs }.enc_dim(self.caa_payload_dim)
    }

    /// CAA insertion sites as (name, level) with level = resolution divisor
    /// exponent: down blocks, bottleneck, then up blocks.
    pub fn caa_sites(&self) -> Vec<(String, usize)> {
        let mut sites = Vec::new();
        for i in 0..self.levels - 1 {
            sites.push((format!("down{i}"), i));
        }
        sites.push(("mid".to_string(), self.levels - 1));
        for i in (0..self.levels - 1).rev() {
            sites.push((format!("up{i}"), i));
        }
        sites
    }
}

/// Everything the denoiser is conditioned on, per view.
#[derive(Clone)]
pub struct ConditionBundle<S: Scalar> {
    /// Timestep per view (one shared value during multi-view training).
    pub t: Vec<usize>,
    pub prompt_ids: Vec<usize>,
    /// Normalized depth channel 1/(1+d), shape [n,h,w,1].
    pub depth: Option<Tensor<S>>,
    /// RGB + mask condition input, shape [n,h,w,4], mask in {0,1}.
    pub cond_images: Option<Tensor<S>>,
}

impl<S: Scalar> ConditionBundle<S> {
    pub fn new(t: Vec<usize>, prompt_ids: Vec<usize>) -> Self {
        ConditionBundle { t, prompt_ids, depth: None, cond_images: None }
    }

    /// Attach per-view depth maps in meters, shape [n,h,w].
    pub fn with_depth_meters(mut self, depth_m: &Tensor<S>) -> Self {
        let s = depth_m.shape();
        assert_eq!(s.len(), 3, "depth wants [n,h,w]");
        let data = depth_m.data().iter().map(|&d| S::ONE / (S::ONE + d)).collect();
        self.depth = Some(Tensor::from_vec(&[s[0], s[1], s[2], 1], data));
        self
    }

    pub fn with_cond_images(mut self, cond: Tensor<S>) -> Self {
        assert_eq!(cond.shape().len(), 4);
        assert_eq!(cond.shape()[3], 4, "condition input is RGB + mask");
        self.cond_images = Some(cond);
        self
    }

    pub fn validate(&self, cfg: &UNetConfig, n: usize, h: usize, w: usize) -> Result<()> {
        if self.t.len() != n || self.prompt_ids.len() != n {
            return Err(Error::Invalid(format!(
                "condition arity mismatch: {} timesteps, {} prompts, {n} views",
                self.t.len(),
                self.prompt_ids.len()
            )));
        }
        if let Some(id) = self.prompt_ids.iter().find(|&&id| id >= cfg.prompt_vocab) {
            return Err(Error::Invalid(format!("prompt id {id} outside vocab {}", cfg.prompt_vocab)));
        }
        match (&self.depth, cfg.depth_cond_enabled) {
            (Some(d), true) => {
                if d.shape() != [n, h, w, 1] {
                    return Err(Error::Invalid(format!("depth shape {:?}", d.shape())));
                }
            }
            (None, false) => {}
            (Some(_), false) => return Err(Error::Invalid("depth supplied but depth conditioning disabled".into())),
            (None, true) => return Err(Error::Invalid("depth conditioning enabled but no depth supplied".into())),
        }
        match (&self.cond_images, cfg.image_cond_enabled) {
            (Some(c), true) => {
                if c.shape() != [n, h, w, 4] {
                    return Err(Error::Invalid(format!("condition image shape {:?}", c.shape())));
                }
                let ok = c
                    .data()
                    .chunks_exact(4)
                    .all(|px| px[3] == S::ZERO || px[3] == S::ONE);
                if !ok {
                    return Err(Error::Invalid("condition mask channel must be 0 or 1".into()));
                }
            }
            (None, false) => {}
            (Some(_), false) => return Err(Error::Invalid("condition images supplied but image conditioning disabled".into())),
            (None, true) => return Err(Error::Invalid("image conditioning enabled but no condition images supplied".into())),
        }
        Ok(())
    }
}

// --- parameter construction ---------------------------------------------------

fn init_stream(seed: u64, name: &str) -> Rng {
    Rng::stream(seed, name, 0)
}

fn conv_weight<S: Scalar>(seed: u64, name: &str, k: usize, cin: usize, cout: usize) -> Tensor<S> {
    fan_in_uniform(&mut init_stream(seed, name), &[k, k, cin, cout], k * k * cin)
}

fn lin_weight<S: Scalar>(seed: u64, name: &str, din: usize, dout: usize) -> Tensor<S> {
    fan_in_uniform(&mut init_stream(seed, name), &[din, dout], din)
}

fn insert_res_block<S: Scalar>(store: &mut ParamStore<S>, seed: u64, prefix: &str, cin: usize, cout: usize, time_dim: usize) {
    store.insert(&format!("{prefix}.norm1.g"), Tensor::full(&[cin], S::ONE), true);
    store.insert(&format!("{prefix}.norm1.b"), Tensor::zeros(&[cin]), true);
    let w1 = format!("{prefix}.conv1.w");
    store.insert(&w1, conv_weight(seed, &w1, 3, cin, cout), true);
    store.insert(&format!("{prefix}.conv1.b"), Tensor::zeros(&[cout]), true);
    let tw = format!("{prefix}.time.w");
    store.insert(&tw, lin_weight(seed, &tw, time_dim, cout), true);
    store.insert(&format!("{prefix}.time.b"), Tensor::zeros(&[cout]), true);
    store.insert(&format!("{prefix}.norm2.g"), Tensor::full(&[cout], S::ONE), true);
    store.insert(&format!("{prefix}.norm2.b"), Tensor::zeros(&[cout]), true);
    let w2 = format!("{prefix}.conv2.w");
    store.insert(&w2, conv_weight(seed, &w2, 3, cout, cout), true);
    store.insert(&format!("{prefix}.conv2.b"), Tensor::zeros(&[cout]), true);
    if cin != cout {
        let sw = format!("{prefix}.skip.w");
        store.insert(&sw, conv_weight(seed, &sw, 1, cin, cout), true);
        store.insert(&format!("{prefix}.skip.b"), Tensor::zeros(&[cout]), true);
    }
}

/// Base UNet parameters (stage 1): no CAA, no condition convolutions.
pub fn init_unet_params<S: Scalar>(cfg: &UNetConfig, seed: u64) -> Result<ParamStore<S>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let c0 = cfg.base_channels;
    let td = cfg.time_embed_dim;
    store.insert("unet.in_conv.w", conv_weight(seed, "unet.in_conv.w", 3, cfg.in_channels, c0), true);
    store.insert("unet.in_conv.b", Tensor::zeros(&[c0]), true);
    store.insert("unet.time_mlp.l1.w", lin_weight(seed, "unet.time_mlp.l1.w", td, td), true);
    store.insert("unet.time_mlp.l1.b", Tensor::zeros(&[td]), true);
    store.insert("unet.time_mlp.l2.w", lin_weight(seed, "unet.time_mlp.l2.w", td, td), true);
    store.insert("unet.time_mlp.l2.b", Tensor::zeros(&[td]), true);
    store.insert(
        "unet.prompt.table",
        lin_weight(seed, "unet.prompt.table", cfg.prompt_vocab, cfg.prompt_embed_dim),
        true,
    );
    for i in 0..cfg.levels - 1 {
        let c = cfg.channels_at(i);
        insert_res_block(&mut store, seed, &format!("unet.down{i}.res"), c, c, td);
        let dw = format!("unet.down{i}.down.w");
        store.insert(&dw, conv_weight(seed, &dw, 3, c, cfg.channels_at(i + 1)), true);
        store.insert(&format!("unet.down{i}.down.b"), Tensor::zeros(&[cfg.channels_at(i + 1)]), true);
    }
    let cm = cfg.channels_at(cfg.levels - 1);
    insert_res_block(&mut store, seed, "unet.mid.res1", cm, cm, td);
    store.insert("unet.mid.attn.norm.g", Tensor::full(&[cm], S::ONE), true);
    store.insert("unet.mid.attn.norm.b", Tensor::zeros(&[cm]), true);
    for p in ["wq", "wk", "wv", "wo"] {
        let name = format!("unet.mid.attn.{p}");
        store.insert(&name, lin_weight(seed, &name, cm, cm), true);
    }
    store.insert("unet.mid.prompt.wv.w", lin_weight(seed, "unet.mid.prompt.wv.w", cfg.prompt_embed_dim, cm), true);
    store.insert("unet.mid.prompt.wv.b", Tensor::zeros(&[cm]), true);
    store.insert("unet.mid.prompt.wo.w", lin_weight(seed, "unet.mid.prompt.wo.w", cm, cm), true);
    store.insert("unet.mid.prompt.wo.b", Tensor::zeros(&[cm]), true);
    insert_res_block(&mut store, seed, "unet.mid.res2", cm, cm, td);
    for i in (0..cfg.levels - 1).rev() {
        let c = cfg.channels_at(i);
        let up = format!("unet.up{i}.up.w");
        store.insert(&up, conv_weight(seed, &up, 3, cfg.channels_at(i + 1), c), true);
        store.insert(&format!("unet.up{i}.up.b"), Tensor::zeros(&[c]), true);
        insert_res_block(&mut store, seed, &format!("unet.up{i}.res"), 2 * c, c, td);
    }
    store.insert("unet.out_norm.g", Tensor::full(&[c0], S::ONE), true);
    store.insert("unet.out_norm.b", Tensor::zeros(&[c0]), true);
    store.insert("unet.out_conv.w", conv_weight(seed, "unet.out_conv.w", 3, c0, 3), true);
    store.insert("unet.out_conv.b", Tensor::zeros(&[3]), true);
    Ok(store)
}

/// Insert zero-initialized CAA blocks at every site. The position lift is
/// shared across sites of equal width, stored once per width.
pub fn insert_caa_params<S: Scalar>(store: &mut ParamStore<S>, cfg: &UNetConfig, seed: u64) {
    let enc_dim = cfg.enc_dim();
    let mut lifted_widths: Vec<usize> = Vec::new();
    for (site, level) in cfg.caa_sites() {
        let c = cfg.channels_at(level);
        let mut rng = init_stream(seed, &format!("caa.{site}"));
        let p = CaaBlockParams::<S>::init(c, enc_dim, &mut rng);
        let pfx = format!("caa.{site}");
        store.insert(&format!("{pfx}.wq"), p.wq, true);
        store.insert(&format!("{pfx}.wk"), p.wk, true);
        store.insert(&format!("{pfx}.wv"), p.wv, true);
        store.insert(&format!("{pfx}.attn_out.w"), p.attn_out_w, true);
        store.insert(&format!("{pfx}.attn_out.b"), p.attn_out_b, true);
        store.insert(&format!("{pfx}.ffn1.w"), p.ffn1_w, true);
        store.insert(&format!("{pfx}.ffn1.b"), p.ffn1_b, true);
        store.insert(&format!("{pfx}.ffn2.w"), p.ffn2_w, true);
        store.insert(&format!("{pfx}.ffn2.b"), p.ffn2_b, true);
        store.insert(&format!("{pfx}.norm1.g"), p.norm1_g, true);
        store.insert(&format!("{pfx}.norm1.b"), p.norm1_b, true);
        store.insert(&format!("{pfx}.norm2.g"), p.norm2_g, true);
        store.insert(&format!("{pfx}.norm2.b"), p.norm2_b, true);
        if !lifted_widths.contains(&c) {
            lifted_widths.push(c);
            store.insert(&format!("caa.pos_lift.c{c}.w"), p.pos_w, true);
            store.insert(&format!("caa.pos_lift.c{c}.b"), p.pos_b, true);
        }
    }
}

/// Insert the zero convolutions that downsample the 4-channel condition
/// image to each down-path block input and the bottleneck.
pub fn insert_cond_params<S: Scalar>(store: &mut ParamStore<S>, cfg: &UNetConfig) {
    for i in 0..cfg.levels - 1 {
        let k = 1 << i;
        store.insert(&format!("cond.down{i}.w"), Tensor::zeros(&[k, k, 4, cfg.channels_at(i)]), true);
        store.insert(&format!("cond.down{i}.b"), Tensor::zeros(&[cfg.channels_at(i)]), true);
    }
    let k = 1 << (cfg.levels - 1);
    store.insert(&format!("cond.mid.w"), Tensor::zeros(&[k, k, 4, cfg.channels_at(cfg.levels - 1)]), true);
    store.insert(&format!("cond.mid.b"), Tensor::zeros(&[cfg.channels_at(cfg.levels - 1)]), true);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStage {
    Stage1,
    Panorama,
    Stage2Depth,
}

impl TrainStage {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainStage::Stage1 => "stage1",
            TrainStage::Panorama => "panorama",
            TrainStage::Stage2Depth => "stage2-depth",
        }
    }

    pub fn parse(s: &str) -> Result<TrainStage> {
        match s {
            "stage1" => Ok(TrainStage::Stage1),
            "panorama" => Ok(TrainStage::Panorama),
            "stage2-depth" => Ok(TrainStage::Stage2Depth),
            other => Err(Error::Invalid(format!("unknown stage {other}"))),
        }
    }
}

/// Stage 1 trains the whole base network; panorama and stage-2 depth train
/// only the inserted blocks (CAA, and condition convolutions when present).
pub fn select_trainable<S: Scalar>(store: &mut ParamStore<S>, stage: TrainStage) {
    match stage {
        TrainStage::Stage1 => store.set_trainable(|_| true),
        TrainStage::Panorama | TrainStage::Stage2Depth => {
            store.set_trainable(|name| name.starts_with("caa.") || name.starts_with("cond."))
        }
    }
}

// --- correspondence plan cache -------------------------------------------------

/// CAA plans per feature resolution, built once per rig.
pub struct PlanCache<S: Scalar> {
    plans: BTreeMap<(usize, usize), Arc<CaaPlan<S>>>,
}

impl<S: Scalar> PlanCache<S> {
    pub fn get(&self, h: usize, w: usize) -> Result<Arc<CaaPlan<S>>> {
        self.plans
            .get(&(h, w))
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("no cached correspondence plan at resolution {h}x{w}")))
    }
}

/// Scale image-resolution maps to every CAA site resolution and freeze plans.
pub fn build_plan_cache<S: Scalar>(
    maps: &CorrespondenceMaps,
    cfg: &UNetConfig,
    input_h: usize,
    input_w: usize,
) -> Result<PlanCache<S>> {
    if maps.payload_dim != cfg.caa_payload_dim {
        return Err(Error::Invalid(format!(
            "maps carry payload dim {} but config expects {}",
            maps.payload_dim, cfg.caa_payload_dim
        )));
    }
    let freq = FreqEncodingConfig { n_freqs: cfg.caa_n_freqs };
    let mut plans = BTreeMap::new();
    for (_, level) in cfg.caa_sites() {
        let (h, w) = (input_h >> level, input_w >> level);
        if plans.contains_key(&(h, w)) {
            continue;
        }
        let scaled = if (h, w) == (maps.h, maps.w) { maps.clone() } else { scale_to_feature_res(maps, h, w)? };
        plans.insert((h, w), build_caa_plan(&scaled, cfg.caa_k, &freq)?);
    }
    Ok(PlanCache { plans })
}

// --- forward -------------------------------------------------------------------

pub fn sinusoidal_time_embedding<S: Scalar>(ts: &[usize], dim: usize) -> Tensor<S> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        for j in 0..half {
            let freq = (-(10000.0f64.ln()) * j as f64 / (half.max(2) - 1) as f64).exp();
            data.push(S::from_f64((t as f64 * freq).sin()));
        }
        for j in 0..half {
            let freq = (-(10000.0f64.ln()) * j as f64 / (half.max(2) - 1) as f64).exp();
            data.push(S::from_f64((t as f64 * freq).cos()));
        }
    }
    Tensor::from_vec(&[ts.len(), dim], data)
}

fn bind<S: Scalar>(tape: &mut Tape<S>, binding: &mut ParamBinding, store: &ParamStore<S>, name: &str) -> Var {
    binding.bind(tape, store, name)
}

#[allow(clippy::too_many_arguments)]
fn res_block<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &mut ParamBinding,
    store: &ParamStore<S>,
    cfg: &UNetConfig,
    prefix: &str,
    x: Var,
    temb: Var,
) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let cin = shape[3];
    let g1 = bind(tape, binding, store, &format!("{prefix}.norm1.g"));
    let b1 = bind(tape, binding, store, &format!("{prefix}.norm1.b"));
    let w1 = bind(tape, binding, store, &format!("{prefix}.conv1.w"));
    let wb1 = bind(tape, binding, store, &format!("{prefix}.conv1.b"));
    let cout = tape.value(w1).shape()[3];
    let tw = bind(tape, binding, store, &format!("{prefix}.time.w"));
    let tb = bind(tape, binding, store, &format!("{prefix}.time.b"));
    let g2 = bind(tape, binding, store, &format!("{prefix}.norm2.g"));
    let b2 = bind(tape, binding, store, &format!("{prefix}.norm2.b"));
    let w2 = bind(tape, binding, store, &format!("{prefix}.conv2.w"));
    let wb2 = bind(tape, binding, store, &format!("{prefix}.conv2.b"));

    let mut h = tape.group_norm(x, g1, b1, cfg.norm_groups);
    h = tape.gelu(h);
    h = tape.conv2d(h, w1, wb1, 1, 1);
    let tproj = tape.linear(temb, tw, tb);
    h = tape.add_chan_vec(h, tproj);
    h = tape.group_norm(h, g2, b2, cfg.norm_groups);
    h = tape.gelu(h);
    h = tape.conv2d(h, w2, wb2, 1, 1);
    let skip = if cin == cout {
        x
    } else {
        let sw = bind(tape, binding, store, &format!("{prefix}.skip.w"));
        let sb = bind(tape, binding, store, &format!("{prefix}.skip.b"));
        tape.conv2d(x, sw, sb, 1, 0)
    };
    tape.add(h, skip)
}

fn caa_site<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &mut ParamBinding,
    store: &ParamStore<S>,
    cfg: &UNetConfig,
    site: &str,
    x: Var,
    plans: Option<&PlanCache<S>>,
) -> Result<Var> {
    if !cfg.caa_enabled {
        return Ok(x);
    }
    let shape = tape.value(x).shape().to_vec();
    let (h, w, c) = (shape[1], shape[2], shape[3]);
    let plans = plans.ok_or_else(|| Error::Invalid(format!("CAA enabled but no plan cache supplied (site {site})")))?;
    let plan = plans.get(h, w)?;
    let pfx = format!("caa.{site}");
    let vars = CaaVars {
        wq: bind(tape, binding, store, &format!("{pfx}.wq")),
        wk: bind(tape, binding, store, &format!("{pfx}.wk")),
        wv: bind(tape, binding, store, &format!("{pfx}.wv")),
        attn_out_w: bind(tape, binding, store, &format!("{pfx}.attn_out.w")),
        attn_out_b: bind(tape, binding, store, &format!("{pfx}.attn_out.b")),
        ffn1_w: bind(tape, binding, store, &format!("{pfx}.ffn1.w")),
        ffn1_b: bind(tape, binding, store, &format!("{pfx}.ffn1.b")),
        ffn2_w: bind(tape, binding, store, &format!("{pfx}.ffn2.w")),
        ffn2_b: bind(tape, binding, store, &format!("{pfx}.ffn2.b")),
        pos_w: bind(tape, binding, store, &format!("caa.pos_lift.c{c}.w")),
        pos_b: bind(tape, binding, store, &format!("caa.pos_lift.c{c}.b")),
        norm1_g: bind(tape, binding, store, &format!("{pfx}.norm1.g")),
        norm1_b: bind(tape, binding, store, &format!("{pfx}.norm1.b")),
        norm2_g: bind(tape, binding, store, &format!("{pfx}.norm2.g")),
        norm2_b: bind(tape, binding, store, &format!("{pfx}.norm2.b")),
    };
    Ok(caa_block_tape(tape, x, &vars, plan))
}

fn cond_inject<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &mut ParamBinding,
    store: &ParamStore<S>,
    cfg: &UNetConfig,
    name: &str,
    level: usize,
    x: Var,
    cond: Option<Var>,
) -> Var {
    if !cfg.image_cond_enabled {
        return x;
    }
    let cond = cond.expect("image conditioning enabled but no condition var");
    let w = bind(tape, binding, store, &format!("cond.{name}.w"));
    let b = bind(tape, binding, store, &format!("cond.{name}.b"));
    let stride = 1 << level;
    let injected = tape.conv2d(cond, w, b, stride, 0);
    tape.add(x, injected)
}

/// Noise prediction for all views at once. `latents` is `[n,h,w,3]`.
pub fn unet_forward<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &mut ParamBinding,
    store: &ParamStore<S>,
    latents: Var,
    cond: &ConditionBundle<S>,
    plans: Option<&PlanCache<S>>,
    cfg: &UNetConfig,
) -> Result<Var> {
    let shape = tape.value(latents).shape().to_vec();
    if shape.len() != 4 || shape[3] != 3 {
        return Err(Error::Invalid(format!("latents want [n,h,w,3], got {shape:?}")));
    }
    let (n, h, w) = (shape[0], shape[1], shape[2]);
    cond.validate(cfg, n, h, w)?;
    let min_size = 1 << (cfg.levels - 1);
    if h % min_size != 0 || w % min_size != 0 {
        return Err(Error::Invalid(format!("input {h}x{w} not divisible by 2^{}", cfg.levels - 1)));
    }

    // assemble input channels
    let mut x = latents;
    if let Some(depth) = &cond.depth {
        let d = tape.leaf(depth.clone());
        x = tape.concat_channels(x, d);
    }
    let cond_var = cond.cond_images.as_ref().map(|c| tape.leaf(c.clone()));

    // timestep embedding: sinusoidal then a 2-layer MLP
    let temb0 = tape.leaf(sinusoidal_time_embedding(&cond.t, cfg.time_embed_dim));
    let l1w = bind(tape, binding, store, "unet.time_mlp.l1.w");
    let l1b = bind(tape, binding, store, "unet.time_mlp.l1.b");
    let l2w = bind(tape, binding, store, "unet.time_mlp.l2.w");
    let l2b = bind(tape, binding, store, "unet.time_mlp.l2.b");
    let temb = tape.linear(temb0, l1w, l1b);
    let temb = tape.gelu(temb);
    let temb = tape.linear(temb, l2w, l2b);

    let table = bind(tape, binding, store, "unet.prompt.table");
    let prompt = tape.embed_rows(table, &cond.prompt_ids);

    let in_w = bind(tape, binding, store, "unet.in_conv.w");
    let in_b = bind(tape, binding, store, "unet.in_conv.b");
    x = tape.conv2d(x, in_w, in_b, 1, 1);

    let mut skips = Vec::new();
    for i in 0..cfg.levels - 1 {
        x = cond_inject(tape, binding, store, cfg, &format!("down{i}"), i, x, cond_var);
        x = res_block(tape, binding, store, cfg, &format!("unet.down{i}.res"), x, temb);
        x = caa_site(tape, binding, store, cfg, &format!("down{i}"), x, plans)?;
        skips.push(x);
        let dw = bind(tape, binding, store, &format!("unet.down{i}.down.w"));
        let db = bind(tape, binding, store, &format!("unet.down{i}.down.b"));
        x = tape.conv2d(x, dw, db, 2, 1);
    }

    x = cond_inject(tape, binding, store, cfg, "mid", cfg.levels - 1, x, cond_var);
    x = res_block(tape, binding, store, cfg, "unet.mid.res1", x, temb);
    {
        // bottleneck self-attention within each view
        let shape = tape.value(x).shape().to_vec();
        let (hh, ww, cm) = (shape[1], shape[2], shape[3]);
        let ng = bind(tape, binding, store, "unet.mid.attn.norm.g");
        let nb = bind(tape, binding, store, "unet.mid.attn.norm.b");
        let xn = tape.group_norm(x, ng, nb, cfg.norm_groups);
        let tokens = tape.reshape(xn, &[n, hh * ww, cm]);
        let wq = bind(tape, binding, store, "unet.mid.attn.wq");
        let wk = bind(tape, binding, store, "unet.mid.attn.wk");
        let wv = bind(tape, binding, store, "unet.mid.attn.wv");
        let wo = bind(tape, binding, store, "unet.mid.attn.wo");
        let delta = tape.self_attention(tokens, wq, wk, wv, wo);
        let delta = tape.reshape(delta, &[n, hh, ww, cm]);
        x = tape.add(x, delta);
        // per-view label embedding through single-token cross-attention
        let pvw = bind(tape, binding, store, "unet.mid.prompt.wv.w");
        let pvb = bind(tape, binding, store, "unet.mid.prompt.wv.b");
        let pow_ = bind(tape, binding, store, "unet.mid.prompt.wo.w");
        let pob = bind(tape, binding, store, "unet.mid.prompt.wo.b");
        let tokens = tape.reshape(x, &[n, hh * ww, cm]);
        let injected = tape.prompt_inject(tokens, prompt, pvw, pvb, pow_, pob);
        x = tape.reshape(injected, &[n, hh, ww, cm]);
    }
    x = res_block(tape, binding, store, cfg, "unet.mid.res2", x, temb);
    x = caa_site(tape, binding, store, cfg, "mid", x, plans)?;

    for i in (0..cfg.levels - 1).rev() {
        let uw = bind(tape, binding, store, &format!("unet.up{i}.up.w"));
        let ub = bind(tape, binding, store, &format!("unet.up{i}.up.b"));
        x = tape.upsample_nearest2(x);
        x = tape.conv2d(x, uw, ub, 1, 1);
        let skip = skips.pop().expect("skip stack underflow");
        x = tape.concat_channels(x, skip);
        x = res_block(tape, binding, store, cfg, &format!("unet.up{i}.res"), x, temb);
        x = caa_site(tape, binding, store, cfg, &format!("up{i}"), x, plans)?;
    }

    let og = bind(tape, binding, store, "unet.out_norm.g");
    let ob = bind(tape, binding, store, "unet.out_norm.b");
    x = tape.group_norm(x, og, ob, cfg.norm_groups);
    x = tape.gelu(x);
    let ow = bind(tape, binding, store, "unet.out_conv.w");
    let owb = bind(tape, binding, store, "unet.out_conv.b");
    x = tape.conv2d(x, ow, owb, 1, 1);
    Ok(x)
}

/// Convenience forward pass without gradient bookkeeping.
pub fn unet_infer<S: Scalar>(
    store: &ParamStore<S>,
    latents: &Tensor<S>,
    cond: &ConditionBundle<S>,
    plans: Option<&PlanCache<S>>,
    cfg: &UNetConfig,
) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let mut binding = ParamBinding::new();
    let lv = tape.leaf(latents.clone());
    let out = unet_forward(&mut tape, &mut binding, store, lv, cond, plans, cfg)?;
    Ok(tape.value(out).clone())
}

// --- checkpoints ----------------------------------------------------------------

#[derive(Serialize, Deserialize, Clone)]
pub struct CheckpointManifest {
    pub config: UNetConfig,
    pub stage: String,
    pub step: u64,
    pub params: Vec<String>,
}

pub fn save_checkpoint<S: Scalar, P: AsRef<Path>>(
    dir: P,
    store: &ParamStore<S>,
    cfg: &UNetConfig,
    stage: &str,
    step: u64,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        config: cfg.clone(),
        stage: stage.to_string(),
        step,
        params: store.names(),
    };
    io::write_json(dir.join("manifest.json"), &manifest)?;
    for (name, p) in store.iter() {
        io::write_tensor(dir.join(format!("{name}.mvt")), &p.value)?;
    }
    Ok(())
}

pub fn load_checkpoint<S: Scalar, P: AsRef<Path>>(dir: P) -> Result<(ParamStore<S>, CheckpointManifest)> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest = io::read_json(dir.join("manifest.json"))?;
    let mut store = ParamStore::new();
    for name in &manifest.params {
        let t: Tensor<S> = io::read_tensor(dir.join(format!("{name}.mvt")))?;
        store.insert(name, t, true);
    }
    Ok((store, manifest))
}
