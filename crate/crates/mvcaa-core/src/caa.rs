//! Correspondence-aware attention (CAA).
//!
//! Each source token attends only to the geometric correspondences of its
//! pixel in the other views: a K x K neighborhood around every target
//! coordinate, softmax taken jointly over all valid entries of all target
//! views. Target features are bilinearly sampled; a frequency encoding of the
//! per-entry payload (back-mapped displacement, or depth error) is lifted to
//! feature width and added before the key/value projections. Output layers
//! are zero-initialized so a fresh block is the identity.

use crate::autodiff::{Tape, Var};
use crate::correspondence::{neighborhood, CorrespondenceMaps};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::sync::Arc;

/// Sinusoidal encoding with frequencies 2^k, k in 0..n_freqs.
#[derive(Clone, Copy, Debug)]
pub struct FreqEncodingConfig {
    pub n_freqs: usize,
}

impl Default for FreqEncodingConfig {
    fn default() -> Self {
        FreqEncodingConfig { n_freqs: 4 }
    }
}

impl FreqEncodingConfig {
    pub fn enc_dim(&self, payload_dim: usize) -> usize {
        payload_dim * 2 * self.n_freqs
    }
}

/// Per coordinate and frequency f_k = 2^k: (sin(f_k c), cos(f_k c)),
/// interleaved per frequency, coordinates concatenated.
pub fn freq_encode(cfg: &FreqEncodingConfig, v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.enc_dim(v.len()));
    for &c in v {
        for k in 0..cfg.n_freqs {
            let f = (1u64 << k) as f64;
            out.push((f * c).sin());
            out.push((f * c).cos());
        }
    }
    out
}

/// 4-tap bilinear sample of an [h,w,c] feature map, clamped at the border.
pub fn bilinear_sample<S: Scalar>(f: &Tensor<S>, x: f32, y: f32) -> Vec<S> {
    let s = f.shape();
    assert_eq!(s.len(), 3, "bilinear_sample wants [h,w,c], got {s:?}");
    let (h, w, c) = (s[0], s[1], s[2]);
    let mut out = vec![S::ZERO; c];
    bilinear_gather(f.data(), h, w, c, x, y, &mut out);
    out
}

pub(crate) fn bilinear_taps(h: usize, w: usize, x: f32, y: f32) -> ([usize; 4], [f64; 4]) {
    let x0 = (x.floor() as i64).clamp(0, w as i64 - 1);
    let y0 = (y.floor() as i64).clamp(0, h as i64 - 1);
    let x1 = (x0 + 1).min(w as i64 - 1);
    let y1 = (y0 + 1).min(h as i64 - 1);
    let fx = (x as f64 - x0 as f64).clamp(0.0, 1.0);
    let fy = (y as f64 - y0 as f64).clamp(0.0, 1.0);
    let idx = |yy: i64, xx: i64| (yy as usize) * w + xx as usize;
    (
        [idx(y0, x0), idx(y0, x1), idx(y1, x0), idx(y1, x1)],
        [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
    )
}

pub(crate) fn bilinear_gather<S: Scalar>(data: &[S], h: usize, w: usize, c: usize, x: f32, y: f32, out: &mut [S]) {
    let (cells, weights) = bilinear_taps(h, w, x, y);
    for v in out.iter_mut() {
        *v = S::ZERO;
    }
    for (cell, wgt) in cells.iter().zip(weights) {
        let ws = S::from_f64(wgt);
        let base = cell * c;
        for j in 0..c {
            out[j] += data[base + j] * ws;
        }
    }
}

pub(crate) fn bilinear_scatter<S: Scalar>(data: &mut [S], h: usize, w: usize, c: usize, x: f32, y: f32, g: &[S]) {
    let (cells, weights) = bilinear_taps(h, w, x, y);
    for (cell, wgt) in cells.iter().zip(weights) {
        let ws = S::from_f64(wgt);
        let base = cell * c;
        for j in 0..c {
            data[base + j] += g[j] * ws;
        }
    }
}

/// Static attention structure for one rig at one resolution: only valid
/// entries are kept, so masking never enters the softmax.
pub struct CaaPlan<S: Scalar> {
    pub n_views: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub payload_dim: usize,
    pub enc_dim: usize,
    /// Encoding of the zero payload, added to every source token.
    pub enc_zero: Vec<S>,
    pub sources: Vec<SourceEntries<S>>,
    /// Global entry offset per source view; last element is the total count.
    pub source_base: Vec<usize>,
    /// Per target view: all entries that sample it, in build order.
    pub targets: Vec<Vec<EntryRef>>,
}

pub struct SourceEntries<S: Scalar> {
    /// Entry range per source pixel: entries of pixel p are offsets[p]..offsets[p+1].
    pub offsets: Vec<u32>,
    pub target_view: Vec<u16>,
    pub tx: Vec<f32>,
    pub ty: Vec<f32>,
    /// Frequency-encoded payload, enc_dim values per entry, row-major.
    pub enc: Vec<S>,
}

#[derive(Copy, Clone, Debug)]
pub struct EntryRef {
    pub src: u16,
    pub pixel: u32,
    pub local: u32,
}

impl<S: Scalar> CaaPlan<S> {
    pub fn total_entries(&self) -> usize {
        *self.source_base.last().unwrap()
    }
}

/// Enumerate K x K neighborhoods for every (source pixel, target view) and
/// freeze the valid entries with their encoded payloads.
pub fn build_caa_plan<S: Scalar>(
    maps: &CorrespondenceMaps,
    k: usize,
    freq: &FreqEncodingConfig,
) -> Result<Arc<CaaPlan<S>>> {
    let n = maps.n_views;
    let (h, w) = (maps.h, maps.w);
    let payload_dim = maps.payload_dim;
    let enc_dim = freq.enc_dim(payload_dim);
    let enc_zero = freq_encode(freq, &vec![0.0; payload_dim]).iter().map(|&v| S::from_f64(v)).collect();
    let mut sources = Vec::with_capacity(n);
    let mut targets: Vec<Vec<EntryRef>> = vec![Vec::new(); n];
    let mut source_base = vec![0usize; n + 1];
    for i in 0..n {
        let mut offsets = Vec::with_capacity(h * w + 1);
        offsets.push(0u32);
        let mut target_view = Vec::new();
        let mut tx = Vec::new();
        let mut ty = Vec::new();
        let mut enc: Vec<S> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                for l in 0..n {
                    if l == i {
                        continue;
                    }
                    // skip pairs with no overlap quickly
                    if !maps.pair(i, l).valid[y * w + x] {
                        continue;
                    }
                    let ns = neighborhood(maps, x, y, i, l, k)?;
                    for e in &ns.entries {
                        if !e.valid {
                            continue;
                        }
                        let local = target_view.len() as u32;
                        target_view.push(l as u16);
                        tx.push(e.t[0]);
                        ty.push(e.t[1]);
                        let pay: Vec<f64> = e.payload.iter().map(|&p| p as f64).collect();
                        enc.extend(freq_encode(freq, &pay).iter().map(|&v| S::from_f64(v)));
                        targets[l].push(EntryRef { src: i as u16, pixel: (y * w + x) as u32, local });
                    }
                }
                offsets.push(target_view.len() as u32);
            }
        }
        source_base[i + 1] = source_base[i] + target_view.len();
        sources.push(SourceEntries { offsets, target_view, tx, ty, enc });
    }
    Ok(Arc::new(CaaPlan {
        n_views: n,
        h,
        w,
        k,
        payload_dim,
        enc_dim,
        enc_zero,
        sources,
        source_base,
        targets,
    }))
}

/// Learnable weights of one CAA block. Projections are stored input-major
/// (`y_row = x_row * W`); attention output and the final FFN layer start at
/// exactly zero so an untrained block is the identity.
#[derive(Clone)]
pub struct CaaBlockParams<S: Scalar> {
    pub channels: usize,
    pub enc_dim: usize,
    pub wq: Tensor<S>,
    pub wk: Tensor<S>,
    pub wv: Tensor<S>,
    pub attn_out_w: Tensor<S>,
    pub attn_out_b: Tensor<S>,
    pub ffn1_w: Tensor<S>,
    pub ffn1_b: Tensor<S>,
    pub ffn2_w: Tensor<S>,
    pub ffn2_b: Tensor<S>,
    pub pos_w: Tensor<S>,
    pub pos_b: Tensor<S>,
    pub norm1_g: Tensor<S>,
    pub norm1_b: Tensor<S>,
    pub norm2_g: Tensor<S>,
    pub norm2_b: Tensor<S>,
}

pub const FFN_MULT: usize = 4;

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn fan_in_uniform<S: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<S> {
    let a = 1.0 / (fan_in as f64).sqrt();
    rng.uniform_tensor(shape, -a, a)
}

impl<S: Scalar> CaaBlockParams<S> {
    pub fn init(channels: usize, enc_dim: usize, rng: &mut Rng) -> Self {
        let c = channels;
        let hidden = FFN_MULT * c;
        let p = CaaBlockParams {
            channels: c,
            enc_dim,
            wq: fan_in_uniform(rng, &[c, c], c),
            wk: fan_in_uniform(rng, &[c, c], c),
            wv: fan_in_uniform(rng, &[c, c], c),
            attn_out_w: Tensor::zeros(&[c, c]),
            attn_out_b: Tensor::zeros(&[c]),
            ffn1_w: fan_in_uniform(rng, &[c, hidden], c),
            ffn1_b: Tensor::zeros(&[hidden]),
            ffn2_w: Tensor::zeros(&[hidden, c]),
            ffn2_b: Tensor::zeros(&[c]),
            pos_w: fan_in_uniform(rng, &[enc_dim, c], enc_dim),
            pos_b: Tensor::zeros(&[c]),
            norm1_g: Tensor::full(&[c], S::ONE),
            norm1_b: Tensor::zeros(&[c]),
            norm2_g: Tensor::full(&[c], S::ONE),
            norm2_b: Tensor::zeros(&[c]),
        };
        debug_assert!(p.output_layers_are_zero());
        p
    }

    pub fn output_layers_are_zero(&self) -> bool {
        self.attn_out_w.data().iter().all(|v| *v == S::ZERO)
            && self.attn_out_b.data().iter().all(|v| *v == S::ZERO)
            && self.ffn2_w.data().iter().all(|v| *v == S::ZERO)
            && self.ffn2_b.data().iter().all(|v| *v == S::ZERO)
    }
}

/// Tape vars for one CAA block, in the same order as `CaaBlockParams`.
pub struct CaaVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub attn_out_w: Var,
    pub attn_out_b: Var,
    pub ffn1_w: Var,
    pub ffn1_b: Var,
    pub ffn2_w: Var,
    pub ffn2_b: Var,
    pub pos_w: Var,
    pub pos_b: Var,
    pub norm1_g: Var,
    pub norm1_b: Var,
    pub norm2_g: Var,
    pub norm2_b: Var,
}

impl CaaVars {
    pub fn bind<S: Scalar>(tape: &mut Tape<S>, p: &CaaBlockParams<S>) -> CaaVars {
        CaaVars {
            wq: tape.leaf(p.wq.clone()),
            wk: tape.leaf(p.wk.clone()),
            wv: tape.leaf(p.wv.clone()),
            attn_out_w: tape.leaf(p.attn_out_w.clone()),
            attn_out_b: tape.leaf(p.attn_out_b.clone()),
            ffn1_w: tape.leaf(p.ffn1_w.clone()),
            ffn1_b: tape.leaf(p.ffn1_b.clone()),
            ffn2_w: tape.leaf(p.ffn2_w.clone()),
            ffn2_b: tape.leaf(p.ffn2_b.clone()),
            pos_w: tape.leaf(p.pos_w.clone()),
            pos_b: tape.leaf(p.pos_b.clone()),
            norm1_g: tape.leaf(p.norm1_g.clone()),
            norm1_b: tape.leaf(p.norm1_b.clone()),
            norm2_g: tape.leaf(p.norm2_g.clone()),
            norm2_b: tape.leaf(p.norm2_b.clone()),
        }
    }
}

/// Pre-norm transformer block around the correspondence-aware message:
/// `x += attn_out(message(norm1(x)))`, then `x += ffn(norm2(x))`.
pub fn caa_block_tape<S: Scalar>(tape: &mut Tape<S>, x: Var, vars: &CaaVars, plan: Arc<CaaPlan<S>>) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let rows = n * h * w;
    let xn = tape.layer_norm_last(x, vars.norm1_g, vars.norm1_b);
    let msg = tape.caa_message(xn, vars.wq, vars.wk, vars.wv, vars.pos_w, vars.pos_b, plan);
    let msg_rows = tape.reshape(msg, &[rows, c]);
    let proj = tape.linear(msg_rows, vars.attn_out_w, vars.attn_out_b);
    let proj = tape.reshape(proj, &[n, h, w, c]);
    let x = tape.add(x, proj);
    let xn2 = tape.layer_norm_last(x, vars.norm2_g, vars.norm2_b);
    let rows_v = tape.reshape(xn2, &[rows, c]);
    let hid = tape.linear(rows_v, vars.ffn1_w, vars.ffn1_b);
    let hid = tape.gelu(hid);
    let out = tape.linear(hid, vars.ffn2_w, vars.ffn2_b);
    let out = tape.reshape(out, &[n, h, w, c]);
    tape.add(x, out)
}

fn stack_views<S: Scalar>(features: &[Tensor<S>]) -> Result<Tensor<S>> {
    if features.is_empty() {
        return Err(Error::Invalid("caa needs at least one view".into()));
    }
    let s = features[0].shape().to_vec();
    if s.len() != 3 {
        return Err(Error::Invalid(format!("per-view features must be [h,w,c], got {s:?}")));
    }
    let mut data = Vec::with_capacity(features.len() * features[0].numel());
    for f in features {
        if f.shape() != s {
            return Err(Error::Invalid(format!("view feature shapes differ: {:?} vs {s:?}", f.shape())));
        }
        data.extend_from_slice(f.data());
    }
    Ok(Tensor::from_vec(&[features.len(), s[0], s[1], s[2]], data))
}

fn unstack_views<S: Scalar>(x: &Tensor<S>) -> Vec<Tensor<S>> {
    let s = x.shape();
    let (n, per) = (s[0], s[1] * s[2] * s[3]);
    (0..n)
        .map(|i| Tensor::from_vec(&s[1..], x.data()[i * per..(i + 1) * per].to_vec()))
        .collect()
}

/// Attention message for one source view against all other views.
/// `features[src]` is the source map; correspondences come from `maps`.
pub fn caa_message<S: Scalar>(
    features: &[Tensor<S>],
    src: usize,
    maps: &CorrespondenceMaps,
    k: usize,
    params: &CaaBlockParams<S>,
) -> Result<Tensor<S>> {
    let x = stack_views(features)?;
    let s = x.shape().to_vec();
    if s[3] != params.channels {
        return Err(Error::Invalid(format!("features have {} channels, params {}", s[3], params.channels)));
    }
    if (maps.h, maps.w) != (s[1], s[2]) {
        return Err(Error::Invalid(format!(
            "maps at {}x{} but features at {}x{}",
            maps.h, maps.w, s[1], s[2]
        )));
    }
    let plan = build_caa_plan(maps, k, &FreqEncodingConfig::default())?;
    if plan.enc_dim != params.enc_dim {
        return Err(Error::Invalid(format!(
            "params encode {} dims but plan has {}",
            params.enc_dim, plan.enc_dim
        )));
    }
    let (out, _attn) = crate::autodiff::caa_forward(&x, &params.wq, &params.wk, &params.wv, &params.pos_w, &params.pos_b, &plan);
    Ok(unstack_views(&out).swap_remove(src))
}

/// Full CAA block applied to every view; shapes are preserved.
pub fn caa_block<S: Scalar>(
    features: &[Tensor<S>],
    maps: &CorrespondenceMaps,
    k: usize,
    params: &CaaBlockParams<S>,
) -> Result<Vec<Tensor<S>>> {
    let x = stack_views(features)?;
    if (maps.h, maps.w) != (x.shape()[1], x.shape()[2]) {
        return Err(Error::Invalid("correspondence maps do not match the feature resolution".into()));
    }
    let plan = build_caa_plan(maps, k, &FreqEncodingConfig::default())?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let vars = CaaVars::bind(&mut tape, params);
    let out = caa_block_tape(&mut tape, xv, &vars, plan);
    Ok(unstack_views(tape.value(out)))
}
