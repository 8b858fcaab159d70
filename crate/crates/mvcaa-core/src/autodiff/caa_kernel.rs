//! Fused correspondence-aware attention message.
//!
//! The linear structure of the block is exploited so the bulk of the work is
//! plain GEMM: key/value projections commute with bilinear sampling, and the
//! position lift folds into per-entry matrices `Mk = Pw*Wk`, `Mv = Pw*Wv`.
//! For a source token s with valid entries e (target view l, coordinate t*,
//! encoded payload gamma_e):
//!
//!   q_s   = (x_i[s] + g0) Wq                 with g0 = gamma(0) Pw + Pb
//!   k_e   = bilin(x_l Wk, t*) + gamma_e Mk + Pb Wk
//!   v_e   = bilin(x_l Wv, t*) + gamma_e Mv + Pb Wv
//!   a     = softmax_e(q_s . k_e / sqrt(C))   jointly over all targets
//!   m_s   = sum_e a_e v_e                    (zero when no entries)
//!
//! Forward parallelizes over source views, the backward scatter over target
//! views; weight-gradient partials reduce in view order, so results are
//! bitwise independent of the thread count.

use crate::caa::{bilinear_scatter, bilinear_taps, CaaPlan};
use crate::parallel;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct RawParts<S>(*mut S);
unsafe impl<S> Send for RawParts<S> {}
unsafe impl<S> Sync for RawParts<S> {}

impl<S> RawParts<S> {
    /// Disjoint-range slice; callers guarantee ranges never overlap.
    unsafe fn slice(&self, start: usize, len: usize) -> &mut [S] {
        std::slice::from_raw_parts_mut(self.0.add(start), len)
    }
}

fn vec_mat<S: Scalar>(v: &[S], mat: &[S], rows: usize, cols: usize, out: &mut [S]) {
    debug_assert_eq!(v.len(), rows);
    debug_assert_eq!(mat.len(), rows * cols);
    for o in out.iter_mut() {
        *o = S::ZERO;
    }
    for (i, &vi) in v.iter().enumerate() {
        let row = &mat[i * cols..(i + 1) * cols];
        for j in 0..cols {
            out[j] += vi * row[j];
        }
    }
}

/// y = mat * v over the second index: y_i = sum_j mat[i,j] v[j].
fn mat_vec<S: Scalar>(mat: &[S], v: &[S], rows: usize, cols: usize, out: &mut [S]) {
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let row = &mat[i * cols..(i + 1) * cols];
        let mut acc = S::ZERO;
        for j in 0..cols {
            acc += row[j] * v[j];
        }
        *o = acc;
    }
}

fn outer_acc<S: Scalar>(acc: &mut [S], a: &[S], b: &[S]) {
    let cols = b.len();
    for (i, &ai) in a.iter().enumerate() {
        let row = &mut acc[i * cols..(i + 1) * cols];
        for j in 0..cols {
            row[j] += ai * b[j];
        }
    }
}

#[inline]
fn gather_taps<S: Scalar>(data: &[S], c: usize, cells: &[usize; 4], weights: &[S; 4], out: &mut [S]) {
    let b0 = cells[0] * c;
    let b1 = cells[1] * c;
    let b2 = cells[2] * c;
    let b3 = cells[3] * c;
    for j in 0..c {
        out[j] = data[b0 + j] * weights[0]
            + data[b1 + j] * weights[1]
            + data[b2 + j] * weights[2]
            + data[b3 + j] * weights[3];
    }
}

struct Projected<S> {
    xq: Vec<S>,
    xk: Vec<S>,
    xv: Vec<S>,
    /// Per-source lifted key/value encodings, entries x C, aligned to plan order.
    pk: Vec<S>,
    pv: Vec<S>,
    g0: Vec<S>,
}

fn project<S: Scalar>(
    x: &Tensor<S>,
    wq: &Tensor<S>,
    wk: &Tensor<S>,
    wv: &Tensor<S>,
    pw: &Tensor<S>,
    pb: &Tensor<S>,
    plan: &CaaPlan<S>,
) -> Projected<S> {
    let c = plan_channels(x);
    let rows = x.numel() / c;
    let e = plan.enc_dim;
    let mut xq = vec![S::ZERO; rows * c];
    let mut xk = vec![S::ZERO; rows * c];
    let mut xv = vec![S::ZERO; rows * c];
    S::gemm(rows, c, c, S::ONE, x.data(), wq.data(), S::ZERO, &mut xq);
    S::gemm(rows, c, c, S::ONE, x.data(), wk.data(), S::ZERO, &mut xk);
    S::gemm(rows, c, c, S::ONE, x.data(), wv.data(), S::ZERO, &mut xv);
    // g0 = gamma(0) Pw + Pb, added to every query through qb = g0 Wq
    let mut g0 = pb.data().to_vec();
    let mut lift = vec![S::ZERO; c];
    vec_mat(&plan.enc_zero, pw.data(), e, c, &mut lift);
    for j in 0..c {
        g0[j] += lift[j];
    }
    let mut qb = vec![S::ZERO; c];
    vec_mat(&g0, wq.data(), c, c, &mut qb);
    for r in 0..rows {
        for j in 0..c {
            xq[r * c + j] += qb[j];
        }
    }
    // Mk = Pw Wk, mkb = Pb Wk (same for V); per-entry lifts are one GEMM each
    let mut mk = vec![S::ZERO; e * c];
    let mut mv = vec![S::ZERO; e * c];
    S::gemm(e, c, c, S::ONE, pw.data(), wk.data(), S::ZERO, &mut mk);
    S::gemm(e, c, c, S::ONE, pw.data(), wv.data(), S::ZERO, &mut mv);
    let mut mkb = vec![S::ZERO; c];
    let mut mvb = vec![S::ZERO; c];
    vec_mat(pb.data(), wk.data(), c, c, &mut mkb);
    vec_mat(pb.data(), wv.data(), c, c, &mut mvb);
    let total = plan.total_entries();
    let mut pk = vec![S::ZERO; total * c];
    let mut pv = vec![S::ZERO; total * c];
    for (i, src) in plan.sources.iter().enumerate() {
        let n_e = src.target_view.len();
        if n_e == 0 {
            continue;
        }
        let base = plan.source_base[i] * c;
        S::gemm(n_e, e, c, S::ONE, &src.enc, &mk, S::ZERO, &mut pk[base..base + n_e * c]);
        S::gemm(n_e, e, c, S::ONE, &src.enc, &mv, S::ZERO, &mut pv[base..base + n_e * c]);
        for eidx in 0..n_e {
            for j in 0..c {
                pk[base + eidx * c + j] += mkb[j];
                pv[base + eidx * c + j] += mvb[j];
            }
        }
    }
    Projected { xq, xk, xv, pk, pv, g0 }
}

fn plan_channels<S: Scalar>(x: &Tensor<S>) -> usize {
    let s = x.shape();
    assert_eq!(s.len(), 4, "caa message wants [n,h,w,c], got {s:?}");
    s[3]
}

/// Returns the per-view message and the softmax weights per plan entry.
pub fn caa_forward<S: Scalar>(
    x: &Tensor<S>,
    wq: &Tensor<S>,
    wk: &Tensor<S>,
    wv: &Tensor<S>,
    pw: &Tensor<S>,
    pb: &Tensor<S>,
    plan: &CaaPlan<S>,
) -> (Tensor<S>, Vec<S>) {
    let s = x.shape().to_vec();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    assert_eq!(n, plan.n_views, "plan built for {} views, features have {n}", plan.n_views);
    assert_eq!((h, w), (plan.h, plan.w), "plan at {}x{}, features at {h}x{w}", plan.h, plan.w);
    assert_eq!(pw.shape(), &[plan.enc_dim, c], "pos lift shape {:?}", pw.shape());
    let hw = h * w;
    let proj = project(x, wq, wk, wv, pw, pb, plan);
    let scale = S::from_f64(1.0 / (c as f64).sqrt());
    let mut out: Tensor<S> = Tensor::zeros(&s);
    let mut attn = vec![S::ZERO; plan.total_entries()];
    let out_ptr = RawParts(out.data_mut().as_mut_ptr());
    let attn_ptr = RawParts(attn.as_mut_ptr());
    parallel::for_each_task(n, |i| {
        let src = &plan.sources[i];
        let out_i = unsafe { out_ptr.slice(i * hw * c, hw * c) };
        let base = plan.source_base[i];
        let n_e_total = src.target_view.len();
        let attn_i = unsafe { attn_ptr.slice(base, n_e_total) };
        let mut k_e = vec![S::ZERO; c];
        let mut logits: Vec<S> = Vec::with_capacity(64);
        let mut tap_cells: Vec<[usize; 4]> = Vec::with_capacity(64);
        let mut tap_w: Vec<[S; 4]> = Vec::with_capacity(64);
        for p in 0..hw {
            let (e0, e1) = (src.offsets[p] as usize, src.offsets[p + 1] as usize);
            if e0 == e1 {
                continue;
            }
            let q = &proj.xq[(i * hw + p) * c..(i * hw + p + 1) * c];
            logits.clear();
            tap_cells.clear();
            tap_w.clear();
            for e in e0..e1 {
                let l = src.target_view[e] as usize;
                let (cells, weights) = bilinear_taps(h, w, src.tx[e], src.ty[e]);
                let ws = [
                    S::from_f64(weights[0]),
                    S::from_f64(weights[1]),
                    S::from_f64(weights[2]),
                    S::from_f64(weights[3]),
                ];
                gather_taps(&proj.xk[l * hw * c..(l + 1) * hw * c], c, &cells, &ws, &mut k_e);
                tap_cells.push(cells);
                tap_w.push(ws);
                let pk = &proj.pk[(base + e) * c..(base + e + 1) * c];
                let mut dot = S::ZERO;
                for j in 0..c {
                    dot += q[j] * (k_e[j] + pk[j]);
                }
                logits.push(dot * scale);
            }
            // softmax over all entries of all target views jointly
            let mut m = logits[0];
            for &v in &logits {
                if v > m {
                    m = v;
                }
            }
            let mut sum = S::ZERO;
            for v in logits.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            let msg = &mut out_i[p * c..(p + 1) * c];
            for (off, e) in (e0..e1).enumerate() {
                let a = logits[off] / sum;
                attn_i[e] = a;
                let l = src.target_view[e] as usize;
                gather_taps(&proj.xv[l * hw * c..(l + 1) * hw * c], c, &tap_cells[off], &tap_w[off], &mut k_e);
                let pv = &proj.pv[(base + e) * c..(base + e + 1) * c];
                for j in 0..c {
                    msg[j] += a * (k_e[j] + pv[j]);
                }
            }
        }
    });
    (out, attn)
}

/// Gradients for (x, wq, wk, wv, pos_w, pos_b).
#[allow(clippy::too_many_arguments)]
pub fn caa_backward<S: Scalar>(
    x: &Tensor<S>,
    wq: &Tensor<S>,
    wk: &Tensor<S>,
    wv: &Tensor<S>,
    pw: &Tensor<S>,
    pb: &Tensor<S>,
    plan: &CaaPlan<S>,
    attn: &[S],
    dout: &Tensor<S>,
) -> Vec<Tensor<S>> {
    let s = x.shape().to_vec();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let hw = h * w;
    let rows = n * hw;
    let e_dim = plan.enc_dim;
    let total = plan.total_entries();
    let proj = project(x, wq, wk, wv, pw, pb, plan);
    let scale = S::from_f64(1.0 / (c as f64).sqrt());

    // pass A over source views: dQ rows plus per-entry dk/dv coefficients
    let mut dq_all = vec![S::ZERO; rows * c];
    let mut dk_all = vec![S::ZERO; total * c];
    let mut dv_all = vec![S::ZERO; total * c];
    {
        let dq_ptr = RawParts(dq_all.as_mut_ptr());
        let dk_ptr = RawParts(dk_all.as_mut_ptr());
        let dv_ptr = RawParts(dv_all.as_mut_ptr());
        parallel::for_each_task(n, |i| {
            let src = &plan.sources[i];
            let base = plan.source_base[i];
            let n_e = src.target_view.len();
            let dq_i = unsafe { dq_ptr.slice(i * hw * c, hw * c) };
            let dk_i = unsafe { dk_ptr.slice(base * c, n_e * c) };
            let dv_i = unsafe { dv_ptr.slice(base * c, n_e * c) };
            let mut k_scratch: Vec<S> = Vec::new();
            let mut v_scratch: Vec<S> = Vec::new();
            let mut da: Vec<S> = Vec::new();
            let mut buf = vec![S::ZERO; c];
            for p in 0..hw {
                let (e0, e1) = (src.offsets[p] as usize, src.offsets[p + 1] as usize);
                if e0 == e1 {
                    continue;
                }
                let cnt = e1 - e0;
                let q = &proj.xq[(i * hw + p) * c..(i * hw + p + 1) * c];
                let dm = &dout.data()[(i * hw + p) * c..(i * hw + p + 1) * c];
                k_scratch.clear();
                v_scratch.clear();
                da.clear();
                for e in e0..e1 {
                    let l = src.target_view[e] as usize;
                    let (cells, weights) = bilinear_taps(h, w, src.tx[e], src.ty[e]);
                    let ws = [
                        S::from_f64(weights[0]),
                        S::from_f64(weights[1]),
                        S::from_f64(weights[2]),
                        S::from_f64(weights[3]),
                    ];
                    gather_taps(&proj.xk[l * hw * c..(l + 1) * hw * c], c, &cells, &ws, &mut buf);
                    let pk = &proj.pk[(base + e) * c..(base + e + 1) * c];
                    for j in 0..c {
                        k_scratch.push(buf[j] + pk[j]);
                    }
                    gather_taps(&proj.xv[l * hw * c..(l + 1) * hw * c], c, &cells, &ws, &mut buf);
                    let pv = &proj.pv[(base + e) * c..(base + e + 1) * c];
                    let mut da_e = S::ZERO;
                    for j in 0..c {
                        let v = buf[j] + pv[j];
                        v_scratch.push(v);
                        da_e += dm[j] * v;
                    }
                    da.push(da_e);
                }
                let a = &attn[base + e0..base + e1];
                let mut dot = S::ZERO;
                for off in 0..cnt {
                    dot += a[off] * da[off];
                }
                let dq = &mut dq_i[p * c..(p + 1) * c];
                for off in 0..cnt {
                    let dl = a[off] * (da[off] - dot) * scale;
                    let ks = &k_scratch[off * c..(off + 1) * c];
                    let dk = &mut dk_i[(e0 + off) * c..(e0 + off + 1) * c];
                    for j in 0..c {
                        dq[j] += dl * ks[j];
                        dk[j] = dl * q[j];
                    }
                    let av = a[off];
                    let dv = &mut dv_i[(e0 + off) * c..(e0 + off + 1) * c];
                    for j in 0..c {
                        dv[j] = av * dm[j];
                    }
                }
            }
        });
    }

    // pass B over target views: scatter dk/dv through the bilinear taps
    let mut dxk = vec![S::ZERO; rows * c];
    let mut dxv = vec![S::ZERO; rows * c];
    {
        let dxk_ptr = RawParts(dxk.as_mut_ptr());
        let dxv_ptr = RawParts(dxv.as_mut_ptr());
        parallel::for_each_task(n, |l| {
            let dxk_l = unsafe { dxk_ptr.slice(l * hw * c, hw * c) };
            let dxv_l = unsafe { dxv_ptr.slice(l * hw * c, hw * c) };
            for r in &plan.targets[l] {
                let src = &plan.sources[r.src as usize];
                let g = plan.source_base[r.src as usize] + r.local as usize;
                let (tx, ty) = (src.tx[r.local as usize], src.ty[r.local as usize]);
                bilinear_scatter(dxk_l, h, w, c, tx, ty, &dk_all[g * c..(g + 1) * c]);
                bilinear_scatter(dxv_l, h, w, c, tx, ty, &dv_all[g * c..(g + 1) * c]);
            }
        });
    }

    // encoding-side partials, reduced in source order
    let mut dmk = vec![S::ZERO; e_dim * c];
    let mut dmv = vec![S::ZERO; e_dim * c];
    let mut dmkb = vec![S::ZERO; c];
    let mut dmvb = vec![S::ZERO; c];
    for (i, src) in plan.sources.iter().enumerate() {
        let n_e = src.target_view.len();
        if n_e == 0 {
            continue;
        }
        let base = plan.source_base[i] * c;
        S::gemm_tn(e_dim, n_e, c, S::ONE, &src.enc, &dk_all[base..base + n_e * c], S::ONE, &mut dmk);
        S::gemm_tn(e_dim, n_e, c, S::ONE, &src.enc, &dv_all[base..base + n_e * c], S::ONE, &mut dmv);
        for e in 0..n_e {
            for j in 0..c {
                dmkb[j] += dk_all[base + e * c + j];
                dmvb[j] += dv_all[base + e * c + j];
            }
        }
    }

    // input gradient: all three projection paths fold into one accumulation
    let mut dx = Tensor::zeros(&s);
    {
        let dxd = dx.data_mut();
        S::gemm_nt(rows, c, c, S::ONE, &dq_all, wq.data(), S::ZERO, dxd);
        S::gemm_nt(rows, c, c, S::ONE, &dxk, wk.data(), S::ONE, dxd);
        S::gemm_nt(rows, c, c, S::ONE, &dxv, wv.data(), S::ONE, dxd);
    }

    // weight gradients
    let mut dqb = vec![S::ZERO; c];
    for r in 0..rows {
        for j in 0..c {
            dqb[j] += dq_all[r * c + j];
        }
    }
    let mut dwq = Tensor::zeros(&[c, c]);
    S::gemm_tn(c, rows, c, S::ONE, x.data(), &dq_all, S::ZERO, dwq.data_mut());
    outer_acc(dwq.data_mut(), &proj.g0, &dqb);

    let mut dwk = Tensor::zeros(&[c, c]);
    S::gemm_tn(c, rows, c, S::ONE, x.data(), &dxk, S::ZERO, dwk.data_mut());
    S::gemm_tn(c, e_dim, c, S::ONE, pw.data(), &dmk, S::ONE, dwk.data_mut());
    outer_acc(dwk.data_mut(), pb.data(), &dmkb);

    let mut dwv = Tensor::zeros(&[c, c]);
    S::gemm_tn(c, rows, c, S::ONE, x.data(), &dxv, S::ZERO, dwv.data_mut());
    S::gemm_tn(c, e_dim, c, S::ONE, pw.data(), &dmv, S::ONE, dwv.data_mut());
    outer_acc(dwv.data_mut(), pb.data(), &dmvb);

    // position lift gradients: query side through g0, key/value sides through Mk/Mv
    let mut dg0 = vec![S::ZERO; c];
    mat_vec(wq.data(), &dqb, c, c, &mut dg0);
    let mut dpw = Tensor::zeros(&[e_dim, c]);
    outer_acc(dpw.data_mut(), &plan.enc_zero, &dg0);
    S::gemm_nt(e_dim, c, c, S::ONE, &dmk, wk.data(), S::ONE, dpw.data_mut());
    S::gemm_nt(e_dim, c, c, S::ONE, &dmv, wv.data(), S::ONE, dpw.data_mut());

    let mut dpb = Tensor::zeros(&[c]);
    {
        let d = dpb.data_mut();
        for j in 0..c {
            d[j] = dg0[j];
        }
        let mut tmp = vec![S::ZERO; c];
        mat_vec(wk.data(), &dmkb, c, c, &mut tmp);
        for j in 0..c {
            d[j] += tmp[j];
        }
        mat_vec(wv.data(), &dmvb, c, c, &mut tmp);
        for j in 0..c {
            d[j] += tmp[j];
        }
    }

    vec![
        dx,
        dwq,
        dwk,
        dwv,
        dpw,
        dpb,
    ]
}
