//! Dense kernels: linear layers, GELU, token self-attention, prompt injection.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
const GELU_CUBIC: f64 = 0.044715;
const TANH_CLAMP: f64 = 5.0;

/// Pade(7,6) tanh on a clamped argument: vectorizes where libm tanh cannot,
/// and its analytic derivative below matches this exact formula.
#[inline]
fn tanh_pade<S: Scalar>(x: S) -> S {
    let lim = S::from_f64(TANH_CLAMP);
    let x = x.maxs(-lim).mins(lim);
    let x2 = x * x;
    let c135135 = S::from_f64(135135.0);
    let p = x * (c135135 + x2 * (S::from_f64(17325.0) + x2 * (S::from_f64(378.0) + x2)));
    let q = c135135 + x2 * (S::from_f64(62370.0) + x2 * (S::from_f64(3150.0) + x2 * S::from_f64(28.0)));
    p / q
}

#[inline]
fn tanh_pade_grad<S: Scalar>(x: S) -> S {
    let lim = S::from_f64(TANH_CLAMP);
    if x < -lim || x > lim {
        return S::ZERO;
    }
    let x2 = x * x;
    let c135135 = S::from_f64(135135.0);
    let p = x * (c135135 + x2 * (S::from_f64(17325.0) + x2 * (S::from_f64(378.0) + x2)));
    let q = c135135 + x2 * (S::from_f64(62370.0) + x2 * (S::from_f64(3150.0) + x2 * S::from_f64(28.0)));
    let dp = c135135 + x2 * (S::from_f64(3.0 * 17325.0) + x2 * (S::from_f64(5.0 * 378.0) + x2 * S::from_f64(7.0)));
    let dq = x * (S::from_f64(2.0 * 62370.0) + x2 * (S::from_f64(4.0 * 3150.0) + x2 * S::from_f64(6.0 * 28.0)));
    (dp * q - p * dq) / (q * q)
}

/// tanh-approximation GELU.
#[inline]
pub fn gelu_scalar<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    let c = S::from_f64(SQRT_2_OVER_PI);
    let a = S::from_f64(GELU_CUBIC);
    let inner = c * (x + a * x * x * x);
    half * x * (S::ONE + tanh_pade(inner))
}

#[inline]
pub fn gelu_grad_scalar<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    let c = S::from_f64(SQRT_2_OVER_PI);
    let a = S::from_f64(GELU_CUBIC);
    let three = S::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = tanh_pade(u);
    let dt = tanh_pade_grad(u);
    half * (S::ONE + t) + half * x * dt * c * (S::ONE + three * a * x * x)
}

/// `x[r,din] * w[din,dout] + b[dout]`.
pub fn linear_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!(x.shape().len(), 2, "linear wants 2-d input, got {:?}", x.shape());
    let (r, din) = (x.shape()[0], x.shape()[1]);
    let (dw, dout) = (w.shape()[0], w.shape()[1]);
    assert_eq!(din, dw, "linear dims: x {:?} w {:?}", x.shape(), w.shape());
    assert_eq!(b.shape(), &[dout], "linear bias shape {:?}", b.shape());
    let mut out = Tensor::zeros(&[r, dout]);
    S::gemm(r, din, dout, S::ONE, x.data(), w.data(), S::ZERO, out.data_mut());
    let bd = b.data();
    let od = out.data_mut();
    for row in 0..r {
        for j in 0..dout {
            od[row * dout + j] += bd[j];
        }
    }
    out
}

pub fn linear_backward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, dy: &Tensor<S>) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (r, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[1];
    let mut dx = Tensor::zeros(&[r, din]);
    S::gemm_nt(r, dout, din, S::ONE, dy.data(), w.data(), S::ZERO, dx.data_mut());
    let mut dw = Tensor::zeros(&[din, dout]);
    S::gemm_tn(din, r, dout, S::ONE, x.data(), dy.data(), S::ZERO, dw.data_mut());
    let mut db = Tensor::zeros(&[dout]);
    let dbd = db.data_mut();
    let dyd = dy.data();
    for row in 0..r {
        for j in 0..dout {
            dbd[j] += dyd[row * dout + j];
        }
    }
    (dx, dw, db)
}

/// Row-wise softmax in place with max subtraction.
pub fn softmax_rows<S: Scalar>(data: &mut [S], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let mut m = row[0];
        for &v in row.iter() {
            if v > m {
                m = v;
            }
        }
        let mut sum = S::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// dS = A * (dA - rowsum(A * dA)) row-wise, in place over `da`.
pub fn softmax_backward_rows<S: Scalar>(attn: &[S], da: &mut [S], rows: usize, cols: usize) {
    for r in 0..rows {
        let a = &attn[r * cols..(r + 1) * cols];
        let d = &mut da[r * cols..(r + 1) * cols];
        let mut dot = S::ZERO;
        for j in 0..cols {
            dot += a[j] * d[j];
        }
        for j in 0..cols {
            d[j] = a[j] * (d[j] - dot);
        }
    }
}

/// Single-head self-attention delta per view.
/// x is [n, t, c]; all projections are [c, c]; returns ([n,t,c], attn [n,t,t]).
pub fn self_attn_forward<S: Scalar>(
    x: &Tensor<S>,
    wq: &Tensor<S>,
    wk: &Tensor<S>,
    wv: &Tensor<S>,
    wo: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>) {
    let s = x.shape();
    assert_eq!(s.len(), 3, "self_attention wants [n,t,c], got {s:?}");
    let (n, t, c) = (s[0], s[1], s[2]);
    let scale = S::from_f64(1.0 / (c as f64).sqrt());
    let mut out = Tensor::zeros(&[n, t, c]);
    let mut attn = Tensor::zeros(&[n, t, t]);
    for vi in 0..n {
        let xs = &x.data()[vi * t * c..(vi + 1) * t * c];
        let mut q = vec![S::ZERO; t * c];
        let mut k = vec![S::ZERO; t * c];
        let mut v = vec![S::ZERO; t * c];
        S::gemm(t, c, c, S::ONE, xs, wq.data(), S::ZERO, &mut q);
        S::gemm(t, c, c, S::ONE, xs, wk.data(), S::ZERO, &mut k);
        S::gemm(t, c, c, S::ONE, xs, wv.data(), S::ZERO, &mut v);
        let a = &mut attn.data_mut()[vi * t * t..(vi + 1) * t * t];
        S::gemm_nt(t, c, t, scale, &q, &k, S::ZERO, a);
        softmax_rows(a, t, t);
        let mut ctx = vec![S::ZERO; t * c];
        S::gemm(t, t, c, S::ONE, a, &v, S::ZERO, &mut ctx);
        let os = &mut out.data_mut()[vi * t * c..(vi + 1) * t * c];
        S::gemm(t, c, c, S::ONE, &ctx, wo.data(), S::ZERO, os);
    }
    (out, attn)
}

pub fn self_attn_backward<S: Scalar>(
    x: &Tensor<S>,
    wq: &Tensor<S>,
    wk: &Tensor<S>,
    wv: &Tensor<S>,
    wo: &Tensor<S>,
    attn: &Tensor<S>,
    dy: &Tensor<S>,
) -> Vec<Tensor<S>> {
    let s = x.shape();
    let (n, t, c) = (s[0], s[1], s[2]);
    let scale = S::from_f64(1.0 / (c as f64).sqrt());
    let mut dx = Tensor::zeros(&[n, t, c]);
    let mut dwq = Tensor::zeros(&[c, c]);
    let mut dwk = Tensor::zeros(&[c, c]);
    let mut dwv = Tensor::zeros(&[c, c]);
    let mut dwo = Tensor::zeros(&[c, c]);
    for vi in 0..n {
        let xs = &x.data()[vi * t * c..(vi + 1) * t * c];
        let a = &attn.data()[vi * t * t..(vi + 1) * t * t];
        let dys = &dy.data()[vi * t * c..(vi + 1) * t * c];
        // recompute projections and context
        let mut q = vec![S::ZERO; t * c];
        let mut k = vec![S::ZERO; t * c];
        let mut v = vec![S::ZERO; t * c];
        S::gemm(t, c, c, S::ONE, xs, wq.data(), S::ZERO, &mut q);
        S::gemm(t, c, c, S::ONE, xs, wk.data(), S::ZERO, &mut k);
        S::gemm(t, c, c, S::ONE, xs, wv.data(), S::ZERO, &mut v);
        let mut ctx = vec![S::ZERO; t * c];
        S::gemm(t, t, c, S::ONE, a, &v, S::ZERO, &mut ctx);

        let mut dctx = vec![S::ZERO; t * c];
        S::gemm_nt(t, c, c, S::ONE, dys, wo.data(), S::ZERO, &mut dctx);
        S::gemm_tn(c, t, c, S::ONE, &ctx, dys, S::ONE, dwo.data_mut());
        let mut da = vec![S::ZERO; t * t];
        S::gemm_nt(t, c, t, S::ONE, &dctx, &v, S::ZERO, &mut da);
        let mut dv = vec![S::ZERO; t * c];
        S::gemm_tn(t, t, c, S::ONE, a, &dctx, S::ZERO, &mut dv);
        softmax_backward_rows(a, &mut da, t, t);
        // dS rows already; apply the 1/sqrt(c) factor once into dq/dk
        let mut dq = vec![S::ZERO; t * c];
        S::gemm(t, t, c, scale, &da, &k, S::ZERO, &mut dq);
        let mut dk = vec![S::ZERO; t * c];
        S::gemm_tn(t, t, c, scale, &da, &q, S::ZERO, &mut dk);

        let dxs = &mut dx.data_mut()[vi * t * c..(vi + 1) * t * c];
        S::gemm_nt(t, c, c, S::ONE, &dq, wq.data(), S::ZERO, dxs);
        S::gemm_nt(t, c, c, S::ONE, &dk, wk.data(), S::ONE, dxs);
        S::gemm_nt(t, c, c, S::ONE, &dv, wv.data(), S::ONE, dxs);
        S::gemm_tn(c, t, c, S::ONE, xs, &dq, S::ONE, dwq.data_mut());
        S::gemm_tn(c, t, c, S::ONE, xs, &dk, S::ONE, dwk.data_mut());
        S::gemm_tn(c, t, c, S::ONE, xs, &dv, S::ONE, dwv.data_mut());
    }
    vec![dx, dwq, dwk, dwv, dwo]
}

/// y = x + broadcast over tokens of (emb[n,:] * wv + bv) * wo + bo.
pub fn prompt_inject_forward<S: Scalar>(
    x: &Tensor<S>,
    emb: &Tensor<S>,
    wv: &Tensor<S>,
    bv: &Tensor<S>,
    wo: &Tensor<S>,
    bo: &Tensor<S>,
) -> Tensor<S> {
    let s = x.shape();
    let (n, t, c) = (s[0], s[1], s[2]);
    let d = emb.shape()[1];
    assert_eq!(emb.shape()[0], n);
    assert_eq!(wv.shape(), &[d, c]);
    assert_eq!(wo.shape(), &[c, c]);
    let mut mid = vec![S::ZERO; n * c];
    S::gemm(n, d, c, S::ONE, emb.data(), wv.data(), S::ZERO, &mut mid);
    for ni in 0..n {
        for j in 0..c {
            mid[ni * c + j] += bv.data()[j];
        }
    }
    let mut msg = vec![S::ZERO; n * c];
    S::gemm(n, c, c, S::ONE, &mid, wo.data(), S::ZERO, &mut msg);
    for ni in 0..n {
        for j in 0..c {
            msg[ni * c + j] += bo.data()[j];
        }
    }
    let mut out = x.clone();
    let od = out.data_mut();
    for ni in 0..n {
        for ti in 0..t {
            let base = (ni * t + ti) * c;
            for j in 0..c {
                od[base + j] += msg[ni * c + j];
            }
        }
    }
    out
}

pub fn prompt_inject_backward<S: Scalar>(
    x: &Tensor<S>,
    emb: &Tensor<S>,
    wv: &Tensor<S>,
    bv: &Tensor<S>,
    wo: &Tensor<S>,
    dy: &Tensor<S>,
) -> Vec<Tensor<S>> {
    let s = x.shape();
    let (n, t, c) = (s[0], s[1], s[2]);
    let d = emb.shape()[1];
    // token-summed output gradient per view
    let mut g = vec![S::ZERO; n * c];
    let dyd = dy.data();
    for ni in 0..n {
        for ti in 0..t {
            let base = (ni * t + ti) * c;
            for j in 0..c {
                g[ni * c + j] += dyd[base + j];
            }
        }
    }
    // recompute mid = emb * wv + bv
    let mut mid = vec![S::ZERO; n * c];
    S::gemm(n, d, c, S::ONE, emb.data(), wv.data(), S::ZERO, &mut mid);
    for ni in 0..n {
        for j in 0..c {
            mid[ni * c + j] += bv.data()[j];
        }
    }
    let mut dbo = Tensor::zeros(&[c]);
    for ni in 0..n {
        for j in 0..c {
            dbo.data_mut()[j] += g[ni * c + j];
        }
    }
    let mut dwo = Tensor::zeros(&[c, c]);
    S::gemm_tn(c, n, c, S::ONE, &mid, &g, S::ZERO, dwo.data_mut());
    let mut dmid = vec![S::ZERO; n * c];
    S::gemm_nt(n, c, c, S::ONE, &g, wo.data(), S::ZERO, &mut dmid);
    let mut dbv = Tensor::zeros(&[c]);
    for ni in 0..n {
        for j in 0..c {
            dbv.data_mut()[j] += dmid[ni * c + j];
        }
    }
    let mut dwv = Tensor::zeros(&[d, c]);
    S::gemm_tn(d, n, c, S::ONE, emb.data(), &dmid, S::ZERO, dwv.data_mut());
    let mut demb = Tensor::zeros(&[n, d]);
    S::gemm_nt(n, c, d, S::ONE, &dmid, wv.data(), S::ZERO, demb.data_mut());
    vec![dy.clone(), demb, dwv, dbv, dwo, dbo]
}
