//! Group normalization (UNet blocks) and channel layer norm (CAA blocks).

use super::NORM_EPS;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// x: [n,h,w,c], stats over (h,w,c/groups) per (view, group).
pub fn group_norm_forward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    groups: usize,
) -> (Tensor<S>, Vec<S>, Vec<S>) {
    let s = x.shape();
    assert_eq!(s.len(), 4, "group_norm wants [n,h,w,c], got {s:?}");
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    assert_eq!(c % groups, 0, "channels {c} not divisible by groups {groups}");
    assert_eq!(gamma.shape(), &[c]);
    assert_eq!(beta.shape(), &[c]);
    let cg = c / groups;
    let m = (h * w * cg) as f64;
    let mut mean = vec![S::ZERO; n * groups];
    let mut rstd = vec![S::ZERO; n * groups];
    let mut out = Tensor::zeros(s);
    let xd = x.data();
    let od = out.data_mut();
    let (gd, bd) = (gamma.data(), beta.data());
    for vi in 0..n {
        for g in 0..groups {
            let mut sum = 0.0f64;
            let mut sq = 0.0f64;
            for p in 0..h * w {
                let base = (vi * h * w + p) * c + g * cg;
                for j in 0..cg {
                    let v = xd[base + j].to_f64();
                    sum += v;
                    sq += v * v;
                }
            }
            let mu = sum / m;
            let var = (sq / m - mu * mu).max(0.0);
            let rs = 1.0 / (var + NORM_EPS).sqrt();
            mean[vi * groups + g] = S::from_f64(mu);
            rstd[vi * groups + g] = S::from_f64(rs);
            let (mu_s, rs_s) = (S::from_f64(mu), S::from_f64(rs));
            for p in 0..h * w {
                let base = (vi * h * w + p) * c + g * cg;
                for j in 0..cg {
                    let ch = g * cg + j;
                    od[base + j] = (xd[base + j] - mu_s) * rs_s * gd[ch] + bd[ch];
                }
            }
        }
    }
    (out, mean, rstd)
}

pub fn group_norm_backward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    dy: &Tensor<S>,
    groups: usize,
    mean: &[S],
    rstd: &[S],
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let s = x.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let cg = c / groups;
    let m = S::from_f64((h * w * cg) as f64);
    let mut dx = Tensor::zeros(s);
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let xd = x.data();
    let dyd = dy.data();
    let gd = gamma.data();
    for vi in 0..n {
        for g in 0..groups {
            let mu = mean[vi * groups + g];
            let rs = rstd[vi * groups + g];
            // first pass: sums of dxhat and dxhat*xhat
            let mut sum_dxh = S::ZERO;
            let mut sum_dxh_xh = S::ZERO;
            for p in 0..h * w {
                let base = (vi * h * w + p) * c + g * cg;
                for j in 0..cg {
                    let ch = g * cg + j;
                    let xh = (xd[base + j] - mu) * rs;
                    let dxh = dyd[base + j] * gd[ch];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh;
                    dgamma.data_mut()[ch] += dyd[base + j] * xh;
                    dbeta.data_mut()[ch] += dyd[base + j];
                }
            }
            let mean_dxh = sum_dxh / m;
            let mean_dxh_xh = sum_dxh_xh / m;
            let dxd = dx.data_mut();
            for p in 0..h * w {
                let base = (vi * h * w + p) * c + g * cg;
                for j in 0..cg {
                    let ch = g * cg + j;
                    let xh = (xd[base + j] - mu) * rs;
                    let dxh = dyd[base + j] * gd[ch];
                    dxd[base + j] = rs * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Normalize over the last dimension (channels) per position.
pub fn layer_norm_forward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
) -> (Tensor<S>, Vec<S>, Vec<S>) {
    let s = x.shape();
    let c = *s.last().expect("layer_norm wants rank >= 1");
    assert_eq!(gamma.shape(), &[c]);
    assert_eq!(beta.shape(), &[c]);
    let rows = x.numel() / c;
    let m = c as f64;
    let mut mean = vec![S::ZERO; rows];
    let mut rstd = vec![S::ZERO; rows];
    let mut out = Tensor::zeros(s);
    let xd = x.data();
    let od = out.data_mut();
    let (gd, bd) = (gamma.data(), beta.data());
    for r in 0..rows {
        let base = r * c;
        let mut sum = 0.0f64;
        let mut sq = 0.0f64;
        for j in 0..c {
            let v = xd[base + j].to_f64();
            sum += v;
            sq += v * v;
        }
        let mu = sum / m;
        let var = (sq / m - mu * mu).max(0.0);
        let rs = 1.0 / (var + NORM_EPS).sqrt();
        mean[r] = S::from_f64(mu);
        rstd[r] = S::from_f64(rs);
        let (mu_s, rs_s) = (S::from_f64(mu), S::from_f64(rs));
        for j in 0..c {
            od[base + j] = (xd[base + j] - mu_s) * rs_s * gd[j] + bd[j];
        }
    }
    (out, mean, rstd)
}

pub fn layer_norm_backward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    dy: &Tensor<S>,
    mean: &[S],
    rstd: &[S],
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let s = x.shape();
    let c = *s.last().unwrap();
    let rows = x.numel() / c;
    let m = S::from_f64(c as f64);
    let mut dx = Tensor::zeros(s);
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let xd = x.data();
    let dyd = dy.data();
    let gd = gamma.data();
    for r in 0..rows {
        let base = r * c;
        let mu = mean[r];
        let rs = rstd[r];
        let mut sum_dxh = S::ZERO;
        let mut sum_dxh_xh = S::ZERO;
        for j in 0..c {
            let xh = (xd[base + j] - mu) * rs;
            let dxh = dyd[base + j] * gd[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh;
            dgamma.data_mut()[j] += dyd[base + j] * xh;
            dbeta.data_mut()[j] += dyd[base + j];
        }
        let mean_dxh = sum_dxh / m;
        let mean_dxh_xh = sum_dxh_xh / m;
        let dxd = dx.data_mut();
        for j in 0..c {
            let xh = (xd[base + j] - mu) * rs;
            let dxh = dyd[base + j] * gd[j];
            dxd[base + j] = rs * (dxh - mean_dxh - xh * mean_dxh_xh);
        }
    }
    (dx, dgamma, dbeta)
}
