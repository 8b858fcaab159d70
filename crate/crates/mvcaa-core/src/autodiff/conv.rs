//! Convolution via im2col + GEMM, plus nearest-neighbor upsampling.
//!
//! Views are independent GEMM calls dispatched over the worker pool; each
//! view's output region is written by exactly one task, so results do not
//! depend on the thread count.

use crate::parallel::for_each_chunk_mut;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn conv_out_size(h: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (h + 2 * pad - kernel) / stride + 1
}

fn im2col<S: Scalar>(
    x: &[S],
    h: usize,
    w: usize,
    cin: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    cols: &mut [S],
) {
    let ho = conv_out_size(h, kernel, stride, pad);
    let wo = conv_out_size(w, kernel, stride, pad);
    let patch = kernel * kernel * cin;
    debug_assert_eq!(cols.len(), ho * wo * patch);
    for v in cols.iter_mut() {
        *v = S::ZERO;
    }
    for oy in 0..ho {
        for ox in 0..wo {
            let row = (oy * wo + ox) * patch;
            for ky in 0..kernel {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = ((iy as usize) * w + ix as usize) * cin;
                    let dst = row + (ky * kernel + kx) * cin;
                    cols[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                }
            }
        }
    }
}

/// x: [n,h,w,cin], w: [k,k,cin,cout], b: [cout] -> [n,ho,wo,cout].
pub fn conv2d_forward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Tensor<S> {
    let s = x.shape();
    assert_eq!(s.len(), 4, "conv2d wants [n,h,w,c], got {s:?}");
    let (n, h, w, cin) = (s[0], s[1], s[2], s[3]);
    let ws = weight.shape();
    assert_eq!(ws.len(), 4, "conv2d weight wants [k,k,cin,cout], got {ws:?}");
    let (kernel, cout) = (ws[0], ws[3]);
    assert_eq!(ws[1], kernel);
    assert_eq!(ws[2], cin, "conv2d channel mismatch: x {s:?} w {ws:?}");
    assert_eq!(bias.shape(), &[cout]);
    let ho = conv_out_size(h, kernel, stride, pad);
    let wo = conv_out_size(w, kernel, stride, pad);
    let patch = kernel * kernel * cin;
    let mut out = Tensor::zeros(&[n, ho, wo, cout]);
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    for_each_chunk_mut(out.data_mut(), n, |vi, o| {
        let xs = &xd[vi * h * w * cin..(vi + 1) * h * w * cin];
        let mut cols = vec![S::ZERO; ho * wo * patch];
        im2col(xs, h, w, cin, kernel, stride, pad, &mut cols);
        S::gemm(ho * wo, patch, cout, S::ONE, &cols, wd, S::ZERO, o);
        for r in 0..ho * wo {
            for j in 0..cout {
                o[r * cout + j] += bd[j];
            }
        }
    });
    out
}

pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    dy: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let s = x.shape();
    let (n, h, w, cin) = (s[0], s[1], s[2], s[3]);
    let ws = weight.shape();
    let (kernel, cout) = (ws[0], ws[3]);
    let ho = conv_out_size(h, kernel, stride, pad);
    let wo = conv_out_size(w, kernel, stride, pad);
    let patch = kernel * kernel * cin;
    let xd = x.data();
    let wd = weight.data();
    let dyd = dy.data();

    let mut dx = Tensor::zeros(&[n, h, w, cin]);
    // per-view weight partials, reduced in view order afterwards
    let mut dw_parts = vec![S::ZERO; n * patch * cout];
    {
        let dxd_all = dx.data_mut();
        let dw_slices = split_even(&mut dw_parts, n);
        let dx_slices = split_even(dxd_all, n);
        crate::parallel::for_each_task(n, |vi| {
            let xs = &xd[vi * h * w * cin..(vi + 1) * h * w * cin];
            let dys = &dyd[vi * ho * wo * cout..(vi + 1) * ho * wo * cout];
            let mut cols = vec![S::ZERO; ho * wo * patch];
            im2col(xs, h, w, cin, kernel, stride, pad, &mut cols);
            let dw_part = unsafe { dw_slices.get_mut(vi) };
            S::gemm_tn(patch, ho * wo, cout, S::ONE, &cols, dys, S::ZERO, dw_part);
            // dcols = dy * w^T, then col2im scatter
            let mut dcols = vec![S::ZERO; ho * wo * patch];
            S::gemm_nt(ho * wo, cout, patch, S::ONE, dys, wd, S::ZERO, &mut dcols);
            let dxs = unsafe { dx_slices.get_mut(vi) };
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = (oy * wo + ox) * patch;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let dst = ((iy as usize) * w + ix as usize) * cin;
                            let src = row + (ky * kernel + kx) * cin;
                            for c in 0..cin {
                                dxs[dst + c] += dcols[src + c];
                            }
                        }
                    }
                }
            }
        });
    }
    let mut dw = Tensor::zeros(&[kernel, kernel, cin, cout]);
    for vi in 0..n {
        let part = &dw_parts[vi * patch * cout..(vi + 1) * patch * cout];
        for (a, &b) in dw.data_mut().iter_mut().zip(part) {
            *a += b;
        }
    }
    let mut db = Tensor::zeros(&[cout]);
    for r in 0..n * ho * wo {
        for j in 0..cout {
            db.data_mut()[j] += dyd[r * cout + j];
        }
    }
    (dx, dw, db)
}

/// Disjoint equal chunks addressable by task index from inside the pool.
struct EvenSlices<S> {
    ptr: *mut S,
    chunk: usize,
}
unsafe impl<S> Send for EvenSlices<S> {}
unsafe impl<S> Sync for EvenSlices<S> {}

impl<S> EvenSlices<S> {
    /// Caller guarantees distinct `i` across concurrent users.
    #[allow(clippy::mut_from_ref)]
    unsafe fn get_mut(&self, i: usize) -> &mut [S] {
        std::slice::from_raw_parts_mut(self.ptr.add(i * self.chunk), self.chunk)
    }
}

fn split_even<S>(data: &mut [S], n: usize) -> EvenSlices<S> {
    assert_eq!(data.len() % n, 0);
    EvenSlices { ptr: data.as_mut_ptr(), chunk: data.len() / n }
}

pub fn upsample2_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let s = x.shape();
    assert_eq!(s.len(), 4);
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[n, 2 * h, 2 * w, c]);
    let xd = x.data();
    let od = out.data_mut();
    for vi in 0..n {
        for y in 0..h {
            for xi in 0..w {
                let src = ((vi * h + y) * w + xi) * c;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let dst = ((vi * 2 * h + 2 * y + dy) * 2 * w + 2 * xi + dx) * c;
                        od[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<S: Scalar>(in_shape: &[usize], dy: &Tensor<S>) -> Tensor<S> {
    let (n, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let mut dx = Tensor::zeros(in_shape);
    let dyd = dy.data();
    let dxd = dx.data_mut();
    for vi in 0..n {
        for y in 0..h {
            for xi in 0..w {
                let dst = ((vi * h + y) * w + xi) * c;
                for dy2 in 0..2 {
                    for dx2 in 0..2 {
                        let src = ((vi * 2 * h + 2 * y + dy2) * 2 * w + 2 * xi + dx2) * c;
                        for ci in 0..c {
                            dxd[dst + ci] += dyd[src + ci];
                        }
                    }
                }
            }
        }
    }
    dx
}
