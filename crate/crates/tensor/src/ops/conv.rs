//! Same-size 2-D cross-correlation.
//!
//! Both ops pad the input once, then read shifted windows from the padded
//! buffer. The backward pass scatters into a padded gradient buffer and
//! folds it back with [`unpad_add`], the adjoint of [`pad_planes`].

use crate::error::{Result, TensorError};
use crate::real::{Real, View};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Border pixels are repeated.
    #[default]
    Replicate,
    Zero,
}

/// Pads each `h×w` plane by `ph` rows and `pw` columns on every side.
pub fn pad_planes<T: Real>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    mode: Padding,
) -> Vec<T> {
    let (hp, wp) = (h + 2 * ph, w + 2 * pw);
    let mut out = vec![T::zero(); planes * hp * wp];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * hp * wp..(p + 1) * hp * wp];
        for yp in 0..hp {
            let y = match mode {
                Padding::Replicate => (yp as isize - ph as isize).clamp(0, h as isize - 1) as usize,
                Padding::Zero => {
                    if yp < ph || yp >= ph + h {
                        continue;
                    }
                    yp - ph
                }
            };
            let row = &src[y * w..(y + 1) * w];
            let drow = &mut dst[yp * wp..(yp + 1) * wp];
            drow[pw..pw + w].copy_from_slice(row);
            if mode == Padding::Replicate {
                drow[..pw].fill(row[0]);
                drow[pw + w..].fill(row[w - 1]);
            }
        }
    }
    out
}

/// Adjoint of [`pad_planes`]: folds a padded gradient back onto the
/// original planes.
pub fn unpad_add<T: Real>(
    gp: &[T],
    planes: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    mode: Padding,
) -> Vec<T> {
    let (hp, wp) = (h + 2 * ph, w + 2 * pw);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &gp[p * hp * wp..(p + 1) * hp * wp];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for yp in 0..hp {
            let y = match mode {
                Padding::Replicate => (yp as isize - ph as isize).clamp(0, h as isize - 1) as usize,
                Padding::Zero => {
                    if yp < ph || yp >= ph + h {
                        continue;
                    }
                    yp - ph
                }
            };
            let srow = &src[yp * wp..(yp + 1) * wp];
            let drow = &mut dst[y * w..(y + 1) * w];
            for (d, s) in drow.iter_mut().zip(&srow[pw..pw + w]) {
                *d += *s;
            }
            if mode == Padding::Replicate {
                drow[0] += srow[..pw].iter().copied().sum();
                drow[w - 1] += srow[pw + w..].iter().copied().sum();
            }
        }
    }
    out
}

/// `out[p, y, x] = Σ_ij k[i, j] · xpad[p, y + i, x + j]` for every plane.
#[allow(clippy::too_many_arguments)]
pub fn correlate_planes<T: Real>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    kernel: &[T],
    kh: usize,
    kw: usize,
    mode: Padding,
) -> Vec<T> {
    let (ph, pw) = (kh / 2, kw / 2);
    let xp = pad_planes(x, planes, h, w, ph, pw, mode);
    correlate_padded(&xp, planes, h, w, kernel, kh, kw)
}

fn correlate_padded<T: Real>(
    xp: &[T],
    planes: usize,
    h: usize,
    w: usize,
    kernel: &[T],
    kh: usize,
    kw: usize,
) -> Vec<T> {
    let (hp, wp) = (h + kh - 1, w + kw - 1);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &xp[p * hp * wp..(p + 1) * hp * wp];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let orow = &mut dst[y * w..(y + 1) * w];
            for i in 0..kh {
                let srow = &src[(y + i) * wp..(y + i + 1) * wp];
                for j in 0..kw {
                    let kv = kernel[i * kw + j];
                    for (o, s) in orow.iter_mut().zip(&srow[j..j + w]) {
                        *o += kv * *s;
                    }
                }
            }
        }
    }
    out
}

fn check_kernel_dims(op: &'static str, kh: usize, kw: usize) -> Result<()> {
    if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
        return Err(TensorError::dim(op, format!("kernel {}x{} must have odd sides", kh, kw)));
    }
    Ok(())
}

impl<'t, T: Real> Var<'t, T> {
    /// Multi-channel same-size cross-correlation.
    ///
    /// `self` is `[C, H, W]`, `kernel` is `[C_out, C, kh, kw]`, output is
    /// `[C_out, H, W]`. Each tap is one GEMM against a shifted view of the
    /// padded input; outputs are computed on the padded row width and the
    /// extra columns dropped.
    pub fn conv2d(self, kernel: Var<'t, T>, padding: Padding) -> Result<Var<'t, T>> {
        self.same_tape(&kernel, "conv2d")?;
        let (x, k) = (self.value(), kernel.value());
        let (c, h, w) = x.dims3()?;
        let [co, ci, kh, kw] = *k.shape() else {
            return Err(TensorError::dim("conv2d", format!("kernel shape {:?}", k.shape())));
        };
        if ci != c {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel expects {} input channels, input has {}", ci, c),
            ));
        }
        check_kernel_dims("conv2d", kh, kw)?;
        let (ph, pw) = (kh / 2, kw / 2);
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);
        let plane = hp * wp;
        let len = h * wp;
        let taps = kh * kw;

        let mut xp = pad_planes(x.data(), c, h, w, ph, pw, padding);
        // the last tap's view runs kw - 1 elements past the final plane
        xp.resize(c * plane + kw - 1, T::zero());
        let kview = move |i: usize, j: usize| View::new(i * kw + j, c * taps, taps);
        let xview = move |i: usize, j: usize| View::new(i * wp + j, plane, 1);
        let mut wide = vec![T::zero(); co * len];
        for i in 0..kh {
            for j in 0..kw {
                let first = i == 0 && j == 0;
                T::gemm_view(co, c, len, k.data(), kview(i, j), &xp, xview(i, j), &mut wide, View::new(0, len, 1), !first);
            }
        }
        let mut out = Vec::with_capacity(co * h * w);
        for row in wide.chunks_exact(wp) {
            out.extend_from_slice(&row[..w]);
        }
        let out = Tensor::new([co, h, w], out)?;

        let xp = kernel.requires_grad().then_some(xp);
        Ok(self.tape().push_op(out, &[self, kernel], move |g, needs| {
            let mut gw = vec![T::zero(); co * len];
            for (dst, src) in gw.chunks_exact_mut(wp).zip(g.chunks_exact(w)) {
                dst[..w].copy_from_slice(src);
            }
            let gx = needs[0].then(|| {
                let mut gp = vec![T::zero(); c * plane + kw - 1];
                for i in 0..kh {
                    for j in 0..kw {
                        let kt = View::new(i * kw + j, taps, c * taps);
                        T::gemm_view(c, co, len, k.data(), kt, &gw, View::new(0, len, 1), &mut gp, xview(i, j), true);
                    }
                }
                gp.truncate(c * plane);
                unpad_add(&gp, c, h, w, ph, pw, padding)
            });
            let gk = if needs[1] {
                xp.as_ref().map(|xp| {
                    let mut dk = vec![T::zero(); co * c * taps];
                    for i in 0..kh {
                        for j in 0..kw {
                            let xt = View::new(i * wp + j, 1, plane);
                            T::gemm_view(co, len, c, &gw, View::new(0, len, 1), xp, xt, &mut dk, kview(i, j), false);
                        }
                    }
                    dk
                })
            } else {
                None
            };
            vec![gx, gk]
        }))
    }

    /// Correlates every `[H, W]` plane of `[.., H, W]` with one shared
    /// `[kh, kw]` kernel.
    pub fn blur2d(self, kernel: Var<'t, T>, padding: Padding) -> Result<Var<'t, T>> {
        self.same_tape(&kernel, "blur2d")?;
        let (x, k) = (self.value(), kernel.value());
        let shape = x.shape().to_vec();
        if shape.len() < 2 {
            return Err(TensorError::dim("blur2d", format!("input shape {:?}", shape)));
        }
        let [kh, kw] = *k.shape() else {
            return Err(TensorError::dim("blur2d", format!("kernel shape {:?}", k.shape())));
        };
        check_kernel_dims("blur2d", kh, kw)?;
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes = x.numel() / (h * w).max(1);
        let (ph, pw) = (kh / 2, kw / 2);
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);

        let xp = pad_planes(x.data(), planes, h, w, ph, pw, padding);
        let out = correlate_padded(&xp, planes, h, w, k.data(), kh, kw);
        let out = Tensor::new(shape, out)?;

        Ok(self.tape().push_op(out, &[self, kernel], move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gp = vec![T::zero(); planes * hp * wp];
                for p in 0..planes {
                    let dst = &mut gp[p * hp * wp..(p + 1) * hp * wp];
                    let src = &g[p * h * w..(p + 1) * h * w];
                    for y in 0..h {
                        let grow = &src[y * w..(y + 1) * w];
                        for i in 0..kh {
                            let drow = &mut dst[(y + i) * wp..(y + i + 1) * wp];
                            for j in 0..kw {
                                let kv = k.data()[i * kw + j];
                                for (d, gv) in drow[j..j + w].iter_mut().zip(grow) {
                                    *d += kv * *gv;
                                }
                            }
                        }
                    }
                }
                unpad_add(&gp, planes, h, w, ph, pw, padding)
            });
            let gk = needs[1].then(|| {
                let mut dk = vec![T::zero(); kh * kw];
                for p in 0..planes {
                    let src = &xp[p * hp * wp..(p + 1) * hp * wp];
                    let gpl = &g[p * h * w..(p + 1) * h * w];
                    for y in 0..h {
                        let grow = &gpl[y * w..(y + 1) * w];
                        for i in 0..kh {
                            let srow = &src[(y + i) * wp..(y + i + 1) * wp];
                            for j in 0..kw {
                                let dot: T = grow
                                    .iter()
                                    .zip(&srow[j..j + w])
                                    .map(|(a, b)| *a * *b)
                                    .sum();
                                dk[i * kw + j] += dot;
                            }
                        }
                    }
                }
                dk
            });
            vec![gx, gk]
        }))
    }

    /// [`Var::blur2d`] evaluated only at every `stride`-th row and column,
    /// giving `[.., H/stride, W/stride]`.
    pub fn blur2d_strided(self, kernel: Var<'t, T>, padding: Padding, stride: usize) -> Result<Var<'t, T>> {
        if stride == 1 {
            return self.blur2d(kernel, padding);
        }
        self.same_tape(&kernel, "blur2d_strided")?;
        let (x, k) = (self.value(), kernel.value());
        let mut shape = x.shape().to_vec();
        if shape.len() < 2 {
            return Err(TensorError::dim("blur2d_strided", format!("input shape {:?}", shape)));
        }
        let [kh, kw] = *k.shape() else {
            return Err(TensorError::dim("blur2d_strided", format!("kernel shape {:?}", k.shape())));
        };
        check_kernel_dims("blur2d_strided", kh, kw)?;
        let n = shape.len();
        let (h, w) = (shape[n - 2], shape[n - 1]);
        if stride == 0 || h % stride != 0 || w % stride != 0 {
            return Err(TensorError::dim(
                "blur2d_strided",
                format!("{}x{} is not divisible by stride {}", h, w, stride),
            ));
        }
        let s = stride;
        let planes = x.numel() / (h * w).max(1);
        let (ph, pw) = (kh / 2, kw / 2);
        let (hp, wp) = (h + 2 * ph, w + 2 * pw);
        let (ho, wo) = (h / s, w / s);
        shape[n - 2] = ho;
        shape[n - 1] = wo;

        // polyphase split: tap (i, j) reads phase (i % s, j % s) at offset (i / s, j / s)
        let (hq, wq) = (hp.div_ceil(s), wp.div_ceil(s));
        let pl = s * s * hq * wq;
        let phase = move |p: usize, i: usize, j: usize| p * pl + ((i % s) * s + j % s) * hq * wq;
        let xp = pad_planes(x.data(), planes, h, w, ph, pw, padding);
        let mut xq = vec![T::zero(); planes * pl];
        for p in 0..planes {
            let src = &xp[p * hp * wp..(p + 1) * hp * wp];
            for (r, row) in src.chunks_exact(wp).enumerate() {
                for (c, v) in row.iter().enumerate() {
                    xq[phase(p, r, c) + (r / s) * wq + c / s] = *v;
                }
            }
        }

        let mut out = vec![T::zero(); planes * ho * wo];
        for p in 0..planes {
            for y in 0..ho {
                let orow = &mut out[(p * ho + y) * wo..(p * ho + y + 1) * wo];
                for i in 0..kh {
                    for j in 0..kw {
                        let kv = k.data()[i * kw + j];
                        let at = phase(p, i, j) + (y + i / s) * wq + j / s;
                        for (o, v) in orow.iter_mut().zip(&xq[at..at + wo]) {
                            *o += kv * *v;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(shape, out)?;

        Ok(self.tape().push_op(out, &[self, kernel], move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gq = vec![T::zero(); planes * pl];
                for p in 0..planes {
                    for y in 0..ho {
                        let grow = &g[(p * ho + y) * wo..(p * ho + y + 1) * wo];
                        for i in 0..kh {
                            for j in 0..kw {
                                let kv = k.data()[i * kw + j];
                                let at = phase(p, i, j) + (y + i / s) * wq + j / s;
                                for (d, gv) in gq[at..at + wo].iter_mut().zip(grow) {
                                    *d += kv * *gv;
                                }
                            }
                        }
                    }
                }
                let mut gp = vec![T::zero(); planes * hp * wp];
                for p in 0..planes {
                    let dst = &mut gp[p * hp * wp..(p + 1) * hp * wp];
                    for (r, row) in dst.chunks_exact_mut(wp).enumerate() {
                        for (c, v) in row.iter_mut().enumerate() {
                            *v = gq[phase(p, r, c) + (r / s) * wq + c / s];
                        }
                    }
                }
                unpad_add(&gp, planes, h, w, ph, pw, padding)
            });
            let gk = needs[1].then(|| {
                let mut dk = vec![T::zero(); kh * kw];
                for p in 0..planes {
                    for y in 0..ho {
                        let grow = &g[(p * ho + y) * wo..(p * ho + y + 1) * wo];
                        for i in 0..kh {
                            for j in 0..kw {
                                let at = phase(p, i, j) + (y + i / s) * wq + j / s;
                                let dot: T = grow.iter().zip(&xq[at..at + wo]).map(|(a, b)| *a * *b).sum();
                                dk[i * kw + j] += dot;
                            }
                        }
                    }
                }
                dk
            });
            vec![gx, gk]
        }))
    }
}
