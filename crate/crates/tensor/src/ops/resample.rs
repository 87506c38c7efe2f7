//! Spatial resampling and slicing over the trailing `[H, W]` axes.

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

fn planes_hw(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(TensorError::dim(op, format!("need [.., H, W], got {:?}", shape)));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes = shape[..shape.len() - 2].iter().product();
    Ok((planes, h, w))
}

fn with_hw(shape: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let n = s.len();
    s[n - 2] = h;
    s[n - 1] = w;
    s
}

impl<'t, T: Real> Var<'t, T> {
    /// Keeps every `s`-th pixel in both axes, starting at offset 0.
    pub fn downsample(self, s: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (planes, h, w) = planes_hw(x.shape(), "downsample")?;
        if s == 0 || h % s != 0 || w % s != 0 {
            return Err(TensorError::dim(
                "downsample",
                format!("{}x{} is not divisible by scale {}", h, w, s),
            ));
        }
        let (ho, wo) = (h / s, w / s);
        let mut out = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            for y in 0..ho {
                let row = &x.data()[p * h * w + y * s * w..];
                out.extend((0..wo).map(|xo| row[xo * s]));
            }
        }
        let out = Tensor::new(with_hw(x.shape(), ho, wo), out)?;
        let n = x.numel();
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut gx = vec![T::zero(); n];
            for p in 0..planes {
                for y in 0..ho {
                    for xo in 0..wo {
                        gx[p * h * w + y * s * w + xo * s] = g[(p * ho + y) * wo + xo];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Mean over non-overlapping 2×2 blocks.
    pub fn avg_pool2(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (planes, h, w) = planes_hw(x.shape(), "avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::dim("avg_pool2", format!("{}x{} is not even", h, w)));
        }
        let (ho, wo) = (h / 2, w / 2);
        let q = T::of(0.25);
        let d = x.data();
        let mut out = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            let b = p * h * w;
            for y in 0..ho {
                for xo in 0..wo {
                    let i = b + 2 * y * w + 2 * xo;
                    out.push((d[i] + d[i + 1] + d[i + w] + d[i + w + 1]) * q);
                }
            }
        }
        let out = Tensor::new(with_hw(x.shape(), ho, wo), out)?;
        let n = x.numel();
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut gx = vec![T::zero(); n];
            for p in 0..planes {
                let b = p * h * w;
                for y in 0..ho {
                    for xo in 0..wo {
                        let v = g[(p * ho + y) * wo + xo] * q;
                        let i = b + 2 * y * w + 2 * xo;
                        gx[i] = v;
                        gx[i + 1] = v;
                        gx[i + w] = v;
                        gx[i + w + 1] = v;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample_nearest2(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (planes, h, w) = planes_hw(x.shape(), "upsample_nearest2")?;
        let (ho, wo) = (2 * h, 2 * w);
        let d = x.data();
        let mut out = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            for y in 0..ho {
                let row = &d[p * h * w + (y / 2) * w..];
                out.extend((0..wo).map(|xo| row[xo / 2]));
            }
        }
        let out = Tensor::new(with_hw(x.shape(), ho, wo), out)?;
        let n = x.numel();
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut gx = vec![T::zero(); n];
            for p in 0..planes {
                for y in 0..ho {
                    for xo in 0..wo {
                        gx[p * h * w + (y / 2) * w + xo / 2] += g[(p * ho + y) * wo + xo];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Window `[top .. top+h, left .. left+w]` of every plane.
    pub fn crop2d(self, top: usize, left: usize, h: usize, w: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (planes, hi, wi) = planes_hw(x.shape(), "crop2d")?;
        if top + h > hi || left + w > wi {
            return Err(TensorError::dim(
                "crop2d",
                format!("window {}x{} at ({}, {}) exceeds {}x{}", h, w, top, left, hi, wi),
            ));
        }
        let mut out = Vec::with_capacity(planes * h * w);
        for p in 0..planes {
            for y in 0..h {
                let s = p * hi * wi + (top + y) * wi + left;
                out.extend_from_slice(&x.data()[s..s + w]);
            }
        }
        let out = Tensor::new(with_hw(x.shape(), h, w), out)?;
        let n = x.numel();
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut gx = vec![T::zero(); n];
            for p in 0..planes {
                for y in 0..h {
                    let s = p * hi * wi + (top + y) * wi + left;
                    gx[s..s + w].copy_from_slice(&g[(p * h + y) * w..(p * h + y + 1) * w]);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Forward difference along the last axis: `x[.., j+1] - x[.., j]`.
    pub fn diff_x(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (planes, h, w) = planes_hw(x.shape(), "diff_x")?;
        let wo = w.saturating_sub(1);
        let d = x.data();
        let mut out = Vec::with_capacity(planes * h * wo);
        for r in 0..planes * h {
            let row = &d[r * w..(r + 1) * w];
            out.extend(row.windows(2).map(|p| p[1] - p[0]));
        }
        let out = Tensor::new(with_hw(x.shape(), h, wo), out)?;
        let n = x.numel();
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut gx = vec![T::zero(); n];
            for r in 0..planes * h {
                for j in 0..wo {
                    let v = g[r * wo + j];
                    gx[r * w + j + 1] += v;
                    gx[r * w + j] -= v;
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Forward difference along the second-to-last axis.
    pub fn diff_y(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (planes, h, w) = planes_hw(x.shape(), "diff_y")?;
        let ho = h.saturating_sub(1);
        let d = x.data();
        let mut out = Vec::with_capacity(planes * ho * w);
        for p in 0..planes {
            for y in 0..ho {
                let a = p * h * w + y * w;
                out.extend((0..w).map(|j| d[a + w + j] - d[a + j]));
            }
        }
        let out = Tensor::new(with_hw(x.shape(), ho, w), out)?;
        let n = x.numel();
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut gx = vec![T::zero(); n];
            for p in 0..planes {
                for y in 0..ho {
                    let a = p * h * w + y * w;
                    for j in 0..w {
                        let v = g[(p * ho + y) * w + j];
                        gx[a + w + j] += v;
                        gx[a + j] -= v;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenates along axis 0 (channels, for `[C, H, W]`).
    pub fn concat0(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::contract("concat0", "nothing to concatenate"))?;
        let tail = first.shape()[1..].to_vec();
        let mut lead = 0;
        let mut sizes = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for p in parts {
            p.same_tape(first, "concat0")?;
            let v = p.value();
            if v.shape().is_empty() || v.shape()[1..] != tail[..] {
                return Err(TensorError::dim(
                    "concat0",
                    format!("{:?} does not stack with {:?}", v.shape(), first.shape()),
                ));
            }
            lead += v.shape()[0];
            sizes.push(v.numel());
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let out = Tensor::new(shape, data)?;
        Ok(first.tape().push_op(out, parts, move |g, needs| {
            let mut off = 0;
            sizes
                .iter()
                .zip(needs)
                .map(|(&n, &need)| {
                    let s = need.then(|| g[off..off + n].to_vec());
                    off += n;
                    s
                })
                .collect()
        }))
    }

    /// Rows `start .. start+len` along axis 0.
    pub fn narrow0(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(TensorError::dim(
                "narrow0",
                format!("rows {}..{} of {:?}", start, start + len, shape),
            ));
        }
        let stride: usize = shape[1..].iter().product();
        let mut oshape = shape.clone();
        oshape[0] = len;
        let out = Tensor::new(oshape, x.data()[start * stride..(start + len) * stride].to_vec())?;
        let n = x.numel();
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            let mut gx = vec![T::zero(); n];
            gx[start * stride..(start + len) * stride].copy_from_slice(g);
            vec![Some(gx)]
        }))
    }

    /// Index `i` along axis 0, dropping that axis.
    pub fn select0(self, i: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        self.narrow0(i, 1)?.reshape(shape[1..].to_vec())
    }
}
