use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Real> Var<'t, T> {
    fn check_same_shape(&self, other: &Var<'t, T>, op: &'static str) -> Result<()> {
        self.same_tape(other, op)?;
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(TensorError::dim(op, format!("{:?} vs {:?}", a, b)));
        }
        Ok(())
    }

    /// Elementwise op whose derivative depends only on the input value.
    fn unary(self, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(&f);
        self.tape().push_op(out, &[self], move |g, _| {
            vec![Some(
                g.iter()
                    .zip(x.data())
                    .map(|(&g, &v)| g * df(v))
                    .collect(),
            )]
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_same_shape(&other, "add")?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect();
        let out = Tensor::new(a.shape(), data)?;
        Ok(self
            .tape()
            .push_op(out, &[self, other], |g, _| vec![Some(g.to_vec()), Some(g.to_vec())]))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_same_shape(&other, "sub")?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(x, y)| *x - *y).collect();
        let out = Tensor::new(a.shape(), data)?;
        Ok(self.tape().push_op(out, &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]
        }))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_same_shape(&other, "mul")?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect();
        let out = Tensor::new(a.shape(), data)?;
        Ok(self.tape().push_op(out, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(g, v)| *g * *v).collect());
            let gb = needs[1].then(|| g.iter().zip(a.data()).map(|(g, v)| *g * *v).collect());
            vec![ga, gb]
        }))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let out = self.value().map(|v| v * c);
        self.tape()
            .push_op(out, &[self], move |g, _| vec![Some(g.iter().map(|&v| v * c).collect())])
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let out = self.value().map(|v| v + c);
        self.tape().push_op(out, &[self], |g, _| vec![Some(g.to_vec())])
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn square(self) -> Var<'t, T> {
        let two = T::of(2.0);
        self.unary(|v| v * v, move |v| two * v)
    }

    /// `|x|` with subgradient 0 at 0.
    pub fn abs(self) -> Var<'t, T> {
        self.unary(|v| v.abs(), |v| {
            if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn ln_1p(self) -> Var<'t, T> {
        self.unary(|v| v.ln_1p(), |v| T::one() / (T::one() + v))
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        self.unary(
            move |v| if v > T::zero() { v } else { v * slope },
            move |v| if v > T::zero() { T::one() } else { slope },
        )
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(sigmoid);
        let y = out.clone();
        self.tape().push_op(out, &[self], move |g, _| {
            vec![Some(
                g.iter()
                    .zip(y.data())
                    .map(|(&g, &s)| g * s * (T::one() - s))
                    .collect(),
            )]
        })
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(self) -> Var<'t, T> {
        self.unary(softplus, sigmoid)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let n = x.numel();
        let out = Tensor::scalar(x.sum());
        self.tape()
            .push_op(out, &[self], move |g, _| vec![Some(vec![g[0]; n])])
    }

    /// Sum of squares, as a scalar.
    pub fn sum_squares(self) -> Var<'t, T> {
        let x = self.value();
        let out = Tensor::scalar(x.data().iter().map(|&v| v * v).sum());
        let two = T::of(2.0);
        self.tape().push_op(out, &[self], move |g, _| {
            vec![Some(x.data().iter().map(|&v| two * g[0] * v).collect())]
        })
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let out = (*self.value()).clone().reshape(shape)?;
        Ok(self.tape().push_op(out, &[self], |g, _| vec![Some(g.to_vec())]))
    }

    /// Multiplies every `[H, W]` plane of `[.., H, W]` by `map`.
    pub fn mul_plane(self, map: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&map, "mul_plane")?;
        let (x, m) = (self.value(), map.value());
        let shape = x.shape().to_vec();
        if shape.len() < 2 || m.shape() != &shape[shape.len() - 2..] {
            return Err(TensorError::dim(
                "mul_plane",
                format!("map {:?} does not match planes of {:?}", m.shape(), shape),
            ));
        }
        let hw = m.numel();
        let data: Vec<T> = x
            .data()
            .chunks(hw)
            .flat_map(|p| p.iter().zip(m.data()).map(|(a, b)| *a * *b))
            .collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.tape().push_op(out, &[self, map], move |g, needs| {
            let gx = needs[0].then(|| {
                g.chunks(hw)
                    .flat_map(|p| p.iter().zip(m.data()).map(|(a, b)| *a * *b))
                    .collect()
            });
            let gm = needs[1].then(|| {
                let mut acc = vec![T::zero(); hw];
                for (gp, xp) in g.chunks(hw).zip(x.data().chunks(hw)) {
                    for ((a, gv), xv) in acc.iter_mut().zip(gp).zip(xp) {
                        *a += *gv * *xv;
                    }
                }
                acc
            });
            vec![gx, gm]
        }))
    }

    /// Adds `bias[c]` to channel `c` of a `[C, H, W]` tensor.
    pub fn add_channel_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&bias, "add_channel_bias")?;
        let (x, b) = (self.value(), bias.value());
        let (c, h, w) = x.dims3()?;
        if b.numel() != c {
            return Err(TensorError::dim(
                "add_channel_bias",
                format!("{} biases for {} channels", b.numel(), c),
            ));
        }
        let hw = h * w;
        let mut data = x.data().to_vec();
        for (ch, p) in data.chunks_mut(hw).enumerate() {
            let bv = b.data()[ch];
            p.iter_mut().for_each(|v| *v += bv);
        }
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.tape().push_op(out, &[self, bias], move |g, needs| {
            let gb = needs[1].then(|| g.chunks(hw).map(|p| p.iter().copied().sum()).collect());
            vec![needs[0].then(|| g.to_vec()), gb]
        }))
    }

    /// Multiplies channel `c` of a `[C, H, W]` tensor by `gain[c]`.
    pub fn scale_channels(self, gain: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&gain, "scale_channels")?;
        let (x, s) = (self.value(), gain.value());
        let (c, h, w) = x.dims3()?;
        if s.numel() != c {
            return Err(TensorError::dim(
                "scale_channels",
                format!("{} gains for {} channels", s.numel(), c),
            ));
        }
        let hw = h * w;
        let mut data = x.data().to_vec();
        for (ch, p) in data.chunks_mut(hw).enumerate() {
            let sv = s.data()[ch];
            p.iter_mut().for_each(|v| *v *= sv);
        }
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.tape().push_op(out, &[self, gain], move |g, needs| {
            let gx = needs[0].then(|| {
                g.chunks(hw)
                    .enumerate()
                    .flat_map(|(ch, p)| {
                        let sv = s.data()[ch];
                        p.iter().map(move |&v| v * sv)
                    })
                    .collect()
            });
            let gs = needs[1].then(|| {
                g.chunks(hw)
                    .zip(x.data().chunks(hw))
                    .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| *a * *b).sum())
                    .collect()
            });
            vec![gx, gs]
        }))
    }
}

pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Real>(v: T) -> T {
    // max(v, 0) + ln(1 + e^{-|v|})
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv<T: Real>(v: T) -> T {
    // ln(e^v - 1) = v + ln(1 - e^{-v})
    v + (-(-v).exp()).ln_1p()
}
