use crate::error::Result;
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Real> Var<'t, T> {
    /// Normalizes each channel of `[C, H, W]` to zero mean and unit
    /// (biased) variance over its spatial extent. No affine part; compose
    /// with [`Var::scale_channels`] and [`Var::add_channel_bias`].
    pub fn instance_norm(self, eps: T) -> Result<Var<'t, T>> {
        let x = self.value();
        let (c, h, w) = x.dims3()?;
        let hw = h * w;
        let n = T::of(hw as f64);
        let mut out = vec![T::zero(); c * hw];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let p = x.plane(ch);
            let rough = p.iter().copied().sum::<T>() / n;
            // second pass removes the rounding error of the first
            let mean = rough + p.iter().map(|&v| v - rough).sum::<T>() / n;
            let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for (o, &v) in out[ch * hw..(ch + 1) * hw].iter_mut().zip(p) {
                *o = (v - mean) * is;
            }
        }
        let out = Tensor::new([c, h, w], out)?;
        let xhat = out.clone();
        Ok(self.tape().push_op(out, &[self], move |g, _| {
            // dx = inv_std * (g - mean(g) - xhat * mean(g * xhat))
            let mut gx = vec![T::zero(); c * hw];
            for ch in 0..c {
                let gp = &g[ch * hw..(ch + 1) * hw];
                let xp = xhat.plane(ch);
                let mg = gp.iter().copied().sum::<T>() / n;
                let mgx = gp.iter().zip(xp).map(|(a, b)| *a * *b).sum::<T>() / n;
                for ((d, &gv), &xv) in gx[ch * hw..(ch + 1) * hw].iter_mut().zip(gp).zip(xp) {
                    *d = inv_std[ch] * (gv - mg - xv * mgx);
                }
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    #[test]
    fn constant_channel_maps_to_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full([2, 3, 3], 0.7));
        let y = x.instance_norm(1e-5).unwrap();
        assert!(y.value().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_level_channel_maps_to_plus_minus_one() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([1, 2, 2], |i| if i % 2 == 0 { 0.0 } else { 2.0 }));
        let y = x.instance_norm(1e-5).unwrap();
        // variance 1, so the eps correction is 1/sqrt(1 + 1e-5)
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        let want = [-s, s, -s, s];
        for (a, b) in y.value().data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
