//! Orthonormal 2-D discrete Fourier transform over the trailing `[H, W]`
//! axes. With the `1/sqrt(HW)` scaling in both directions the transform is
//! unitary, so its adjoint (used in the backward pass) is its inverse.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::Fft;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Complex tensor as a pair of real tape nodes of equal shape.
#[derive(Clone, Copy, Debug)]
pub struct ComplexVar<'t, T: Real = f64> {
    pub re: Var<'t, T>,
    pub im: Var<'t, T>,
}

fn run<T: Real>(
    re: &[T],
    im: &[T],
    planes: usize,
    h: usize,
    w: usize,
    plans: &(Arc<dyn Fft<T>>, Arc<dyn Fft<T>>),
) -> Vec<T> {
    let hw = h * w;
    let mut buf: Vec<Complex<T>> = re.iter().zip(im).map(|(&a, &b)| Complex::new(a, b)).collect();
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); hw];
    let (col_plan, row_plan) = plans;
    for p in 0..planes {
        let plane = &mut buf[p * hw..(p + 1) * hw];
        row_plan.process(plane);
        for y in 0..h {
            for x in 0..w {
                scratch[x * h + y] = plane[y * w + x];
            }
        }
        col_plan.process(&mut scratch);
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = scratch[x * h + y];
            }
        }
    }
    let s = T::one() / T::of(hw as f64).sqrt();
    // packed [re..., im...]
    let mut out = Vec::with_capacity(2 * buf.len());
    out.extend(buf.iter().map(|c| c.re * s));
    out.extend(buf.iter().map(|c| c.im * s));
    out
}

impl<'t, T: Real> ComplexVar<'t, T> {
    pub fn new(re: Var<'t, T>, im: Var<'t, T>) -> Result<Self> {
        re.same_tape(&im, "ComplexVar::new")?;
        if re.shape() != im.shape() {
            return Err(TensorError::dim(
                "ComplexVar::new",
                format!("re {:?} vs im {:?}", re.shape(), im.shape()),
            ));
        }
        Ok(ComplexVar { re, im })
    }

    /// Complex tensor with zero imaginary part.
    pub fn from_real(re: Var<'t, T>) -> Self {
        let im = re.tape().constant(Tensor::zeros(re.shape()));
        ComplexVar { re, im }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.re.shape()
    }

    fn dft(self, inverse: bool) -> Result<Self> {
        let shape = self.re.shape();
        if shape.len() < 2 || shape[shape.len() - 2] == 0 || shape[shape.len() - 1] == 0 {
            return Err(TensorError::dim("fft2", format!("need [.., H>=1, W>=1], got {:?}", shape)));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes = shape.iter().product::<usize>() / (h * w);
        let tape = self.re.tape();
        let fwd = tape.fft_plans(h, w, inverse);
        let adj = tape.fft_plans(h, w, !inverse);
        let (a, b) = (self.re.value(), self.im.value());
        let packed = run(a.data(), b.data(), planes, h, w, &fwd);
        let mut pshape = vec![2];
        pshape.extend(&shape);
        let n = a.numel();
        let node = tape.push_op(Tensor::new(pshape, packed)?, &[self.re, self.im], move |g, _| {
            let back = run(&g[..n], &g[n..], planes, h, w, &adj);
            let (gr, gi) = back.split_at(n);
            vec![Some(gr.to_vec()), Some(gi.to_vec())]
        });
        Ok(ComplexVar {
            re: node.select0(0)?,
            im: node.select0(1)?,
        })
    }

    pub fn fft2(self) -> Result<Self> {
        self.dft(false)
    }

    pub fn ifft2(self) -> Result<Self> {
        self.dft(true)
    }

    pub fn sub(self, other: ComplexVar<'t, T>) -> Result<Self> {
        Ok(ComplexVar {
            re: self.re.sub(other.re)?,
            im: self.im.sub(other.im)?,
        })
    }

    /// `Σ |c|²`, as a scalar.
    pub fn norm_sq(self) -> Result<Var<'t, T>> {
        self.re.sum_squares().add(self.im.sum_squares())
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Orthonormal 2-D DFT of a real tensor over its last two axes.
    pub fn fft2(self) -> Result<ComplexVar<'t, T>> {
        ComplexVar::from_real(self).fft2()
    }
}
