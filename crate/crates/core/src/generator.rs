//! Image prior: a small U-Net `G(z; φ)` with instance normalization and
//! frequency-domain skip connections, plus the TV and latent energies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use svsr_tensor::{ComplexVar, Padding, Real, Tape, Tensor, TensorError, Var};

use crate::error::{CoreError, Result};

const LEAKY_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;
/// Channels of the guide image concatenated to `z`.
const GUIDE_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub sigma_x: f64,
    pub sigma_z: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            sigma_x: 2.5,
            sigma_z: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_x > 0.0 && self.sigma_z > 0.0) {
            return Err(CoreError::config("sigma_x and sigma_z must be positive"));
        }
        Ok(())
    }
}

/// Architecture descriptor. The flags only change the wiring, never the
/// input/output contract.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub widths: [usize; 3],
    /// Concatenate a fixed 3-channel guide image to `z` at the input.
    pub guide: bool,
    pub instance_norm: bool,
    /// Frequency-domain skips; `false` concatenates encoder activations
    /// unchanged.
    pub freq_skip: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            widths: [16, 32, 64],
            guide: true,
            instance_norm: true,
            freq_skip: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(CoreError::config("generator widths must be positive"));
        }
        Ok(())
    }

    fn input_channels(&self) -> usize {
        1 + if self.guide { GUIDE_CHANNELS } else { 0 }
    }

    /// Names and shapes of every weight tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let [w1, w2, w3] = self.widths;
        let mut out = Vec::new();
        // a conv bias in front of instance norm would be cancelled by it
        let mut block = |name: &str, ci: usize, co: usize, norm: bool| {
            out.push((format!("{name}.weight"), vec![co, ci, 3, 3]));
            if norm {
                out.push((format!("{name}.norm.gain"), vec![co]));
                out.push((format!("{name}.norm.bias"), vec![co]));
            } else {
                out.push((format!("{name}.bias"), vec![co]));
            }
        };
        let n = self.instance_norm;
        block("enc1", self.input_channels(), w1, n);
        block("enc2", w1, w2, n);
        block("enc3", w2, w3, n);
        block("dec2", w3 + w2, w2, n);
        block("dec1", w2 + w1, w1, n);
        block("head", w1, 3, false);
        if self.freq_skip {
            for (name, c) in [("skip1", w1), ("skip2", w2)] {
                out.push((format!("{name}.mix.weight"), vec![2 * c, 2 * c, 1, 1]));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Network weights `φ`, latent `z` (`[1, H, W]`) and the optional guide
/// image (`[3, H, W]`).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorState<T: Real = f64> {
    pub config: GeneratorConfig,
    names: Vec<String>,
    pub params: Vec<Tensor<T>>,
    pub z: Tensor<T>,
    guide: Option<Tensor<T>>,
}

impl<T: Real> GeneratorState<T> {
    /// Seeded fan-in uniform init `U(−1/√fan_in, 1/√fan_in)` for conv
    /// weights and biases, unit gain and zero shift for the norms. `z` starts
    /// at zero and the guide (if enabled) at mid-grey.
    pub fn init(config: &GeneratorConfig, h: usize, w: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if !h.is_multiple_of(4) || !w.is_multiple_of(4) || h == 0 || w == 0 {
            return Err(TensorError::dim(
                "GeneratorState::init",
                format!("{}x{} is not a positive multiple of 4", h, w),
            )
            .into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = config.layout();
        let mut fan_in = 1;
        let mut params = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            let t = if name.ends_with("norm.gain") {
                Tensor::ones(shape.clone())
            } else if name.ends_with("norm.bias") {
                Tensor::zeros(shape.clone())
            } else {
                if shape.len() == 4 {
                    fan_in = shape[1] * shape[2] * shape[3];
                }
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::from_fn(shape.clone(), |_| T::of(rng.gen_range(-bound..bound)))
            };
            params.push(t);
        }
        Ok(GeneratorState {
            config: config.clone(),
            names: layout.into_iter().map(|(n, _)| n).collect(),
            params,
            z: Tensor::zeros([1, h, w]),
            guide: config.guide.then(|| Tensor::full([GUIDE_CHANNELS, h, w], T::of(0.5))),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.z.shape()[1], self.z.shape()[2])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn guide(&self) -> Option<&Tensor<T>> {
        self.guide.as_ref()
    }

    pub fn set_latent(&mut self, z: Tensor<T>) -> Result<()> {
        let (h, w) = self.dims();
        if z.shape() != [1, h, w] {
            return Err(TensorError::dim("set_latent", format!("{:?} for {}x{}", z.shape(), h, w)).into());
        }
        self.z = z;
        Ok(())
    }

    /// Replaces the guide image; ignored by a network without a guide input.
    pub fn set_guide(&mut self, guide: Tensor<T>) -> Result<()> {
        let (h, w) = self.dims();
        if guide.shape() != [GUIDE_CHANNELS, h, w] {
            return Err(TensorError::dim("set_guide", format!("{:?} for {}x{}", guide.shape(), h, w)).into());
        }
        if self.config.guide {
            self.guide = Some(guide);
        }
        Ok(())
    }

    /// Puts `φ` on the tape, as parameters when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Vec<Var<'t, T>> {
        self.params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect()
    }

    /// `G(z; φ)` on the tape; `phi` comes from [`GeneratorState::bind`].
    pub fn forward_on<'t>(&self, phi: &[Var<'t, T>], z: Var<'t, T>) -> Result<Var<'t, T>> {
        if phi.len() != self.params.len() {
            return Err(CoreError::Contract(format!(
                "{} weight tensors bound, {} expected",
                phi.len(),
                self.params.len()
            )));
        }
        let tape = z.tape();
        let get = |name: &str| -> Var<'t, T> {
            phi[self.names.iter().position(|n| n == name).expect("layout name")]
        };
        let cfg = &self.config;
        let block = |x: Var<'t, T>, name: &str| -> Result<Var<'t, T>> {
            let y = x.conv2d(get(&format!("{name}.weight")), Padding::Replicate)?;
            let y = if cfg.instance_norm {
                y.instance_norm(T::of(NORM_EPS))?
                    .scale_channels(get(&format!("{name}.norm.gain")))?
                    .add_channel_bias(get(&format!("{name}.norm.bias")))?
            } else {
                y.add_channel_bias(get(&format!("{name}.bias")))?
            };
            Ok(y.leaky_relu(T::of(LEAKY_SLOPE)))
        };
        let skip = |a: Var<'t, T>, name: &str| -> Result<Var<'t, T>> {
            if !cfg.freq_skip {
                return Ok(a);
            }
            frequency_skip(a, get(&format!("{name}.mix.weight")))
        };

        let input = match &self.guide {
            Some(g) if cfg.guide => Var::concat0(&[z, tape.constant(g.clone())])?,
            _ => z,
        };
        let e1 = block(input, "enc1")?;
        let e2 = block(e1.avg_pool2()?, "enc2")?;
        let e3 = block(e2.avg_pool2()?, "enc3")?;
        let d2 = block(Var::concat0(&[e3.upsample_nearest2()?, skip(e2, "skip2")?])?, "dec2")?;
        let d1 = block(Var::concat0(&[d2.upsample_nearest2()?, skip(e1, "skip1")?])?, "dec1")?;
        Ok(d1
            .conv2d(get("head.weight"), Padding::Replicate)?
            .add_channel_bias(get("head.bias"))?
            .sigmoid())
    }

    /// `G(z; φ)` as a plain tensor `[3, H, W]`.
    pub fn forward(&self) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let phi = self.bind(&tape, false);
        let x = self.forward_on(&phi, tape.constant(self.z.clone()))?;
        let v = x.value();
        Ok((*v).clone())
    }
}

/// `Re(F⁻¹(M · [Re F(a); Im F(a)]))` with orthonormal per-channel FFTs and
/// a 1×1 mixing convolution `M` over the stacked real/imaginary channels.
///
/// For real input only the real→real and imaginary→imaginary blocks of `M`
/// reach the output; the cross blocks produce an anti-Hermitian spectrum
/// whose inverse transform is purely imaginary. The mix has no bias for the
/// same reason (half of it would be dead, the other half is an impulse at
/// the origin pixel).
pub fn frequency_skip<'t, T: Real>(a: Var<'t, T>, weight: Var<'t, T>) -> Result<Var<'t, T>> {
    let c = a.shape()[0];
    let f = a.fft2()?;
    let mixed = Var::concat0(&[f.re, f.im])?.conv2d(weight, Padding::Zero)?;
    let spec = ComplexVar::new(mixed.narrow0(0, c)?, mixed.narrow0(c, c)?)?;
    Ok(spec.ifft2()?.re)
}

/// Anisotropic total variation `(1/(2σ_x)) Σ |∇x|` with forward differences
/// over both axes and all channels.
pub fn image_prior_energy<'t, T: Real>(x: Var<'t, T>, cfg: &PriorConfig) -> Result<Var<'t, T>> {
    let tv = x.diff_x()?.abs().sum().add(x.diff_y()?.abs().sum())?;
    Ok(tv.scale(T::of(0.5 / cfg.sigma_x)))
}

/// `(1/(2σ_z²)) ‖z‖²`.
pub fn latent_prior_energy<'t, T: Real>(z: Var<'t, T>, cfg: &PriorConfig) -> Var<'t, T> {
    z.sum_squares().scale(T::of(0.5 / (cfg.sigma_z * cfg.sigma_z)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_parameters() {
        let cfg = GeneratorConfig::default();
        // conv weights, instance-norm gain/shift, skip mixers, biased head
        let enc1 = 9 * 4 * 16 + 32;
        let enc2 = 9 * 16 * 32 + 64;
        let enc3 = 9 * 32 * 64 + 128;
        let dec2 = 9 * 96 * 32 + 64;
        let dec1 = 9 * 48 * 16 + 32;
        let head = 9 * 16 * 3 + 3;
        let skips = 32 * 32 + 64 * 64;
        assert_eq!(cfg.param_count(), enc1 + enc2 + enc3 + dec2 + dec1 + head + skips);
        assert_eq!(cfg.param_count(), 64_051);

        let plain = GeneratorConfig { guide: false, instance_norm: false, freq_skip: false, ..cfg };
        assert_eq!(plain.param_count(), 144 + 16 + 4640 + 18496 + 27680 + 6928 + 435);
    }

    #[test]
    fn init_rejects_odd_dims_and_is_deterministic() {
        let cfg = GeneratorConfig::default();
        assert!(GeneratorState::<f64>::init(&cfg, 6, 8, 0).is_err());
        let a = GeneratorState::<f64>::init(&cfg, 8, 8, 3).unwrap();
        let b = GeneratorState::<f64>::init(&cfg, 8, 8, 3).unwrap();
        assert_eq!(a, b);
        let c = GeneratorState::<f64>::init(&cfg, 8, 8, 4).unwrap();
        assert_ne!(a.params, c.params);
        assert_eq!(a.param_count(), cfg.param_count());
    }

    #[test]
    fn zero_head_gives_mid_grey() {
        let mut g = GeneratorState::<f64>::init(&GeneratorConfig::default(), 8, 12, 1).unwrap();
        g.param_mut("head.weight").unwrap().data_mut().fill(0.0);
        g.param_mut("head.bias").unwrap().data_mut().fill(0.0);
        let x = g.forward().unwrap();
        assert_eq!(x.shape(), &[3, 8, 12]);
        assert!(x.data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn tv_of_vertical_step() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([2, 6, 5], |i| if i % 5 >= 3 { 1.0 } else { 0.0 }));
        let e = image_prior_energy(x, &PriorConfig::default()).unwrap();
        assert!((e.item() - 2.0 * 6.0 / 5.0).abs() < 1e-12);
        let z = tape.constant(Tensor::ones([1, 4, 4]));
        assert_eq!(latent_prior_energy(z, &PriorConfig::default()).item(), 8.0);
    }
}
