use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svsr_tensor::{ComplexVar, Padding, Tape, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Nested-loop same-size cross-correlation, independent of the im2col path.
fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, pad: Padding) -> Tensor<f64> {
    let (c, h, w) = x.dims3().unwrap();
    let [co, _, kh, kw] = *k.shape() else { panic!() };
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let at = |ch: usize, y: isize, xx: isize| -> f64 {
        let inside = y >= 0 && y < h as isize && xx >= 0 && xx < w as isize;
        match (pad, inside) {
            (_, true) => x.data()[(ch * h + y as usize) * w + xx as usize],
            (Padding::Zero, false) => 0.0,
            (Padding::Replicate, false) => {
                let yy = y.clamp(0, h as isize - 1) as usize;
                let xc = xx.clamp(0, w as isize - 1) as usize;
                x.data()[(ch * h + yy) * w + xc]
            }
        }
    };
    let mut out = Tensor::zeros([co, h, w]);
    for o in 0..co {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for ci in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let kv = k.data()[((o * c + ci) * kh + i) * kw + j];
                            acc += kv * at(ci, y as isize + i as isize - ph, xx as isize + j as isize - pw);
                        }
                    }
                }
                out.data_mut()[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

/// Direct O(N²) orthonormal DFT of one real plane.
fn dft_oracle(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    let norm = 1.0 / ((h * w) as f64).sqrt();
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let ang = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                    sr += x[y * w + xx] * ang.cos();
                    si += x[y * w + xx] * ang.sin();
                }
            }
            re[u * w + v] = sr * norm;
            im[u * w + v] = si * norm;
        }
    }
    (re, im)
}

#[test]
fn conv2d_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for pad in [Padding::Replicate, Padding::Zero] {
        for _ in 0..5 {
            let x = random(&[2, 5, 5], &mut rng);
            let k = random(&[3, 2, 3, 3], &mut rng);
            let tape = Tape::new();
            let y = tape.constant(x.clone()).conv2d(tape.constant(k.clone()), pad).unwrap();
            let want = conv_oracle(&x, &k, pad);
            assert!(y.value().max_abs_diff(&want) < 1e-12);
        }
    }
}

#[test]
fn conv2d_identity_and_constant_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[3, 6, 4], &mut rng);
    let tape = Tape::new();
    let mut id = Tensor::zeros([3, 3, 1, 1]);
    for c in 0..3 {
        id.data_mut()[c * 3 + c] = 1.0;
    }
    let y = tape.constant(x.clone()).conv2d(tape.constant(id), Padding::Replicate).unwrap();
    assert_eq!(*y.value(), x);

    let flat = tape.constant(Tensor::full([1, 5, 5], 0.5));
    let k = tape.constant(Tensor::full([1, 1, 3, 3], 1.0 / 9.0));
    let y = flat.conv2d(k, Padding::Replicate).unwrap();
    assert!(y.value().data().iter().all(|v| (v - 0.5).abs() < 1e-15));
}

#[test]
fn blur2d_matches_single_channel_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[3, 7, 6], &mut rng);
    let k = random(&[5, 5], &mut rng);
    let tape = Tape::new();
    let y = tape.constant(x.clone()).blur2d(tape.constant(k.clone()), Padding::Replicate).unwrap();
    let k4 = k.clone().reshape([1, 1, 5, 5]).unwrap();
    for c in 0..3 {
        let plane = Tensor::new([1, 7, 6], x.plane(c).to_vec()).unwrap();
        let want = conv_oracle(&plane, &k4, Padding::Replicate);
        let got = Tensor::new([1, 7, 6], y.value().plane(c).to_vec()).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }
}

#[test]
fn fft2_matches_direct_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (h, w) in [(8, 8), (5, 7), (1, 4)] {
        let x = random(&[h, w], &mut rng);
        let tape = Tape::new();
        let f = tape.constant(x.clone()).fft2().unwrap();
        let (re, im) = dft_oracle(x.data(), h, w);
        let got_re = f.re.value();
        let got_im = f.im.value();
        for i in 0..h * w {
            assert!((got_re.data()[i] - re[i]).abs() < 1e-10);
            assert!((got_im.data()[i] - im[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn fft2_round_trip_parseval_and_linearity() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let x = random(&[3, 6, 10], &mut rng);
        let y = random(&[3, 6, 10], &mut rng);
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let fx = xv.fft2().unwrap();
        let back = fx.ifft2().unwrap();
        assert!(back.re.value().max_abs_diff(&x) < 1e-10);
        assert!(back.im.value().data().iter().all(|v| v.abs() < 1e-10));

        let energy = fx.norm_sq().unwrap().item();
        let direct: f64 = x.data().iter().map(|v| v * v).sum();
        assert!((energy - direct).abs() < 1e-10 * direct.max(1.0));

        let yv = tape.constant(y.clone());
        let combo = xv.scale(a).add(yv.scale(b)).unwrap().fft2().unwrap();
        let fy = yv.fft2().unwrap();
        let lin_re = fx.re.scale(a).add(fy.re.scale(b)).unwrap();
        let lin_im = fx.im.scale(a).add(fy.im.scale(b)).unwrap();
        assert!(combo.re.value().max_abs_diff(&lin_re.value()) < 1e-10);
        assert!(combo.im.value().max_abs_diff(&lin_im.value()) < 1e-10);
    }
}

#[test]
fn complex_constructor_checks_shapes() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros([2, 2]));
    let b = tape.constant(Tensor::zeros([2, 3]));
    assert!(ComplexVar::new(a, b).is_err());
}
