//! PNG images, raw `f32` tensors with JSON sidecars, and heatmaps.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use svsr_tensor::{Tensor, TensorError};

use crate::error::{CoreError, Result};

fn image_err(path: &Path, source: image::ImageError) -> CoreError {
    CoreError::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads any 8-bit-convertible image as `[3, H, W]` in `[0, 1]`.
pub fn read_png(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::new([3, h, w], data)?)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `[3, H, W]` (values clamped to `[0, 1]`) as 8-bit RGB.
pub fn write_png(path: impl AsRef<Path>, x: &Tensor<f64>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = x.dims3()?;
    if c != 3 {
        return Err(TensorError::dim("write_png", format!("{} channels", c)).into());
    }
    let img = RgbImage::from_fn(w as u32, h as u32, |xx, yy| {
        let i = yy as usize * w + xx as usize;
        Rgb([quantize(x.plane(0)[i]), quantize(x.plane(1)[i]), quantize(x.plane(2)[i])])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

/// Writes an `[H, W]` map as 8-bit grayscale, min-max scaled (constant maps
/// become black).
pub fn write_heatmap(path: impl AsRef<Path>, map: &Tensor<f64>) -> Result<()> {
    let path = path.as_ref();
    let [h, w] = *map.shape() else {
        return Err(TensorError::dim("write_heatmap", format!("{:?}", map.shape())).into());
    };
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let img = GrayImage::from_fn(w as u32, h as u32, |xx, yy| {
        let v = map.data()[yy as usize * w + xx as usize];
        Luma([if span > 0.0 { quantize((v - lo) / span) } else { 0 }])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub name: String,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes `<path>` as little-endian `f32` and `<path>.json` (extension
/// replaced) describing it.
pub fn write_raw(path: impl AsRef<Path>, name: &str, x: &Tensor<f64>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = x.data().iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))?;
    let side = Sidecar {
        shape: x.shape().to_vec(),
        dtype: "f32".into(),
        name: name.into(),
    };
    let sp = sidecar_path(path);
    fs::write(&sp, serde_json::to_vec_pretty(&side)?).map_err(|e| CoreError::io(&sp, e))
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<(Sidecar, Tensor<f64>)> {
    let path = path.as_ref();
    let sp = sidecar_path(path);
    let side: Sidecar = serde_json::from_slice(&fs::read(&sp).map_err(|e| CoreError::io(&sp, e))?)?;
    if side.dtype != "f32" {
        return Err(CoreError::Contract(format!("{}: unsupported dtype {}", sp.display(), side.dtype)));
    }
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(CoreError::Contract(format!("{}: truncated f32 data", path.display())));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let t = Tensor::new(side.shape.clone(), data)?;
    Ok((side, t))
}
