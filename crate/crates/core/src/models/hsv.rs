//! Images as 32×32 HSV tensors.
//!
//! Tensor files hold an ASCII header `"H W 3\n"` followed by `H·W·3`
//! little-endian `f32` values in row-major `(y, x, channel)` order.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

pub const SIDE: usize = 32;
pub const HSV_LEN: usize = SIDE * SIDE * 3;
const LARGEST_BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

/// `SIDE × SIDE × 3`, channels (hue, saturation, value).
#[derive(Debug, Clone, PartialEq)]
pub struct HsvTensor {
    data: Vec<f64>,
}

impl HsvTensor {
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.len() != HSV_LEN {
            return Err(Error::Shape(format!("HSV tensor needs {HSV_LEN} values, got {}", data.len())));
        }
        for (i, px) in data.chunks_exact(3).enumerate() {
            let ok = (0.0..1.0).contains(&px[0]) && (0.0..=1.0).contains(&px[1]) && (0.0..=1.0).contains(&px[2]);
            if !ok {
                return Err(Error::Data(format!(
                    "HSV pixel {i} out of range: ({}, {}, {})",
                    px[0], px[1], px[2]
                )));
            }
        }
        Ok(HsvTensor { data })
    }

    /// Every pixel set to `hsv`.
    pub fn filled(hsv: [f64; 3]) -> Result<Self> {
        HsvTensor::from_vec(hsv.iter().copied().cycle().take(HSV_LEN).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * SIDE + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel-major copy `(channel, y, x)` for convolution.
    pub fn to_planes(&self) -> Vec<f64> {
        let mut out = vec![0.0; HSV_LEN];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * SIDE * SIDE + p] = px[c];
            }
        }
        out
    }
}

/// RGB components in `[0, 1]` to (hue in `[0, 1)`, saturation, value).
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let sector = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = sector / 6.0;
    if h >= 1.0 {
        h = 0.0;
    }
    [h, s, max]
}

/// Bilinear resample to `SIDE × SIDE` (pixel-center aligned, edge clamped),
/// then per-pixel HSV.
pub fn hsv_from_image(img: &RgbImage) -> Result<HsvTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Image(format!("image has zero dimension ({w}x{h})")));
    }
    let raw = img.as_raw();
    let at = |x: usize, y: usize, c: usize| raw[(y * w + x) * 3 + c] as f64 / 255.0;
    let taps = |out: usize, len: usize| {
        let s = ((out as f64 + 0.5) * len as f64 / SIDE as f64 - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(len - 1), s - i0 as f64)
    };
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let mut data = Vec::with_capacity(HSV_LEN);
    for oy in 0..SIDE {
        let (y0, y1, fy) = taps(oy, h);
        for ox in 0..SIDE {
            let (x0, x1, fx) = taps(ox, w);
            let rgb: [f64; 3] = std::array::from_fn(|c| {
                let top = lerp(at(x0, y0, c), at(x1, y0, c), fx);
                let bottom = lerp(at(x0, y1, c), at(x1, y1, c), fx);
                lerp(top, bottom, fy)
            });
            data.extend(rgb_to_hsv(rgb[0], rgb[1], rgb[2]));
        }
    }
    HsvTensor::from_vec(data)
}

pub fn decode_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok(img.to_rgb8())
}

/// Loads an image file, or a tensor file when the extension is `.hsv`.
pub fn load_hsv(path: &Path) -> Result<HsvTensor> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("hsv")) {
        read_tensor_file(path)
    } else {
        hsv_from_image(&decode_image(path)?)
    }
}

pub fn write_tensor<W: Write>(t: &HsvTensor, w: &mut W) -> Result<()> {
    let io = |e| Error::io("<hsv tensor>", e);
    writeln!(w, "{SIDE} {SIDE} 3").map_err(io)?;
    let mut buf = Vec::with_capacity(HSV_LEN * 4);
    for (i, &x) in t.data.iter().enumerate() {
        let mut v = x as f32;
        // hue must stay below 1 after narrowing
        if i % 3 == 0 && v >= 1.0 {
            v = LARGEST_BELOW_ONE;
        }
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io)
}

pub fn write_tensor_file(t: &HsvTensor, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(t, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_tensor<R: BufRead>(r: &mut R) -> Result<HsvTensor> {
    let io = |e| Error::io("<hsv tensor>", e);
    let mut header = String::new();
    r.read_line(&mut header).map_err(io)?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad HSV tensor header {header:?}"))))
        .collect::<Result<_>>()?;
    if dims != [SIDE, SIDE, 3] {
        return Err(Error::Format(format!("HSV tensor header must be \"{SIDE} {SIDE} 3\", got {header:?}")));
    }
    let mut bytes = Vec::with_capacity(HSV_LEN * 4);
    r.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != HSV_LEN * 4 {
        return Err(Error::Format(format!(
            "HSV tensor body has {} bytes, expected {}",
            bytes.len(),
            HSV_LEN * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    HsvTensor::from_vec(data)
}

pub fn read_tensor_file(path: &Path) -> Result<HsvTensor> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor(&mut BufReader::new(f)).map_err(|e| match e {
        Error::Format(m) | Error::Data(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
