//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::path::Path;

use capsforge_core::{Real, Tensor};

use crate::error::{read_file, write_atomic, Error, Result};

/// Decoded image with interleaved samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Pnm {
    /// `[C, H, W]` with samples scaled back into `[0, 1]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let (c, h, w) = (self.channels, self.height, self.width);
        Tensor::from_fn([c, h, w], |i| {
            let (k, y, x) = (i / (h * w), (i / w) % h, i % w);
            T::lit(self.data[(y * w + x) * c + k] as f64 / 255.0)
        })
    }
}

/// Encodes a `[C, H, W]` image, `C ∈ {1, 3}`, as `round(p · 255)`. Values
/// outside `[0, 1]` (and NaN) are clamped; the second result counts them.
pub fn encode_pnm<T: Real>(image: &Tensor<T>) -> Result<(Vec<u8>, usize), String> {
    let s = image.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(format!("expected a [1|3, H, W] image, got {s:?}"));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = format!("{}\n{w} {h}\n255\n", if c == 1 { "P5" } else { "P6" }).into_bytes();
    let mut clamped = 0;
    let px = image.data();
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let v = px[(k * h + y) * w + x].as_f64();
                let q = if (0.0..=1.0).contains(&v) {
                    v
                } else {
                    clamped += 1;
                    if v > 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                };
                out.push((q * 255.0).round() as u8);
            }
        }
    }
    Ok((out, clamped))
}

pub fn write_image<T: Real>(path: &Path, image: &Tensor<T>) -> Result<()> {
    let (bytes, clamped) = encode_pnm(image).map_err(|d| Error::format(path, d))?;
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} out-of-range pixels", path.display());
    }
    write_atomic(path, &bytes)
}

pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Pnm> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::format(path, "header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(path, format!("unsupported magic {other:?}"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| Error::format(path, format!("bad {what} {t:?}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval}, only 255 is supported")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let expected = (start + width * height * channels) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(Pnm {
        channels,
        height,
        width,
        data: bytes[start..].to_vec(),
    })
}

pub fn read_image(path: &Path) -> Result<Pnm> {
    decode_pnm(&read_file(path)?, path)
}
