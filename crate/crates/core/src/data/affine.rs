//! Random affine deformation: rotation, shear, translation and a fixed 1.5×
//! magnification, all about the image centre.
//!
//! The forward map sends input pixel coordinates `p` to
//!
//! ```text
//! M·p = T(tx, ty) · C · R(θ) · [[1, shx], [shy, 1]] · 1.5 · C⁻¹ · p
//! ```
//!
//! where `C` moves the origin to the centre `((W−1)/2, (H−1)/2)` and `x`
//! runs along columns, `y` down rows. Positive angles turn content
//! clockwise on screen. Output pixels are filled by inverse mapping with
//! bilinear interpolation; reads outside the input are zero. The canvas
//! size is unchanged, so magnified content is cropped at the borders.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::dataset::LabeledDataset;
use super::rng::{substream, Stream};
use crate::{Real, Result, Tensor};

/// One sampled deformation. Translations are in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AffineSpec {
    pub angle_deg: f64,
    pub shear_x: f64,
    pub shear_y: f64,
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
}

/// Closed sampling ranges `[−x, x]` for each random field.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AffineRanges {
    pub angle_deg: f64,
    pub shear: f64,
    pub translate: f64,
    pub scale: f64,
}

impl AffineRanges {
    pub const STANDARD: AffineRanges = AffineRanges {
        angle_deg: 20.0,
        shear: 0.2,
        translate: 1.0,
        scale: 1.5,
    };
}

impl AffineSpec {
    /// No-op transform (scale 1), for testing.
    pub fn identity() -> Self {
        AffineSpec {
            angle_deg: 0.0,
            shear_x: 0.0,
            shear_y: 0.0,
            tx: 0.0,
            ty: 0.0,
            scale: 1.0,
        }
    }

    /// Forward 2×3 matrix for an image of `height × width`.
    pub fn matrix(&self, height: usize, width: usize) -> [[f64; 3]; 2] {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let (sin, cos) = Float::sin_cos(self.angle_deg.to_radians());
        let k = self.scale;
        // R · Shear · scale
        let a = [
            [k * (cos - sin * self.shear_y), k * (cos * self.shear_x - sin)],
            [k * (sin + cos * self.shear_y), k * (sin * self.shear_x + cos)],
        ];
        let t = [
            cx + self.tx - a[0][0] * cx - a[0][1] * cy,
            cy + self.ty - a[1][0] * cx - a[1][1] * cy,
        ];
        [[a[0][0], a[0][1], t[0]], [a[1][0], a[1][1], t[1]]]
    }
}

/// Independent uniform draws in the standard ranges, in the order angle,
/// shear x, shear y, tx, ty. Scale is always 1.5.
pub fn sample_affine<R: Rng + ?Sized>(rng: &mut R) -> AffineSpec {
    let r = AffineRanges::STANDARD;
    AffineSpec {
        angle_deg: rng.random_range(-r.angle_deg..=r.angle_deg),
        shear_x: rng.random_range(-r.shear..=r.shear),
        shear_y: rng.random_range(-r.shear..=r.shear),
        tx: rng.random_range(-r.translate..=r.translate),
        ty: rng.random_range(-r.translate..=r.translate),
        scale: r.scale,
    }
}

/// Warps a `[C, H, W]` image. Results are clamped to `[0, 1]`.
pub fn apply_affine<T: Real>(image: &Tensor<T>, spec: &AffineSpec) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(crate::Error::dim(
            "apply_affine",
            alloc::format!("image must be [C,H,W], got {s:?}"),
        ));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let m = spec.matrix(h, w);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let read = |x: isize, y: isize| -> f64 {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                0.0
            } else {
                plane[y as usize * w + x as usize].as_f64()
            }
        };
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - m[0][2], y as f64 - m[1][2]);
                let sx = inv[0][0] * dx + inv[0][1] * dy;
                let sy = inv[1][0] * dx + inv[1][1] * dy;
                let (x0, y0) = (Float::floor(sx), Float::floor(sy));
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                let v = (1.0 - fy) * ((1.0 - fx) * read(x0, y0) + fx * read(x0 + 1, y0))
                    + fy * ((1.0 - fx) * read(x0, y0 + 1) + fx * read(x0 + 1, y0 + 1));
                out.push(T::lit(v.clamp(0.0, 1.0)));
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}

/// Deforms every image with its own spec drawn from deform substream `i`.
/// Labels, order and metadata are unchanged.
pub fn deform_dataset<T: Real>(ds: &LabeledDataset<T>, seed: u64) -> Result<(LabeledDataset<T>, Vec<AffineSpec>)> {
    let mut data = Vec::with_capacity(ds.images().len());
    let mut specs = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let spec = sample_affine(&mut substream(seed, Stream::Deform, i as u64));
        data.extend_from_slice(apply_affine(&ds.image(i), &spec)?.data());
        specs.push(spec);
    }
    let images = Tensor::new(ds.images().shape().to_vec(), data)?;
    Ok((ds.with_images(images)?, specs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{stream, Split};
    use alloc::vec;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor<f64> {
        let n = (c * h * w) as f64;
        Tensor::from_fn([c, h, w], |i| (i as f64 + 0.5) / n)
    }

    #[test]
    fn identity_is_identity() {
        let img = ramp(3, 7, 5);
        let out = apply_affine(&img, &AffineSpec::identity()).unwrap();
        assert!(out.max_abs_diff(&img).unwrap() < 1e-6);
    }

    #[test]
    fn integer_translation_moves_one_pixel() {
        let mut img = Tensor::<f64>::zeros([1, 5, 5]);
        img.data_mut()[2 * 5 + 1] = 0.8;
        let spec = AffineSpec {
            tx: 1.0,
            ..AffineSpec::identity()
        };
        let out = apply_affine(&img, &spec).unwrap();
        let mut want = Tensor::<f64>::zeros([1, 5, 5]);
        want.data_mut()[2 * 5 + 2] = 0.8;
        assert_eq!(out, want);
    }

    /// Inverse map written out directly: undo the translation, the scale and
    /// the rotation about the centre, then interpolate by hand.
    fn rotate_scale_oracle(img: &[[f64; 4]; 4], deg: f64, scale: f64) -> [[f64; 4]; 4] {
        let (s, c) = deg.to_radians().sin_cos();
        let centre = 1.5;
        let px = |x: i64, y: i64| if (0..4).contains(&x) && (0..4).contains(&y) { img[y as usize][x as usize] } else { 0.0 };
        let mut out = [[0.0; 4]; 4];
        for (y, row) in out.iter_mut().enumerate() {
            for (x, v) in row.iter_mut().enumerate() {
                let (dx, dy) = (x as f64 - centre, y as f64 - centre);
                let sx = centre + (c * dx + s * dy) / scale;
                let sy = centre + (-s * dx + c * dy) / scale;
                let (ix, iy) = (sx.floor() as i64, sy.floor() as i64);
                let (ax, ay) = (sx - sx.floor(), sy - sy.floor());
                *v = px(ix, iy) * (1.0 - ax) * (1.0 - ay)
                    + px(ix + 1, iy) * ax * (1.0 - ay)
                    + px(ix, iy + 1) * (1.0 - ax) * ay
                    + px(ix + 1, iy + 1) * ax * ay;
            }
        }
        out
    }

    #[test]
    fn rotation_matches_direct_inverse_mapping() {
        let fixture = [
            [0.0, 0.1, 0.2, 0.3],
            [0.9, 1.0, 0.4, 0.0],
            [0.5, 0.6, 0.7, 0.2],
            [0.0, 0.3, 0.8, 1.0],
        ];
        let img = Tensor::<f64>::from_f64([1, 4, 4], &fixture.concat()).unwrap();
        for scale in [1.0, 1.5] {
            let spec = AffineSpec {
                angle_deg: 20.0,
                scale,
                ..AffineSpec::identity()
            };
            let out = apply_affine(&img, &spec).unwrap();
            let want = rotate_scale_oracle(&fixture, 20.0, scale);
            for y in 0..4 {
                for x in 0..4 {
                    assert!((out.at(&[0, y, x]) - want[y][x]).abs() < 1e-5, "({y},{x})");
                }
            }
        }
    }

    #[test]
    fn shear_lands_in_the_cross_terms() {
        let spec = AffineSpec {
            shear_x: 0.2,
            shear_y: -0.1,
            ..AffineSpec::identity()
        };
        let m = spec.matrix(5, 5);
        assert_eq!([m[0][0], m[0][1], m[1][0], m[1][1]], [1.0, 0.2, -0.1, 1.0]);
        // centre stays fixed
        assert!((m[0][0] * 2.0 + m[0][1] * 2.0 + m[0][2] - 2.0).abs() < 1e-12);
        assert!((m[1][0] * 2.0 + m[1][1] * 2.0 + m[1][2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_statistics() {
        let mut rng = stream(11, Stream::Deform);
        let specs: Vec<AffineSpec> = (0..10_000).map(|_| sample_affine(&mut rng)).collect();
        let angles: Vec<f64> = specs.iter().map(|s| s.angle_deg).collect();
        let min = angles.iter().cloned().fold(f64::MAX, f64::min);
        let max = angles.iter().cloned().fold(f64::MIN, f64::max);
        let mean = angles.iter().sum::<f64>() / angles.len() as f64;
        assert!((-20.0..=-19.0).contains(&min), "{min}");
        assert!((19.0..=20.0).contains(&max), "{max}");
        assert!(mean.abs() < 0.6, "{mean}");
        for s in &specs {
            assert_eq!(s.scale, 1.5);
            assert!(s.shear_x.abs() <= 0.2 && s.shear_y.abs() <= 0.2);
            assert!(s.tx.abs() <= 1.0 && s.ty.abs() <= 1.0);
        }
        let again = sample_affine(&mut stream(11, Stream::Deform));
        assert_eq!(again, specs[0]);
    }

    #[test]
    fn deformation_keeps_labels_and_range() {
        let n = 6;
        let images = Tensor::from_fn([n, 1, 9, 9], |i| ((i * 37) % 101) as f64 / 100.0);
        let ds = LabeledDataset::new(images, vec![0, 1, 2, 3, 4, 5], 10, "t", Split::Test).unwrap();
        let (a, specs) = deform_dataset(&ds, 7).unwrap();
        let (b, _) = deform_dataset(&ds, 7).unwrap();
        let (c, _) = deform_dataset(&ds, 8).unwrap();
        assert_eq!(a.labels(), ds.labels());
        assert_eq!(a.images().shape(), ds.images().shape());
        assert_eq!(specs.len(), n);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.images().data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        // a prefix deforms identically on its own
        let (head, _) = deform_dataset(&ds.take(3), 7).unwrap();
        assert_eq!(head.images().data(), &a.images().data()[..3 * 81]);
    }
}
