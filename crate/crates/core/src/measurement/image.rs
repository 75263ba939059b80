//! Image ground truths: PGM loading, power-of-two padding and a generator of
//! small synthetic digit images.

use std::path::{Path, PathBuf};

use image::GrayImage;
use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Pixel convention of [`pad_pixels`], recorded in experiment manifests.
pub const PIXEL_SCALING: &str = "8-bit gray / 255, each side zero-padded to a power of two, row-major";

/// Row-major vectorization of an 8-bit grayscale grid scaled to `[0, 1]`.
///
/// Width and height are each padded with zeros up to the next power of two
/// and the padded grid is written row by row; further zero rows are appended
/// when `n` is larger than the padded grid. `n` must be a power of two.
pub fn pad_pixels(width: usize, height: usize, pixels: &[u8], n: usize) -> Result<DVector<f64>> {
    if pixels.len() != width * height {
        return Err(Error::Format(format!(
            "pixel buffer has {} entries for a {width}x{height} grid",
            pixels.len()
        )));
    }
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let pw = width.next_power_of_two();
    let ph = height.next_power_of_two();
    if pw * ph > n {
        return Err(Error::InvalidParameter(format!(
            "{width}x{height} image pads to {} entries, more than n = {n}",
            pw * ph
        )));
    }
    let mut v = DVector::zeros(n);
    for r in 0..height {
        for c in 0..width {
            v[r * pw + c] = f64::from(pixels[r * width + c]) / 255.0;
        }
    }
    Ok(v)
}

/// Loads an image (PGM P5 at minimum) and vectorizes it with [`pad_pixels`].
pub fn load_image_vector(path: &Path, n: usize) -> Result<DVector<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    pad_pixels(w as usize, h as usize, img.as_raw(), n)
}

/// `true` when the vector carries no signal at all.
pub fn is_degenerate(v: &DVector<f64>) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// Writes an 8-bit grayscale image as binary PGM.
pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::ImageEncoder;
    let err = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::create(path).map_err(|e| err(e.to_string()))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::L8)
        .map_err(|e| err(e.to_string()))
}

/// Lists the `.pgm` files of a directory in lexicographic order.
pub fn list_pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

// Stroke skeletons of the ten digits on a unit square, as polylines.
const DIGIT_STROKES: [&[&[(f64, f64)]]; 10] = [
    &[&[
        (0.5, 0.1),
        (0.8, 0.3),
        (0.8, 0.7),
        (0.5, 0.9),
        (0.2, 0.7),
        (0.2, 0.3),
        (0.5, 0.1),
    ]],
    &[&[(0.35, 0.25), (0.55, 0.1), (0.55, 0.9)], &[(0.35, 0.9), (0.75, 0.9)]],
    &[&[(0.2, 0.3), (0.5, 0.1), (0.8, 0.3), (0.2, 0.9), (0.8, 0.9)]],
    &[&[
        (0.2, 0.15),
        (0.8, 0.15),
        (0.45, 0.45),
        (0.8, 0.65),
        (0.5, 0.9),
        (0.2, 0.8),
    ]],
    &[&[(0.7, 0.9), (0.7, 0.1), (0.2, 0.65), (0.85, 0.65)]],
    &[&[
        (0.8, 0.1),
        (0.25, 0.1),
        (0.2, 0.45),
        (0.7, 0.5),
        (0.75, 0.8),
        (0.2, 0.9),
    ]],
    &[&[
        (0.75, 0.1),
        (0.3, 0.4),
        (0.2, 0.75),
        (0.5, 0.9),
        (0.8, 0.7),
        (0.5, 0.5),
        (0.25, 0.6),
    ]],
    &[&[(0.2, 0.1), (0.8, 0.1), (0.4, 0.9)]],
    &[
        &[(0.5, 0.5), (0.25, 0.3), (0.5, 0.1), (0.75, 0.3), (0.5, 0.5)],
        &[(0.5, 0.5), (0.2, 0.7), (0.5, 0.9), (0.8, 0.7), (0.5, 0.5)],
    ],
    &[&[(0.75, 0.4), (0.5, 0.5), (0.2, 0.3), (0.5, 0.1), (0.75, 0.3), (0.7, 0.9)]],
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Renders `count` digit-like `size × size` images: jittered stroke skeletons
/// of the digits 0–9 drawn with a soft pen. Every image has nonzero pixels.
pub fn synthetic_digits(count: usize, size: u32, seed: u64) -> Vec<GrayImage> {
    (0..count)
        .map(|idx| {
            let mut rng = rng::stream(seed, &[idx as u64, rng::role::IMAGE]);
            let digit = idx % 10;
            let s = size as f64;
            let margin = 0.08 + 0.06 * rng.random::<f64>();
            let pen = 0.6 + 0.6 * rng.random::<f64>();
            let slant = 0.15 * (rng.random::<f64>() - 0.5);
            let strokes: Vec<Vec<(f64, f64)>> = DIGIT_STROKES[digit]
                .iter()
                .map(|line| {
                    line.iter()
                        .map(|&(x, y)| {
                            let jx = 0.05 * (rng.random::<f64>() - 0.5);
                            let jy = 0.05 * (rng.random::<f64>() - 0.5);
                            let x = x + slant * (0.5 - y) + jx;
                            let y = y + jy;
                            let map = |u: f64| (margin + u * (1.0 - 2.0 * margin)) * (s - 1.0);
                            (map(x), map(y))
                        })
                        .collect()
                })
                .collect();
            let mut img = GrayImage::from_fn(size, size, |c, r| {
                let p = (c as f64, r as f64);
                let dist = strokes
                    .iter()
                    .flat_map(|line| line.windows(2).map(|w| segment_distance(p, w[0], w[1])))
                    .fold(f64::INFINITY, f64::min);
                let v = (1.0 - (dist - pen).max(0.0)).clamp(0.0, 1.0);
                image::Luma([(v * 255.0).round() as u8])
            });
            if img.pixels().all(|p| p.0[0] == 0) {
                img.put_pixel(size / 2, size / 2, image::Luma([255]));
            }
            img
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_power_of_two_image_is_not_padded() {
        let px: Vec<u8> = (0..256).map(|i| i as u8).collect();
        let v = pad_pixels(16, 16, &px, 256).unwrap();
        assert_eq!(v.len(), 256);
        assert_eq!(v[17], 17.0 / 255.0);
        assert_eq!(v[255], 1.0);
    }

    #[test]
    fn narrow_image_gets_zero_last_column() {
        let px = vec![255u8; 16 * 15];
        let v = pad_pixels(15, 16, &px, 256).unwrap();
        for r in 0..16 {
            assert_eq!(v[r * 16 + 15], 0.0);
            assert_eq!(v[r * 16 + 14], 1.0);
        }
    }

    #[test]
    fn black_image_is_degenerate() {
        let v = pad_pixels(16, 16, &[0u8; 256], 256).unwrap();
        assert!(is_degenerate(&v));
    }

    #[test]
    fn too_large_and_bad_n_are_rejected() {
        assert!(pad_pixels(17, 16, &[0u8; 17 * 16], 256).is_err());
        assert!(pad_pixels(4, 4, &[0u8; 16], 24).is_err());
        assert!(pad_pixels(4, 4, &[0u8; 15], 16).is_err());
    }

    #[test]
    fn pgm_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = synthetic_digits(3, 16, 1);
        for (i, img) in imgs.iter().enumerate() {
            save_pgm(img, &dir.path().join(format!("d{i}.pgm"))).unwrap();
        }
        let bytes = std::fs::read(dir.path().join("d0.pgm")).unwrap();
        assert_eq!(&bytes[..2], b"P5");
        let files = list_pgm_files(dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let v = load_image_vector(&files[1], 256).unwrap();
        let direct = pad_pixels(16, 16, imgs[1].as_raw(), 256).unwrap();
        assert_eq!(v, direct);
        assert!(load_image_vector(&dir.path().join("missing.pgm"), 256).is_err());
    }

    #[test]
    fn synthetic_digits_are_deterministic_and_nonempty() {
        let a = synthetic_digits(50, 16, 7);
        let b = synthetic_digits(50, 16, 7);
        assert_eq!(a, b);
        for img in &a {
            let lit = img.pixels().filter(|p| p.0[0] > 0).count();
            assert!(lit > 10 && lit < 256, "lit pixels {lit}");
        }
    }
}
