//! Artifact I/O: the binary array container used for weights, posteriors and
//! encoder parameters, PNG export for feature visualizations, and small CSV
//! helpers. All writers are deterministic byte-for-byte.

mod container;

pub use container::{ArrayContainer, ContainerKind};

use crate::error::{Error, Result};
use ndarray::Array3;
use sha2::{Digest, Sha256};
use std::path::Path;

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Saves a `[3, V, V]` image in `[0, 1]` as an 8-bit rgb PNG.
pub fn save_png(image: &Array3<f64>, path: &Path) -> Result<()> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if c != 3 {
        return Err(Error::Input(format!("png export expects 3 channels, got {c}")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (image[[0, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (image[[1, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (image[[2, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Loads an rgb PNG into a `[3, H, W]` array in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::<f64>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out[[c, y, x]] = px.0[c] as f64 / 255.0;
            }
        }
    }
    Ok(out)
}

/// Writes rows as CSV with a header. Values are formatted with
/// Rust's shortest round-trip representation, so re-running a deterministic
/// pipeline reproduces byte-identical files.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Formats an f64 with the shortest representation that round-trips.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn png_roundtrip_quantized() {
        let mut img = Array3::<f64>::zeros((3, 5, 7));
        for (i, v) in img.iter_mut().enumerate() {
            *v = (i % 255) as f64 / 255.0;
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        save_png(&img, &p).unwrap();
        let back = load_png(&p).unwrap();
        let max = (&back - &img).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 0.5 / 255.0 + 1e-12);
    }
}
