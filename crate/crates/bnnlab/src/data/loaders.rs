//! Binary dataset formats: IDX (MNIST), CIFAR-10 style batches, and a
//! directory-of-PNGs layout. Writers are provided so procedurally generated
//! data can round-trip through the same parsers that real files use.

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array4};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image/label file pair (the MNIST container format).
pub fn load_idx_split(images_path: &Path, labels_path: &Path, classes: usize) -> Result<DatasetSplit> {
    let mut r = BufReader::new(File::open(images_path)?);
    let magic = r.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad IDX image magic 0x{magic:08x}",
            images_path.display()
        )));
    }
    let n = r.read_u32::<BigEndian>()? as usize;
    let h = r.read_u32::<BigEndian>()? as usize;
    let w = r.read_u32::<BigEndian>()? as usize;
    let mut raw = vec![0u8; n * h * w];
    r.read_exact(&mut raw)?;

    let mut lr = BufReader::new(File::open(labels_path)?);
    let magic = lr.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad IDX label magic 0x{magic:08x}",
            labels_path.display()
        )));
    }
    let ln = lr.read_u32::<BigEndian>()? as usize;
    if ln != n {
        return Err(Error::Format(format!("IDX pair mismatch: {n} images vs {ln} labels")));
    }
    let mut raw_labels = vec![0u8; n];
    lr.read_exact(&mut raw_labels)?;

    let mut images = Array4::<f64>::zeros((n, 1, h, w));
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                images[[i, 0, y, x]] = raw[i * h * w + y * w + x] as f64 / 255.0;
            }
        }
    }
    let mut labels = Array2::<f64>::zeros((n, classes));
    for (i, &l) in raw_labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(Error::Format(format!("label {l} out of range for {classes} classes")));
        }
        labels[[i, l as usize]] = 1.0;
    }
    DatasetSplit::new(images, labels)
}

/// Writes a split as an IDX image/label file pair. Requires single-channel
/// images; values are quantized to u8.
pub fn write_idx_split(split: &DatasetSplit, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (c, h, w) = split.image_shape();
    if c != 1 {
        return Err(Error::Input("IDX images are single channel".into()));
    }
    let mut iw = BufWriter::new(File::create(images_path)?);
    iw.write_u32::<BigEndian>(IDX_IMAGES_MAGIC)?;
    iw.write_u32::<BigEndian>(split.len() as u32)?;
    iw.write_u32::<BigEndian>(h as u32)?;
    iw.write_u32::<BigEndian>(w as u32)?;
    for i in 0..split.len() {
        for y in 0..h {
            for x in 0..w {
                iw.write_all(&[(split.images()[[i, 0, y, x]] * 255.0).round() as u8])?;
            }
        }
    }
    iw.flush()?;

    let mut lw = BufWriter::new(File::create(labels_path)?);
    lw.write_u32::<BigEndian>(IDX_LABELS_MAGIC)?;
    lw.write_u32::<BigEndian>(split.len() as u32)?;
    for i in 0..split.len() {
        lw.write_all(&[split.label_index(i) as u8])?;
    }
    lw.flush()?;
    Ok(())
}

/// Loads CIFAR-10 style binary batches: records of `1 + 32*32*3` bytes, label
/// first, then the red, green and blue planes.
pub fn load_cifar_batches(paths: &[&Path], classes: usize) -> Result<DatasetSplit> {
    const SIDE: usize = 32;
    const RECORD: usize = 1 + 3 * SIDE * SIDE;
    let mut raw = Vec::new();
    for p in paths {
        let mut buf = Vec::new();
        File::open(p)?.read_to_end(&mut buf)?;
        if buf.len() % RECORD != 0 {
            return Err(Error::Format(format!(
                "{}: size {} is not a multiple of the {RECORD}-byte record",
                p.display(),
                buf.len()
            )));
        }
        raw.extend_from_slice(&buf);
    }
    let n = raw.len() / RECORD;
    if n == 0 {
        return Err(Error::Format("no CIFAR records found".into()));
    }
    let mut images = Array4::<f64>::zeros((n, 3, SIDE, SIDE));
    let mut labels = Array2::<f64>::zeros((n, classes));
    for i in 0..n {
        let rec = &raw[i * RECORD..(i + 1) * RECORD];
        let l = rec[0] as usize;
        if l >= classes {
            return Err(Error::Format(format!("label {l} out of range for {classes} classes")));
        }
        labels[[i, l]] = 1.0;
        for ch in 0..3 {
            for y in 0..SIDE {
                for x in 0..SIDE {
                    images[[i, ch, y, x]] = rec[1 + ch * SIDE * SIDE + y * SIDE + x] as f64 / 255.0;
                }
            }
        }
    }
    DatasetSplit::new(images, labels)
}

/// Writes a split as one CIFAR-style binary batch. Requires 32x32 rgb images.
pub fn write_cifar_batch(split: &DatasetSplit, path: &Path) -> Result<()> {
    let (c, h, w) = split.image_shape();
    if (c, h, w) != (3, 32, 32) {
        return Err(Error::Input("CIFAR batches hold 3x32x32 images".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    for i in 0..split.len() {
        out.write_all(&[split.label_index(i) as u8])?;
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out.write_all(&[(split.images()[[i, ch, y, x]] * 255.0).round() as u8])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Loads a directory-of-PNGs dataset: one subdirectory per class, class order
/// is the sorted subdirectory name order.
pub fn load_png_directory(root: &Path) -> Result<DatasetSplit> {
    let mut class_dirs: Vec<_> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    class_dirs.sort();
    if class_dirs.len() < 2 {
        return Err(Error::Format(format!(
            "{}: need at least 2 class subdirectories",
            root.display()
        )));
    }
    let mut entries: Vec<(usize, std::path::PathBuf)> = Vec::new();
    for (class, dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
            .collect();
        files.sort();
        for f in files {
            entries.push((class, f));
        }
    }
    if entries.is_empty() {
        return Err(Error::Format("no png files found".into()));
    }
    let first = image::open(&entries[0].1)
        .map_err(|e| Error::Format(format!("{}: {e}", entries[0].1.display())))?
        .to_rgb8();
    let (w, h) = (first.width() as usize, first.height() as usize);
    let mut images = Array4::<f64>::zeros((entries.len(), 3, h, w));
    let mut labels = Array2::<f64>::zeros((entries.len(), class_dirs.len()));
    for (i, (class, path)) in entries.iter().enumerate() {
        let img = image::open(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .to_rgb8();
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(Error::Format(format!(
                "{}: image size differs from the rest of the corpus",
                path.display()
            )));
        }
        for y in 0..h {
            for x in 0..w {
                let px = img.get_pixel(x as u32, y as u32);
                for ch in 0..3 {
                    images[[i, ch, y, x]] = px.0[ch] as f64 / 255.0;
                }
            }
        }
        labels[[i, *class]] = 1.0;
    }
    DatasetSplit::new(images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_digits;

    #[test]
    fn idx_roundtrip_quantized() {
        let split = synth_digits(12, 28, 411).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("images.idx3-ubyte");
        let lp = dir.path().join("labels.idx1-ubyte");
        write_idx_split(&split, &ip, &lp).unwrap();
        let loaded = load_idx_split(&ip, &lp, 10).unwrap();
        assert_eq!(loaded.len(), 12);
        assert_eq!(loaded.image_shape(), (1, 28, 28));
        for i in 0..12 {
            assert_eq!(loaded.label_index(i), split.label_index(i));
        }
        // quantization-limited reconstruction
        let d = (loaded.images() - split.images())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(d <= 0.5 / 255.0 + 1e-12, "max pixel err {d}");
    }

    #[test]
    fn cifar_roundtrip() {
        let split = crate::data::synth_textures(8, 32, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data_batch_1.bin");
        write_cifar_batch(&split, &p).unwrap();
        let loaded = load_cifar_batches(&[&p], 10).unwrap();
        assert_eq!(loaded.len(), 8);
        assert_eq!(loaded.image_shape(), (3, 32, 32));
        for i in 0..8 {
            assert_eq!(loaded.label_index(i), split.label_index(i));
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bogus");
        std::fs::write(&p, [0u8; 16]).unwrap();
        assert!(load_idx_split(&p, &p, 10).is_err());
    }
}
