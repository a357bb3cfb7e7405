//! Big-endian IDX files: `0x00000803` unsigned-byte image volumes and
//! `0x00000801` unsigned-byte label vectors.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};

use super::Dataset;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn truncated(path: &Path, reason: impl Into<String>) -> Error {
    Error::Truncated {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_header(path: &Path, cur: &mut Cursor<Vec<u8>>, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let found = cur
        .read_u32::<BigEndian>()
        .map_err(|_| truncated(path, "missing magic number"))?;
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    (0..dims)
        .map(|_| {
            cur.read_u32::<BigEndian>()
                .map(|v| v as usize)
                .map_err(|_| truncated(path, "incomplete header"))
        })
        .collect()
}

/// Reads an image file, returning pixels scaled by `1/255` and `(rows, cols)`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<(Vec<Tensor>, usize, usize)> {
    let path = path.as_ref();
    let mut cur = Cursor::new(read_file(path)?);
    let dims = read_header(path, &mut cur, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = rows * cols;
    let mut body = Vec::new();
    cur.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != count * pixels {
        return Err(truncated(
            path,
            format!("header implies {} pixel bytes, found {}", count * pixels, body.len()),
        ));
    }
    let images = body
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|chunk| Tensor::vector(chunk.iter().map(|&b| f64::from(b) / 255.0).collect()))
        .collect();
    Ok((images, rows, cols))
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let mut cur = Cursor::new(read_file(path)?);
    let count = read_header(path, &mut cur, LABELS_MAGIC, 1)?[0];
    let mut body = Vec::new();
    cur.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != count {
        return Err(truncated(
            path,
            format!("header implies {count} labels, found {}", body.len()),
        ));
    }
    Ok(body)
}

/// Loads an image/label pair. The class count is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images, rows, cols) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    Dataset::new(
        images,
        labels.into_iter().map(|l| Some(l as usize)).collect(),
        num_classes,
        rows,
        cols,
    )
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Writes images as unsigned bytes, `round(255 * v)`.
pub fn write_idx_images(path: impl AsRef<Path>, images: &[Tensor], rows: usize, cols: usize) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + images.len() * rows * cols);
    buf.write_u32::<BigEndian>(IMAGES_MAGIC).unwrap();
    for v in [images.len(), rows, cols] {
        buf.write_u32::<BigEndian>(v as u32).unwrap();
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::shape("write_idx_images", img.shape(), &[rows * cols]));
        }
        buf.extend(img.data().iter().map(|&v| to_byte(v)));
    }
    write_bytes(path, &buf)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.write_u32::<BigEndian>(LABELS_MAGIC).unwrap();
    buf.write_u32::<BigEndian>(labels.len() as u32).unwrap();
    buf.extend_from_slice(labels);
    write_bytes(path, &buf)
}

/// Writes a fully labeled dataset as an image/label pair.
pub fn write_idx(dataset: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let labels = dataset
        .labels()
        .iter()
        .map(|l| match l {
            Some(c) if *c <= u8::MAX as usize => Ok(*c as u8),
            Some(c) => Err(Error::Config(format!("label {c} does not fit in a byte"))),
            None => Err(Error::Config("IDX labels cannot represent unlabeled samples".into())),
        })
        .collect::<Result<Vec<u8>>>()?;
    write_idx_images(images_path, dataset.images(), dataset.rows(), dataset.cols())?;
    write_idx_labels(labels_path, &labels)
}
