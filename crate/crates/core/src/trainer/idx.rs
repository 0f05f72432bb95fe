//! IDX (MNIST-style) image and label files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::Dataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "idx",
        detail: detail.into(),
    }
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| format_err(format!("truncated while reading {what}")))?;
    Ok(u32::from_be_bytes(b))
}

fn read_body(r: &mut impl Read, len: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len as u64 + 1).read_to_end(&mut buf)?;
    match buf.len().cmp(&len) {
        std::cmp::Ordering::Less => Err(format_err(format!("{what}: expected {len} bytes, found {}", buf.len()))),
        std::cmp::Ordering::Greater => Err(format_err(format!("{what}: trailing bytes after {len}"))),
        std::cmp::Ordering::Equal => Ok(buf),
    }
}

/// Reads an image stream and a label stream. Pixels are scaled by `1/255`;
/// the class count is one more than the largest label (at least one).
pub fn read_idx(mut images: impl Read, mut labels: impl Read) -> Result<Dataset> {
    let magic = read_u32(&mut images, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(format_err(format!(
            "image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let n = read_u32(&mut images, "image count")? as usize;
    let h = read_u32(&mut images, "rows")? as usize;
    let w = read_u32(&mut images, "columns")? as usize;

    let magic = read_u32(&mut labels, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(format_err(format!(
            "label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let m = read_u32(&mut labels, "label count")? as usize;
    if m != n {
        return Err(format_err(format!("{n} images but {m} labels")));
    }

    let pixels = read_body(&mut images, n * h * w, "image data")?;
    let label_bytes = read_body(&mut labels, n, "label data")?;
    let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(vec![h, w, 1], data, labels, class_count)
}

pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let open = |p: &Path| File::open(p).map(BufReader::new).map_err(|e| Error::file(p, e));
    read_idx(open(images.as_ref())?, open(labels.as_ref())?)
}

/// Writes a single-channel dataset; pixels are rounded from `[0, 1]` to bytes.
pub fn write_idx(data: &Dataset, mut images: impl Write, mut labels: impl Write) -> Result<()> {
    let shape = data.image_shape();
    if shape[2] != 1 || shape[0] > u32::MAX as usize || shape[1] > u32::MAX as usize {
        return Err(format_err(format!(
            "idx images are single-channel, got {} channels",
            shape[2]
        )));
    }
    if data.class_count() > 256 {
        return Err(format_err("labels must fit in one byte"));
    }
    let n = data.len() as u32;
    for v in [IMAGE_MAGIC, n, shape[0] as u32, shape[1] as u32] {
        images.write_all(&v.to_be_bytes())?;
    }
    let bytes: Vec<u8> = data
        .pixels()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    images.write_all(&bytes)?;
    labels.write_all(&LABEL_MAGIC.to_be_bytes())?;
    labels.write_all(&n.to_be_bytes())?;
    let label_bytes: Vec<u8> = data.labels().iter().map(|&l| l as u8).collect();
    labels.write_all(&label_bytes)?;
    images.flush()?;
    labels.flush()?;
    Ok(())
}

pub fn save_idx(data: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let create = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| Error::file(p, e));
    write_idx(data, create(images.as_ref())?, create(labels.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Dataset {
        let px = [0.0, 1.0, 51.0 / 255.0, 0.2, 1.0, 0.0, 0.0, 102.0 / 255.0];
        Dataset::new(vec![2, 2, 1], px.to_vec(), vec![1, 0], 2).unwrap()
    }

    #[test]
    fn round_trip_bytes_and_values() {
        let (mut img, mut lab) = (Vec::new(), Vec::new());
        write_idx(&fixture(), &mut img, &mut lab).unwrap();
        assert_eq!(&img[..16], &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2]);
        assert_eq!(&img[16..], &[0, 255, 51, 51, 255, 0, 0, 102]);
        assert_eq!(lab, vec![0, 0, 8, 1, 0, 0, 0, 2, 1, 0]);
        let back = read_idx(img.as_slice(), lab.as_slice()).unwrap();
        assert_eq!(back, fixture());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
        save_idx(&fixture(), &i, &l).unwrap();
        assert_eq!(load_idx(&i, &l).unwrap(), fixture());
        assert!(matches!(
            load_idx(dir.path().join("missing"), &l),
            Err(Error::File { .. })
        ));
    }

    #[test]
    fn bad_inputs_rejected() {
        let (mut img, mut lab) = (Vec::new(), Vec::new());
        write_idx(&fixture(), &mut img, &mut lab).unwrap();
        let mut bad = lab.clone();
        bad[3] = 3;
        assert!(matches!(
            read_idx(img.as_slice(), bad.as_slice()),
            Err(Error::Format { .. })
        ));
        let mut short = lab.clone();
        short[7] = 3;
        assert!(read_idx(img.as_slice(), short.as_slice()).is_err());
        assert!(read_idx(&img[..img.len() - 1], lab.as_slice()).is_err());
        let mut long = img.clone();
        long.push(0);
        assert!(read_idx(long.as_slice(), lab.as_slice()).is_err());
    }

    #[test]
    fn empty_files_are_valid() {
        let img = [0u8, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 28, 0, 0, 0, 28];
        let lab = [0u8, 0, 8, 1, 0, 0, 0, 0];
        let d = read_idx(img.as_slice(), lab.as_slice()).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.image_shape(), &[28, 28, 1]);
    }
}
