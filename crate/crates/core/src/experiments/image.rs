//! Binary PGM (`P5`) and PPM (`P6`) images with 8-bit samples.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::visualize::normalize_for_display;

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "pnm",
        detail: detail.into(),
    }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    body: usize,
}

/// Parses the header and returns it with the offset of the raster.
fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(format_err("expected binary PGM (P5) or PPM (P6) magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (n, field) in fields.iter_mut().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let name = ["width", "height", "maxval"][n];
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(format!("missing or invalid {name}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err("header must end with a single whitespace byte"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format_err("image extents must be positive"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format_err(format!(
            "maxval {maxval} unsupported; only 8-bit samples (maxval 1..=255) are read"
        )));
    }
    Ok(Header {
        channels,
        width,
        height,
        maxval,
        body: pos + 1,
    })
}

/// Decodes a P5/P6 image to `[H, W, C]` with samples scaled to `[0, 1]`.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes)?;
    let len = h.width * h.height * h.channels;
    let raster = &bytes[h.body..];
    if raster.len() < len {
        return Err(format_err(format!("raster truncated: {} of {len} bytes", raster.len())));
    }
    let scale = 1.0 / h.maxval as f64;
    let data = raster[..len].iter().map(|&b| (b as f64 * scale).min(1.0)).collect();
    Tensor::new(vec![h.height, h.width, h.channels], data)
}

/// Encodes an `[H, W, 1]` or `[H, W, 3]` tensor, clamping samples to `[0, 1]`.
pub fn encode_image(img: &Tensor) -> Result<Vec<u8>> {
    let (magic, shape) = match img.shape() {
        [h, w, 1] => ("P5", (*h, *w)),
        [h, w, 3] => ("P6", (*h, *w)),
        other => {
            return Err(format_err(format!(
                "images must be [H, W, 1] or [H, W, 3], got {other:?}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", shape.1, shape.0).into_bytes();
    out.extend(img.data().iter().map(|v| {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (v * 255.0).round() as u8
    }));
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .map(BufReader::new)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::file(path, e))?;
    decode_image(&bytes)
}

/// Writes `img` with samples clamped to `[0, 1]`.
pub fn write_image_clamped(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(img)?;
    File::create(path)
        .map(BufWriter::new)
        .and_then(|mut f| {
            f.write_all(&bytes)?;
            f.flush()
        })
        .map_err(|e| Error::file(path, e))
}

/// Writes a visualization map after min-max rescaling it for display.
pub fn write_image(map: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_image_clamped(&normalize_for_display(map), path)
}
