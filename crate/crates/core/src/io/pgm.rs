//! Binary greyscale PGM (P5, maxval 255).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims(x: &Tensor<f32>) -> Result<(usize, usize)> {
    match x.shape() {
        [h, w] | [h, w, 1] => Ok((*h, *w)),
        s => Err(Error::contract(format!(
            "PGM export needs a [h, w, 1] image, got {s:?}"
        ))),
    }
}

/// `"P5\n<w> <h>\n255\n"` followed by `round(v · 255)` per pixel, row-major,
/// rounding halves up.
pub fn encode_pgm(x: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = dims(x)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w);
    for (i, &v) in x.data().iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::contract(format!("pixel {i} = {v} outside [0, 1]")));
        }
        out.push((v as f64 * 255.0 + 0.5).floor() as u8);
    }
    Ok(out)
}

pub fn export_image_pgm(x: &Tensor<f32>, path: &Path) -> Result<()> {
    let bytes = encode_pgm(x)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Parses a P5 image with maxval ≤ 255 into a `[h, w, 1]` tensor in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let fail = |offset: usize, msg: &str| Error::Ingest {
        what: "PGM image",
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.to_string(),
    };
    if !bytes.starts_with(b"P5") {
        return Err(fail(0, "not a binary PGM (P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(fail(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail(start, "expected a decimal number"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(fail(pos, "missing whitespace after maxval"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(fail(3, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(fail(pos, "only 8-bit PGM (maxval 1..=255) is supported"));
    }
    let payload = &bytes[pos..];
    if payload.len() != w * h {
        return Err(fail(pos, "payload size does not match header"));
    }
    let data = payload.iter().map(|&b| (b as f32 / maxval as f32).min(1.0)).collect();
    Tensor::new(vec![h, w, 1], data)
}

pub fn import_image_pgm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_pgm(&bytes, path)
}
